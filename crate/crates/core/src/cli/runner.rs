use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::data::{gen_madelon, load_csv, load_mnist_dir, standardize, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{save_metrics_csv, MetricsRecord};
use crate::network::{train, Activation, Loss, Network, TrainConfig};
use crate::noise::{NoiseKind, NoiseSpec};
use crate::numerics::Rng;

/// Stream reserved for weight initialization.
const INIT_STREAM: u64 = 100;

/// One training run of an experiment grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub id: String,
    pub hidden_dim: Option<usize>,
    pub regime: NoiseKind,
    pub param: String,
    pub strength: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// `loss` is `None` when it was not finite.
    Diverged { iteration: usize, loss: Option<f64> },
    Failed { message: String },
}

/// Contents of `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_hash: String,
    pub plan: RunPlan,
    pub outcome: RunStatus,
    pub iterations: usize,
    pub final_record: Option<MetricsRecord>,
}

impl RunResult {
    pub fn completed(&self) -> bool {
        self.outcome == RunStatus::Completed
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.final_record.as_ref().filter(|_| self.completed()).map(|r| r.test_accuracy)
    }
}

/// Contents of `model.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelDump {
    pub config_hash: String,
    pub seed: u64,
    pub run_id: String,
    pub network: Network,
}

fn param_label(spec: &NoiseSpec) -> String {
    match spec.kind {
        NoiseKind::None => "base".to_string(),
        NoiseKind::IidBernoulli => format!("p{}", spec.p),
        _ => format!("lambda{}", spec.lambda),
    }
}

/// Every (hidden width, regime, grid point, seed) combination, in a fixed order.
pub fn plan_runs(config: &ExperimentConfig) -> Result<Vec<RunPlan>> {
    let widths: Vec<Option<usize>> = if config.hidden_dims.is_empty() {
        vec![None]
    } else {
        config.hidden_dims.iter().map(|&d| Some(d)).collect()
    };
    let mut plans = Vec::new();
    for &hidden_dim in &widths {
        for regime in &config.regimes {
            for noise in regime.expand(config.shared_per_batch, config.layer_mask.as_ref())? {
                for &seed in &config.seeds {
                    let param = param_label(&noise);
                    let strength = noise.strength();
                    let width = hidden_dim.map_or("linear".to_string(), |d| format!("d{d}"));
                    plans.push(RunPlan {
                        id: format!("{width}_{}_{param}_seed{seed}", regime.kind.name()),
                        hidden_dim,
                        regime: regime.kind,
                        param,
                        strength,
                        noise: noise.clone(),
                        seed,
                    });
                }
            }
        }
    }
    Ok(plans)
}

/// Loads (or generates) the train/test pair a run needs.
pub fn load_data(config: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = match config.experiment {
        ExperimentKind::Madelon => {
            let mut m = config
                .madelon
                .clone()
                .ok_or_else(|| Error::InvalidConfig("missing madelon parameters".into()))?;
            m.seed = m.seed.wrapping_add(seed);
            gen_madelon(&m, &mut Rng::new(m.seed))?
        }
        ExperimentKind::Mnist => {
            let dir = config
                .mnist_dir
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("missing mnist_dir".into()))?;
            load_mnist_dir(dir)?
        }
        ExperimentKind::Custom => {
            let path = |p: &Option<PathBuf>| {
                p.clone().ok_or_else(|| Error::InvalidConfig("missing train_csv/test_csv".into()))
            };
            (load_csv(&path(&config.train_csv)?)?, load_csv(&path(&config.test_csv)?)?)
        }
    };
    if config.standardize.unwrap_or(true) {
        standardize(&train, &test)
    } else {
        Ok((train, test))
    }
}

/// Linear model for binary targets without hidden layers; otherwise
/// `d → d¹ → k → k` (multiclass) or `d → d¹ → 1` (binary).
pub fn build_network(n_features: usize, n_outputs: usize, hidden_dim: Option<usize>, seed: u64) -> Result<Network> {
    let mut rng = Rng::new(seed).fork(INIT_STREAM);
    let binary = n_outputs == 1;
    let (head, loss) = if binary {
        (Activation::Identity, Loss::Squared)
    } else {
        (Activation::SoftmaxHead, Loss::CrossEntropy)
    };
    let dims: Vec<usize> = match (hidden_dim, binary) {
        (None, _) => vec![n_features, n_outputs],
        (Some(d1), true) => vec![n_features, d1, 1],
        (Some(d1), false) => vec![n_features, d1, n_outputs, n_outputs],
    };
    Network::mlp(&dims, head, loss, &mut rng)
}

pub fn train_config(config: &ExperimentConfig) -> TrainConfig {
    let mut tc = TrainConfig::new(
        config.epochs.unwrap_or(50),
        config.batch_size,
        config.lr.unwrap_or(0.05),
    );
    tc.eval_every = config.eval_every;
    tc.eval_samples = config.eval_samples;
    tc.silhouette_samples = config.silhouette_samples;
    tc.max_iterations = config.max_iterations;
    tc
}

/// Trains one planned run. Returns the result, all emitted records and the
/// final network.
pub fn execute_run(
    config: &ExperimentConfig,
    config_hash: &str,
    plan: &RunPlan,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<(RunResult, Vec<MetricsRecord>, Network)> {
    let mut net = build_network(train_set.n_features(), train_set.n_outputs(), plan.hidden_dim, plan.seed)?;
    let mut records = Vec::new();
    let mut rng = Rng::new(plan.seed);
    let outcome = train(
        &mut net,
        train_set,
        test_set,
        &plan.noise,
        &train_config(config),
        &mut rng,
        &mut |r| records.push(r.clone()),
    );
    let (outcome, iterations) = match outcome {
        Ok(it) => (RunStatus::Completed, it),
        Err(Error::Divergence { iteration, loss }) => (
            RunStatus::Diverged {
                iteration,
                loss: loss.is_finite().then_some(loss),
            },
            iteration,
        ),
        Err(e) => return Err(e),
    };
    let result = RunResult {
        config_hash: config_hash.to_string(),
        plan: plan.clone(),
        outcome,
        iterations,
        final_record: records.last().cloned(),
    };
    Ok((result, records, net))
}

/// Aggregated accuracies of one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPointSummary {
    pub param: String,
    pub strength: f64,
    pub accuracies: Vec<f64>,
    /// `None` when no run of this point completed.
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
    pub mean_silhouette: Option<f64>,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub hidden_dim: Option<usize>,
    pub regime: NoiseKind,
    /// Index into `grid` of the best mean final test accuracy.
    pub best: Option<usize>,
    pub grid: Vec<GridPointSummary>,
}

impl RegimeSummary {
    pub fn best_point(&self) -> Option<&GridPointSummary> {
        self.best.map(|i| &self.grid[i])
    }
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub experiment: ExperimentKind,
    pub regimes: Vec<RegimeSummary>,
    pub failed_runs: Vec<String>,
    pub missing_runs: Vec<String>,
}

impl Summary {
    pub fn regime(&self, hidden_dim: Option<usize>, kind: NoiseKind) -> Option<&RegimeSummary> {
        self.regimes.iter().find(|r| r.hidden_dim == hidden_dim && r.regime == kind)
    }
}

/// Mean and sample standard deviation (`n − 1` denominator, `0` for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups results by (width, regime, grid point) following the plan order and
/// picks each regime's best grid point; ties go to the weaker noise.
pub fn summarize(config_hash: &str, experiment: ExperimentKind, plans: &[RunPlan], results: &[RunResult]) -> Summary {
    let by_id: BTreeMap<&str, &RunResult> = results.iter().map(|r| (r.plan.id.as_str(), r)).collect();
    let mut regimes: Vec<RegimeSummary> = Vec::new();
    let mut failed_runs = Vec::new();
    let mut missing_runs = Vec::new();
    for plan in plans {
        let idx = match regimes.iter().position(|r| r.hidden_dim == plan.hidden_dim && r.regime == plan.regime) {
            Some(i) => i,
            None => {
                regimes.push(RegimeSummary {
                    hidden_dim: plan.hidden_dim,
                    regime: plan.regime,
                    best: None,
                    grid: Vec::new(),
                });
                regimes.len() - 1
            }
        };
        let grid = &mut regimes[idx].grid;
        let g = match grid.iter().position(|g| g.param == plan.param) {
            Some(i) => i,
            None => {
                grid.push(GridPointSummary {
                    param: plan.param.clone(),
                    strength: plan.strength,
                    accuracies: Vec::new(),
                    mean_accuracy: None,
                    std_accuracy: None,
                    mean_silhouette: None,
                    completed: 0,
                    failed: 0,
                });
                grid.len() - 1
            }
        };
        match by_id.get(plan.id.as_str()) {
            None => missing_runs.push(plan.id.clone()),
            Some(r) => match r.final_accuracy() {
                Some(acc) => {
                    grid[g].accuracies.push(acc);
                    grid[g].completed += 1;
                }
                None => {
                    grid[g].failed += 1;
                    failed_runs.push(plan.id.clone());
                }
            },
        }
    }
    for regime in &mut regimes {
        for point in &mut regime.grid {
            if !point.accuracies.is_empty() {
                let (m, s) = mean_std(&point.accuracies);
                point.mean_accuracy = Some(m);
                point.std_accuracy = Some(s);
            }
            let sils: Vec<f64> = plans
                .iter()
                .filter(|p| p.hidden_dim == regime.hidden_dim && p.regime == regime.regime && p.param == point.param)
                .filter_map(|p| by_id.get(p.id.as_str()))
                .filter(|r| r.completed())
                .filter_map(|r| r.final_record.as_ref().and_then(|f| f.silhouette))
                .collect();
            point.mean_silhouette = (!sils.is_empty()).then(|| mean_std(&sils).0);
        }
        regime.grid.sort_by(|a, b| a.strength.total_cmp(&b.strength));
        let mut best: Option<usize> = None;
        for (i, p) in regime.grid.iter().enumerate() {
            let Some(acc) = p.mean_accuracy else { continue };
            if best.is_none_or(|b| acc > regime.grid[b].mean_accuracy.unwrap_or(f64::NEG_INFINITY)) {
                best = Some(i);
            }
        }
        regime.best = best;
    }
    Summary {
        config_hash: config_hash.to_string(),
        experiment,
        regimes,
        failed_runs,
        missing_runs,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn run_dir(output_dir: &Path, run_id: &str) -> PathBuf {
    output_dir.join("runs").join(run_id)
}

/// Result of `train` over a whole grid.
pub struct ExperimentOutcome {
    pub summary: Summary,
    pub results: Vec<RunResult>,
}

/// Runs the grid, writing `config.json`, per-run `metrics.csv`, `model.json`,
/// `run.json`, and `summary.json` under `output_dir`. Diverged runs are
/// recorded and skipped by the summary.
pub fn run_experiment(config: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<ExperimentOutcome> {
    let config = config.resolved()?;
    let hash = config.hash()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("config.json"), &config)?;

    let plans = plan_runs(&config)?;
    let mut cache: BTreeMap<u64, (Dataset, Dataset)> = BTreeMap::new();
    let mut results = Vec::with_capacity(plans.len());
    for (k, plan) in plans.iter().enumerate() {
        // MADELON data depend on the seed; other datasets are shared.
        let key = if config.experiment == ExperimentKind::Madelon { plan.seed } else { 0 };
        if !cache.contains_key(&key) {
            if config.experiment == ExperimentKind::Madelon {
                cache.clear();
            }
            cache.insert(key, load_data(&config, plan.seed)?);
        }
        let (train_set, test_set) = &cache[&key];
        let (result, records, net) = execute_run(&config, &hash, plan, train_set, test_set)?;

        let dir = run_dir(out, &plan.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let preamble = vec![
            format!("config_hash={hash}"),
            format!("seed={}", plan.seed),
            format!("run={}", plan.id),
            format!("noise={}", plan.noise.label()),
        ];
        save_metrics_csv(&dir.join("metrics.csv"), &preamble, &records)?;
        write_json(
            &dir.join("model.json"),
            &ModelDump {
                config_hash: hash.clone(),
                seed: plan.seed,
                run_id: plan.id.clone(),
                network: net,
            },
        )?;
        write_json(&dir.join("run.json"), &result)?;
        let status = match (&result.outcome, result.final_accuracy()) {
            (RunStatus::Completed, Some(acc)) => format!("test accuracy {:.2}%", 100.0 * acc),
            (other, _) => format!("{other:?}"),
        };
        log(&format!("[{}/{}] {} {status}", k + 1, plans.len(), plan.id));
        results.push(result);
    }
    let summary = summarize(&hash, config.experiment, &plans, &results);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(ExperimentOutcome { summary, results })
}
