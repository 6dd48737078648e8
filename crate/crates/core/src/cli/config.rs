use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::MadelonConfig;
use crate::error::{Error, Result};
use crate::noise::{NoiseKind, NoiseSpec, SigmaSpec};

/// Gaussian strength grid used when a regime gives none.
pub const DEFAULT_LAMBDAS: [f64; 5] = [0.05, 0.1, 0.25, 0.5, 1.0];
/// Bernoulli keep-probability grid used when a regime gives none.
pub const DEFAULT_KEEP_PROBS: [f64; 2] = [0.5, 0.8];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Madelon,
    Mnist,
    Custom,
}

/// One noise regime and the hyperparameter values swept for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeGrid {
    pub kind: NoiseKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<SigmaSpec>,
}

impl RegimeGrid {
    pub fn new(kind: NoiseKind) -> Self {
        Self {
            kind,
            lambdas: None,
            keep_probs: None,
            sigma: None,
        }
    }

    pub fn with_lambdas(mut self, lambdas: &[f64]) -> Self {
        self.lambdas = Some(lambdas.to_vec());
        self
    }

    pub fn with_keep_probs(mut self, ps: &[f64]) -> Self {
        self.keep_probs = Some(ps.to_vec());
        self
    }

    /// Grid points in ascending noise strength.
    pub fn expand(&self, shared: bool, mask: Option<&BTreeSet<usize>>) -> Result<Vec<NoiseSpec>> {
        let mut specs: Vec<NoiseSpec> = match self.kind {
            NoiseKind::None => vec![NoiseSpec::none()],
            NoiseKind::IidBernoulli => {
                let ps = self.keep_probs.clone().unwrap_or_else(|| DEFAULT_KEEP_PROBS.to_vec());
                ps.iter().map(|&p| NoiseSpec::bernoulli(p)).collect()
            }
            kind => {
                let lambdas = self.lambdas.clone().unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec());
                lambdas
                    .iter()
                    .map(|&l| match kind {
                        NoiseKind::IidGaussian => Ok(NoiseSpec::gaussian(l)),
                        NoiseKind::Asni => Ok(NoiseSpec::asni(l)),
                        _ => self
                            .sigma
                            .clone()
                            .map(|s| NoiseSpec::sni_fixed(l, s))
                            .ok_or_else(|| Error::InvalidConfig("sni_fixed regime needs a sigma".into())),
                    })
                    .collect::<Result<_>>()?
            }
        };
        if specs.is_empty() {
            return Err(Error::InvalidConfig(format!("empty grid for regime {}", self.kind.name())));
        }
        for spec in &mut specs {
            spec.shared_per_batch = shared;
            if self.kind != NoiseKind::None {
                spec.layer_mask = mask.cloned();
            }
        }
        specs.sort_by(|a, b| a.strength().total_cmp(&b.strength()));
        Ok(specs)
    }
}

fn default_regimes() -> Vec<RegimeGrid> {
    vec![
        RegimeGrid::new(NoiseKind::None),
        RegimeGrid::new(NoiseKind::IidGaussian),
        RegimeGrid::new(NoiseKind::IidBernoulli),
        RegimeGrid::new(NoiseKind::Asni),
    ]
}

fn default_batch_size() -> usize {
    64
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_eval_every() -> usize {
    500
}

fn default_samples() -> usize {
    1000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Everything needed to reproduce a family of training runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub madelon: Option<MadelonConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_csv: Option<PathBuf>,
    /// First-hidden-layer widths to sweep; empty means a linear model.
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<RegimeGrid>,
    #[serde(default)]
    pub shared_per_batch: bool,
    /// Layer inputs receiving noise; `None` means all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_mask: Option<BTreeSet<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_samples")]
    pub silhouette_samples: usize,
    /// Defaults to `true` except for MNIST.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            madelon: None,
            mnist_dir: None,
            train_csv: None,
            test_csv: None,
            hidden_dims: Vec::new(),
            regimes: default_regimes(),
            shared_per_batch: false,
            layer_mask: None,
            lr: None,
            batch_size: default_batch_size(),
            epochs: None,
            max_iterations: None,
            seeds: default_seeds(),
            eval_every: default_eval_every(),
            eval_samples: default_samples(),
            silhouette_samples: default_samples(),
            standardize: None,
            output_dir: default_output_dir(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fills experiment-dependent defaults (learning rate, epochs, dataset
    /// parameters, standardization) so the hash covers every effective value.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        match c.experiment {
            ExperimentKind::Madelon => {
                c.madelon.get_or_insert_with(|| MadelonConfig::benchmark(800, 0));
                c.lr.get_or_insert(0.01);
                c.epochs.get_or_insert(200);
                c.standardize.get_or_insert(true);
            }
            ExperimentKind::Mnist => {
                if c.hidden_dims.is_empty() {
                    c.hidden_dims = vec![256];
                }
                c.mnist_dir.get_or_insert_with(|| PathBuf::from("data/mnist"));
                c.lr.get_or_insert(0.05);
                c.epochs.get_or_insert(50);
                c.standardize.get_or_insert(false);
            }
            ExperimentKind::Custom => {
                if c.train_csv.is_none() || c.test_csv.is_none() {
                    return Err(Error::InvalidConfig("custom experiments need train_csv and test_csv".into()));
                }
                c.lr.get_or_insert(0.05);
                c.epochs.get_or_insert(50);
                c.standardize.get_or_insert(true);
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.regimes.is_empty() {
            return bad("at least one noise regime is required");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be ≥ 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be ≥ 2");
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("lr must be > 0");
            }
        }
        if self.hidden_dims.contains(&0) {
            return bad("hidden dims must be ≥ 1");
        }
        if let Some(m) = &self.madelon {
            m.validate()?;
        }
        for r in &self.regimes {
            r.expand(self.shared_per_batch, self.layer_mask.as_ref())?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = serde_json::to_string(&c)?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
