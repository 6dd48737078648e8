//! Command-line front end: `gen-madelon`, `train`, `verify`, `report`.

pub mod config;
pub mod report;
pub mod runner;
pub mod verify;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{gen_madelon, save_csv, MadelonConfig};
use crate::error::{Error, Result};
use crate::noise::NoiseKind;
use crate::numerics::Rng;
use config::{ExperimentConfig, ExperimentKind, RegimeGrid};
use runner::RunStatus;
use verify::ToleranceProfile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY_FAILED: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "asni", version, about = "Structured multiplicative noise injection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic two-class dataset as CSV.
    GenMadelon(GenArgs),
    /// Train every (regime, grid point, seed) run of an experiment.
    Train(TrainArgs),
    /// Check the closed-form identities on random instances.
    Verify(VerifyArgs),
    /// Aggregate a finished experiment directory into tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with generator parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    d_total: Option<usize>,
    #[arg(long)]
    d_useful: Option<usize>,
    #[arg(long)]
    d_redundant: Option<usize>,
    #[arg(long)]
    class_sep: Option<f64>,
    #[arg(long)]
    label_flip: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Experiment JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_experiment)]
    experiment: Option<ExperimentKind>,
    /// Noise regimes to run (replaces the configured list).
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    noise_kind: Option<Vec<NoiseKind>>,
    /// λ grid for Gaussian regimes.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Keep-probability grid for Bernoulli dropout.
    #[arg(long, value_delimiter = ',')]
    keep_prob: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    hidden_dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    layer_mask: Option<Vec<usize>>,
    #[arg(long)]
    shared_per_batch: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `default` or `quick`.
    #[arg(long, default_value = "default")]
    profile: String,
    /// Corrupt the penalty closed form (λ → 2λ); the check must then fail.
    #[arg(long)]
    self_test: bool,
    /// Also write the table as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Experiment output directory.
    run_dir: PathBuf,
}

fn parse_kind(s: &str) -> std::result::Result<NoiseKind, String> {
    NoiseKind::parse(s).ok_or_else(|| format!("unknown noise kind {s:?}"))
}

fn parse_experiment(s: &str) -> std::result::Result<ExperimentKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown experiment {s:?}"))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::GenMadelon(a) => cmd_gen_madelon(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Verify(a) => cmd_verify(&a, out),
        Command::Report(a) => cmd_report(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct GenManifest<'a> {
    config: &'a MadelonConfig,
    config_hash: String,
    seed: u64,
    files: Vec<(String, String)>,
}

fn cmd_gen_madelon(a: &GenArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => MadelonConfig::benchmark(0, 0),
    };
    macro_rules! apply {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
    }
    apply!(n_train, n_test, d_total, d_useful, d_redundant, class_sep, label_flip, seed);
    cfg.validate()?;

    let (train, test) = gen_madelon(&cfg, &mut Rng::new(cfg.seed))?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    save_csv(&train, &a.out.join("train.csv"))?;
    save_csv(&test, &a.out.join("test.csv"))?;
    let mut roles = String::from("feature,role\n");
    for (j, r) in cfg.feature_roles().iter().enumerate() {
        roles.push_str(&format!("f{j},{}\n", r.name()));
    }
    let roles_path = a.out.join("roles.csv");
    fs::write(&roles_path, roles).map_err(|e| Error::io(&roles_path, e))?;

    let mut files = Vec::new();
    for name in ["train.csv", "test.csv", "roles.csv"] {
        let p = a.out.join(name);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        files.push((name.to_string(), sha256_hex(&bytes)));
    }
    let manifest = GenManifest {
        config: &cfg,
        config_hash: sha256_hex(serde_json::to_string(&cfg)?.as_bytes()),
        seed: cfg.seed,
        files,
    };
    let path = a.out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    let _ = writeln!(out, "wrote {} train / {} test rows to {}", train.len(), test.len(), a.out.display());
    Ok(EXIT_OK)
}

fn train_config_from_args(a: &TrainArgs) -> Result<ExperimentConfig> {
    let mut c = match (&a.config, a.experiment) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(kind)) => ExperimentConfig::new(kind),
        (None, None) => return Err(Error::InvalidConfig("pass --config or --experiment".into())),
    };
    if let Some(kind) = a.experiment {
        c.experiment = kind;
    }
    if let Some(kinds) = &a.noise_kind {
        c.regimes = kinds.iter().map(|&k| RegimeGrid::new(k)).collect();
    }
    for r in &mut c.regimes {
        if let Some(l) = &a.lambda {
            r.lambdas = Some(l.clone());
        }
        if let Some(p) = &a.keep_prob {
            r.keep_probs = Some(p.clone());
        }
    }
    if let Some(v) = &a.hidden_dims {
        c.hidden_dims = v.clone();
    }
    if let Some(v) = &a.seeds {
        c.seeds = v.clone();
    }
    if let Some(v) = &a.layer_mask {
        c.layer_mask = Some(v.iter().copied().collect());
    }
    if a.shared_per_batch {
        c.shared_per_batch = true;
    }
    if a.lr.is_some() {
        c.lr = a.lr;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if a.epochs.is_some() {
        c.epochs = a.epochs;
    }
    if a.max_iterations.is_some() {
        c.max_iterations = a.max_iterations;
    }
    if let Some(v) = a.eval_every {
        c.eval_every = v;
    }
    if a.mnist_dir.is_some() {
        c.mnist_dir = a.mnist_dir.clone();
    }
    if let Some(v) = &a.output_dir {
        c.output_dir = v.clone();
    }
    c.resolved()
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let config = train_config_from_args(a)?;
    let outcome = runner::run_experiment(&config, &mut |line| {
        let _ = writeln!(out, "{line}");
    })?;
    for r in &outcome.summary.regimes {
        if let Some(b) = r.best_point() {
            let _ = writeln!(
                out,
                "{:>8} {:<14} best {:<12} {:.2} ± {:.2} ({} runs)",
                r.hidden_dim.map_or("linear".into(), |d| format!("d1={d}")),
                r.regime.name(),
                b.param,
                100.0 * b.mean_accuracy.unwrap_or(f64::NAN),
                100.0 * b.std_accuracy.unwrap_or(f64::NAN),
                b.completed
            );
        }
    }
    let _ = writeln!(out, "summary: {}", config.output_dir.join("summary.json").display());
    let diverged = outcome
        .results
        .iter()
        .any(|r| matches!(r.outcome, RunStatus::Diverged { .. }));
    Ok(if diverged { EXIT_DIVERGED } else { EXIT_OK })
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let profile = ToleranceProfile::by_name(&a.profile)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown profile {:?} (default, quick)", a.profile)))?;
    let report = verify::run_verify(a.seed, &profile, a.self_test)?;
    let _ = write!(out, "{}", report.render());
    if let Some(path) = &a.json {
        write_text(path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(if report.all_passed() { EXIT_OK } else { EXIT_VERIFY_FAILED })
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<i32> {
    let outcome = report::run_report(&a.run_dir)?;
    for f in &outcome.files {
        let _ = writeln!(out, "wrote {}", f.display());
    }
    for id in &outcome.summary.missing_runs {
        let _ = writeln!(out, "missing run: {id}");
    }
    for id in &outcome.summary.failed_runs {
        let _ = writeln!(out, "failed run: {id}");
    }
    Ok(EXIT_OK)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
