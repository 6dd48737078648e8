use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::runner::{plan_runs, run_dir, summarize, RunResult, Summary};
use crate::error::{Error, Result};
use crate::metrics::read_metrics_csv;

/// Files written by [`run_report`] and the runs it could not use.
#[derive(Debug)]
pub struct ReportOutcome {
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into())
}

fn width_label(d: Option<usize>) -> String {
    d.map_or("linear".into(), |d| d.to_string())
}

/// Aggregates the runs under `dir` (as written by `train`) into
/// `dir/report/`. Missing or failed runs are listed; at least one completed
/// run is required.
pub fn run_report(dir: &Path) -> Result<ReportOutcome> {
    let config_path = dir.join("config.json");
    if !config_path.exists() {
        return Err(Error::InvalidConfig(format!("{} holds no experiment (config.json missing)", dir.display())));
    }
    let config = ExperimentConfig::load(&config_path)?;
    let hash = config.hash()?;
    let plans = plan_runs(&config)?;

    let mut results = Vec::new();
    for plan in &plans {
        let path = run_dir(dir, &plan.id).join("run.json");
        if let Ok(text) = fs::read_to_string(&path) {
            let r: RunResult = serde_json::from_str(&text)?;
            results.push(r);
        }
    }
    if !results.iter().any(RunResult::completed) {
        return Err(Error::InvalidConfig(format!("{} has no completed runs", dir.display())));
    }
    let summary = summarize(&hash, config.experiment, &plans, &results);

    let out = dir.join("report");
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut files = Vec::new();
    let mut write = |name: &str, text: String| -> Result<()> {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        files.push(path);
        Ok(())
    };

    // Long tables: one row per (width, regime) at the regime's best grid point.
    let mut acc_csv = String::from("hidden_dim,regime,best_param,mean_accuracy,std_accuracy,runs\n");
    let mut sil_csv = String::from("hidden_dim,regime,best_param,mean_silhouette\n");
    for r in &summary.regimes {
        let best = r.best_point();
        let _ = writeln!(
            acc_csv,
            "{},{},{},{},{},{}",
            width_label(r.hidden_dim),
            r.regime.name(),
            best.map_or("-", |b| b.param.as_str()),
            pct(best.and_then(|b| b.mean_accuracy)),
            pct(best.and_then(|b| b.std_accuracy)),
            best.map_or(0, |b| b.completed),
        );
        let _ = writeln!(
            sil_csv,
            "{},{},{},{}",
            width_label(r.hidden_dim),
            r.regime.name(),
            best.map_or("-", |b| b.param.as_str()),
            best.and_then(|b| b.mean_silhouette).map_or("-".into(), |s| format!("{s:.4}")),
        );
    }
    write("accuracy.csv", acc_csv)?;
    write("silhouette.csv", sil_csv)?;

    // Markdown pivots: widths down, regimes across.
    let mut widths: Vec<Option<usize>> = Vec::new();
    let mut kinds = Vec::new();
    for r in &summary.regimes {
        if !widths.contains(&r.hidden_dim) {
            widths.push(r.hidden_dim);
        }
        if !kinds.contains(&r.regime) {
            kinds.push(r.regime);
        }
    }
    let pivot = |title: &str, cell: &dyn Fn(Option<usize>, crate::noise::NoiseKind) -> String| {
        let mut s = format!("### {title}\n\n| d1 |");
        for k in &kinds {
            let _ = write!(s, " {} |", k.name());
        }
        s.push_str("\n|---|");
        for _ in &kinds {
            s.push_str("---|");
        }
        s.push('\n');
        for &w in &widths {
            let _ = write!(s, "| {} |", width_label(w));
            for &k in &kinds {
                let _ = write!(s, " {} |", cell(w, k));
            }
            s.push('\n');
        }
        s
    };
    let acc_cell = |w: Option<usize>, k| {
        summary
            .regime(w, k)
            .and_then(|r| r.best_point())
            .map_or("-".into(), |b| format!("{} ± {}", pct(b.mean_accuracy), pct(b.std_accuracy)))
    };
    let sil_cell = |w: Option<usize>, k| {
        summary
            .regime(w, k)
            .and_then(|r| r.best_point())
            .and_then(|b| b.mean_silhouette)
            .map_or("-".into(), |s| format!("{s:.3}"))
    };
    let mut md = pivot("Best mean test accuracy (%)", &acc_cell);
    if !summary.missing_runs.is_empty() || !summary.failed_runs.is_empty() {
        md.push_str("\nIncomplete runs:\n\n");
        for id in &summary.missing_runs {
            let _ = writeln!(md, "- {id} (missing)");
        }
        for id in &summary.failed_runs {
            let _ = writeln!(md, "- {id} (failed)");
        }
    }
    write("accuracy.md", md)?;
    write("silhouette.md", pivot("Silhouette of last hidden layer", &sil_cell))?;

    // Long-format training curves.
    let mut series = String::from("run_id,hidden_dim,regime,param,seed,iteration,metric,layer,value\n");
    for r in &results {
        let path = run_dir(dir, &r.plan.id).join("metrics.csv");
        let Ok(file) = fs::File::open(&path) else { continue };
        let records = read_metrics_csv(BufReader::new(file))?;
        let p = &r.plan;
        let prefix = format!("{},{},{},{},{}", p.id, width_label(p.hidden_dim), p.regime.name(), p.param, p.seed);
        for rec in records {
            let mut row = |metric: &str, layer: String, value: f64| {
                let _ = writeln!(series, "{prefix},{},{metric},{layer},{value}", rec.iteration);
            };
            row("train_loss", String::new(), rec.train_loss);
            row("test_loss", String::new(), rec.test_loss);
            row("test_accuracy", String::new(), rec.test_accuracy);
            for (l, v) in rec.corr_norm.iter().enumerate() {
                row("corr_norm", (l + 1).to_string(), *v);
            }
            for (l, v) in rec.zero_fraction.iter().enumerate() {
                row("zero_fraction", (l + 1).to_string(), *v);
            }
            if let Some(s) = rec.silhouette {
                row("silhouette", String::new(), s);
            }
        }
    }
    write("series.csv", series)?;

    Ok(ReportOutcome { summary, files })
}
