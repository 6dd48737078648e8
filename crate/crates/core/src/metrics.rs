//! Evaluation quantities: accuracy, activation correlation norm, silhouette
//! coefficient and activation sparsity, plus the metrics CSV stream.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{covariance, Matrix};

/// Default tolerance below which an activation counts as zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-12;
/// Variance below which a unit is treated as constant in the correlation matrix.
const VARIANCE_FLOOR: f64 = 1e-12;

/// Class index per row: argmax for one-hot / score matrices (ties go to the
/// lowest index), and `{0 ↔ −1, 1 ↔ +1}` for a single column of signed values.
pub fn class_indices(values: &Matrix) -> Vec<usize> {
    if values.cols() == 1 {
        return values
            .as_slice()
            .iter()
            .map(|&v| usize::from(v > 0.0))
            .collect();
    }
    values
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows whose predicted class matches the label.
pub fn accuracy(predictions: &Matrix, labels: &Matrix) -> Result<f64> {
    if predictions.shape() != labels.shape() {
        return Err(Error::dims(
            "accuracy",
            format!("{:?} vs {:?}", predictions.shape(), labels.shape()),
        ));
    }
    if predictions.rows() == 0 {
        return Err(Error::dims("accuracy", "no rows"));
    }
    let hits = class_indices(predictions)
        .iter()
        .zip(class_indices(labels))
        .filter(|(p, l)| **p == *l)
        .count();
    Ok(hits as f64 / predictions.rows() as f64)
}

/// Correlation matrix `T_ij = Σ_ij / √(Σ_ii Σ_jj)` of the activation columns.
///
/// Units with variance below `1e-12` get zero off-diagonal entries; the
/// diagonal is always one.
pub fn correlation_matrix(activations: &Matrix) -> Result<Matrix> {
    if activations.rows() < 2 {
        return Err(Error::DegenerateBatch {
            rows: activations.rows(),
        });
    }
    let sigma = covariance(activations)?;
    let d = sigma.rows();
    let sd: Vec<Option<f64>> = (0..d)
        .map(|i| {
            let v = sigma[(i, i)];
            (v >= VARIANCE_FLOOR).then(|| v.sqrt())
        })
        .collect();
    Ok(Matrix::from_fn(d, d, |i, j| {
        if i == j {
            return 1.0;
        }
        match (sd[i], sd[j]) {
            (Some(a), Some(b)) => sigma[(i, j)] / (a * b),
            _ => 0.0,
        }
    }))
}

/// Frobenius norm of [`correlation_matrix`]; ranges from `√d` (uncorrelated)
/// to `d` (all units perfectly correlated).
pub fn correlation_norm(activations: &Matrix) -> Result<f64> {
    Ok(correlation_matrix(activations)?.frobenius_norm())
}

/// Mean silhouette coefficient under Euclidean distance.
///
/// `a(i)` is the mean distance to the rest of its own cluster, `b(i)` the
/// smallest mean distance to another cluster. Singletons score 0.
pub fn silhouette(points: &Matrix, labels: &[usize]) -> Result<f64> {
    let n = points.rows();
    if labels.len() != n {
        return Err(Error::dims(
            "silhouette",
            format!("{n} points, {} labels", labels.len()),
        ));
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Contract(format!(
            "silhouette needs at least 2 clusters, got {}",
            ids.len()
        )));
    }
    let cluster_of: Vec<usize> = labels
        .iter()
        .map(|l| ids.binary_search(l).expect("label present"))
        .collect();
    let k = ids.len();
    let mut sizes = vec![0usize; k];
    for &c in &cluster_of {
        sizes[c] += 1;
    }

    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let pi = points.row(i);
        for j in 0..n {
            if i == j {
                continue;
            }
            let dist = pi
                .iter()
                .zip(points.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            sums[cluster_of[j]] += dist;
        }
        let own = cluster_of[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Fraction of entries with `|v| ≤ tol`.
pub fn zero_fraction(activations: &Matrix, tol: f64) -> f64 {
    let values = activations.as_slice();
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|v| v.abs() <= tol).count() as f64 / values.len() as f64
}

/// Histogram of the entries with `|v| > tol`, for sparsity plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub zeros: u64,
}

pub fn nonzero_histogram(activations: &Matrix, tol: f64, bins: usize) -> Histogram {
    let nonzero: Vec<f64> = activations
        .as_slice()
        .iter()
        .copied()
        .filter(|v| v.abs() > tol)
        .collect();
    let zeros = (activations.as_slice().len() - nonzero.len()) as u64;
    let bins = bins.max(1);
    let lo = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = nonzero.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if nonzero.is_empty() {
        return Histogram {
            edges: vec![0.0; bins + 1],
            counts: vec![0; bins],
            zeros,
        };
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|b| lo + width * b as f64).collect();
    let mut counts = vec![0u64; bins];
    for v in nonzero {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram {
        edges,
        counts,
        zeros,
    }
}

/// One evaluation point of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    /// Correlation norm per monitored hidden layer (first hidden layer first).
    pub corr_norm: Vec<f64>,
    /// Zero-activation fraction per monitored hidden layer.
    pub zero_fraction: Vec<f64>,
    pub silhouette: Option<f64>,
}

/// Column order of the metrics CSV.
pub const METRICS_HEADER: [&str; 9] = [
    "iteration",
    "train_loss",
    "test_loss",
    "test_accuracy",
    "corr_norm_l1",
    "corr_norm_l2",
    "zero_frac_l1",
    "zero_frac_l2",
    "silhouette",
];

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes records as CSV. `preamble` lines are emitted first as `# ` comments.
pub fn write_metrics_csv<W: Write>(
    mut out: W,
    preamble: &[String],
    records: &[MetricsRecord],
) -> Result<()> {
    let io_err = |e| Error::io("<metrics csv>", e);
    for line in preamble {
        writeln!(out, "# {line}").map_err(io_err)?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            format!("{}", r.train_loss),
            format!("{}", r.test_loss),
            format!("{}", r.test_accuracy),
            opt_cell(r.corr_norm.first().copied()),
            opt_cell(r.corr_norm.get(1).copied()),
            opt_cell(r.zero_fraction.first().copied()),
            opt_cell(r.zero_fraction.get(1).copied()),
            opt_cell(r.silhouette),
        ])?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn save_metrics_csv(path: &Path, preamble: &[String], records: &[MetricsRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics_csv(std::io::BufWriter::new(file), preamble, records)
}

/// Reads a metrics CSV, skipping `#` comment lines.
pub fn read_metrics_csv<R: BufRead>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| Error::Contract(format!("bad metrics cell {s:?}: {e}")))
        }
    };
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        if row.len() != METRICS_HEADER.len() {
            return Err(Error::Contract(format!(
                "metrics row has {} cells, expected {}",
                row.len(),
                METRICS_HEADER.len()
            )));
        }
        let req = |i: usize| -> Result<f64> {
            parse(&row[i])?.ok_or_else(|| Error::Contract(format!("missing {}", METRICS_HEADER[i])))
        };
        let iteration = row[0]
            .parse::<usize>()
            .map_err(|e| Error::Contract(format!("bad iteration {:?}: {e}", &row[0])))?;
        let corr_norm = [parse(&row[4])?, parse(&row[5])?].into_iter().flatten().collect();
        let zero_fraction = [parse(&row[6])?, parse(&row[7])?].into_iter().flatten().collect();
        records.push(MetricsRecord {
            iteration,
            train_loss: req(1)?,
            test_loss: req(2)?,
            test_accuracy: req(3)?,
            corr_norm,
            zero_fraction,
            silhouette: parse(&row[8])?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_standard_gaussian, Rng};

    #[test]
    fn perfect_predictions_score_one() {
        let labels = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(accuracy(&labels, &labels).unwrap(), 1.0);
        let signs = Matrix::column_vector(&[1.0, -1.0, 1.0]);
        let preds = Matrix::column_vector(&[0.3, -2.0, 5.0]);
        assert_eq!(accuracy(&preds, &signs).unwrap(), 1.0);
    }

    #[test]
    fn uniform_logits_predict_class_zero() {
        let mut labels = Matrix::zeros(20, 10);
        for i in 0..20 {
            labels[(i, i % 10)] = 1.0;
        }
        let logits = Matrix::filled(20, 10, 0.3);
        assert!(class_indices(&logits).iter().all(|&c| c == 0));
        assert!((accuracy(&logits, &labels).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn accuracy_matches_loop_oracle() {
        let mut rng = Rng::new(31);
        let preds = sample_standard_gaussian(&mut rng, 100, 4);
        let mut labels = Matrix::zeros(100, 4);
        for i in 0..100 {
            labels[(i, rng.below(4))] = 1.0;
        }
        let mut hits = 0;
        for i in 0..100 {
            let mut best = 0;
            for k in 1..4 {
                if preds[(i, k)] > preds[(i, best)] {
                    best = k;
                }
            }
            if labels[(i, best)] == 1.0 {
                hits += 1;
            }
        }
        assert_eq!(accuracy(&preds, &labels).unwrap(), hits as f64 / 100.0);
    }

    #[test]
    fn correlation_norm_limits() {
        let mut rng = Rng::new(32);
        let x = sample_standard_gaussian(&mut rng, 20_000, 5);
        let norm = correlation_norm(&x).unwrap();
        assert!((norm - 5f64.sqrt()).abs() < 0.02, "norm {norm}");

        let col: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let pair = Matrix::from_fn(50, 2, |i, j| col[i] * (1.0 + j as f64));
        assert!((correlation_norm(&pair).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_norm_matches_double_loop() {
        let mut rng = Rng::new(33);
        let base = sample_standard_gaussian(&mut rng, 200, 8);
        // Mix columns so the correlations are far from zero.
        let mix = sample_standard_gaussian(&mut rng, 8, 8);
        let x = base.matmul(&mix).unwrap();
        let (n, d) = x.shape();
        let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64).collect();
        let cov = |a: usize, b: usize| {
            (0..n).map(|i| (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b])).sum::<f64>() / n as f64
        };
        let mut sq = 0.0;
        for a in 0..d {
            for b in 0..d {
                let t = if a == b { 1.0 } else { cov(a, b) / (cov(a, a) * cov(b, b)).sqrt() };
                sq += t * t;
            }
        }
        assert!((correlation_norm(&x).unwrap() - sq.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dead_units_do_not_produce_nan() {
        let x = Matrix::from_fn(10, 3, |i, j| if j == 1 { 0.0 } else { (i * (j + 1)) as f64 });
        let t = correlation_matrix(&x).unwrap();
        assert!(t.is_finite());
        assert_eq!(t[(1, 1)], 1.0);
        assert_eq!(t[(0, 1)], 0.0);
    }

    #[test]
    fn silhouette_two_far_clusters() {
        let mut rng = Rng::new(34);
        let mut pts = sample_standard_gaussian(&mut rng, 40, 2).scale(0.1);
        let mut labels = vec![0; 40];
        for i in 20..40 {
            pts[(i, 0)] += 100.0;
            labels[i] = 1;
        }
        assert!(silhouette(&pts, &labels).unwrap() > 0.9);
    }

    #[test]
    fn silhouette_hand_computed_square() {
        let pts = Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]).unwrap();
        let labels = [0, 0, 1, 1];
        // a = 1; b = (10 + √101)/2 for every point by symmetry.
        let b = (10.0 + 101f64.sqrt()) / 2.0;
        let expected = 1.0 - 1.0 / b;
        assert!((silhouette(&pts, &labels).unwrap() - expected).abs() < 1e-14);
        let relabeled = [7, 7, 3, 3];
        assert_eq!(silhouette(&pts, &relabeled).unwrap(), silhouette(&pts, &labels).unwrap());
    }

    #[test]
    fn silhouette_needs_two_clusters_and_scores_singletons_zero() {
        let pts = Matrix::zeros(3, 2);
        assert!(matches!(silhouette(&pts, &[1, 1, 1]), Err(Error::Contract(_))));
        let pts = Matrix::from_rows(&[[0.0], [1.0], [5.0]]).unwrap();
        // Point 2 is a singleton and contributes 0.
        let s = silhouette(&pts, &[0, 0, 1]).unwrap();
        let s0 = (5.0 - 1.0) / 5.0;
        let s1 = (4.0 - 1.0) / 4.0;
        assert!((s - (s0 + s1) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_fraction_cases() {
        assert_eq!(zero_fraction(&Matrix::zeros(3, 3), DEFAULT_ZERO_TOL), 1.0);
        assert_eq!(zero_fraction(&Matrix::ones(3, 3), DEFAULT_ZERO_TOL), 0.0);
        let mut rng = Rng::new(35);
        let relu = sample_standard_gaussian(&mut rng, 1000, 100).map(|v| v.max(0.0));
        let z = zero_fraction(&relu, DEFAULT_ZERO_TOL);
        assert!((z - 0.5).abs() <= 0.01, "zero fraction {z}");
        let h = nonzero_histogram(&relu, DEFAULT_ZERO_TOL, 20);
        assert_eq!(h.counts.iter().sum::<u64>() + h.zeros, 100_000);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let records = vec![
            MetricsRecord {
                iteration: 0,
                train_loss: 2.5,
                test_loss: 2.25,
                test_accuracy: 0.1,
                corr_norm: vec![3.0, 1.5],
                zero_fraction: vec![0.5, 0.25],
                silhouette: None,
            },
            MetricsRecord {
                iteration: 100,
                train_loss: 0.1,
                test_loss: 0.2,
                test_accuracy: 0.95,
                corr_norm: vec![],
                zero_fraction: vec![],
                silhouette: Some(0.4),
            },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &["seed=1".to_string()], &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed=1\niteration,train_loss"));
        let back = read_metrics_csv(&buf[..]).unwrap();
        assert_eq!(back, records);
    }
}
