//! Closed forms for noisy linear models and the Monte Carlo estimators they
//! are checked against.
//!
//! All functions treat a single linear predictor `u = wᵀx` without bias and
//! noise `R ~ N(1, λΣ)` multiplying the inputs entrywise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{covariance, dot, psd_factor, whitening_matrix, Matrix, Rng, DEFAULT_JITTER};

/// Largest covariance condition number accepted by [`whitening_equivalence`].
pub const MAX_WHITENING_CONDITION: f64 = 1e6;
/// Eigenvalue floor used when whitening.
const WHITENING_FLOOR: f64 = 1e-12;
/// Slack for the entrywise sign check of `C ⊙ Σ`.
const NONNEG_TOL: f64 = 1e-12;

/// Scalar loss `ℓ_y(u)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(u − y)²`.
    Squared,
    /// `log(1 + exp(−y·u))` with `y ∈ {−1, +1}`.
    Logistic,
    /// `max(0, 1 − y·u)`; not twice differentiable.
    Hinge,
}

impl LossKind {
    pub fn value(self, u: f64, y: f64) -> f64 {
        match self {
            LossKind::Squared => (u - y) * (u - y),
            LossKind::Logistic => softplus(-y * u),
            LossKind::Hinge => (1.0 - y * u).max(0.0),
        }
    }

    /// `ℓ″_y(u)`.
    pub fn second_derivative(self, u: f64, y: f64) -> Result<f64> {
        match self {
            LossKind::Squared => Ok(2.0),
            LossKind::Logistic => {
                let s = sigmoid(y * u);
                Ok(s * (1.0 - s))
            }
            LossKind::Hinge => Err(Error::UnsupportedLoss("hinge")),
        }
    }
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn check_problem(w: &[f64], x: &Matrix, y: &[f64], op: &'static str) -> Result<()> {
    if x.cols() != w.len() {
        return Err(Error::dims(op, format!("w has {} entries, x has {} columns", w.len(), x.cols())));
    }
    if x.rows() != y.len() {
        return Err(Error::dims(op, format!("{} rows vs {} targets", x.rows(), y.len())));
    }
    if x.rows() == 0 {
        return Err(Error::dims(op, "no examples"));
    }
    Ok(())
}

fn check_square(m: &Matrix, d: usize, op: &'static str, what: &str) -> Result<()> {
    if m.shape() != (d, d) {
        return Err(Error::dims(op, format!("{what} is {:?}, expected {d}×{d}", m.shape())));
    }
    Ok(())
}

/// `λ Σᵢⱼ Cᵢⱼ Σᵢⱼ wᵢ wⱼ`.
pub fn hadamard_penalty(w: &[f64], c: &Matrix, sigma: &Matrix, lambda: f64) -> Result<f64> {
    let d = w.len();
    check_square(c, d, "hadamard_penalty", "C")?;
    check_square(sigma, d, "hadamard_penalty", "Σ")?;
    let mut total = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += c[(i, j)] * sigma[(i, j)] * w[j];
        }
        total += w[i] * row;
    }
    Ok(lambda * total)
}

/// `(1/N) Σ ℓ_{yᵢ}(wᵀxᵢ)`.
pub fn plain_loss(w: &[f64], x: &Matrix, y: &[f64], loss: LossKind) -> Result<f64> {
    check_problem(w, x, y, "plain_loss")?;
    let total: f64 = x.row_iter().zip(y).map(|(xi, &yi)| loss.value(dot(w, xi), yi)).sum();
    Ok(total / x.rows() as f64)
}

/// Closed form next to a Monte Carlo estimate of the noisy squared loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyReport {
    pub plain_loss: f64,
    /// `λ wᵀ(C ⊙ Σ)w`.
    pub penalty: f64,
    pub mc_objective: f64,
    /// Zero only when every draw coincides with the clean loss (`λ = 0` or `w = 0`).
    pub mc_stderr: f64,
    pub num_draws: usize,
}

impl PenaltyReport {
    pub fn closed_form(&self) -> f64 {
        self.plain_loss + self.penalty
    }

    /// `|mc − closed form|` in standard errors (`∞` if they differ with zero stderr).
    pub fn z_score(&self) -> f64 {
        let gap = (self.mc_objective - self.closed_form()).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.mc_stderr
        }
    }
}

/// Welford running mean and variance.
#[derive(Clone, Copy, Default)]
struct Running {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    /// Variance of the mean.
    fn mean_variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64 / self.n as f64
        }
    }
}

/// Per-example draw counts summing to `num_draws`, each at least 2.
fn stratify(num_draws: usize, n: usize) -> Result<Vec<usize>> {
    if num_draws < 2 * n {
        return Err(Error::InvalidConfig(format!(
            "{num_draws} draws cannot give 2 per example across {n} examples"
        )));
    }
    let base = num_draws / n;
    let extra = num_draws % n;
    Ok((0..n).map(|i| base + usize::from(i < extra)).collect())
}

/// Mean over examples of per-example means, with its standard error.
fn combine(strata: &[Running]) -> (f64, f64) {
    let n = strata.len() as f64;
    let mean = strata.iter().map(|s| s.mean).sum::<f64>() / n;
    let var = strata.iter().map(Running::mean_variance).sum::<f64>() / (n * n);
    (mean, var.sqrt())
}

/// `r = 1 + s·(U ε)` for a fresh standard normal `ε`.
fn draw_noise(rng: &mut Rng, factor: &Matrix, scale: f64, eps: &mut [f64], r: &mut [f64]) {
    eps.iter_mut().for_each(|e| *e = rng.standard_normal());
    for (j, rj) in r.iter_mut().enumerate() {
        *rj = 1.0 + scale * dot(factor.row(j), eps);
    }
}

/// `wᵀ(r ⊙ x)`.
fn noisy_margin(w: &[f64], r: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(r).zip(x).map(|((wi, ri), xi)| wi * ri * xi).sum()
}

/// Monte Carlo estimate of `(1/N) Σ E (wᵀ(Rᵢ ⊙ xᵢ) − yᵢ)²` with
/// `R ~ N(1, λ UUᵀ)`, next to the clean loss and `λ wᵀ(C ⊙ UUᵀ)w`.
///
/// Inputs are centered internally. `num_draws` noise vectors are split evenly
/// across examples.
pub fn mc_noisy_squared_loss(
    rng: &mut Rng,
    w: &[f64],
    x: &Matrix,
    y: &[f64],
    sigma_factor: &Matrix,
    lambda: f64,
    num_draws: usize,
) -> Result<PenaltyReport> {
    check_problem(w, x, y, "mc_noisy_squared_loss")?;
    let d = w.len();
    if sigma_factor.rows() != d {
        return Err(Error::dims(
            "mc_noisy_squared_loss",
            format!("Σ factor has {} rows, expected {d}", sigma_factor.rows()),
        ));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidNoise(format!("lambda must be ≥ 0, got {lambda}")));
    }
    let xc = x.sub_row_vector(&x.col_means());
    let c = covariance(x)?;
    let sigma = sigma_factor.matmul_nt(sigma_factor)?;
    let penalty = hadamard_penalty(w, &c, &sigma, lambda)?;

    let counts = stratify(num_draws, xc.rows())?;
    let scale = lambda.sqrt();
    let mut eps = vec![0.0; sigma_factor.cols()];
    let mut r = vec![0.0; d];
    let mut strata = vec![Running::default(); xc.rows()];
    let mut plain = 0.0;
    for (i, (xi, &yi)) in xc.row_iter().zip(y).enumerate() {
        plain += (dot(w, xi) - yi).powi(2);
        for _ in 0..counts[i] {
            draw_noise(rng, sigma_factor, scale, &mut eps, &mut r);
            strata[i].push((noisy_margin(w, &r, xi) - yi).powi(2));
        }
    }
    let (mc_objective, mc_stderr) = combine(&strata);
    Ok(PenaltyReport {
        plain_loss: plain / xc.rows() as f64,
        penalty,
        mc_objective,
        mc_stderr,
        num_draws,
    })
}

/// `J(w) = (1/N) Σ ℓ″_{yᵢ}(wᵀxᵢ) xᵢxᵢᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureMatrix {
    pub j: Matrix,
}

/// Curvature of the empirical loss at `w`, on the data as given.
pub fn curvature_matrix(w: &[f64], x: &Matrix, y: &[f64], loss: LossKind) -> Result<CurvatureMatrix> {
    check_problem(w, x, y, "curvature_matrix")?;
    let d = w.len();
    let mut scaled = x.clone();
    for (i, &yi) in y.iter().enumerate() {
        let h = loss.second_derivative(dot(w, x.row(i)), yi)?;
        scaled.row_mut(i).iter_mut().for_each(|v| *v *= h);
    }
    let mut j = scaled.matmul_tn(x)?.scale(1.0 / x.rows() as f64);
    j.symmetrize_from_upper();
    debug_assert_eq!(j.shape(), (d, d));
    Ok(CurvatureMatrix { j })
}

/// Sampling scheme for [`second_order_residual`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualEstimator {
    /// One loss evaluation per noise draw.
    Direct,
    /// Antithetic pairs `1 ± √λ Uε` with the exact second-order term as a
    /// control variate; the remaining variance is of order `λ²`.
    Antithetic,
}

/// Gap between the noisy objective and its second-order expansion at one `λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub lambda: f64,
    pub plain_loss: f64,
    /// `(λ/2) wᵀ(J(w) ⊙ Σ)w`.
    pub second_order: f64,
    pub mc_objective: f64,
    /// `|mc − plain − second_order|`.
    pub residual: f64,
    pub stderr: f64,
}

/// Residual of the second-order expansion for each `λ` in `lambda_grid`.
///
/// Every draw samples a full noise vector `R = 1 + √λ Uε` with `UUᵀ = Σ`. The
/// estimator accumulates `ℓ(wᵀ(R⊙x)) − ℓ(wᵀx) − ½ℓ″(wᵀx)·λ(w⊙x)ᵀΣ(w⊙x)` per
/// draw, whose mean is the residual itself; this avoids cancellation against
/// the clean loss.
#[allow(clippy::too_many_arguments)]
pub fn second_order_residual(
    rng: &mut Rng,
    w: &[f64],
    x: &Matrix,
    y: &[f64],
    sigma: &Matrix,
    loss: LossKind,
    lambda_grid: &[f64],
    num_draws: usize,
    estimator: ResidualEstimator,
) -> Result<Vec<ResidualPoint>> {
    check_problem(w, x, y, "second_order_residual")?;
    let d = w.len();
    check_square(sigma, d, "second_order_residual", "Σ")?;
    let j = curvature_matrix(w, x, y, loss)?.j;
    let plain = plain_loss(w, x, y, loss)?;
    let factor = psd_factor(sigma, DEFAULT_JITTER)?;
    let n = x.rows();

    let margins: Vec<f64> = x.row_iter().map(|xi| dot(w, xi)).collect();
    let curv: Vec<f64> = margins
        .iter()
        .zip(y)
        .map(|(&m, &yi)| loss.second_derivative(m, yi))
        .collect::<Result<_>>()?;
    // (w⊙xᵢ)ᵀ Σ (w⊙xᵢ)
    let quad: Vec<f64> = x
        .row_iter()
        .map(|xi| {
            let a: Vec<f64> = w.iter().zip(xi).map(|(wi, xij)| wi * xij).collect();
            let sa = sigma.matvec(&a).expect("square Σ");
            dot(&a, &sa)
        })
        .collect();

    let counts = match estimator {
        ResidualEstimator::Direct => stratify(num_draws, n)?,
        ResidualEstimator::Antithetic => stratify(num_draws / 2, n)?,
    };
    let mut eps = vec![0.0; d];
    let mut r = vec![0.0; d];
    let mut r_anti = vec![0.0; d];
    let mut out = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidNoise(format!("lambda must be ≥ 0, got {lambda}")));
        }
        let second_order = 0.5 * hadamard_penalty(w, &j, sigma, lambda)?;
        let scale = lambda.sqrt();
        let mut strata = vec![Running::default(); n];
        for (i, xi) in x.row_iter().enumerate() {
            let (m, yi, h) = (margins[i], y[i], curv[i]);
            let base = loss.value(m, yi);
            for _ in 0..counts[i] {
                draw_noise(rng, &factor, scale, &mut eps, &mut r);
                let t = noisy_margin(w, &r, xi);
                let v = match estimator {
                    ResidualEstimator::Direct => loss.value(t, yi) - base - 0.5 * h * lambda * quad[i],
                    ResidualEstimator::Antithetic => {
                        for (ra, rv) in r_anti.iter_mut().zip(&r) {
                            *ra = 2.0 - rv;
                        }
                        let t_anti = noisy_margin(w, &r_anti, xi);
                        let u = t - m;
                        0.5 * (loss.value(t, yi) + loss.value(t_anti, yi)) - base - 0.5 * h * u * u
                    }
                };
                strata[i].push(v);
            }
        }
        let (gap, stderr) = combine(&strata);
        out.push(ResidualPoint {
            lambda,
            plain_loss: plain,
            second_order,
            mc_objective: plain + second_order + gap,
            residual: gap.abs(),
            stderr,
        });
    }
    Ok(out)
}

/// Both sides of the ridge-on-whitened-data identity for centered inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhiteningCheck {
    /// `(1/N) Σ (wᵀxᵢ − yᵢ)² + λ wᵀCw`.
    pub lhs: f64,
    /// `(1/N) Σ (w̃ᵀx̃ᵢ − yᵢ)² + λ w̃ᵀw̃` with `x̃ = C^{-1/2}x`, `w̃ = C^{1/2}w`.
    pub rhs: f64,
}

impl WhiteningCheck {
    pub fn relative_gap(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.lhs.abs().max(f64::MIN_POSITIVE)
    }
}

/// Inputs are centered internally. Fails on an ill-conditioned covariance.
pub fn whitening_equivalence(w: &[f64], x: &Matrix, y: &[f64], lambda: f64) -> Result<WhiteningCheck> {
    check_problem(w, x, y, "whitening_equivalence")?;
    let xc = x.sub_row_vector(&x.col_means());
    let c = covariance(x)?;
    let wh = whitening_matrix(&c, WHITENING_FLOOR)?;
    let condition = wh.condition_number();
    if wh.is_rank_deficient() || condition >= MAX_WHITENING_CONDITION {
        return Err(Error::RankDeficient {
            min_eigenvalue: wh.eigenvalues.first().copied().unwrap_or(0.0),
            condition,
        });
    }
    let n = xc.rows() as f64;
    let cw = c.matvec(w)?;
    let lhs = xc.row_iter().zip(y).map(|(xi, yi)| (dot(w, xi) - yi).powi(2)).sum::<f64>() / n
        + lambda * dot(w, &cw);

    let x_white = xc.matmul_nt(&wh.z)?;
    let w_white = wh.z_inv.matvec(w)?;
    let rhs = x_white
        .row_iter()
        .zip(y)
        .map(|(xi, yi)| (dot(&w_white, xi) - yi).powi(2))
        .sum::<f64>()
        / n
        + lambda * dot(&w_white, &w_white);
    Ok(WhiteningCheck { lhs, rhs })
}

/// Noise covariance tied to the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    Identity,
    DataCov,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationInvariants {
    /// Every entry of `C ⊙ Σ` is `≥ −1e-12`.
    pub entrywise_nonneg: bool,
    pub min_entry: f64,
    /// `Σᵢⱼ (C ⊙ Σ)ᵢⱼ`.
    pub invariant_sum: f64,
}

pub fn rotation_invariants(x: &Matrix, kind: SigmaKind) -> Result<RotationInvariants> {
    let c = covariance(x)?;
    let sigma = match kind {
        SigmaKind::Identity => Matrix::identity(c.rows()),
        SigmaKind::DataCov => c.clone(),
    };
    let prod = c.hadamard(&sigma)?;
    let min_entry = prod.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(RotationInvariants {
        entrywise_nonneg: min_entry >= -NONNEG_TOL,
        min_entry,
        invariant_sum: prod.sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sample_standard_gaussian;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn penalty_hand_example() {
        let c = Matrix::from_rows(&[[1.0, 0.5], [0.5, 1.0]]).unwrap();
        assert!((hadamard_penalty(&[1.0, 1.0], &c, &c, 1.0).unwrap() - 2.5).abs() < 1e-15);
        assert_eq!(hadamard_penalty(&[1.0, 1.0], &c, &c, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn all_ones_sigma_gives_quadratic_form() {
        let mut rng = Rng::new(1);
        let x = sample_standard_gaussian(&mut rng, 30, 4);
        let c = covariance(&x).unwrap();
        let w = [0.3, -1.0, 2.0, 0.5];
        let cw = c.matvec(&w).unwrap();
        let p = hadamard_penalty(&w, &c, &Matrix::ones(4, 4), 0.7).unwrap();
        assert!(rel(p, 0.7 * dot(&w, &cw)) < 1e-12);
    }

    #[test]
    fn mc_at_zero_lambda_is_exact() {
        let mut rng = Rng::new(2);
        let x = sample_standard_gaussian(&mut rng, 20, 3);
        let y: Vec<f64> = (0..20).map(|_| rng.standard_normal()).collect();
        let rep = mc_noisy_squared_loss(&mut rng, &[1.0, -0.5, 0.2], &x, &y, &Matrix::identity(3), 0.0, 1000).unwrap();
        assert_eq!(rep.mc_objective, rep.plain_loss);
        assert_eq!(rep.mc_stderr, 0.0);
    }

    #[test]
    fn mc_with_zero_weights_is_mean_square_target() {
        let mut rng = Rng::new(3);
        let x = sample_standard_gaussian(&mut rng, 20, 3);
        let y: Vec<f64> = (0..20).map(|_| rng.standard_normal()).collect();
        let mean_sq = y.iter().map(|v| v * v).sum::<f64>() / 20.0;
        for lambda in [0.0, 0.5, 3.0] {
            let rep = mc_noisy_squared_loss(&mut rng, &[0.0; 3], &x, &y, &Matrix::identity(3), lambda, 1000).unwrap();
            assert_eq!(rep.mc_objective, mean_sq);
        }
    }

    #[test]
    fn squared_curvature_is_twice_second_moment() {
        let mut rng = Rng::new(4);
        let x = sample_standard_gaussian(&mut rng, 25, 3).map(|v| v + 1.5);
        let y = vec![0.0; 25];
        let j = curvature_matrix(&[0.1, 0.2, 0.3], &x, &y, LossKind::Squared).unwrap().j;
        let c = covariance(&x).unwrap();
        let mean = x.col_means();
        let expected = Matrix::from_fn(3, 3, |a, b| 2.0 * c[(a, b)] + 2.0 * mean[a] * mean[b]);
        assert!(j.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn logistic_curvature_at_zero_weights() {
        let mut rng = Rng::new(5);
        let x = sample_standard_gaussian(&mut rng, 25, 3);
        let y: Vec<f64> = (0..25).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let j = curvature_matrix(&[0.0; 3], &x, &y, LossKind::Logistic).unwrap().j;
        let second = x.matmul_tn(&x).unwrap().scale(0.25 / 25.0);
        assert!(j.max_abs_diff(&second) < 1e-14);
        assert!(matches!(
            curvature_matrix(&[0.0; 3], &x, &y, LossKind::Hinge),
            Err(Error::UnsupportedLoss(_))
        ));
    }

    #[test]
    fn residual_vanishes_at_zero_lambda() {
        let mut rng = Rng::new(6);
        let x = sample_standard_gaussian(&mut rng, 10, 3);
        let y: Vec<f64> = (0..10).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let pts = second_order_residual(
            &mut rng, &[0.5, -0.2, 1.0], &x, &y, &Matrix::identity(3), LossKind::Logistic,
            &[0.0], 1000, ResidualEstimator::Direct,
        )
        .unwrap();
        assert_eq!(pts[0].residual, 0.0);
    }

    #[test]
    fn whitening_sides_agree() {
        let mut rng = Rng::new(7);
        let x = sample_standard_gaussian(&mut rng, 100, 4);
        let y: Vec<f64> = (0..100).map(|_| rng.standard_normal()).collect();
        let w = [0.4, -0.3, 1.2, 0.1];
        let chk = whitening_equivalence(&w, &x, &y, 0.7).unwrap();
        assert!(chk.relative_gap() < 1e-8);
        let zero = whitening_equivalence(&w, &x, &y, 0.0).unwrap();
        let plain = plain_loss(&w, &x.sub_row_vector(&x.col_means()), &y, LossKind::Squared).unwrap();
        assert!(rel(zero.lhs, plain) < 1e-12 && rel(zero.rhs, plain) < 1e-8);
    }

    #[test]
    fn whitening_rejects_singular_covariance() {
        let x = Matrix::from_fn(10, 3, |i, j| if j == 2 { i as f64 } else { (i * (j + 1)) as f64 });
        let err = whitening_equivalence(&[1.0, 1.0, 1.0], &x, &[0.0; 10], 0.5).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn one_dimensional_invariants() {
        let x = Matrix::column_vector(&[1.0, 2.0, 4.0, 7.0]);
        let var = covariance(&x).unwrap()[(0, 0)];
        let id = rotation_invariants(&x, SigmaKind::Identity).unwrap();
        let dc = rotation_invariants(&x, SigmaKind::DataCov).unwrap();
        assert!(rel(id.invariant_sum, var) < 1e-15);
        assert!(rel(dc.invariant_sum, var * var) < 1e-15);
        assert!(id.entrywise_nonneg && dc.entrywise_nonneg);
    }

    #[test]
    fn identity_sigma_sum_is_trace() {
        let mut rng = Rng::new(8);
        let x = sample_standard_gaussian(&mut rng, 40, 5);
        let inv = rotation_invariants(&x, SigmaKind::Identity).unwrap();
        assert!(rel(inv.invariant_sum, covariance(&x).unwrap().trace()) < 1e-14);
    }

    #[test]
    fn logistic_loss_is_stable_for_large_margins() {
        assert!((LossKind::Logistic.value(800.0, 1.0)).abs() < 1e-300);
        assert!((LossKind::Logistic.value(-800.0, 1.0) - 800.0).abs() < 1e-9);
        let h = LossKind::Logistic.second_derivative(0.0, -1.0).unwrap();
        assert_eq!(h, 0.25);
    }
}
