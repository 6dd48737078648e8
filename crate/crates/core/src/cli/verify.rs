use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{covariance, haar_rotation, psd_factor, sample_standard_gaussian, Matrix, Rng, DEFAULT_JITTER};
use crate::theory::{
    curvature_matrix, hadamard_penalty, mc_noisy_squared_loss, plain_loss, rotation_invariants,
    second_order_residual, whitening_equivalence, LossKind, ResidualEstimator, SigmaKind, MAX_WHITENING_CONDITION,
};

/// Tolerances and Monte Carlo budgets for `verify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceProfile {
    pub name: String,
    pub instances: usize,
    /// Allowed gap between estimate and closed form, in standard errors.
    pub z_max: f64,
    pub whitening_rel: f64,
    pub rotation_rel: f64,
    pub nonneg_tol: f64,
    pub hessian_rel: f64,
    pub penalty_draws: usize,
    pub second_order_draws: usize,
}

impl ToleranceProfile {
    pub fn default_profile() -> Self {
        Self {
            name: "default".into(),
            instances: 20,
            z_max: 5.0,
            whitening_rel: 1e-8,
            rotation_rel: 1e-10,
            nonneg_tol: 1e-12,
            hessian_rel: 1e-4,
            penalty_draws: 100_000,
            second_order_draws: 1_000_000,
        }
    }

    /// Same tolerances, ten times fewer draws.
    pub fn quick() -> Self {
        Self {
            name: "quick".into(),
            penalty_draws: 10_000,
            second_order_draws: 100_000,
            ..Self::default_profile()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default_profile()),
            "quick" => Some(Self::quick()),
            _ => None,
        }
    }
}

/// One row of the verification table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub instances: usize,
    pub passed: usize,
    /// Largest observed statistic (z-score, relative error, …).
    pub worst: f64,
    pub tolerance: String,
    /// Replay parameters of failing instances.
    pub failures: Vec<String>,
}

impl CheckRow {
    pub fn ok(&self) -> bool {
        self.passed == self.instances
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub profile: String,
    pub rows: Vec<CheckRow>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(CheckRow::ok)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "verify seed={} profile={}", self.seed, self.profile);
        let _ = writeln!(s, "{:<28} {:>9} {:>10} {:>12}  {:<14} status", "check", "instances", "passed", "worst", "tolerance");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<28} {:>9} {:>10} {:>12.3e}  {:<14} {}",
                r.name,
                r.instances,
                r.passed,
                r.worst,
                r.tolerance,
                if r.ok() { "PASS" } else { "FAIL" }
            );
            for f in &r.failures {
                let _ = writeln!(s, "    replay: {f}");
            }
        }
        s
    }
}

/// Random regression problem with correlated features.
struct Instance {
    d: usize,
    n: usize,
    x: Matrix,
    y: Vec<f64>,
    w: Vec<f64>,
}

fn instance(rng: &mut Rng, d_max: usize, n_min: usize, n_max: usize, binary: bool) -> Instance {
    let d = 2 + rng.below(d_max - 1);
    let n = n_min + rng.below(n_max - n_min + 1);
    let mix = sample_standard_gaussian(rng, d, d);
    let x = sample_standard_gaussian(rng, n, d).matmul(&mix).expect("square mixing");
    let w: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let y = (0..n)
        .map(|i| {
            if binary {
                let m: f64 = x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum();
                if m + rng.standard_normal() > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                rng.standard_normal()
            }
        })
        .collect();
    Instance { d, n, x, y, w }
}

struct Tally {
    row: CheckRow,
}

impl Tally {
    fn new(name: &str, tolerance: String) -> Self {
        Self {
            row: CheckRow {
                name: name.into(),
                instances: 0,
                passed: 0,
                worst: 0.0,
                tolerance,
                failures: Vec::new(),
            },
        }
    }

    fn record(&mut self, ok: bool, stat: f64, replay: impl FnOnce() -> String) {
        self.row.instances += 1;
        if ok {
            self.row.passed += 1;
        } else {
            self.row.failures.push(replay());
        }
        if stat.is_nan() || stat > self.row.worst {
            self.row.worst = stat;
        }
    }
}

const STREAM_PENALTY: u64 = 1;
const STREAM_EXPANSION: u64 = 2;
const STREAM_SECOND_ORDER: u64 = 3;
const STREAM_HESSIAN: u64 = 4;
const STREAM_WHITENING: u64 = 5;
const STREAM_ROTATION: u64 = 6;
const STREAM_PERMUTATION: u64 = 7;

/// Standardizes the columns of `x` and rescales `w` so the largest margin
/// noise variance `(w⊙xᵢ)ᵀC(w⊙xᵢ)` is one: at λ = 0.1 every margin is
/// perturbed by at most about 0.3.
fn unit_scale(inst: &mut Instance) -> Result<()> {
    let c = covariance(&inst.x)?;
    let sd: Vec<f64> = (0..inst.d).map(|j| c[(j, j)].sqrt().max(1e-12)).collect();
    let means = inst.x.col_means();
    inst.x = Matrix::from_fn(inst.n, inst.d, |i, j| (inst.x[(i, j)] - means[j]) / sd[j]);
    let c = covariance(&inst.x)?;
    let mut q_max = 0.0f64;
    for xi in inst.x.row_iter() {
        let a: Vec<f64> = inst.w.iter().zip(xi).map(|(w, x)| w * x).collect();
        let ca = c.matvec(&a)?;
        q_max = q_max.max(a.iter().zip(&ca).map(|(u, v)| u * v).sum());
    }
    let s = q_max.sqrt().max(1e-12);
    inst.w.iter_mut().for_each(|v| *v /= s);
    Ok(())
}

fn stream(seed: u64, check: u64, k: usize) -> Rng {
    Rng::new(seed).fork(check * 1_000_000 + k as u64)
}

fn sigma_factor(kind: &str, x: &Matrix) -> Result<(Matrix, Matrix)> {
    let d = x.cols();
    Ok(match kind {
        "identity" => (Matrix::identity(d), Matrix::identity(d)),
        "data_cov" => {
            let c = covariance(x)?;
            (psd_factor(&c, DEFAULT_JITTER)?, c)
        }
        _ => (Matrix::ones(d, 1), Matrix::ones(d, d)),
    })
}

/// Runs every check. `corrupt_penalty` doubles `λ` in the closed form of the
/// noisy squared loss, which the penalty check must detect.
pub fn run_verify(seed: u64, profile: &ToleranceProfile, corrupt_penalty: bool) -> Result<VerifyReport> {
    if profile.instances == 0 {
        return Err(Error::InvalidConfig("profile needs at least one instance".into()));
    }
    let mut rows = Vec::new();
    let k_max = profile.instances;

    // Noisy squared loss equals clean loss plus the Hadamard penalty.
    let mut t = Tally::new("penalty_identity", format!("{}σ", profile.z_max));
    for k in 0..k_max {
        let mut rng = stream(seed, STREAM_PENALTY, k);
        let inst = instance(&mut rng, 10, 20, 200, false);
        for sigma_kind in ["identity", "data_cov", "all_ones"] {
            let (factor, sigma) = sigma_factor(sigma_kind, &inst.x)?;
            for lambda in [0.1, 1.0] {
                let rep = mc_noisy_squared_loss(&mut rng, &inst.w, &inst.x, &inst.y, &factor, lambda, profile.penalty_draws)?;
                let c = covariance(&inst.x)?;
                let claimed_lambda = if corrupt_penalty { 2.0 * lambda } else { lambda };
                let closed = rep.plain_loss + hadamard_penalty(&inst.w, &c, &sigma, claimed_lambda)?;
                let gap = (rep.mc_objective - closed).abs();
                let z = if gap == 0.0 { 0.0 } else { gap / rep.mc_stderr };
                t.record(z < profile.z_max, z, || {
                    format!("penalty_identity seed={seed} instance={k} d={} n={} sigma={sigma_kind} lambda={lambda} z={z:.2}", inst.d, inst.n)
                });
            }
        }
    }
    rows.push(t.row);

    // The second-order expansion is exact for the squared loss.
    let mut t = Tally::new("squared_expansion_exact", format!("{}σ", profile.z_max));
    for k in 0..k_max {
        let mut rng = stream(seed, STREAM_EXPANSION, k);
        let inst = instance(&mut rng, 6, 20, 100, false);
        let (_, sigma) = sigma_factor("data_cov", &inst.x)?;
        let pts = second_order_residual(
            &mut rng, &inst.w, &inst.x, &inst.y, &sigma, LossKind::Squared,
            &[0.1, 0.01], profile.penalty_draws, ResidualEstimator::Direct,
        )?;
        for p in pts {
            let z = if p.residual == 0.0 { 0.0 } else { p.residual / p.stderr };
            t.record(z < profile.z_max, z, || {
                format!("squared_expansion_exact seed={seed} instance={k} d={} n={} lambda={} z={z:.2}", inst.d, inst.n, p.lambda)
            });
        }
    }
    rows.push(t.row);

    // For the logistic loss the residual is o(λ).
    let mut t = Tally::new("logistic_residual_o_lambda", "ratio ↓".into());
    for k in 0..k_max {
        let mut rng = stream(seed, STREAM_SECOND_ORDER, k);
        let mut inst = instance(&mut rng, 5, 20, 50, true);
        unit_scale(&mut inst)?;
        let (_, sigma) = sigma_factor("data_cov", &inst.x)?;
        let grid = [1e-1, 1e-2, 1e-3];
        let pts = second_order_residual(
            &mut rng, &inst.w, &inst.x, &inst.y, &sigma, LossKind::Logistic,
            &grid, profile.second_order_draws, ResidualEstimator::Antithetic,
        )?;
        let ratios: Vec<f64> = pts.iter().map(|p| p.residual / p.lambda).collect();
        let ok = ratios.windows(2).all(|w| w[1] < w[0]);
        let worst = ratios.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        t.record(ok, worst, || {
            format!("logistic_residual_o_lambda seed={seed} instance={k} d={} n={} ratios={ratios:?}", inst.d, inst.n)
        });
    }
    rows.push(t.row);

    // Curvature matrix equals the Hessian of the clean logistic loss.
    let mut t = Tally::new("curvature_hessian", format!("rel {:.0e}", profile.hessian_rel));
    for k in 0..k_max {
        let mut rng = stream(seed, STREAM_HESSIAN, k);
        let mut inst = instance(&mut rng, 6, 20, 100, true);
        inst.w.iter_mut().for_each(|v| *v *= 0.3);
        let j = curvature_matrix(&inst.w, &inst.x, &inst.y, LossKind::Logistic)?.j;
        let h = fd_hessian(&inst.w, &inst.x, &inst.y)?;
        let err = h.max_abs_diff(&j) / j.max_abs();
        t.record(err < profile.hessian_rel, err, || {
            format!("curvature_hessian seed={seed} instance={k} d={} n={} rel={err:.2e}", inst.d, inst.n)
        });
    }
    rows.push(t.row);

    // Noise with Σ = 11ᵀ is ridge regression on whitened data.
    let mut t = Tally::new("whitening_equivalence", format!("rel {:.0e}", profile.whitening_rel));
    for k in 0..k_max {
        let mut rng = stream(seed, STREAM_WHITENING, k);
        let (inst, chk) = loop {
            let inst = instance(&mut rng, 8, 50, 200, false);
            let lambda = 2.0 * rng.uniform();
            match whitening_equivalence(&inst.w, &inst.x, &inst.y, lambda) {
                Ok(chk) => break (inst, chk),
                Err(Error::RankDeficient { condition, .. }) if condition >= MAX_WHITENING_CONDITION => continue,
                Err(e) => return Err(e),
            }
        };
        let rel = chk.relative_gap();
        t.record(rel < profile.whitening_rel, rel, || {
            format!("whitening_equivalence seed={seed} instance={k} d={} n={} rel={rel:.2e}", inst.d, inst.n)
        });
    }
    rows.push(t.row);

    // C ⊙ Σ is entrywise nonnegative and its sum survives rotations.
    let mut nonneg = Tally::new("hadamard_nonnegative", format!("≥ -{:.0e}", profile.nonneg_tol));
    let mut rot = Tally::new("rotation_invariance", format!("rel {:.0e}", profile.rotation_rel));
    for k in 0..k_max {
        let mut rng = stream(seed, STREAM_ROTATION, k);
        let inst = instance(&mut rng, 10, 20, 200, false);
        let q = haar_rotation(&mut rng, inst.d);
        let rotated = inst.x.matmul_nt(&q)?;
        for kind in [SigmaKind::Identity, SigmaKind::DataCov] {
            let a = rotation_invariants(&inst.x, kind)?;
            let b = rotation_invariants(&rotated, kind)?;
            let ok = a.min_entry >= -profile.nonneg_tol && b.min_entry >= -profile.nonneg_tol;
            nonneg.record(ok, (-a.min_entry.min(b.min_entry)).max(0.0), || {
                format!("hadamard_nonnegative seed={seed} instance={k} d={} kind={kind:?}", inst.d)
            });
            let rel = (a.invariant_sum - b.invariant_sum).abs() / a.invariant_sum.abs();
            rot.record(rel < profile.rotation_rel, rel, || {
                format!("rotation_invariance seed={seed} instance={k} d={} kind={kind:?} rel={rel:.2e}", inst.d)
            });
        }
    }
    rows.push(nonneg.row);
    rows.push(rot.row);

    // The penalty depends on coordinates only through their pairing.
    let mut t = Tally::new("penalty_permutation", "rel 1e-12".into());
    for k in 0..k_max {
        let mut rng = stream(seed, STREAM_PERMUTATION, k);
        let inst = instance(&mut rng, 10, 20, 100, false);
        let c = covariance(&inst.x)?;
        let sigma = covariance(&sample_standard_gaussian(&mut rng, 30, inst.d))?;
        let perm = rng.permutation(inst.d);
        let wp: Vec<f64> = perm.iter().map(|&i| inst.w[i]).collect();
        let cp = Matrix::from_fn(inst.d, inst.d, |i, j| c[(perm[i], perm[j])]);
        let sp = Matrix::from_fn(inst.d, inst.d, |i, j| sigma[(perm[i], perm[j])]);
        let a = hadamard_penalty(&inst.w, &c, &sigma, 0.7)?;
        let b = hadamard_penalty(&wp, &cp, &sp, 0.7)?;
        let rel = (a - b).abs() / a.abs().max(f64::MIN_POSITIVE);
        t.record(rel < 1e-12, rel, || format!("penalty_permutation seed={seed} instance={k} d={}", inst.d));
    }
    rows.push(t.row);

    Ok(VerifyReport {
        seed,
        profile: profile.name.clone(),
        rows,
    })
}

/// Central second differences of the clean logistic loss.
fn fd_hessian(w: &[f64], x: &Matrix, y: &[f64]) -> Result<Matrix> {
    let d = w.len();
    let h = 1e-4;
    let f = |v: &[f64]| plain_loss(v, x, y, LossKind::Logistic);
    let mut out = Matrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let shifted = |sa: f64, sb: f64| {
                let mut v = w.to_vec();
                v[a] += sa * h;
                v[b] += sb * h;
                f(&v)
            };
            out[(a, b)] = (shifted(1.0, 1.0)? - shifted(1.0, -1.0)? - shifted(-1.0, 1.0)? + shifted(-1.0, -1.0)?) / (4.0 * h * h);
        }
    }
    Ok(out)
}
