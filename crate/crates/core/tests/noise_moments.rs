mod common;

use asni::noise::{
    apply_noise, centered_batch_factor, sample_asni, sample_iid_bernoulli, sample_iid_gaussian, sample_sni_fixed,
    NoiseSpec, SigmaSpec,
};
use asni::{Error, Matrix, Rng};
use common::{cov, rows};

/// Mean and covariance of a stream of noise rows.
struct Moments {
    n: f64,
    sum: Vec<f64>,
    outer: Vec<Vec<f64>>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self { n: 0.0, sum: vec![0.0; d], outer: vec![vec![0.0; d]; d] }
    }

    fn push_rows(&mut self, r: &Matrix) {
        for row in r.row_iter() {
            self.n += 1.0;
            for a in 0..row.len() {
                self.sum[a] += row[a];
                for b in 0..row.len() {
                    self.outer[a][b] += (row[a] - 1.0) * (row[b] - 1.0);
                }
            }
        }
    }

    fn mean(&self, a: usize) -> f64 {
        self.sum[a] / self.n
    }

    /// Second moment about the known mean 1.
    fn cov(&self, a: usize, b: usize) -> f64 {
        self.outer[a][b] / self.n
    }
}

/// Asserts every entry of the empirical covariance sits within `z` standard
/// errors of `target`, assuming Gaussian rows.
fn assert_cov_within(m: &Moments, target: &[Vec<f64>], z: f64) {
    let d = target.len();
    for a in 0..d {
        let se_mean = (target[a][a] / m.n).sqrt();
        assert!((m.mean(a) - 1.0).abs() <= z * se_mean + 1e-15, "mean[{a}] = {}", m.mean(a));
        for b in 0..d {
            let var = (target[a][a] * target[b][b] + target[a][b].powi(2)) / m.n;
            let gap = (m.cov(a, b) - target[a][b]).abs();
            assert!(gap <= z * var.sqrt() + 1e-15, "cov[{a}][{b}] = {} vs {}", m.cov(a, b), target[a][b]);
        }
    }
}

fn activations(rng: &mut Rng, n: usize, d: usize) -> Matrix {
    let x = common::design(rng, n, d);
    x.map(|v| v.max(0.0) + 0.1 * v)
}

#[test]
fn asni_covariance_matches_batch_covariance() {
    let (n, d, lambda) = (64, 8, 0.4);
    let mut rng = Rng::new(11);
    let y = activations(&mut rng, n, d);
    let target: Vec<Vec<f64>> = cov(&rows(&y)).into_iter().map(|r| r.into_iter().map(|v| lambda * v).collect()).collect();
    let mut m = Moments::new(d);
    while m.n < 10_000.0 {
        m.push_rows(&sample_asni(&mut rng, &y, lambda, false).unwrap().r);
    }
    assert_cov_within(&m, &target, 5.0);
}

#[test]
fn centered_factor_reproduces_covariance() {
    let mut rng = Rng::new(3);
    let y = activations(&mut rng, 30, 5);
    let f = centered_batch_factor(&y);
    let got = f.matmul_tn(&f).unwrap();
    let want = cov(&rows(&y));
    for a in 0..5 {
        for b in 0..5 {
            assert!((got.row(a)[b] - want[a][b]).abs() < 1e-12);
        }
    }
}

#[test]
fn shared_asni_rows_are_identical() {
    let mut rng = Rng::new(5);
    let y = activations(&mut rng, 64, 8);
    let r = sample_asni(&mut rng, &y, 0.5, true).unwrap().r;
    for i in 1..r.rows() {
        assert_eq!(r.row(i), r.row(0));
    }
}

#[test]
fn asni_needs_two_rows() {
    let y = Matrix::ones(1, 4);
    assert!(matches!(sample_asni(&mut Rng::new(0), &y, 0.5, false), Err(Error::DegenerateBatch { rows: 1 })));
}

#[test]
fn constant_batch_gives_unit_noise() {
    let y = Matrix::filled(16, 3, 2.5);
    let r = sample_asni(&mut Rng::new(0), &y, 1.0, false).unwrap().r;
    assert!(r.as_slice().iter().all(|&v| v == 1.0));
}

#[test]
fn iid_gaussian_has_diagonal_covariance() {
    let (d, lambda) = (6, 0.3);
    let mut rng = Rng::new(9);
    let mut m = Moments::new(d);
    while m.n < 20_000.0 {
        m.push_rows(&sample_iid_gaussian(&mut rng, 100, d, lambda).r);
    }
    let target: Vec<Vec<f64>> = (0..d).map(|a| (0..d).map(|b| if a == b { lambda } else { 0.0 }).collect()).collect();
    assert_cov_within(&m, &target, 5.0);
}

#[test]
fn fixed_sni_matches_sigma() {
    let d = 5;
    let mut rng = Rng::new(21);
    let u = Matrix::from_fn(d, 3, |_, _| rng.standard_normal());
    let sigma = u.matmul_nt(&u).unwrap();
    let lambda = 0.2;
    let mut m = Moments::new(d);
    while m.n < 20_000.0 {
        m.push_rows(&sample_sni_fixed(&mut rng, 100, &u, lambda).r);
    }
    let target: Vec<Vec<f64>> = rows(&sigma).into_iter().map(|r| r.into_iter().map(|v| lambda * v).collect()).collect();
    assert_cov_within(&m, &target, 5.0);
}

#[test]
fn bernoulli_is_inverted_dropout() {
    let p = 0.8;
    let mut rng = Rng::new(2);
    let r = sample_iid_bernoulli(&mut rng, 500, 40, p).r;
    let kept = r.as_slice().iter().filter(|&&v| v != 0.0).count() as f64;
    assert!(r.as_slice().iter().all(|&v| v == 0.0 || (v - 1.0 / p).abs() < 1e-15));
    let total = r.as_slice().len() as f64;
    let se = (p * (1.0 - p) / total).sqrt();
    assert!((kept / total - p).abs() < 5.0 * se);
}

#[test]
fn noise_multiplies_entrywise() {
    let y = Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap();
    let mut s = sample_iid_gaussian(&mut Rng::new(1), 2, 2, 0.1);
    s.r = Matrix::from_rows(&[[2.0, 0.5], [0.0, -1.0]]).unwrap();
    let out = apply_noise(&y, &s).unwrap();
    assert_eq!(out.as_slice(), &[2.0, -1.0, 0.0, -0.5]);
}

#[test]
fn layer_mask_limits_where_noise_lands() {
    let spec = NoiseSpec::gaussian(0.5).on_layers([1]);
    let prepared = spec.prepare(&[4, 3, 2]).unwrap();
    let mut rng = Rng::new(0);
    let y = Matrix::ones(5, 4);
    assert!(prepared.sample(0, &y, &mut rng).unwrap().is_none());
    assert!(prepared.sample(1, &Matrix::ones(5, 3), &mut rng).unwrap().is_some());
    assert!(spec.validate(2).is_ok());
    assert!(NoiseSpec::gaussian(0.5).on_layers([4]).validate(2).is_err());
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(NoiseSpec::bernoulli(0.0).validate(2).is_err());
    assert!(NoiseSpec::bernoulli(1.2).validate(2).is_err());
    assert!(NoiseSpec::gaussian(-0.1).validate(2).is_err());
    assert!(NoiseSpec::asni(f64::NAN).validate(2).is_err());
    assert!(NoiseSpec::sni_fixed(0.1, SigmaSpec::BlockConstant { block: 0 }).prepare(&[4]).is_err());
}
