//! Multiplicative noise for layer inputs.
//!
//! Every regime produces a matrix `r` with one row per minibatch example that
//! multiplies the activations entrywise. All Gaussian regimes and inverted
//! Bernoulli dropout have mean one, so evaluation runs without noise and
//! without rescaling.
//!
//! | kind            | row distribution                                   |
//! |-----------------|----------------------------------------------------|
//! | `none`          | `1`                                                |
//! | `iid_bernoulli` | entries `1/p` w.p. `p`, else `0`                   |
//! | `iid_gaussian`  | `N(1, λ I)`                                        |
//! | `sni_fixed`     | `N(1, λ Σ)` with a fixed per-layer `Σ`             |
//! | `asni`          | `N(1, λ Σ̂)` with `Σ̂` the minibatch covariance      |
//!
//! ASNI never forms `Σ̂`: with `Ỹ` the centered batch divided by `√n`,
//! `Σ̂ = ỸᵀỸ`, so `r = 1 + √λ Ỹᵀ ε` with `ε ~ N(0, I_n)` has the right law.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{psd_factor, sample_standard_gaussian, Matrix, Rng, DEFAULT_JITTER};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    IidBernoulli,
    IidGaussian,
    SniFixed,
    Asni,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::IidBernoulli => "iid_bernoulli",
            NoiseKind::IidGaussian => "iid_gaussian",
            NoiseKind::SniFixed => "sni_fixed",
            NoiseKind::Asni => "asni",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => NoiseKind::None,
            "iid_bernoulli" | "bernoulli" | "dropout" => NoiseKind::IidBernoulli,
            "iid_gaussian" | "gaussian" => NoiseKind::IidGaussian,
            "sni_fixed" | "sni" => NoiseKind::SniFixed,
            "asni" => NoiseKind::Asni,
            _ => return None,
        })
    }
}

/// Covariance block used by `sni_fixed`, materialized per layer width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SigmaSpec {
    /// `Σ = I`; reduces to i.i.d. Gaussian noise.
    Identity,
    /// `Σ = 1·1ᵀ`; one shared noise value per example.
    AllOnes,
    /// Block-diagonal with constant blocks of ones of the given size
    /// (the last block may be shorter).
    BlockConstant { block: usize },
    /// Explicit per-layer blocks keyed by layer index.
    Explicit { blocks: BTreeMap<usize, Matrix> },
}

impl SigmaSpec {
    /// `(Σ, U)` with `U Uᵀ = Σ` for a layer of width `d`.
    pub fn materialize(&self, layer: usize, d: usize) -> Result<(Matrix, Matrix)> {
        match self {
            SigmaSpec::Identity => Ok((Matrix::identity(d), Matrix::identity(d))),
            SigmaSpec::AllOnes => Ok((Matrix::ones(d, d), Matrix::ones(d, 1))),
            SigmaSpec::BlockConstant { block } => {
                if *block == 0 {
                    return Err(Error::InvalidNoise("block size must be ≥ 1".into()));
                }
                let groups = d.div_ceil(*block);
                let factor = Matrix::from_fn(d, groups, |i, g| f64::from(u8::from(i / block == g)));
                let sigma = factor.matmul_nt(&factor)?;
                Ok((sigma, factor))
            }
            SigmaSpec::Explicit { blocks } => {
                let sigma = blocks.get(&layer).ok_or_else(|| {
                    Error::InvalidNoise(format!("no explicit Σ block for layer {layer}"))
                })?;
                if sigma.shape() != (d, d) {
                    return Err(Error::InvalidNoise(format!(
                        "Σ block for layer {layer} is {:?}, layer width is {d}",
                        sigma.shape()
                    )));
                }
                let factor = psd_factor(sigma, DEFAULT_JITTER)
                    .map_err(|e| Error::InvalidNoise(format!("Σ block for layer {layer}: {e}")))?;
                Ok((sigma.clone(), factor))
            }
        }
    }
}

/// Noise regime and where it applies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Gaussian strength `λ ≥ 0`.
    #[serde(default)]
    pub lambda: f64,
    /// Bernoulli keep probability in `(0, 1]`.
    #[serde(default = "one")]
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_sigma: Option<SigmaSpec>,
    /// Sample one noise row per minibatch and reuse it for every example.
    #[serde(default)]
    pub shared_per_batch: bool,
    /// Layer-input indices that receive noise; `None` means all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_mask: Option<BTreeSet<usize>>,
}

fn one() -> f64 {
    1.0
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseSpec {
    fn with_kind(kind: NoiseKind) -> Self {
        Self {
            kind,
            lambda: 0.0,
            p: 1.0,
            fixed_sigma: None,
            shared_per_batch: false,
            layer_mask: None,
        }
    }

    pub fn none() -> Self {
        Self::with_kind(NoiseKind::None)
    }

    pub fn bernoulli(p: f64) -> Self {
        Self {
            p,
            ..Self::with_kind(NoiseKind::IidBernoulli)
        }
    }

    pub fn gaussian(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::with_kind(NoiseKind::IidGaussian)
        }
    }

    pub fn sni_fixed(lambda: f64, sigma: SigmaSpec) -> Self {
        Self {
            lambda,
            fixed_sigma: Some(sigma),
            ..Self::with_kind(NoiseKind::SniFixed)
        }
    }

    pub fn asni(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::with_kind(NoiseKind::Asni)
        }
    }

    pub fn shared(mut self, shared: bool) -> Self {
        self.shared_per_batch = shared;
        self
    }

    pub fn on_layers(mut self, layers: impl IntoIterator<Item = usize>) -> Self {
        self.layer_mask = Some(layers.into_iter().collect());
        self
    }

    pub fn applies_to(&self, layer: usize) -> bool {
        self.kind != NoiseKind::None
            && self.layer_mask.as_ref().map_or(true, |m| m.contains(&layer))
    }

    /// Per-unit noise variance: `λ` for Gaussian kinds, `(1 − p)/p` for Bernoulli.
    pub fn strength(&self) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::IidBernoulli => (1.0 - self.p) / self.p,
            _ => self.lambda,
        }
    }

    /// Short human-readable label, e.g. `asni(λ=0.25)`.
    pub fn label(&self) -> String {
        match self.kind {
            NoiseKind::None => "none".to_string(),
            NoiseKind::IidBernoulli => format!("iid_bernoulli(p={})", self.p),
            k => format!("{}(λ={})", k.name(), self.lambda),
        }
    }

    /// Checks the spec against a network with `num_layers` layer inputs.
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidNoise(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidNoise(format!("p must lie in (0, 1], got {}", self.p)));
        }
        match (self.kind, &self.fixed_sigma) {
            (NoiseKind::SniFixed, None) => {
                return Err(Error::InvalidNoise("sni_fixed requires fixed_sigma".into()))
            }
            (k, Some(_)) if k != NoiseKind::SniFixed => {
                return Err(Error::InvalidNoise(format!(
                    "fixed_sigma is only valid for sni_fixed, not {}",
                    k.name()
                )))
            }
            _ => {}
        }
        if let Some(mask) = &self.layer_mask {
            if let Some(&bad) = mask.iter().find(|&&l| l >= num_layers) {
                return Err(Error::InvalidNoise(format!(
                    "layer {bad} out of range for {num_layers} layers"
                )));
            }
        }
        Ok(())
    }

    /// Validates and precomputes the fixed `Σ` factors for the given layer
    /// input widths (`d^(0), …, d^(H−1)`).
    pub fn prepare(&self, input_dims: &[usize]) -> Result<PreparedNoise> {
        self.validate(input_dims.len())?;
        let mut factors = BTreeMap::new();
        if let (NoiseKind::SniFixed, Some(sigma)) = (self.kind, &self.fixed_sigma) {
            for (layer, &d) in input_dims.iter().enumerate() {
                if self.applies_to(layer) {
                    factors.insert(layer, sigma.materialize(layer, d)?.1);
                }
            }
        }
        Ok(PreparedNoise {
            spec: self.clone(),
            factors,
        })
    }
}

/// One noise realization for a minibatch at a given layer input.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample {
    /// `n × d`, one row per example.
    pub r: Matrix,
    pub layer: usize,
}

impl NoiseSample {
    pub fn ones(n: usize, d: usize, layer: usize) -> Self {
        Self {
            r: Matrix::ones(n, d),
            layer,
        }
    }

    fn at_layer(mut self, layer: usize) -> Self {
        self.layer = layer;
        self
    }
}

/// A validated [`NoiseSpec`] with its fixed-covariance factors computed once.
#[derive(Clone, Debug)]
pub struct PreparedNoise {
    spec: NoiseSpec,
    factors: BTreeMap<usize, Matrix>,
}

impl PreparedNoise {
    pub fn none() -> Self {
        Self {
            spec: NoiseSpec::none(),
            factors: BTreeMap::new(),
        }
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    /// Noise for the input of `layer`, or `None` where the spec leaves it clean.
    pub fn sample(
        &self,
        layer: usize,
        activations: &Matrix,
        rng: &mut Rng,
    ) -> Result<Option<NoiseSample>> {
        if !self.spec.applies_to(layer) {
            return Ok(None);
        }
        let (n, d) = activations.shape();
        let spec = &self.spec;
        let sample = match spec.kind {
            NoiseKind::None => return Ok(None),
            NoiseKind::IidBernoulli => {
                let rows = if spec.shared_per_batch { 1 } else { n };
                sample_iid_bernoulli(rng, rows, d, spec.p)
            }
            NoiseKind::IidGaussian => {
                let rows = if spec.shared_per_batch { 1 } else { n };
                sample_iid_gaussian(rng, rows, d, spec.lambda)
            }
            NoiseKind::SniFixed => {
                let factor = self.factors.get(&layer).ok_or_else(|| {
                    Error::InvalidNoise(format!("layer {layer} has no prepared Σ factor"))
                })?;
                if factor.rows() != d {
                    return Err(Error::dims(
                        "sni_fixed",
                        format!("factor has {} rows, activations have {d} columns", factor.rows()),
                    ));
                }
                let rows = if spec.shared_per_batch { 1 } else { n };
                sample_sni_fixed(rng, rows, factor, spec.lambda)
            }
            NoiseKind::Asni => sample_asni(rng, activations, spec.lambda, spec.shared_per_batch)?,
        };
        let sample = if sample.r.rows() == n {
            sample
        } else {
            broadcast_row(&sample.r, n)
        };
        Ok(Some(sample.at_layer(layer)))
    }
}

fn broadcast_row(r: &Matrix, n: usize) -> NoiseSample {
    let row = r.row(0);
    let mut out = Matrix::zeros(n, r.cols());
    for i in 0..n {
        out.row_mut(i).copy_from_slice(row);
    }
    NoiseSample { r: out, layer: 0 }
}

/// Inverted dropout mask: `1/p` with probability `p`, otherwise `0`.
pub fn sample_iid_bernoulli(rng: &mut Rng, n: usize, d: usize, p: f64) -> NoiseSample {
    if p >= 1.0 {
        return NoiseSample::ones(n, d, 0);
    }
    let keep = 1.0 / p;
    let mut r = Matrix::zeros(n, d);
    for v in r.as_mut_slice() {
        if rng.uniform() < p {
            *v = keep;
        }
    }
    NoiseSample { r, layer: 0 }
}

/// Entries i.i.d. `N(1, λ)`.
pub fn sample_iid_gaussian(rng: &mut Rng, n: usize, d: usize, lambda: f64) -> NoiseSample {
    if lambda == 0.0 {
        return NoiseSample::ones(n, d, 0);
    }
    let s = lambda.sqrt();
    let mut r = sample_standard_gaussian(rng, n, d);
    r.map_inplace(|e| 1.0 + s * e);
    NoiseSample { r, layer: 0 }
}

/// Rows `rᵢ = 1 + √λ U εᵢ`, `εᵢ ~ N(0, I)`, for a precomputed factor `U` (d×k).
pub fn sample_sni_fixed(rng: &mut Rng, n: usize, sigma_factor: &Matrix, lambda: f64) -> NoiseSample {
    let d = sigma_factor.rows();
    if lambda == 0.0 {
        return NoiseSample::ones(n, d, 0);
    }
    let eps = sample_standard_gaussian(rng, n, sigma_factor.cols());
    let mut r = eps
        .matmul_nt(sigma_factor)
        .expect("eps columns match factor columns by construction");
    let s = lambda.sqrt();
    r.map_inplace(|v| 1.0 + s * v);
    NoiseSample { r, layer: 0 }
}

/// `Ỹ = (Y − ȳ)/√n`, the factor of the minibatch covariance `Σ̂ = ỸᵀỸ`.
pub fn centered_batch_factor(batch: &Matrix) -> Matrix {
    let scale = 1.0 / (batch.rows() as f64).sqrt();
    let mut y = batch.sub_row_vector(&batch.col_means());
    y.map_inplace(|v| v * scale);
    y
}

/// ASNI noise `rᵢ = 1 + √λ Ỹᵀ εᵢ` with `ε ~ N(0, I_n)`.
///
/// In shared mode a single row is drawn and copied to all `n` rows.
pub fn sample_asni(
    rng: &mut Rng,
    batch_activations: &Matrix,
    lambda: f64,
    shared_per_batch: bool,
) -> Result<NoiseSample> {
    let (n, d) = batch_activations.shape();
    if n < 2 {
        return Err(Error::DegenerateBatch { rows: n });
    }
    if lambda == 0.0 {
        return Ok(NoiseSample::ones(n, d, 0));
    }
    let y_tilde = centered_batch_factor(batch_activations);
    let draws = if shared_per_batch { 1 } else { n };
    let eps = sample_standard_gaussian(rng, draws, n);
    let mut r = eps.matmul(&y_tilde)?;
    let s = lambda.sqrt();
    r.map_inplace(|v| 1.0 + s * v);
    if shared_per_batch {
        return Ok(broadcast_row(&r, n));
    }
    Ok(NoiseSample { r, layer: 0 })
}

/// `ỹ = r ⊙ y`.
pub fn apply_noise(activations: &Matrix, sample: &NoiseSample) -> Result<Matrix> {
    activations.hadamard(&sample.r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn bernoulli_keep_all_is_ones() {
        let s = sample_iid_bernoulli(&mut Rng::new(1), 4, 5, 1.0);
        assert_eq!(s.r, Matrix::ones(4, 5));
    }

    #[test]
    fn bernoulli_moments_and_support() {
        let s = sample_iid_bernoulli(&mut Rng::new(2), 1000, 100, 0.5);
        let v = s.r.as_slice();
        assert!(v.iter().all(|&x| x == 0.0 || x == 2.0));
        let zeros = v.iter().filter(|&&x| x == 0.0).count() as f64 / v.len() as f64;
        assert!((0.494..=0.506).contains(&zeros), "zero fraction {zeros}");
        let (mean, _) = mean_var(v);
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
    }

    #[test]
    fn gaussian_moments() {
        assert_eq!(sample_iid_gaussian(&mut Rng::new(3), 3, 3, 0.0).r, Matrix::ones(3, 3));
        let s = sample_iid_gaussian(&mut Rng::new(3), 1000, 100, 0.25);
        let (mean, var) = mean_var(s.r.as_slice());
        assert!((0.995..=1.005).contains(&mean), "mean {mean}");
        assert!((0.245..=0.255).contains(&var), "var {var}");
    }

    #[test]
    fn sni_identity_is_uncorrelated() {
        assert_eq!(
            sample_sni_fixed(&mut Rng::new(4), 2, &Matrix::identity(3), 0.0).r,
            Matrix::ones(2, 3)
        );
        let s = sample_sni_fixed(&mut Rng::new(4), 100_000, &Matrix::identity(4), 1.0);
        let c = crate::numerics::covariance(&s.r).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(c[(i, j)].abs() <= 0.01, "cov[{i},{j}] = {}", c[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn sni_all_ones_gives_identical_row_entries() {
        let (_, u) = SigmaSpec::AllOnes.materialize(0, 6).unwrap();
        let s = sample_sni_fixed(&mut Rng::new(5), 10, &u, 0.7);
        for row in s.r.row_iter() {
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }

    #[test]
    fn block_constant_factor_reconstructs_sigma() {
        let (sigma, u) = SigmaSpec::BlockConstant { block: 2 }.materialize(0, 5).unwrap();
        assert_eq!(u.matmul_nt(&u).unwrap(), sigma);
        assert_eq!(sigma[(0, 1)], 1.0);
        assert_eq!(sigma[(1, 2)], 0.0);
        assert_eq!(sigma[(4, 4)], 1.0);
    }

    #[test]
    fn asni_degenerate_cases() {
        let mut rng = Rng::new(6);
        let batch = sample_standard_gaussian(&mut rng, 8, 3);
        assert_eq!(sample_asni(&mut rng, &batch, 0.0, false).unwrap().r, Matrix::ones(8, 3));
        let constant = Matrix::from_fn(8, 3, |_, j| j as f64 + 0.5);
        assert_eq!(sample_asni(&mut rng, &constant, 0.9, false).unwrap().r, Matrix::ones(8, 3));
        let one_row = Matrix::ones(1, 3);
        assert!(matches!(
            sample_asni(&mut rng, &one_row, 0.5, false),
            Err(Error::DegenerateBatch { rows: 1 })
        ));
    }

    #[test]
    fn asni_shared_rows_are_bit_identical() {
        let mut rng = Rng::new(7);
        let batch = sample_standard_gaussian(&mut rng, 16, 5);
        let s = sample_asni(&mut rng, &batch, 0.5, true).unwrap();
        let first = s.r.row(0).to_vec();
        for row in s.r.row_iter() {
            assert!(row.iter().zip(&first).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn apply_noise_examples() {
        let y = Matrix::from_rows(&[[2.0, 3.0]]).unwrap();
        let s = NoiseSample {
            r: Matrix::from_rows(&[[0.5, 2.0]]).unwrap(),
            layer: 0,
        };
        assert_eq!(apply_noise(&y, &s).unwrap(), Matrix::from_rows(&[[1.0, 6.0]]).unwrap());
        let ones = NoiseSample::ones(1, 2, 0);
        let twice = apply_noise(&apply_noise(&y, &ones).unwrap(), &ones).unwrap();
        assert_eq!(twice, y);
        assert!(apply_noise(&y, &NoiseSample::ones(2, 2, 0)).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(NoiseSpec::gaussian(-0.1).validate(2).is_err());
        assert!(NoiseSpec::bernoulli(0.0).validate(2).is_err());
        assert!(NoiseSpec::bernoulli(1.5).validate(2).is_err());
        let mut sni = NoiseSpec::sni_fixed(0.1, SigmaSpec::Identity);
        assert!(sni.validate(2).is_ok());
        sni.fixed_sigma = None;
        assert!(sni.validate(2).is_err());
        let mut g = NoiseSpec::gaussian(0.1);
        g.fixed_sigma = Some(SigmaSpec::Identity);
        assert!(g.validate(2).is_err());
        assert!(NoiseSpec::asni(0.1).on_layers([3]).validate(2).is_err());
    }

    #[test]
    fn explicit_sigma_must_be_psd_and_sized() {
        let mut blocks = BTreeMap::new();
        blocks.insert(0, Matrix::diag(&[1.0, -1.0]));
        let spec = NoiseSpec::sni_fixed(0.1, SigmaSpec::Explicit { blocks });
        assert!(spec.prepare(&[2]).is_err());
        let mut blocks = BTreeMap::new();
        blocks.insert(0, Matrix::identity(3));
        let spec = NoiseSpec::sni_fixed(0.1, SigmaSpec::Explicit { blocks });
        assert!(spec.prepare(&[2]).is_err());
        assert!(spec.prepare(&[3]).is_ok());
    }

    #[test]
    fn prepared_noise_respects_mask() {
        let mut rng = Rng::new(9);
        let prepared = NoiseSpec::gaussian(0.3).on_layers([1]).prepare(&[4, 4]).unwrap();
        let y = Matrix::ones(3, 4);
        assert!(prepared.sample(0, &y, &mut rng).unwrap().is_none());
        let s = prepared.sample(1, &y, &mut rng).unwrap().unwrap();
        assert_eq!(s.layer, 1);
        assert_eq!(s.r.shape(), (3, 4));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = NoiseSpec::sni_fixed(0.25, SigmaSpec::BlockConstant { block: 4 })
            .shared(true)
            .on_layers([0, 2]);
        let json = serde_json::to_string(&spec).unwrap();
        let back: NoiseSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let minimal: NoiseSpec = serde_json::from_str(r#"{"kind":"asni","lambda":0.5}"#).unwrap();
        assert_eq!(minimal, NoiseSpec::asni(0.5));
    }
}
