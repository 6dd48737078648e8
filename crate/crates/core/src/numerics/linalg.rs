use nalgebra::{DMatrix, SymmetricEigen};

use super::{Matrix, Rng};
use crate::error::{Error, Result};

/// Default additive jitter for [`psd_factor`].
pub const DEFAULT_JITTER: f64 = 1e-10;
/// Default eigenvalue floor for [`whitening_matrix`].
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-8;
/// Jitter escalates by powers of ten up to this multiple of the base jitter.
const MAX_JITTER_MULTIPLIER: f64 = 1e6;
/// Relative asymmetry accepted as "symmetric".
const SYMMETRY_TOL: f64 = 1e-10;

pub(crate) fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Population covariance `(1/n) Σ (xᵢ − x̄)(xᵢ − x̄)ᵀ` of the rows of `x`.
///
/// The result is exactly symmetric (lower triangle mirrored from upper).
pub fn covariance(x: &Matrix) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::dims("covariance", "need at least one row"));
    }
    let centered = x.sub_row_vector(&x.col_means());
    let mut c = centered.matmul_tn(&centered)?.scale(1.0 / x.rows() as f64);
    c.symmetrize_from_upper();
    Ok(c)
}

fn check_symmetric(sigma: &Matrix, op: &'static str) -> Result<()> {
    if !sigma.is_square() {
        return Err(Error::dims(op, format!("expected square, got {:?}", sigma.shape())));
    }
    let asym = sigma.asymmetry();
    if asym > SYMMETRY_TOL * sigma.max_abs().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Lower Cholesky factor of `a + shift·I`, or `None` if a pivot is not positive.
fn cholesky_shifted(a: &Matrix, shift: f64) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)] + shift;
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let d = diag.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            // Read the upper triangle so tiny asymmetries cannot leak in.
            let mut s = a[(j, i)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Factor a symmetric PSD matrix as `Σ = U Uᵀ` (lower-triangular `U`).
///
/// Tries an exact Cholesky first, then retries with diagonal jitter
/// `jitter, 10·jitter, …, 10⁶·jitter` for semidefinite input.
pub fn psd_factor(sigma: &Matrix, jitter: f64) -> Result<Matrix> {
    check_symmetric(sigma, "psd_factor")?;
    if let Some(u) = cholesky_shifted(sigma, 0.0) {
        return Ok(u);
    }
    let mut shift = jitter;
    while shift <= jitter * MAX_JITTER_MULTIPLIER * (1.0 + 1e-9) {
        if let Some(u) = cholesky_shifted(sigma, shift) {
            return Ok(u);
        }
        shift *= 10.0;
    }
    Err(Error::Singular {
        max_jitter: jitter * MAX_JITTER_MULTIPLIER,
    })
}

/// `rows × cols` matrix of i.i.d. standard normal draws.
pub fn sample_standard_gaussian(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.standard_normal();
    }
    m
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn haar_rotation(rng: &mut Rng, d: usize) -> Matrix {
    let g = to_nalgebra(&sample_standard_gaussian(rng, d, d));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    from_nalgebra(&q)
}

/// Symmetric eigendecomposition, eigenvalues ascending.
pub fn symmetric_eigen(c: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    check_symmetric(c, "symmetric_eigen")?;
    let eig = SymmetricEigen::new(to_nalgebra(c));
    let mut order: Vec<usize> = (0..c.rows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = Matrix::from_fn(c.rows(), c.rows(), |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// ZCA whitening transform of a covariance matrix.
#[derive(Clone, Debug)]
pub struct Whitening {
    /// `C^{-1/2}`.
    pub z: Matrix,
    /// `C^{1/2}`.
    pub z_inv: Matrix,
    /// Eigenvalues ascending, before clamping.
    pub eigenvalues: Vec<f64>,
    /// Number of eigenvalues raised to the floor.
    pub clamped: usize,
}

impl Whitening {
    pub fn is_rank_deficient(&self) -> bool {
        self.clamped > 0
    }

    pub fn condition_number(&self) -> f64 {
        let lo = self.eigenvalues.first().copied().unwrap_or(0.0);
        let hi = self.eigenvalues.last().copied().unwrap_or(0.0);
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }
}

/// `(C^{-1/2}, C^{1/2})` through the symmetric eigendecomposition, with
/// eigenvalues clamped below at `eps`. Clamping is reported, not an error.
pub fn whitening_matrix(c: &Matrix, eps: f64) -> Result<Whitening> {
    let (values, vectors) = symmetric_eigen(c)?;
    let mut clamped = 0;
    let roots: Vec<f64> = values
        .iter()
        .map(|&v| {
            if v < eps {
                clamped += 1;
                eps.sqrt()
            } else {
                v.sqrt()
            }
        })
        .collect();
    let spectral = |f: &dyn Fn(f64) -> f64| -> Result<Matrix> {
        let scaled = Matrix::from_fn(vectors.rows(), vectors.cols(), |i, j| {
            vectors[(i, j)] * f(roots[j])
        });
        let mut m = scaled.matmul_nt(&vectors)?;
        m.symmetrize_from_upper();
        Ok(m)
    };
    Ok(Whitening {
        z: spectral(&|s| 1.0 / s)?,
        z_inv: spectral(&|s| s)?,
        eigenvalues: values,
        clamped,
    })
}
