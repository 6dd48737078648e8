//! Reference computations written without the library's linear algebra.
#![allow(dead_code)]

use asni::{Matrix, Rng};

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Population covariance by explicit double loop.
pub fn cov(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len() as f64;
    let d = x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in x {
        for a in 0..d {
            for b in 0..d {
                c[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]) / n;
            }
        }
    }
    c
}

pub fn center(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len() as f64;
    let d = x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    x.iter().map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect()
}

/// `λ Σᵢⱼ wᵢ wⱼ Cᵢⱼ Σᵢⱼ`.
pub fn penalty(w: &[f64], c: &[Vec<f64>], sigma: &[Vec<f64>], lambda: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..w.len() {
        for j in 0..w.len() {
            s += w[i] * w[j] * c[i][j] * sigma[i][j];
        }
    }
    lambda * s
}

/// Mean squared error of `w` on centered inputs.
pub fn centered_mse(w: &[f64], x: &[Vec<f64>], y: &[f64]) -> f64 {
    let xc = center(x);
    xc.iter()
        .zip(y)
        .map(|(r, t)| (r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - t).powi(2))
        .sum::<f64>()
        / x.len() as f64
}

/// Cholesky factor of a symmetric positive definite matrix (lower triangular).
pub fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = a[i][i] - s;
                if v <= 0.0 {
                    return None;
                }
                l[i][i] = v.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solves `L z = b` for lower-triangular `L`.
pub fn forward_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; b.len()];
    for i in 0..b.len() {
        let s: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
        z[i] = (b[i] - s) / l[i][i];
    }
    z
}

pub fn matvec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Correlated Gaussian design `x = g M` with per-instance mixing.
pub fn design(rng: &mut Rng, n: usize, d: usize) -> Matrix {
    let mix: Vec<f64> = (0..d * d).map(|_| rng.standard_normal()).collect();
    let g: Vec<f64> = (0..n * d).map(|_| rng.standard_normal()).collect();
    Matrix::from_fn(n, d, |i, j| (0..d).map(|k| g[i * d + k] * mix[k * d + j]).sum())
}

pub fn gaussian_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.standard_normal()).collect()
}

/// Largest relative gap between backprop and central differences over every
/// weight and bias, with the noise realization held fixed. Returns the gap
/// and the number of coordinates checked.
pub fn gradient_check(
    net: &asni::network::Network,
    x: &Matrix,
    y: &Matrix,
    noise: &[Option<asni::noise::NoiseSample>],
    h: f64,
) -> (f64, usize) {
    let trace = net.forward_fixed_noise(x, noise).unwrap();
    let grads = net.backward(&trace, y).unwrap();
    let loss = |n: &asni::network::Network| {
        let t = n.forward_fixed_noise(x, noise).unwrap();
        n.loss.value(&t.output, y).unwrap()
    };
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut probe = net.clone();
    for l in 0..net.layers.len() {
        for k in 0..net.layers[l].weights.as_slice().len() {
            let orig = net.layers[l].weights.as_slice()[k];
            probe.layers[l].weights.as_mut_slice()[k] = orig + h;
            let up = loss(&probe);
            probe.layers[l].weights.as_mut_slice()[k] = orig - h;
            let down = loss(&probe);
            probe.layers[l].weights.as_mut_slice()[k] = orig;
            worst = worst.max(grad_gap(grads.weights[l].as_slice()[k], (up - down) / (2.0 * h)));
            count += 1;
        }
        for k in 0..net.layers[l].bias.len() {
            let orig = net.layers[l].bias[k];
            probe.layers[l].bias[k] = orig + h;
            let up = loss(&probe);
            probe.layers[l].bias[k] = orig - h;
            let down = loss(&probe);
            probe.layers[l].bias[k] = orig;
            worst = worst.max(grad_gap(grads.biases[l][k], (up - down) / (2.0 * h)));
            count += 1;
        }
    }
    (worst, count)
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn grad_gap(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}
