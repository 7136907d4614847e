use std::f64::consts::PI;

use super::{Spectrum, Trajectory};
use crate::error::{check_range, Result};

/// `table[i * n + t] = cos(pi / N * (t + 1/2) * i)`.
fn cosine_table(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n * n);
    for i in 0..n {
        for t in 0..n {
            table.push((PI / n as f64 * (t as f64 + 0.5) * i as f64).cos());
        }
    }
    table
}

/// Unnormalized DCT-II of every action dimension:
/// `X_i = sum_n x_n cos(pi/N (n + 1/2) i)`.
pub fn dct_forward(traj: &Trajectory) -> Result<Spectrum> {
    let (n, d) = (traj.horizon(), traj.dim());
    let table = cosine_table(n);
    let x = traj.values();
    let mut coeffs = vec![0.0; n * d];
    for i in 0..n {
        let basis = &table[i * n..(i + 1) * n];
        let out = &mut coeffs[i * d..(i + 1) * d];
        for (t, c) in basis.iter().enumerate() {
            let row = &x[t * d..(t + 1) * d];
            for (o, v) in out.iter_mut().zip(row) {
                *o += v * c;
            }
        }
    }
    Spectrum::new(n, d, coeffs)
}

/// k-level reconstruction from the lowest `k` coefficients.
/// `k = 0` yields zeros and `k = N` is the exact inverse.
pub fn idct_k(spec: &Spectrum, k: usize) -> Result<Trajectory> {
    let (n, d) = (spec.horizon(), spec.dim());
    check_range("k", k as f64, 0.0, n as f64)?;
    let mut values = vec![0.0; n * d];
    if k > 0 {
        let table = cosine_table(n);
        let inv_n = 1.0 / n as f64;
        for t in 0..n {
            let out = &mut values[t * d..(t + 1) * d];
            out.copy_from_slice(spec.row(0));
            for i in 1..k {
                let w = 2.0 * table[i * n + t];
                for (o, c) in out.iter_mut().zip(spec.row(i)) {
                    *o += w * c;
                }
            }
            for o in out.iter_mut() {
                *o *= inv_n;
            }
        }
    }
    Trajectory::new(n, d, values)
}

/// Keeps rows `0..k` of the spectrum and zeroes the rest.
pub fn truncate(spec: &Spectrum, k: usize) -> Result<Spectrum> {
    let (n, d) = (spec.horizon(), spec.dim());
    check_range("k", k as f64, 0.0, n as f64)?;
    let mut coeffs = spec.coeffs().to_vec();
    coeffs[k * d..].iter_mut().for_each(|c| *c = 0.0);
    Spectrum::new(n, d, coeffs)
}

/// `idct_k(dct_forward(traj), k)`.
pub fn low_pass(traj: &Trajectory, k: usize) -> Result<Trajectory> {
    idct_k(&dct_forward(traj)?, k)
}
