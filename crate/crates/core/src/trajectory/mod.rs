//! Time-domain action sequences and their cosine spectra.
//!
//! A [`Trajectory`] is an `N x d` row-major matrix of actions. The transform
//! pair in [`dct`] is the unnormalized DCT-II with the `1/N`-scaled inverse,
//! applied independently to each action dimension.

mod dct;
mod energy;
mod io;

pub use dct::{dct_forward, idct_k, low_pass, truncate};
pub use energy::{
    band_energy_table, decile_edges, energy_proportion, parseval_energy, BandEnergyTable,
};
pub use io::{
    parse_band_table_csv, parse_spectrum_csv, parse_trajectory_csv, render_band_table_csv,
    render_spectrum_csv, render_trajectory_csv,
};

use crate::error::{Error, Result};

/// Per-dimension affine normalization: `normalized = (raw - offset) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn new(offset: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if offset.len() != scale.len() {
            return Err(Error::shape(
                "normalization",
                format!("offset has {} entries, scale has {}", offset.len(), scale.len()),
            ));
        }
        if let Some(bad) = scale.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidTrajectory(format!(
                "normalization scale[{bad}] = {} must be strictly positive",
                scale[bad]
            )));
        }
        Ok(Self { offset, scale })
    }

    /// Min/max normalizer mapping each column of `rows` onto `[-1, 1]`.
    /// Constant columns get unit scale.
    pub fn fit_min_max<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut seen = false;
        for row in rows {
            if row.len() != dim {
                return Err(Error::shape(
                    "fit_min_max",
                    format!("row has {} entries, expected {dim}", row.len()),
                ));
            }
            seen = true;
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        if !seen {
            return Err(Error::Data("cannot fit a normalizer on no data".into()));
        }
        let offset = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let scale = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| {
                let s = 0.5 * (h - l);
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self::new(offset, scale)
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn normalize_row(&self, row: &mut [f64]) {
        for ((v, o), s) in row.iter_mut().zip(&self.offset).zip(&self.scale) {
            *v = (*v - o) / s;
        }
    }

    pub fn denormalize_row(&self, row: &mut [f64]) {
        for ((v, o), s) in row.iter_mut().zip(&self.offset).zip(&self.scale) {
            *v = *v * s + o;
        }
    }
}

/// An `N x d` action sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    values: Vec<f64>,
    horizon: usize,
    dim: usize,
    normalization: Option<Normalization>,
}

impl Trajectory {
    /// Builds a trajectory from row-major values, rejecting non-finite entries.
    pub fn new(horizon: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        check_shape("trajectory", horizon, dim, values.len())?;
        check_finite(&values, dim)?;
        Ok(Self {
            values,
            horizon,
            dim,
            normalization: None,
        })
    }

    pub fn zeros(horizon: usize, dim: usize) -> Result<Self> {
        Self::new(horizon, dim, vec![0.0; horizon * dim])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let horizon = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::shape(
                "trajectory",
                format!("row {bad} has {} entries, expected {dim}", rows[bad].len()),
            ));
        }
        Self::new(horizon, dim, rows.concat())
    }

    pub fn with_normalization(mut self, norm: Normalization) -> Result<Self> {
        if norm.dim() != self.dim {
            return Err(Error::shape(
                "trajectory",
                format!("normalization has {} dims, trajectory has {}", norm.dim(), self.dim),
            ));
        }
        self.normalization = Some(norm);
        Ok(self)
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, n: usize, j: usize) -> f64 {
        self.values[n * self.dim + j]
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.dim..(n + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Total squared second difference under half-sample symmetric extension
    /// (`x[-1] = x[0]`, `x[N] = x[N-1]`), summed over dimensions. The cosine
    /// basis diagonalizes this operator, so it is monotone in the number of
    /// retained coefficients.
    pub fn roughness(&self) -> f64 {
        let n = self.horizon;
        let mut total = 0.0;
        for j in 0..self.dim {
            for t in 0..n {
                let prev = self.get(t.saturating_sub(1), j);
                let next = self.get((t + 1).min(n - 1), j);
                let d2 = prev - 2.0 * self.get(t, j) + next;
                total += d2 * d2;
            }
        }
        total
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Cosine coefficients of a trajectory; row `i` holds `X_i` for every dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    coeffs: Vec<f64>,
    horizon: usize,
    dim: usize,
}

impl Spectrum {
    pub fn new(horizon: usize, dim: usize, coeffs: Vec<f64>) -> Result<Self> {
        check_shape("spectrum", horizon, dim, coeffs.len())?;
        check_finite(&coeffs, dim)?;
        Ok(Self {
            coeffs,
            horizon,
            dim,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.coeffs[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coeffs[i * self.dim..(i + 1) * self.dim]
    }
}

fn check_shape(what: &'static str, horizon: usize, dim: usize, len: usize) -> Result<()> {
    if horizon == 0 || dim == 0 {
        return Err(Error::InvalidTrajectory(format!(
            "{what} needs N >= 1 and d >= 1, got N = {horizon}, d = {dim}"
        )));
    }
    if len != horizon * dim {
        return Err(Error::shape(
            what,
            format!("{len} values do not fill {horizon} x {dim}"),
        ));
    }
    Ok(())
}

fn check_finite(values: &[f64], dim: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(idx) => Err(Error::NonFinite {
            row: idx / dim,
            col: idx % dim,
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan_with_position() {
        let err = Trajectory::new(2, 2, vec![0.0, 1.0, f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, col: 0 }));
    }

    #[test]
    fn rejects_empty_shapes() {
        assert!(Trajectory::new(0, 1, vec![]).is_err());
        assert!(Trajectory::new(1, 0, vec![]).is_err());
        assert!(Trajectory::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn normalization_requires_positive_scale() {
        assert!(Normalization::new(vec![0.0], vec![0.0]).is_err());
        assert!(Normalization::new(vec![0.0], vec![-1.0]).is_err());
        assert!(Normalization::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn min_max_maps_to_unit_box() {
        let rows = [vec![0.0, 5.0], vec![2.0, 5.0], vec![1.0, 5.0]];
        let norm = Normalization::fit_min_max(2, rows.iter().map(Vec::as_slice)).unwrap();
        let mut lo = rows[0].clone();
        norm.normalize_row(&mut lo);
        assert_eq!(lo, vec![-1.0, 0.0]);
        let mut hi = rows[1].clone();
        norm.normalize_row(&mut hi);
        assert_eq!(hi[0], 1.0);
        norm.denormalize_row(&mut hi);
        assert_eq!(hi, rows[1]);
    }

    #[test]
    fn roughness_of_constant_is_zero() {
        let t = Trajectory::new(5, 1, vec![3.0; 5]).unwrap();
        assert_eq!(t.roughness(), 0.0);
    }
}
