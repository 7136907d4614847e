use super::{dct_forward, Spectrum, Trajectory};
use crate::error::{check_range, Error, Result};

/// Share of squared-coefficient energy held by the lowest
/// `floor((N - 1) * p / 100) + 1` coefficients, per dimension.
///
/// Coefficients are weighted equally (no factor two on `i >= 1`). A dimension
/// with no energy reports 1.
pub fn energy_proportion(spec: &Spectrum, p: f64) -> Result<Vec<f64>> {
    check_range("p", p, 0.0, 100.0)?;
    let n = spec.horizon();
    let cut = (((n - 1) as f64) * p / 100.0).floor() as usize;
    let cut = cut.min(n - 1);
    let out = (0..spec.dim())
        .map(|j| {
            let mut kept = 0.0;
            let mut total = 0.0;
            for i in 0..n {
                let e = spec.get(i, j) * spec.get(i, j);
                total += e;
                if i <= cut {
                    kept += e;
                }
            }
            if total > 0.0 {
                kept / total
            } else {
                1.0
            }
        })
        .collect();
    Ok(out)
}

/// Time-domain energy per dimension recovered from the spectrum:
/// `(X_0^2 + 2 sum_{i>=1} X_i^2) / N`, which equals `sum_n x_n^2`.
pub fn parseval_energy(spec: &Spectrum) -> Vec<f64> {
    let n = spec.horizon();
    (0..spec.dim())
        .map(|j| {
            let tail: f64 = (1..n).map(|i| spec.get(i, j).powi(2)).sum();
            (spec.get(0, j).powi(2) + 2.0 * tail) / n as f64
        })
        .collect()
}

/// Row-normalized energy per action dimension and frequency band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandEnergyTable {
    /// `dim x bands`, row-major.
    pub energy: Vec<f64>,
    pub dim: usize,
    /// `bands + 1` cut points as fractions of N, strictly increasing from 0 to 1.
    pub band_edges: Vec<f64>,
}

impl BandEnergyTable {
    pub fn bands(&self) -> usize {
        self.band_edges.len() - 1
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let b = self.bands();
        &self.energy[j * b..(j + 1) * b]
    }

    pub(crate) fn validate_edges(edges: &[f64]) -> Result<()> {
        let ok = edges.len() >= 2
            && edges[0] == 0.0
            && *edges.last().unwrap() == 1.0
            && edges.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "band edges must increase strictly from 0 to 1, got {edges:?}"
            )))
        }
    }
}

/// Pools squared DCT coefficients over the dataset, buckets coefficient `i`
/// by `i / N` into `[edge_b, edge_{b+1})` and normalizes each dimension's row.
pub fn band_energy_table(dataset: &[Trajectory], band_edges: &[f64]) -> Result<BandEnergyTable> {
    BandEnergyTable::validate_edges(band_edges)?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::Data("band energy table needs at least one trajectory".into()))?;
    let dim = first.dim();
    let bands = band_edges.len() - 1;
    let mut energy = vec![0.0; dim * bands];
    for (idx, traj) in dataset.iter().enumerate() {
        if traj.dim() != dim {
            return Err(Error::shape(
                "band_energy_table",
                format!("trajectory {idx} has d = {}, expected {dim}", traj.dim()),
            ));
        }
        let spec = dct_forward(traj)?;
        let n = spec.horizon();
        for i in 0..n {
            let frac = i as f64 / n as f64;
            let band = band_edges[1..]
                .iter()
                .position(|&hi| frac < hi)
                .unwrap_or(bands - 1);
            for j in 0..dim {
                energy[j * bands + band] += spec.get(i, j).powi(2);
            }
        }
    }
    for row in energy.chunks_exact_mut(bands) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|e| *e /= total);
        } else {
            // A silent dimension has all of its (zero) energy at DC.
            row[0] = 1.0;
        }
    }
    Ok(BandEnergyTable {
        energy,
        dim,
        band_edges: band_edges.to_vec(),
    })
}

/// Ten equal 10% bands.
pub fn decile_edges() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_only_energy() {
        let s = Spectrum::new(4, 1, vec![4.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(energy_proportion(&s, 0.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn flat_spectrum_quarter() {
        let s = Spectrum::new(4, 1, vec![1.0; 4]).unwrap();
        assert_eq!(energy_proportion(&s, 25.0).unwrap(), vec![0.25]);
        assert_eq!(energy_proportion(&s, 100.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn p_out_of_range() {
        let s = Spectrum::new(2, 1, vec![1.0, 1.0]).unwrap();
        assert!(energy_proportion(&s, -1.0).is_err());
        assert!(energy_proportion(&s, 100.5).is_err());
    }

    #[test]
    fn silent_dimension_is_one() {
        let s = Spectrum::new(3, 2, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(energy_proportion(&s, 0.0).unwrap()[0], 1.0);
    }

    #[test]
    fn single_coefficient_horizon() {
        let s = Spectrum::new(1, 1, vec![2.0]).unwrap();
        for p in [0.0, 33.0, 100.0] {
            assert_eq!(energy_proportion(&s, p).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn constant_dataset_lowest_band() {
        let data: Vec<_> = (1..4)
            .map(|c| Trajectory::new(20, 2, vec![c as f64; 40]).unwrap())
            .collect();
        let t = band_energy_table(&data, &decile_edges()).unwrap();
        for j in 0..2 {
            assert!((t.row(j)[0] - 1.0).abs() < 1e-12);
            assert!(t.row(j)[1..].iter().all(|e| e.abs() < 1e-20));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(band_energy_table(&[], &decile_edges()).is_err());
        let a = Trajectory::zeros(4, 1).unwrap();
        let b = Trajectory::zeros(4, 2).unwrap();
        assert!(band_energy_table(&[a.clone(), b], &decile_edges()).is_err());
        assert!(band_energy_table(&[a.clone()], &[0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(band_energy_table(&[a], &[0.1, 1.0]).is_err());
    }
}
