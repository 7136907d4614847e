//! Central finite-difference validation of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Minimum number of scalar entries to probe (all entries if fewer exist).
    pub samples: usize,
    /// Denominator floor for the relative error, per unit of `max(1, |f|)`.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tolerance: 1e-4,
            samples: 256,
            floor: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub checked: usize,
    pub worst_param: String,
    pub worst_index: usize,
    pub passed: bool,
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let loss = f(&mut g)?;
    Ok(g.scalar(loss))
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Picks entries to probe: a couple from every trainable parameter, the rest
/// uniformly over all trainable scalars.
fn probe_set(store: &ParamStore, opts: &GradCheckOptions) -> Vec<(ParamId, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let trainable: Vec<ParamId> = store.ids().filter(|id| store.param(*id).requires_grad).collect();
    let total: usize = trainable.iter().map(|id| store.value(*id).len()).sum();
    if total <= opts.samples {
        return trainable
            .iter()
            .flat_map(|&id| (0..store.value(id).len()).map(move |i| (id, i)))
            .collect();
    }
    let mut picks = Vec::new();
    for &id in &trainable {
        let len = store.value(id).len();
        for i in sample(&mut rng, len, len.min(2)) {
            picks.push((id, i));
        }
    }
    let extra = opts.samples.saturating_sub(picks.len());
    for flat in sample(&mut rng, total, extra.min(total)) {
        let mut rem = flat;
        for &id in &trainable {
            let len = store.value(id).len();
            if rem < len {
                picks.push((id, rem));
                break;
            }
            rem -= len;
        }
    }
    picks.sort();
    picks.dedup();
    picks
}

/// Compares `analytic` against central differences of the scalar produced by
/// `f`. The store is restored bit-exactly afterwards.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    f: F,
    analytic: &Gradients,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let first = eval(store, &f)?;
    let second = eval(store, &f)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Autodiff(format!(
            "model function is not deterministic: {first} vs {second}"
        )));
    }
    let probes = probe_set(store, &opts);
    // difference roundoff grows like |f| * machine eps / eps, so the floor scales with |f|
    let floor = opts.floor * first.abs().max(1.0);
    let mut max_err: f64 = 0.0;
    let mut sum_err = 0.0;
    let (mut worst_param, mut worst_index) = (String::new(), 0);
    for &(id, i) in &probes {
        let orig = store.value(id).data()[i];
        store.value_mut(id).data_mut()[i] = orig + opts.eps;
        let plus = eval(store, &f);
        store.value_mut(id).data_mut()[i] = orig - opts.eps;
        let minus = eval(store, &f);
        store.value_mut(id).data_mut()[i] = orig;
        let numeric = (plus? - minus?) / (2.0 * opts.eps);
        let a = analytic.get(id).map_or(0.0, |g| g[i]);
        let err = relative_error(a, numeric, floor);
        sum_err += err;
        if err > max_err || worst_param.is_empty() {
            max_err = max_err.max(err);
            worst_param = store.name(id).to_string();
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_err,
        mean_rel_error: sum_err / probes.len().max(1) as f64,
        checked: probes.len(),
        worst_param,
        worst_index,
        passed: max_err < opts.tolerance,
    })
}

/// Runs `f` forward and backward, then checks the analytic gradient.
pub fn grad_check<F>(store: &mut ParamStore, f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    check_gradients(store, f, &analytic, opts)
}
