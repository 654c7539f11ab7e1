//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::param::ParamStore;
use crate::autodiff::tape::{Tape, Var};
use crate::error::{contract, Error, Result};
use crate::tensor::Shape;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Check at most this many randomly chosen entries per parameter.
    pub max_entries: Option<usize>,
    pub seed: u64,
    /// Smallest denominator of the relative error. Entries whose true
    /// gradient is exactly zero (e.g. a bias whose effect a later batch
    /// norm cancels) otherwise compare rounding noise against itself.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-5, tol: 1e-4, max_entries: None, seed: 0, floor: 1e-12 }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub path: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tol
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a − n| / max(|a|, |n|, 1e−12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floor(analytic, numeric, 1e-12)
}

/// `|a − n| / max(|a|, |n|, floor)`
pub fn relative_error_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(store: &mut ParamStore<f64>, f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &mut ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let v = tape.value(out)?;
    contract!(v.shape() == Shape::SCALAR, "grad_check needs a scalar function, got {}", v.shape());
    Ok(v.data()[0])
}

/// Compares `backward` against `(f(θ+ε) − f(θ−ε)) / 2ε` for every trainable
/// entry of `store`. `f` builds the scalar function on a fresh tape from the
/// current store contents.
pub fn grad_check<F>(store: &mut ParamStore<f64>, mut f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &mut ParamStore<f64>) -> Result<Var>,
{
    for (_, path, p) in store.iter() {
        contract!(p.value.all_finite(), "grad_check point has non-finite entries in `{path}`");
    }
    let first = evaluate(store, &mut f)?;
    let second = evaluate(store, &mut f)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic(format!("two evaluations gave {first:e} and {second:e}")));
    }

    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<_> = store.ids().filter(|&id| store.get(id).trainable).collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let len = store.get(id).value.len();
        let indices: Vec<usize> = match opts.max_entries {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut report = ParamCheck {
            path: store.path(id).to_string(),
            checked: indices.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        let mut first = true;
        for i in indices {
            let analytic = store.get(id).grad.data()[i];
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + opts.eps;
            let plus = evaluate(store, &mut f)?;
            store.get_mut(id).value.data_mut()[i] = orig - opts.eps;
            let minus = evaluate(store, &mut f)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let err = relative_error_floor(analytic, numeric, opts.floor);
            if first || err > report.max_rel_error {
                first = false;
                report.max_rel_error = err;
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
        params.push(report);
    }
    Ok(GradCheckReport { params, tol: opts.tol })
}
