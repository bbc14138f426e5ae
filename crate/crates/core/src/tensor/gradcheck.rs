//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::graph::{Graph, Var};
use super::param::ParamStore;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per parameter; all coordinates when the parameter
    /// is at most this large.
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            coords_per_param: 12,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// `|a − n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the gradient of the scalar built by `f` against central
/// differences for every parameter selected by `select`.
///
/// `f` must be deterministic. The store is restored before returning.
pub fn grad_check<F>(
    f: F,
    store: &mut ParamStore,
    select: impl Fn(&str) -> bool,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut graph = Graph::new();
    let loss = f(&mut graph, store)?;
    graph.backward(loss)?;
    store.clear_grads();
    store.zero_grads(|_| true);
    store.accumulate(&graph);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = f(&mut g, store)?;
        Ok(g.value(l).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let names: Vec<String> = store
        .iter()
        .filter(|(n, p)| select(n) && p.requires_grad)
        .map(|(n, _)| n.to_string())
        .collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for name in names {
        let p = store.get(&name).expect("listed above");
        let analytic = p.grad.clone().expect("zeroed above");
        let n = p.value.numel();
        let coords: Vec<usize> = if n <= opts.coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = store.value(&name)?.data()[i];
            store.value_mut(&name)?.data_mut()[i] = orig + opts.step;
            let plus = eval(store);
            store.value_mut(&name)?.data_mut()[i] = orig - opts.step;
            let minus = eval(store);
            store.value_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.step);
            let err = relative_error(analytic.data()[i], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst = Some((name.clone(), i));
            }
        }
    }
    store.clear_grads();
    Ok(report)
}
