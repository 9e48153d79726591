use crate::error::Result;
use crate::graph::{Graph, Mode, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over scalars of |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares reverse-mode gradients of `loss` against a fourth-order central
/// difference `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, scalar by
/// scalar. `loss` builds the graph in eval mode and returns a scalar node.
pub fn grad_check<F>(params: &ParamStore<f64>, eps: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    grad_check_in(params, eps, Mode::Eval, 0, loss)
}

/// Same as [`grad_check`] with an explicit graph mode and dropout seed; the
/// seed is reused for every evaluation so train-mode masks stay fixed.
pub fn grad_check_in<F>(params: &ParamStore<f64>, eps: f64, mode: Mode, seed: u64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::with_seed(params, mode, seed);
        let l = loss(&mut g)?;
        g.backward(l)?
    };

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::with_seed(store, mode, seed);
        let l = loss(&mut g)?;
        Ok(g.value(l).data()[0])
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for id in params.ids().collect::<Vec<ParamId>>() {
        for i in 0..params.get(id).numel() {
            let orig = params.get(id).data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                work.get_mut(id).data_mut()[i] = orig + offset;
                eval(&work)
            };
            let (p2, p1, m1, m2) = (at(2.0 * eps)?, at(eps)?, at(-eps)?, at(-2.0 * eps)?);
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * eps);
            let a = analytic.get(id).data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((params.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}
