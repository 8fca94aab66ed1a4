//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;
use crate::error::Result;

/// Worst coordinate found by a gradient check.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input or parameter index, coordinate, analytic, numeric)` at the worst point.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, which: usize, coord: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some((which, coord, analytic, numeric));
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar function of `inputs` against
/// central differences with the given `step`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[which].numel()];
        let analytic = grads.wrt(*var).unwrap_or(&zeros).to_vec();
        for coord in 0..inputs[which].numel() {
            let orig = inputs[which].values()[coord];
            work[which].values_mut()[coord] = orig + step;
            let plus = eval(&work)?;
            work[which].values_mut()[coord] = orig - step;
            let minus = eval(&work)?;
            work[which].values_mut()[coord] = orig;
            report.record(which, coord, analytic[coord], (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}

/// Same as [`grad_check`] but perturbs the trainable tensors of a parameter
/// set. `only` restricts the check to a subset of parameters.
pub fn grad_check_params<F>(
    params: &mut ParamSet,
    f: F,
    step: f64,
    only: Option<&[ParamId]>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic: Vec<Option<Vec<f64>>> = {
        let mut g = Graph::with_params(params);
        let out = f(&mut g)?;
        let grads = g.backward(out)?;
        params
            .ids()
            .map(|id| grads.param(id).map(<[f64]>::to_vec))
            .collect()
    };
    let eval = |params: &ParamSet| -> Result<f64> {
        let mut g = Graph::with_params(params);
        let out = f(&mut g)?;
        Ok(g.scalar(out))
    };

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => params.ids().collect(),
    };
    let mut report = GradCheckReport::default();
    for id in ids {
        if !params.get(id).requires_grad() {
            continue;
        }
        for coord in 0..params.get(id).numel() {
            let orig = params.get(id).values()[coord];
            params.get_mut(id).values_mut()[coord] = orig + step;
            let plus = eval(params)?;
            params.get_mut(id).values_mut()[coord] = orig - step;
            let minus = eval(params)?;
            params.get_mut(id).values_mut()[coord] = orig;
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[coord]);
            report.record(id.index(), coord, a, (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}
