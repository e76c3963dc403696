use crate::error::Result;
use crate::tensor::Real;

use super::{Graph, ParamStore, Var};

/// A scalar function of the parameters in a store, written once for any
/// precision so it can be evaluated in both `f32` and the `f64` shadow.
pub trait Objective {
    fn loss<T: Real>(&self, graph: &mut Graph<'_, T>) -> Result<Var>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckPrecision {
    /// Reverse-mode gradients computed in `f32`.
    Single,
    /// Reverse-mode gradients computed in `f64`.
    Double,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of every trainable parameter against
/// central finite differences `(f(p+ε) − f(p−ε)) / 2ε`.
///
/// Finite differences are always taken on an `f64` copy of the parameters;
/// `precision` selects which precision the analytic gradients come from.
pub fn grad_check<O: Objective>(
    objective: &O,
    params: &ParamStore<f32>,
    eps: f64,
    precision: CheckPrecision,
) -> Result<GradCheckReport> {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let analytic: Vec<Vec<f64>> = match precision {
        CheckPrecision::Single => analytic_grads(objective, params)?,
        CheckPrecision::Double => analytic_grads(objective, &params.cast::<f64>())?,
    };

    let mut shadow: ParamStore<f64> = params.cast();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        coordinates: 0,
    };
    let ids: Vec<_> = shadow.trainable_ids().collect();
    for (slot, id) in ids.into_iter().enumerate() {
        for i in 0..shadow.value(id).len() {
            let orig = shadow.value(id).data()[i];
            shadow.get_mut(id).value_mut().data_mut()[i] = orig + eps;
            let up = eval(objective, &shadow)?;
            shadow.get_mut(id).value_mut().data_mut()[i] = orig - eps;
            let down = eval(objective, &shadow)?;
            shadow.get_mut(id).value_mut().data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[slot][i];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst_param = Some(shadow.get(id).name().to_string());
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

fn eval<O: Objective, T: Real>(objective: &O, params: &ParamStore<T>) -> Result<f64> {
    let mut g = Graph::with_params(params);
    let loss = objective.loss(&mut g)?;
    Ok(g.value(loss).item().as_f64())
}

fn analytic_grads<O: Objective, T: Real>(objective: &O, params: &ParamStore<T>) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::with_params(params);
    let loss = objective.loss(&mut g)?;
    let grads = g.backward(loss)?;
    Ok(params
        .trainable_ids()
        .map(|id| {
            grads
                .param_or_zeros(id, params)
                .data()
                .iter()
                .map(|v| v.as_f64())
                .collect()
        })
        .collect())
}
