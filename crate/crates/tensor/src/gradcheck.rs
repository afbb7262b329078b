//! Finite-difference verification of graph gradients.
//!
//! Both sides are computed in f64 from the same generic graph code that
//! trains in f32. Each parameter entry is nudged by `±step` in f32 and the
//! loss re-evaluated, so the difference quotient divides by the perturbation
//! actually representable in f32, not by the nominal `2·step`. An f32
//! analytic gradient would carry accumulation error near 1e-7 absolute,
//! which dominates entries whose true gradient cancels to almost zero.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A scalar function of a list of parameter tensors, buildable on a graph
/// of either precision.
pub trait Differentiable {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, params: &[Var]) -> Result<Var>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f32,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is essentially zero are judged on absolute error.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_entries: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            floor: 1e-4,
            max_entries: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_f64<F: Differentiable>(f: &F, params: &[Tensor<f32>]) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.cast())).collect();
    let loss = f.loss(&mut g, &vars)?;
    Ok(g.value(loss).item())
}

/// Backpropagated gradients, computed in precision `T`.
pub fn analytic_gradients<T: Scalar, F: Differentiable>(
    f: &F,
    params: &[Tensor<f32>],
) -> Result<Vec<Tensor<T>>> {
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.cast())).collect();
    let loss = f.loss(&mut g, &vars)?;
    g.backward(loss)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect())
}

/// Compares analytic and central-difference gradients for every parameter.
pub fn check_gradients<F: Differentiable>(
    f: &F,
    params: &[(String, Tensor<f32>)],
    cfg: &GradCheckConfig,
) -> Result<Vec<ParamReport>> {
    let mut values: Vec<Tensor<f32>> = params.iter().map(|(_, t)| t.clone()).collect();
    let analytic = analytic_gradients::<f64, _>(f, &values)?;
    let mut reports = Vec::with_capacity(params.len());
    for (pi, (name, _)) in params.iter().enumerate() {
        let n = values[pi].numel();
        let count = n.min(cfg.max_entries.max(1));
        let mut report = ParamReport {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            entries_checked: count,
        };
        for k in 0..count {
            let idx = k * n / count;
            let orig = values[pi].data()[idx];
            let plus = orig + cfg.step;
            let minus = orig - cfg.step;
            values[pi].data_mut()[idx] = plus;
            let lp = eval_f64(f, &values)?;
            values[pi].data_mut()[idx] = minus;
            let lm = eval_f64(f, &values)?;
            values[pi].data_mut()[idx] = orig;
            let numeric = (lp - lm) / (f64::from(plus) - f64::from(minus));
            let a = analytic[pi].data()[idx];
            let err = relative_error(a, numeric, cfg.floor);
            if err > report.max_rel_error || k == 0 {
                report.max_rel_error = err;
                report.worst_index = idx;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        reports.push(report);
    }
    Ok(reports)
}
