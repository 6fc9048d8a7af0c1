//! Central-difference gradient checking.
//!
//! The numeric side only evaluates the forward pass on fresh graphs whose
//! leaves are constants, so it never touches the backward rules it checks.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Default finite-difference step.
pub const STEP: f64 = 1e-6;

/// Gradients smaller than this are compared on an absolute scale. With a
/// step of 1e-6 the central difference of an O(1) loss carries roughly 1e-9
/// of rounding noise, so relative error is only meaningful above this.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub entries: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Compares the reverse-mode gradient of the scalar built by `f` against
/// central differences with step `h`, for every entry of every parameter.
pub fn gradcheck<F>(params: &[Tensor], h: f64, f: F) -> Result<GradcheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let graph = Graph::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| graph.param(p.clone())).collect();
    let loss = f(&graph, &vars)?;
    graph.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| v.grad().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vs: Vec<Var<'_>> = perturbed.iter().map(|p| g.constant(p.clone())).collect();
        Ok(f(&g, &vs)?.value().item())
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        entries: 0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[j];
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
            report.entries += 1;
        }
    }
    Ok(report)
}
