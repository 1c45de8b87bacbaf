use super::{Graph, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crosses a non-differentiable point
    /// (ReLU at zero, max-pool ties); these are excluded from the maximum.
    pub skipped: usize,
}

/// Maximum relative error between backprop and central finite differences of
/// the scalar `sum(root output)` over every parameter coordinate.
pub fn finite_diff_check(graph: &mut Graph, params: &mut ParamStore, input: &Tensor, eps: f64) -> Result<f64> {
    finite_diff_report(graph, params, input, eps).map(|r| r.max_rel_error)
}

pub fn finite_diff_report(
    graph: &mut Graph,
    params: &mut ParamStore,
    input: &Tensor,
    eps: f64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::invalid(format!("eps must lie in (0, 1e-3], got {eps}")));
    }
    let objective = |g: &mut Graph, p: &ParamStore| -> Result<f64> { Ok(g.forward(p, input)?.data().iter().sum()) };

    params.clear_grads();
    let out = graph.forward(params, input)?;
    graph.backward(params, &Tensor::filled(out.shape(), 1.0))?;
    let f0 = out.data().iter().sum::<f64>();

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped: 0 };
    for id in graph.param_ids() {
        let analytic = params.get(id).grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; params.get(id).numel()]);
        for (k, &a) in analytic.iter().enumerate() {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + eps;
            let fp = objective(graph, params)?;
            params.get_mut(id).data_mut()[k] = orig - eps;
            let fm = objective(graph, params)?;
            params.get_mut(id).data_mut()[k] = orig;

            let plus = (fp - f0) / eps;
            let minus = (f0 - fm) / eps;
            if (plus - minus).abs() > 1e-2 * plus.abs().max(minus.abs()) + 1e-4 {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    // leave caches consistent with the unperturbed parameters
    graph.forward(params, input)?;
    Ok(report)
}
