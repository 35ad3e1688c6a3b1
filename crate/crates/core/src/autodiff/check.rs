//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so the check stays independent of
//! every adjoint it verifies.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Worst-case disagreement found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Denominator floor for the relative error. Central differences at h=1e-5
/// carry round-off near `ε·|f|/h ≈ 1e-10`, so gradients smaller than this
/// floor are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of `f` with respect to every entry of
/// `params` against `(f(θ+h) − f(θ−h)) / 2h`.
///
/// `f` must be deterministic and return a scalar node.
pub fn check_gradients<F>(params: &mut [Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic: Vec<Option<Tensor>> = {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        g.backward(loss)?.into_params()
    };

    let eval = |params: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        Ok(g.scalar(loss))
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
    };
    for p in 0..params.len() {
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            params[p].data_mut()[i] = orig + h;
            let plus = eval(params)?;
            params[p].data_mut()[i] = orig - h;
            let minus = eval(params)?;
            params[p].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[p].as_ref().map_or(0.0, |t| t.data()[i]);
            let rel = relative_error(a, numeric);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((p, i));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
