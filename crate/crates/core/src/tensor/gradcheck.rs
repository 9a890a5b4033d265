//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use super::{Gradients, Tensor};
use crate::error::Result;

pub const DEFAULT_FD_EPS: f64 = 1e-4;

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares analytic gradients against central differences, element by
/// element, and returns the largest `|a - fd| / max(|a|, |fd|, 1e-8)`.
///
/// `f` evaluates the scalar objective and its analytic gradients at the
/// given parameters.
pub fn finite_diff_check<F>(mut f: F, params: &BTreeMap<String, Tensor<f64>>, eps: f64) -> Result<GradCheck>
where
    F: FnMut(&BTreeMap<String, Tensor<f64>>) -> Result<(f64, Gradients<f64>)>,
{
    let (_, analytic) = f(params)?;
    let mut probe = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (name, tensor) in params {
        for i in 0..tensor.len() {
            let orig = tensor.data()[i];
            probe.get_mut(name).expect("same keys").data_mut()[i] = orig + eps;
            let (plus, _) = f(&probe)?;
            probe.get_mut(name).expect("same keys").data_mut()[i] = orig - eps;
            let (minus, _) = f(&probe)?;
            probe.get_mut(name).expect("same keys").data_mut()[i] = orig;

            let fd = (plus - minus) / (2.0 * eps);
            let a = analytic.get(name).map_or(0.0, |g| g.data()[i]);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
