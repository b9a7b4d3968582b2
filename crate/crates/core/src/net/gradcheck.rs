//! Central-difference gradient checking.

use super::model::{MultiStreamModel, PreparedInputs};
use crate::error::Result;

/// Worst relative error within one named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a − b| / max(|a|, |b|, 1e-6)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares backpropagated gradients of the mean cross-entropy with central
/// differences of step `h` for every parameter.
pub fn check_gradients(
    model: &MultiStreamModel<f64>,
    batch: &[(PreparedInputs<f64>, usize)],
    h: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grad(batch)?;
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, _, t)| (n, t.to_vec())).collect();
    let mut probe = model.clone();
    let mut tensors = Vec::with_capacity(analytic.len());
    for (ti, (name, g)) in analytic.iter().enumerate() {
        let mut worst = TensorCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (i, &a) in g.iter().enumerate() {
            let orig = probe.tensors_mut()[ti][i];
            probe.tensors_mut()[ti][i] = orig + h;
            let plus = probe.loss(batch)?;
            probe.tensors_mut()[ti][i] = orig - h;
            let minus = probe.loss(batch)?;
            probe.tensors_mut()[ti][i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric);
            if err > worst.max_rel_error {
                worst = TensorCheck {
                    name: name.clone(),
                    max_rel_error: err,
                    worst_index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
        tensors.push(worst);
    }
    Ok(GradCheckReport { tensors })
}
