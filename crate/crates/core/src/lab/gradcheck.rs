use rand::Rng;

use super::Model;
use crate::error::Result;
use crate::rng;
use crate::store::LabeledDataset;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_checked: usize,
    /// `(param id, flat index)` of the worst coordinate.
    pub worst: (String, usize),
}

/// Smallest denominator of the relative error. Central differences carry
/// roundoff of roughly `ulp(loss)/ε`; gradients below a multiple of that are
/// compared in absolute terms.
fn rel_floor(loss: f64, epsilon: f64) -> f64 {
    (1e-11 * (1.0 + loss.abs()) / epsilon).max(1e-7)
}

/// Central-difference check of `loss_and_grad` on `n_samples` coordinates,
/// spread evenly over the parameter tensors.
pub fn grad_check<M: Model>(
    model: &M,
    data: &LabeledDataset,
    idx: &[usize],
    epsilon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (loss, grads) = model.loss_and_grad(data, idx)?;
    let floor = rel_floor(loss, epsilon);
    let mut probe = model.clone();
    let mut r = rng::rng(seed);
    let n_tensors = model.params().len();
    let per_tensor = n_samples.div_ceil(n_tensors);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        n_checked: 0,
        worst: (String::new(), 0),
    };
    for t in 0..n_tensors {
        let len = model.params()[t].data.len();
        for _ in 0..per_tensor.min(len) {
            let j = r.random_range(0..len);
            let orig = probe.params()[t].data[j];
            probe.params_mut()[t].data[j] = orig + epsilon;
            let plus = probe.loss(data, idx)?;
            probe.params_mut()[t].data[j] = orig - epsilon;
            let minus = probe.loss(data, idx)?;
            probe.params_mut()[t].data[j] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = grads[t][j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            report.n_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (model.params()[t].id.clone(), j);
            }
        }
    }
    Ok(report)
}
