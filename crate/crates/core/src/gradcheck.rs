//! Central finite-difference gradient checking.
//!
//! The checker perturbs raw parameter and input arrays and re-runs a pure
//! forward closure, so it exercises none of the backward code it verifies.

use crate::autodiff::TensorD;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Relative-error denominator floor. Directions whose true gradient is
    /// zero (softmax is invariant to key biases, for example) leave central
    /// differences measuring pure roundoff, so the floor must sit above
    /// that noise level for the loss scales checked here.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, floor: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// (tensor index, element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
}

/// Compare analytic gradients against central finite differences.
///
/// `tensors` are the differentiation targets; `forward` maps the full set to
/// a scalar; `analytic[i]` must align with `tensors[i]` elementwise.
pub fn check_gradients(
    tensors: &[TensorD],
    analytic: &[TensorD],
    forward: impl Fn(&[TensorD]) -> f64,
    config: GradCheckConfig,
) -> GradCheckReport {
    assert_eq!(tensors.len(), analytic.len());
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: None };
    let mut work: Vec<TensorD> = tensors.to_vec();
    for ti in 0..tensors.len() {
        assert_eq!(tensors[ti].shape(), analytic[ti].shape(), "tensor {ti}");
        for ei in 0..tensors[ti].len() {
            let original = tensors[ti].as_slice().unwrap()[ei];
            work[ti].as_slice_mut().unwrap()[ei] = original + config.step;
            let plus = forward(&work);
            work[ti].as_slice_mut().unwrap()[ei] = original - config.step;
            let minus = forward(&work);
            work[ti].as_slice_mut().unwrap()[ei] = original;

            let numeric = (plus - minus) / (2.0 * config.step);
            let a = analytic[ti].as_slice().unwrap()[ei];
            let denom = a.abs().max(numeric.abs()).max(config.floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((ti, ei));
            }
        }
    }
    report
}
