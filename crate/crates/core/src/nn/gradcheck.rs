//! Central finite-difference gradient checking in `f64`.

use super::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error per checked input, in input order.
    pub max_rel_err: Vec<f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.iter().all(|&e| e <= self.tolerance)
    }
    pub fn worst(&self) -> f64 {
        self.max_rel_err.iter().copied().fold(0.0, f64::max)
    }
}

pub const FD_STEP: f64 = 1e-4;

/// Relative error of one entry. The denominator is floored at a thousandth of
/// the largest numerical gradient so that entries which are zero up to
/// round-off do not dominate.
fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` gradients against central differences of `f`.
///
/// `f` maps the full list of inputs to a scalar. `analytic[i]` is the
/// claimed gradient with respect to `inputs[i]`. When `max_entries` is set,
/// only that many evenly spaced entries of each input are perturbed.
pub fn grad_check(
    f: impl FnMut(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    tolerance: f64,
    max_entries: Option<usize>,
) -> GradCheckReport {
    grad_check_with_step(f, inputs, analytic, tolerance, max_entries, FD_STEP)
}

/// [`grad_check`] with an explicit perturbation size.
pub fn grad_check_with_step(
    mut f: impl FnMut(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    tolerance: f64,
    max_entries: Option<usize>,
    step: f64,
) -> GradCheckReport {
    assert_eq!(inputs.len(), analytic.len(), "one analytic gradient per input");
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut errs = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        assert_eq!(inputs[i].shape(), analytic[i].shape(), "gradient shape mismatch for input {i}");
        let len = inputs[i].numel();
        let stride = match max_entries {
            Some(m) if m > 0 && len > m => len.div_ceil(m),
            _ => 1,
        };
        let mut numeric = Vec::new();
        let mut idxs = Vec::new();
        for j in (0..len).step_by(stride) {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let fp = f(&work);
            work[i].data_mut()[j] = orig - step;
            let fm = f(&work);
            work[i].data_mut()[j] = orig;
            numeric.push((fp - fm) / (2.0 * step));
            idxs.push(j);
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (1e-3 * scale).max(1e-10);
        let worst = idxs
            .iter()
            .zip(&numeric)
            .map(|(&j, &n)| rel_err(analytic[i].data()[j], n, floor))
            .fold(0.0, f64::max);
        errs.push(worst);
    }
    GradCheckReport { max_rel_err: errs, tolerance }
}
