//! Central finite-difference check of [`MlpParams::backward`].

use super::{ForwardCache, MlpParams};
use crate::error::Result;

/// Magnitude below which gradient components are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Components whose `±h` probe crosses a ReLU kink.
    pub skipped: usize,
}

/// `|a − b| / max(|a|, |b|, REL_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

fn relu_masks(params: &MlpParams<f64>, cache: &ForwardCache<f64>) -> Vec<bool> {
    let hidden = params.layers.len() - 1;
    cache.acts[1..=hidden].iter().flatten().map(|&h| h > 0.0).collect()
}

/// Compares the analytic gradient of `L(θ) = Σ grad_output ⊙ f_θ(input)`
/// against `(L(θ + h) − L(θ − h)) / 2h` for every parameter.
pub fn check_gradients(
    params: &MlpParams<f64>,
    input: &[f64],
    batch: usize,
    grad_output: &[f64],
    h: f64,
) -> Result<GradCheckReport> {
    let (_, cache) = params.forward(input, batch)?;
    let analytic = params.backward(&cache, grad_output)?;
    let base_mask = relu_masks(params, &cache);
    let loss = |p: &MlpParams<f64>| -> Result<(f64, Vec<bool>)> {
        let (out, cache) = p.forward(input, batch)?;
        Ok((
            out.iter().zip(grad_output).map(|(y, g)| y * g).sum(),
            relu_masks(p, &cache),
        ))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = params.clone();
    let n_tensors = params.layers.len() * 2;
    for ti in 0..n_tensors {
        let len = params.tensors().nth(ti).expect("tensor index").len();
        for k in 0..len {
            let original = params.tensors().nth(ti).expect("tensor index")[k];
            probe.tensors_mut().nth(ti).expect("tensor index")[k] = original + h;
            let (up, mask_up) = loss(&probe)?;
            probe.tensors_mut().nth(ti).expect("tensor index")[k] = original - h;
            let (down, mask_down) = loss(&probe)?;
            probe.tensors_mut().nth(ti).expect("tensor index")[k] = original;
            if mask_up != base_mask || mask_down != base_mask {
                report.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.tensors().nth(ti).expect("tensor index")[k];
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
            report.checked += 1;
        }
    }
    Ok(report)
}
