//! Central finite-difference verification of reverse-mode gradients.
//!
//! Runs in 64-bit precision: the caller supplies a loss builder evaluated at
//! perturbed parameter stores, and the checker compares analytic gradients
//! against (f(θ+ε) − f(θ−ε)) / 2ε per coordinate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::graph::ParamStore;
use crate::tensor::Tensor;

/// Loss value plus analytic gradients in parameter-store order (one tensor
/// per parameter, same shapes).
pub struct LossEval {
    pub value: f64,
    pub grads: Vec<Tensor<f64>>,
}

/// Which coordinates to difference.
#[derive(Debug, Clone, Copy)]
pub enum CoordinateSample {
    /// Every coordinate of every parameter.
    All,
    /// `count` coordinates drawn uniformly without replacement (seeded).
    Random { count: usize, seed: u64 },
}

/// Worst coordinate found by [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// (parameter name, flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative-error denominator floor. Central differences of an O(1) loss
/// carry cancellation noise around ulp/eps ~ 1e-11, so coordinates whose true
/// gradient is exactly zero (a softmax is invariant to its key bias, for one)
/// read as ~1e-11 numerically; the floor must sit well above that noise or
/// inert parameters dominate the report.
const REL_ERR_FLOOR: f64 = 1e-5;

/// Compares analytic gradients of `f` at `params` against central finite
/// differences with step `eps`. `f` must return the loss and its gradients
/// for any parameter values with those shapes; only the gradients at the
/// unperturbed point are used.
pub fn grad_check(
    f: &mut dyn FnMut(&ParamStore<f64>) -> Result<LossEval>,
    params: &ParamStore<f64>,
    eps: f64,
    sample: CoordinateSample,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::config(format!("finite-difference step must be positive, got {eps}")));
    }
    let base = f(params)?;
    if !base.value.is_finite() {
        return Err(Error::numerical(format!("loss is not finite: {}", base.value)));
    }
    if base.grads.len() != params.len() {
        return Err(Error::shape(format!(
            "gradient count {} != parameter count {}",
            base.grads.len(),
            params.len()
        )));
    }

    // Coordinates addressed as (param index, flat offset).
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for p in 0..params.len() {
        for i in 0..params.value(p).len() {
            coords.push((p, i));
        }
    }
    if let CoordinateSample::Random { count, seed } = sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Partial Fisher-Yates: the first `count` entries become the sample.
        let take = count.min(coords.len());
        for i in 0..take {
            let j = rng.gen_range(i..coords.len());
            coords.swap(i, j);
        }
        coords.truncate(take);
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for (p, i) in coords {
        let orig = params.value(p).data()[i];
        let eval_at = |v: f64, f: &mut dyn FnMut(&ParamStore<f64>) -> Result<LossEval>| -> Result<f64> {
            let mut shifted = params.cast::<f64>();
            shifted.value_mut(p).data_mut()[i] = v;
            let out = f(&shifted)?;
            if !out.value.is_finite() {
                return Err(Error::numerical(format!("perturbed loss is not finite: {}", out.value)));
            }
            Ok(out.value)
        };
        let plus = eval_at(orig + eps, f)?;
        let minus = eval_at(orig - eps, f)?;
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = base.grads[p].data()[i];
        let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some((params.name(p).to_string(), i, analytic, numeric));
        }
    }
    Ok(report)
}
