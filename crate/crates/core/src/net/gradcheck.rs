use rand::Rng;

use super::{loss_and_grad, Activations, PredictorParams};
use crate::error::{Error, Result};
use crate::render::AugmentedInput;

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    /// Worst `|a - n| / max(1e-12, |a| + |n|)` over the checked parameters.
    pub max_relative_error: f64,
    pub checked: usize,
    /// Samples whose `+eps`/`-eps` evaluations straddled a ReLU or max-pool
    /// switch; the loss is not differentiable there, so they were redrawn.
    pub kinks: usize,
}

fn routing(cache: &Activations<f64>) -> Vec<u64> {
    let mut out = Vec::new();
    for ex in &cache.examples[..cache.batch] {
        out.extend(ex.arg1.iter().map(|&v| v as u64));
        out.extend(ex.pooled1.iter().map(|&v| (v > 0.0) as u64));
        out.extend(ex.arg2.iter().map(|&v| v as u64));
    }
    out.extend(cache.fc_in.iter().map(|&v| (v > 0.0) as u64));
    out.extend(cache.hidden.iter().map(|&v| (v > 0.0) as u64));
    out
}

fn evaluate(params: &PredictorParams<f64>, input: &AugmentedInput, target: &[f64], mask: &[bool]) -> Result<(f64, Activations<f64>)> {
    let (out, cache) = params.forward(input)?;
    let (loss, _) = loss_and_grad(&out, target, mask)?;
    Ok((loss, cache))
}

/// Compares backpropagated gradients of the masked L2 loss with central
/// differences `(loss(p + eps) - loss(p - eps)) / (2 eps)` on `samples`
/// randomly drawn parameters.
pub fn gradient_check(
    params: &PredictorParams<f64>,
    input: &AugmentedInput,
    target: &[f64],
    mask: &[bool],
    epsilon: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<GradientCheck> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let (out, cache) = params.forward(input)?;
    let (_, d_out) = loss_and_grad(&out, target, mask)?;
    let analytic = params.backward(&cache, &d_out)?;
    let base_routing = routing(&cache);

    let total = params.num_params();
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut kinks = 0;
    // Bounded so a pathological net cannot loop forever.
    let max_draws = samples.saturating_mul(20).max(1);
    for _ in 0..max_draws {
        if checked == samples {
            break;
        }
        let index = rng.gen_range(0..total);
        let original = probe.get_flat(index);
        probe.set_flat(index, original + epsilon);
        let (plus, cache_plus) = evaluate(&probe, input, target, mask)?;
        probe.set_flat(index, original - epsilon);
        let (minus, cache_minus) = evaluate(&probe, input, target, mask)?;
        probe.set_flat(index, original);
        if routing(&cache_plus) != base_routing || routing(&cache_minus) != base_routing {
            kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic.get_flat(index);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
        worst = worst.max(rel);
        checked += 1;
    }
    Ok(GradientCheck { max_relative_error: worst, checked, kinks })
}
