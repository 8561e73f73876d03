//! Self-checks run by `ief check`: the gradient oracle on the reference net
//! and randomized invariant sweeps of the correction arithmetic.

use rand::Rng;

use crate::error::Result;
use crate::net::{gradient_check, Architecture, PredictorParams};
use crate::pose::{bounded_correction, fixed_path, Point, Pose};
use crate::render::AugmentedInput;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckConfig {
    pub seed: u64,
    pub width: usize,
    pub gradient_inputs: usize,
    pub gradient_samples: usize,
    pub gradient_tolerance: f64,
    pub property_cases: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { seed: 7, width: 64, gradient_inputs: 10, gradient_samples: 20, gradient_tolerance: 1e-4, property_cases: 10_000 }
    }
}

fn random_input(arch: &Architecture, rng: &mut impl Rng) -> AugmentedInput {
    AugmentedInput {
        width: arch.width,
        height: arch.height,
        image_channels: arch.image_channels,
        heatmap_channels: arch.heatmap_channels,
        data: (0..arch.in_channels() * arch.width * arch.height).map(|_| rng.gen::<f32>()).collect(),
    }
}

fn random_pose(rng: &mut impl Rng, k: usize, spread: f64) -> Pose {
    Pose::annotated((0..k).map(|_| Point::new(rng.gen_range(-spread..spread), rng.gen_range(-spread..spread))).collect())
        .expect("finite points")
}

/// Double-precision gradient check of the reference net over several inputs.
pub fn check_gradients(config: &CheckConfig) -> Result<CheckOutcome> {
    let mut rng = rng::stream(config.seed, rng::purpose::GRADCHECK);
    let arch = Architecture::reference(config.width, config.width, 1, 7, 6);
    let params = PredictorParams::<f64>::init(arch.clone(), &mut rng)?;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut kinks = 0;
    for _ in 0..config.gradient_inputs {
        let input = random_input(&arch, &mut rng);
        let target: Vec<f64> = (0..arch.outputs).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mask = vec![true; arch.outputs / 2];
        let g = gradient_check(&params, &input, &target, &mask, 1e-5, config.gradient_samples, &mut rng)?;
        worst = worst.max(g.max_relative_error);
        checked += g.checked;
        kinks += g.kinks;
    }
    let wanted = config.gradient_inputs * config.gradient_samples;
    Ok(CheckOutcome {
        name: "gradient",
        passed: worst < config.gradient_tolerance && checked == wanted,
        detail: format!("max relative error {worst:.3e} over {checked} parameters ({kinks} kink redraws)"),
    })
}

/// Norm bound, collinearity, and exact saturation of bounded corrections.
pub fn check_bounded_corrections(config: &CheckConfig) -> Result<CheckOutcome> {
    let mut rng = rng::stream(config.seed, rng::purpose::GRADCHECK + 1);
    let mut failures = 0;
    for _ in 0..config.property_cases {
        let bound = rng.gen_range(0.1..30.0);
        let target = random_pose(&mut rng, 7, 100.0);
        let current = random_pose(&mut rng, 7, 100.0);
        let c = bounded_correction(&target, &current, bound, &[true; 7])?;
        for k in 0..7 {
            let u = target.point(k) - current.point(k);
            let d = c.delta(k);
            let saturated = u.norm() > bound;
            let ok = d.norm() <= bound * (1.0 + 1e-12)
                && u.cross(d).abs() < 1e-9 * u.norm().max(1.0)
                && (!saturated || d == u * (1.0 / u.norm()) * bound);
            failures += !ok as usize;
        }
    }
    Ok(CheckOutcome {
        name: "bounded-correction",
        passed: failures == 0,
        detail: format!("{failures} violations over {} cases", config.property_cases),
    })
}

/// Fixed paths arrive exactly in `ceil(max |u| / L)` steps and stay put.
pub fn check_fixed_paths(config: &CheckConfig) -> Result<CheckOutcome> {
    let mut rng = rng::stream(config.seed, rng::purpose::GRADCHECK + 2);
    let mut failures = 0;
    for _ in 0..config.property_cases {
        let bound = rng.gen_range(0.5..20.0);
        let start = random_pose(&mut rng, 7, 60.0);
        let truth = random_pose(&mut rng, 7, 60.0);
        let longest = (0..7).map(|k| truth.point(k).dist(start.point(k))).fold(0.0, f64::max);
        let need = (longest / bound).ceil() as usize;
        let path = fixed_path(&start, &truth, bound, need + 2)?;
        let arrived = path.poses[need] == truth && path.poses[need.saturating_sub(1)] != truth || need == 0;
        let zero_after = path.targets[need..].iter().all(|t| t.max_norm() == 0.0);
        failures += !(arrived && zero_after) as usize;
    }
    Ok(CheckOutcome {
        name: "fixed-path",
        passed: failures == 0,
        detail: format!("{failures} violations over {} cases", config.property_cases),
    })
}

pub fn run_checks(config: &CheckConfig) -> Result<Vec<CheckOutcome>> {
    Ok(vec![check_gradients(config)?, check_bounded_corrections(config)?, check_fixed_paths(config)?])
}
