//! Fixed path consolidation and the ablation trainers.
//!
//! Every training image is seen through one of its augmentation variants: the
//! three scale crops nearest the preferred person scale, each optionally
//! mirrored. The variant used for an `(image, step)` example is redrawn every
//! epoch, so the update count depends only on the number of source images.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{canonical_box, mirror, training_boxes, CropBox, Dataset, Example, ScaleAugment};
use crate::error::{Error, Result};
use crate::model::{initial_pose, KeypointLayout, Model, Regime};
use crate::net::{loss_and_grad, sgd_update, Activations, Architecture, Gradients, PredictorParams, SgdConfig};
use crate::pose::{fixed_path, median_pose, unbounded_path, FixedPath, Pose};
use crate::render::{default_sigma, AugmentedInput};
use crate::rng;

/// Order in which fixed-path steps enter training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curriculum {
    /// Stage `t` adds the step-`t` examples and trains `N` epochs.
    Fpc,
    /// All steps from the first epoch.
    Joint,
}

/// Which keypoints contribute to the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMask {
    /// Unannotated keypoints get zero gradient.
    Annotated,
    /// Every predicted keypoint is trained.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    pub curriculum: Curriculum,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// `N`: epochs per curriculum stage.
    pub epochs_per_stage: usize,
    /// `T`: correction steps on the training path.
    pub steps: usize,
    /// Inference steps the saved model defaults to.
    pub test_steps: usize,
    /// `L`: per-keypoint bound on a correction, in pixels.
    pub bound: f64,
    /// Heatmap width; the resolution default when absent.
    pub sigma: Option<f64>,
    pub seed: u64,
    pub loss_mask: LossMask,
    /// Render and predict only these keypoints (given ones are never predicted).
    pub subset: Option<Vec<usize>>,
    /// Three scale crops times mirroring per image; otherwise the canonical crop only.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Ief,
            curriculum: Curriculum::Fpc,
            learning_rate: 3e-4,
            momentum: 0.9,
            batch_size: 16,
            epochs_per_stage: 3,
            steps: 4,
            test_steps: 3,
            bound: 6.0,
            sigma: None,
            seed: 7,
            loss_mask: LossMask::Annotated,
            subset: None,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{what} must be positive, got {v}")))
            }
        };
        positive("learning rate", self.learning_rate)?;
        positive("bound L", self.bound)?;
        if let Some(s) = self.sigma {
            positive("sigma", s)?;
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 || self.epochs_per_stage == 0 || self.steps == 0 {
            return Err(Error::InvalidArgument("batch size, epochs per stage, and steps must be at least 1".into()));
        }
        if self.regime == Regime::Direct && self.curriculum == Curriculum::Joint {
            return Err(Error::Usage("direct prediction has a single step; a joint curriculum contradicts it".into()));
        }
        if let Some(subset) = &self.subset {
            if subset.is_empty() {
                return Err(Error::InvalidArgument("keypoint subset is empty".into()));
            }
        }
        Ok(())
    }

    /// Steps on the path the regime trains on.
    pub fn path_steps(&self) -> usize {
        match self.regime {
            Regime::Direct => 1,
            Regime::Ief | Regime::IterativeDirect => self.steps,
        }
    }

    /// SGD updates of the fixed path consolidation run with this `T`, `N`,
    /// and batch size; every regime is held to the same count.
    pub fn update_budget(&self, images: usize) -> u64 {
        (1..=self.steps).map(|t| (self.epochs_per_stage * (t * images).div_ceil(self.batch_size)) as u64).sum()
    }
}

/// Restricts rendered channels and predicted outputs to `subset`.
pub fn channel_subset_config(config: TrainConfig, subset: &[usize]) -> Result<TrainConfig> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("keypoint subset is empty".into()));
    }
    Ok(TrainConfig { subset: Some(subset.to_vec()), ..config })
}

/// The `(image, step)` pairs trained at a curriculum stage, steps 1-based.
pub fn stage_examples(images: usize, stage: usize) -> Vec<(usize, usize)> {
    (1..=stage).flat_map(|s| (0..images).map(move |i| (i, s))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: usize,
    pub epoch: usize,
    pub examples: usize,
    pub mean_loss: f64,
    pub updates: u64,
    pub wall_seconds: f64,
}

pub fn log_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("stage,epoch,examples,mean_loss,updates,wall_seconds\n");
    for r in log {
        let _ = writeln!(out, "{},{},{},{},{},{:.3}", r.stage, r.epoch, r.examples, r.mean_loss, r.updates, r.wall_seconds);
    }
    out
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub updates: u64,
}

/// One augmentation variant of a source image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variant {
    pub crop: CropBox,
    pub mirrored: bool,
}

impl Variant {
    pub fn apply(&self, example: &Example) -> Example {
        let cropped = self.crop.apply(example);
        if self.mirrored {
            mirror(&cropped)
        } else {
            cropped
        }
    }
}

/// The variants an image contributes to training.
pub fn variants(example: &Example, out_size: usize, augment: bool) -> Vec<Variant> {
    let config = ScaleAugment::new(out_size);
    if !augment {
        return vec![Variant { crop: canonical_box(example, &config), mirrored: false }];
    }
    let boxes = training_boxes(example, &config);
    [false, true].into_iter().flat_map(|mirrored| boxes.iter().map(move |&crop| Variant { crop, mirrored })).collect()
}

/// The training path of a working-frame example.
pub fn training_path(regime: Regime, mean: &Pose, example: &Example, bound: f64, steps: usize) -> Result<FixedPath> {
    let y0 = initial_pose(mean, &example.given)?;
    match regime {
        Regime::Ief => fixed_path(&y0, &example.pose, bound, steps),
        Regime::Direct => unbounded_path(&y0, &example.pose, 1),
        Regime::IterativeDirect => unbounded_path(&y0, &example.pose, steps),
    }
}

/// Input, flattened target, and loss mask for step `step` (1-based) of the
/// path of `example`.
pub fn step_example(
    model: &Model,
    path: &FixedPath,
    example: &Example,
    step: usize,
    loss_mask: LossMask,
) -> Result<(AugmentedInput, Vec<f64>, Vec<bool>)> {
    let input = model.input(&example.image, &path.poses[step - 1])?;
    let target = path.targets[step - 1].to_flat(&model.layout.predicted);
    let mask = match loss_mask {
        LossMask::Annotated => model.layout.predicted.iter().map(|&k| example.pose.mask()[k]).collect(),
        LossMask::All => vec![true; model.layout.predicted.len()],
    };
    Ok((input, target, mask))
}

/// Trains a model on `dataset` according to `config`. `on_stage` runs after
/// every curriculum stage (once at the end for flat schedules).
pub fn train(dataset: &Dataset, config: &TrainConfig, on_stage: &mut dyn FnMut(usize, &Model) -> Result<()>) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let m = &dataset.manifest;
    let out_size = m.width.min(m.height);
    let layout = match &config.subset {
        Some(subset) => KeypointLayout::subset(m.keypoints, subset, &m.given_keypoints)?,
        None => KeypointLayout::standard(m.keypoints, &m.given_keypoints)?,
    };
    let sigma = config.sigma.unwrap_or_else(|| default_sigma(out_size, out_size));

    let variants: Vec<Vec<Variant>> = dataset.examples.iter().map(|ex| variants(ex, out_size, config.augment)).collect();
    let truths: Vec<Pose> =
        dataset.examples.iter().zip(&variants).flat_map(|(ex, vs)| vs.iter().map(move |v| variant_pose(v, ex))).collect();
    let mean_pose = median_pose(&truths)?;

    let arch = Architecture::reference(out_size, out_size, m.channels, layout.rendered.len(), layout.predicted.len());
    let params = PredictorParams::init(arch, &mut rng::stream(config.seed, rng::purpose::INIT))?;
    let mut model = Model {
        params,
        layout,
        regime: config.regime,
        sigma,
        bound: config.bound,
        test_steps: if config.regime == Regime::Direct { 1 } else { config.test_steps },
        mean_pose,
    };

    let images = dataset.len();
    let budget = config.update_budget(images);
    let path_steps = config.path_steps();
    let sgd = SgdConfig { learning_rate: config.learning_rate, momentum: config.momentum };
    let flat = config.curriculum == Curriculum::Joint || config.regime == Regime::Direct;
    let start = Instant::now();
    let mut log = Vec::new();
    let mut updates = 0u64;
    let mut global_epoch = 0u64;
    let mut cache = Activations::default();
    let mut output = Vec::new();
    let mut grads = Gradients::zeros_like(&model.params);

    let stages: Vec<usize> = if flat { vec![path_steps] } else { (1..=path_steps).collect() };
    for (stage_index, &stage) in stages.iter().enumerate() {
        let pairs = stage_examples(images, stage);
        let mut epoch = 0;
        loop {
            let done = if flat { updates >= budget } else { epoch >= config.epochs_per_stage };
            if done {
                break;
            }
            epoch += 1;
            let mut rng = rng::stream(config.seed, rng::purpose::SHUFFLE + global_epoch);
            global_epoch += 1;
            let mut order = pairs.clone();
            order.shuffle(&mut rng);
            let picks: Vec<usize> = order.iter().map(|&(i, _)| rng.gen_range(0..variants[i].len())).collect();

            let mut loss_sum = 0.0;
            let mut seen = 0usize;
            for (chunk, chunk_picks) in order.chunks(config.batch_size).zip(picks.chunks(config.batch_size)) {
                if flat && updates >= budget {
                    break;
                }
                let mut inputs = Vec::with_capacity(chunk.len());
                let mut targets = Vec::with_capacity(chunk.len());
                let mut masks = Vec::with_capacity(chunk.len());
                for (&(i, s), &v) in chunk.iter().zip(chunk_picks) {
                    let ex = variants[i][v].apply(&dataset.examples[i]);
                    let path = training_path(config.regime, &model.mean_pose, &ex, config.bound, path_steps)?;
                    let (input, target, mask) = step_example(&model, &path, &ex, s, config.loss_mask)?;
                    inputs.push(input);
                    targets.push(target);
                    masks.push(mask);
                }
                let refs: Vec<&AugmentedInput> = inputs.iter().collect();
                match model.params.forward_batch_into(&refs, &mut cache, &mut output) {
                    Ok(()) => {}
                    Err(Error::NonFinite(_)) => return Err(Error::LossDivergence { stage, epoch }),
                    Err(e) => return Err(e),
                };
                let o = model.params.arch().outputs;
                let scale = 1.0 / chunk.len() as f32;
                let mut d_output = vec![0.0f32; output.len()];
                let mut batch_loss = 0.0f64;
                for b in 0..chunk.len() {
                    let (loss, grad) = loss_and_grad(&output[b * o..(b + 1) * o], &targets[b], &masks[b])?;
                    batch_loss += loss as f64;
                    for (d, g) in d_output[b * o..(b + 1) * o].iter_mut().zip(grad) {
                        *d = g * scale;
                    }
                }
                if !batch_loss.is_finite() {
                    return Err(Error::LossDivergence { stage, epoch });
                }
                model.params.backward_into(&mut cache, &d_output, &mut grads)?;
                sgd_update(&mut model.params, &grads, &sgd)?;
                updates += 1;
                loss_sum += batch_loss;
                seen += chunk.len();
            }
            log.push(EpochRecord {
                stage: if flat { 1 } else { stage },
                epoch,
                examples: seen,
                mean_loss: loss_sum / seen.max(1) as f64,
                updates,
                wall_seconds: start.elapsed().as_secs_f64(),
            });
        }
        on_stage(if flat { 1 } else { stage_index + 1 }, &model)?;
    }
    Ok(TrainOutcome { model, log, updates })
}

fn variant_pose(v: &Variant, example: &Example) -> Pose {
    let pose = v.crop.map_pose(&example.pose);
    if v.mirrored {
        crate::data::unmirror_pose(&pose, v.crop.out_size)
    } else {
        pose
    }
}

/// Algorithm-1 training with bounded targets.
pub fn fpc_train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let config = TrainConfig { regime: Regime::Ief, curriculum: Curriculum::Fpc, ..config.clone() };
    train(dataset, &config, &mut |_, _| Ok(()))
}

/// Bounded targets, all steps from the first epoch.
pub fn joint_train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let config = TrainConfig { regime: Regime::Ief, curriculum: Curriculum::Joint, ..config.clone() };
    train(dataset, &config, &mut |_, _| Ok(()))
}

/// One step regressing the full displacement from the initial pose.
pub fn direct_train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let config = TrainConfig { regime: Regime::Direct, curriculum: Curriculum::Fpc, ..config.clone() };
    train(dataset, &config, &mut |_, _| Ok(()))
}

/// Iterative steps each regressing the full remaining displacement.
pub fn iterative_direct_train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let config = TrainConfig { regime: Regime::IterativeDirect, curriculum: Curriculum::Fpc, ..config.clone() };
    train(dataset, &config, &mut |_, _| Ok(()))
}
