//! Synthetic stick-figure data: generation, scale crops, mirroring, and the
//! on-disk dataset format.

mod augment;
mod generate;
mod io;
pub mod skeleton;

use serde::{Deserialize, Serialize};

pub use augment::{
    augment_scales, canonical_box, canonical_crop, crop_box_sides, mirror, scale_boxes, select_boxes, training_boxes, unmirror_pose,
    CropBox, ScaleAugment,
};
pub use generate::{generate_dataset, generate_figure, GeneratorConfig, GENERATOR_VERSION};
pub use io::{load_dataset, save_dataset, DATASET_FORMAT_VERSION};

use crate::pose::{Point, Pose};
use crate::render::ImageGrid;

/// One image with its ground-truth pose and the given marking point.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: u64,
    pub seed: u64,
    pub image: ImageGrid,
    pub pose: Pose,
    /// Keypoints provided as input at train and test time, with positions.
    pub given: Vec<(usize, Point)>,
    pub person_height: f64,
}

impl Example {
    /// Head-segment length used as the PCKh reference.
    pub fn reference_length(&self) -> f64 {
        skeleton::reference_length(&self.pose)
    }

    pub fn marking_point(&self) -> Point {
        self.given.first().map(|&(_, p)| p).unwrap_or_else(|| self.pose.point(skeleton::MARKING_POINT))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub count: usize,
    pub keypoints: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub sigma: f64,
    pub keypoint_names: Vec<String>,
    pub limbs: Vec<[usize; 2]>,
    pub given_keypoints: Vec<usize>,
    pub reference_length: String,
    pub seed: u64,
    pub first_id: u64,
    pub generator_version: u32,
    pub generator: GeneratorConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub examples: Vec<Example>,
}

/// Train and test sets from one seed; test ids continue after the training
/// ids, so the two never share an image.
pub fn generate_split(train: usize, test: usize, seed: u64, config: &GeneratorConfig, threads: usize) -> crate::Result<(Dataset, Dataset)> {
    Ok((generate_dataset(train, seed, 0, config, threads)?, generate_dataset(test, seed, train as u64, config, threads)?))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}
