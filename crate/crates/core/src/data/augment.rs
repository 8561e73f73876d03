//! Scale crops around the marking point and horizontal mirroring.

use serde::{Deserialize, Serialize};

use super::generate::quantize;
use super::skeleton::MIRROR_SWAP;
use super::Example;
use crate::pose::{Point, Pose};
use crate::render::ImageGrid;

/// A square window of the source image mapped onto an `out_size` grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropBox {
    pub center: Point,
    pub side: f64,
    pub out_size: usize,
}

impl CropBox {
    fn origin(&self) -> Point {
        self.center - Point::new(0.5 * self.side, 0.5 * self.side)
    }

    pub fn to_crop(&self, p: Point) -> Point {
        (p - self.origin()) * (self.out_size as f64 / self.side)
    }

    pub fn to_source(&self, p: Point) -> Point {
        p * (self.side / self.out_size as f64) + self.origin()
    }

    /// Keypoints in crop coordinates, snapped back onto the keypoint grid so
    /// that mirrored crops invert exactly.
    pub fn map_pose(&self, pose: &Pose) -> Pose {
        pose.map_points(|p| quantize(self.to_crop(p)))
    }

    pub fn apply(&self, example: &Example) -> Example {
        let scale = self.out_size as f64 / self.side;
        Example {
            id: example.id,
            seed: example.seed,
            image: self.resample(&example.image),
            pose: self.map_pose(&example.pose),
            given: example.given.iter().map(|&(k, p)| (k, quantize(self.to_crop(p)))).collect(),
            person_height: example.person_height * scale,
        }
    }

    /// Bilinear resampling with zero padding outside the source.
    fn resample(&self, image: &ImageGrid) -> ImageGrid {
        let n = self.out_size;
        let (w, h) = (image.width as isize, image.height as isize);
        let mut out = ImageGrid::zeros(n, n, image.channels);
        let step = self.side / n as f64;
        let origin = self.origin();
        for c in 0..image.channels {
            let src = image.plane(c);
            let fetch = |x: isize, y: isize| -> f64 {
                if x < 0 || y < 0 || x >= w || y >= h {
                    0.0
                } else {
                    src[(y * w + x) as usize] as f64
                }
            };
            let dst = out.plane_mut(c);
            for row in 0..n {
                let sy = origin.y + (row as f64 + 0.5) * step - 0.5;
                let y0 = sy.floor();
                let fy = sy - y0;
                for col in 0..n {
                    let sx = origin.x + (col as f64 + 0.5) * step - 0.5;
                    let x0 = sx.floor();
                    let fx = sx - x0;
                    let (xi, yi) = (x0 as isize, y0 as isize);
                    let top = fetch(xi, yi) * (1.0 - fx) + fetch(xi + 1, yi) * fx;
                    let bottom = fetch(xi, yi + 1) * (1.0 - fx) + fetch(xi + 1, yi + 1) * fx;
                    dst[row * n + col] = (top * (1.0 - fy) + bottom * fy) as f32;
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleAugment {
    pub n_scales: usize,
    /// Box sides as fractions of the smaller image side.
    pub side_range: [f64; 2],
    /// Preferred box side as a multiple of the person height.
    pub target_ratio: f64,
    /// Boxes kept per person for training.
    pub keep: usize,
    pub out_size: usize,
}

impl ScaleAugment {
    pub fn new(out_size: usize) -> Self {
        ScaleAugment { n_scales: 9, side_range: [0.3, 1.4], target_ratio: 1.2, keep: 3, out_size }
    }
}

/// `n` box sides spaced uniformly over `range * min_side`.
pub fn crop_box_sides(min_side: f64, n: usize, range: [f64; 2]) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (range[0] + range[1]) * min_side],
        _ => (0..n).map(|i| (range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64) * min_side).collect(),
    }
}

/// The `n_scales` square boxes centered on the marking point.
pub fn scale_boxes(example: &Example, config: &ScaleAugment) -> Vec<CropBox> {
    let min_side = example.image.width.min(example.image.height) as f64;
    let center = example.marking_point();
    crop_box_sides(min_side, config.n_scales, config.side_range)
        .into_iter()
        .map(|side| CropBox { center, side, out_size: config.out_size })
        .collect()
}

/// All `n_scales` square crops centered on the marking point, resized to the
/// working resolution.
pub fn augment_scales(example: &Example, config: &ScaleAugment) -> Vec<(CropBox, Example)> {
    scale_boxes(example, config).into_iter().map(|b| (b, b.apply(example))).collect()
}

// Indices of the `keep` sides closest to `want`, ascending.
fn closest(sides: &[f64], want: f64, keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sides.len()).collect();
    order.sort_by(|&a, &b| (sides[a] - want).abs().total_cmp(&(sides[b] - want).abs()).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(keep).collect();
    chosen.sort_unstable();
    chosen
}

/// The `keep` crops whose side is closest to `ratio * person_height`, in
/// their original order.
pub fn select_boxes(crops: Vec<(CropBox, Example)>, person_height: f64, ratio: f64, keep: usize) -> Vec<(CropBox, Example)> {
    let sides: Vec<f64> = crops.iter().map(|(b, _)| b.side).collect();
    let chosen = closest(&sides, ratio * person_height, keep);
    let mut crops: Vec<Option<(CropBox, Example)>> = crops.into_iter().map(Some).collect();
    chosen.into_iter().filter_map(|i| crops[i].take()).collect()
}

/// The boxes kept for training, without resampling any pixels.
pub fn training_boxes(example: &Example, config: &ScaleAugment) -> Vec<CropBox> {
    let boxes = scale_boxes(example, config);
    let sides: Vec<f64> = boxes.iter().map(|b| b.side).collect();
    closest(&sides, config.target_ratio * example.person_height, config.keep).into_iter().map(|i| boxes[i]).collect()
}

/// The box closest to `target_ratio` times the ground-truth person height.
pub fn canonical_box(example: &Example, config: &ScaleAugment) -> CropBox {
    let boxes = scale_boxes(example, config);
    let sides: Vec<f64> = boxes.iter().map(|b| b.side).collect();
    boxes[closest(&sides, config.target_ratio * example.person_height, 1)[0]]
}

/// The single scale-normalized crop used at test time.
pub fn canonical_crop(example: &Example, config: &ScaleAugment) -> (CropBox, Example) {
    let b = canonical_box(example, config);
    (b, b.apply(example))
}

/// Horizontal flip: pixels reversed along x, `x -> width - x` for every
/// keypoint, and left/right labels swapped.
pub fn mirror(example: &Example) -> Example {
    let w = example.image.width;
    let flip = |p: Point| Point::new(w as f64 - p.x, p.y);
    let mut image = example.image.clone();
    for c in 0..image.channels {
        for row in image.plane_mut(c).chunks_exact_mut(w) {
            row.reverse();
        }
    }
    let swapped: Vec<Point> = MIRROR_SWAP.iter().map(|&k| flip(example.pose.point(k))).collect();
    let mask: Vec<bool> = MIRROR_SWAP.iter().map(|&k| example.pose.mask()[k]).collect();
    let pose = Pose::new(swapped, mask).expect("mirroring preserves validity");
    let given = example.given.iter().map(|&(k, p)| (MIRROR_SWAP[k], flip(p))).collect();
    Example { id: example.id, seed: example.seed, image, pose, given, person_height: example.person_height }
}

/// Maps predictions made on a mirrored image back to the original frame.
pub fn unmirror_pose(pose: &Pose, width: usize) -> Pose {
    let flip = |p: Point| Point::new(width as f64 - p.x, p.y);
    let points = MIRROR_SWAP.iter().map(|&k| flip(pose.point(k))).collect();
    let mask = MIRROR_SWAP.iter().map(|&k| pose.mask()[k]).collect();
    Pose::new(points, mask).expect("mirroring preserves validity")
}
