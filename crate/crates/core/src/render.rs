//! The fixed rendering function: each keypoint becomes one peak-normalized
//! Gaussian channel, and the channels are stacked under the image.
//!
//! All grids are planar and row-major: value `(c, row, col)` lives at
//! `(c * height + row) * width + col`. Pixel `(col, row)` is sampled at its
//! center `(col + 0.5, row + 0.5)`.

use crate::error::{Error, Result};
use crate::pose::{Point, Pose};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::mismatch("image data", width * height * channels, data.len()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("image data"));
        }
        Ok(ImageGrid { width, height, channels, data })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        ImageGrid { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl HeatmapStack {
    pub fn channels(&self) -> usize {
        self.data.len() / (self.width * self.height).max(1)
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Image channels followed by heatmap channels, in keypoint order.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedInput {
    pub width: usize,
    pub height: usize,
    pub image_channels: usize,
    pub heatmap_channels: usize,
    pub data: Vec<f32>,
}

impl AugmentedInput {
    pub fn channels(&self) -> usize {
        self.image_channels + self.heatmap_channels
    }

    /// Splits back into the image and the heatmaps it was stacked from.
    pub fn unstack(&self) -> (ImageGrid, HeatmapStack) {
        let split = self.image_channels * self.width * self.height;
        (
            ImageGrid { width: self.width, height: self.height, channels: self.image_channels, data: self.data[..split].to_vec() },
            HeatmapStack { width: self.width, height: self.height, data: self.data[split..].to_vec() },
        )
    }
}

/// Default Gaussian width: about 2% of the larger image side, at least 1 px.
pub fn default_sigma(width: usize, height: usize) -> f64 {
    (0.02 * width.max(height) as f64).round().max(1.0)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("heatmap sigma must be positive, got {sigma}")));
    }
    Ok(())
}

// exp(-(px-kx)^2/(2s^2)) * exp(-(py-ky)^2/(2s^2)) is the isotropic Gaussian, so
// a channel costs width + height exponentials instead of width * height.
fn render_into(out: &mut [f32], keypoint: Point, width: usize, height: usize, sigma: f64) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let gx: Vec<f64> = (0..width)
        .map(|i| {
            let d = i as f64 + 0.5 - keypoint.x;
            (-d * d * inv).exp()
        })
        .collect();
    for (row, line) in out.chunks_exact_mut(width).enumerate().take(height) {
        let d = row as f64 + 0.5 - keypoint.y;
        let gy = (-d * d * inv).exp();
        for (v, &g) in line.iter_mut().zip(&gx) {
            *v = flush((g * gy) as f32);
        }
    }
}

/// Heatmap values below this are stored as zero. It sits far below the f32
/// resolution of the unit peak, and keeping such values would let products
/// with small weights go subnormal, which slows x86 arithmetic by two orders
/// of magnitude.
pub const HEATMAP_FLOOR: f32 = 1.0 / (1u64 << 40) as f32;

fn flush(v: f32) -> f32 {
    if v < HEATMAP_FLOOR {
        0.0
    } else {
        v
    }
}

/// One heatmap channel for `keypoint`. The keypoint may be off-image; its
/// tails still reach into the frame since nothing is truncated.
pub fn render_heatmap(keypoint: Point, width: usize, height: usize, sigma: f64) -> Result<Vec<f32>> {
    check_sigma(sigma)?;
    if !keypoint.is_finite() {
        return Err(Error::NonFinite("rendered keypoint"));
    }
    let mut out = vec![0.0; width * height];
    render_into(&mut out, keypoint, width, height, sigma);
    Ok(out)
}

/// Renders the listed keypoints of `pose` (all of them when `keypoints` is
/// `None`), one channel each, in list order. Unannotated keypoints are still
/// rendered: the channel shows the current belief, not the label.
pub fn render_pose(pose: &Pose, keypoints: Option<&[usize]>, width: usize, height: usize, sigma: f64) -> Result<HeatmapStack> {
    check_sigma(sigma)?;
    let all: Vec<usize>;
    let keypoints = match keypoints {
        Some(k) => k,
        None => {
            all = (0..pose.len()).collect();
            &all
        }
    };
    let n = width * height;
    let mut data = vec![0.0; n * keypoints.len()];
    for (&k, out) in keypoints.iter().zip(data.chunks_exact_mut(n.max(1))) {
        if k >= pose.len() {
            return Err(Error::InvalidArgument(format!("keypoint {k} out of range for a pose with {} keypoints", pose.len())));
        }
        render_into(out, pose.point(k), width, height, sigma);
    }
    Ok(HeatmapStack { width, height, data })
}

pub fn stack_input(image: &ImageGrid, heatmaps: &HeatmapStack) -> Result<AugmentedInput> {
    if image.width != heatmaps.width {
        return Err(Error::mismatch("stacked width", image.width, heatmaps.width));
    }
    if image.height != heatmaps.height {
        return Err(Error::mismatch("stacked height", image.height, heatmaps.height));
    }
    let mut data = Vec::with_capacity(image.data.len() + heatmaps.data.len());
    data.extend_from_slice(&image.data);
    data.extend_from_slice(&heatmaps.data);
    Ok(AugmentedInput {
        width: image.width,
        height: image.height,
        image_channels: image.channels,
        heatmap_channels: heatmaps.channels(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(map: &[f32], width: usize, col: usize, row: usize) -> f32 {
        map[row * width + col]
    }

    #[test]
    fn peak_is_one_at_pixel_center() {
        let map = render_heatmap(Point::new(10.5, 3.5), 16, 8, 2.0).unwrap();
        assert_eq!(at(&map, 16, 10, 3), 1.0);
        assert!(map.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn off_image_keypoint_value() {
        let map = render_heatmap(Point::new(-2.5, 10.5), 16, 16, 2.0).unwrap();
        let expected = (-9.0f64 / 8.0).exp();
        assert!((at(&map, 16, 0, 10) as f64 - expected).abs() < 1e-6);
        assert!((expected - 0.32465).abs() < 1e-5);
    }

    #[test]
    fn equidistant_pixels_match() {
        let map = render_heatmap(Point::new(8.5, 8.5), 17, 17, 3.0).unwrap();
        assert_eq!(at(&map, 17, 5, 8), at(&map, 17, 11, 8));
        assert_eq!(at(&map, 17, 8, 5), at(&map, 17, 8, 11));
        assert_eq!(at(&map, 17, 6, 6), at(&map, 17, 10, 10));
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(render_heatmap(Point::ZERO, 4, 4, 0.0).is_err());
        assert!(render_heatmap(Point::ZERO, 4, 4, -1.0).is_err());
    }

    #[test]
    fn render_pose_channels_follow_keypoints() {
        let pose = Pose::annotated(vec![Point::new(2.5, 2.5), Point::new(9.5, 1.5), Point::new(5.5, 7.5)]).unwrap();
        let stack = render_pose(&pose, None, 12, 10, 1.5).unwrap();
        assert_eq!(stack.channels(), 3);
        for k in 0..3 {
            let single = render_heatmap(pose.point(k), 12, 10, 1.5).unwrap();
            assert_eq!(stack.channel(k), &single[..]);
        }
        let permuted = render_pose(&pose, Some(&[2, 0, 1]), 12, 10, 1.5).unwrap();
        assert_eq!(permuted.channel(0), stack.channel(2));
        assert_eq!(permuted.channel(1), stack.channel(0));
        assert_eq!(permuted.channel(2), stack.channel(1));
    }

    #[test]
    fn off_image_pose_leaves_tails() {
        let pose = Pose::annotated(vec![Point::new(-3.0, 5.0), Point::new(20.0, 18.0)]).unwrap();
        let stack = render_pose(&pose, None, 16, 16, default_sigma(16, 16).max(2.0)).unwrap();
        assert!(at(stack.channel(0), 16, 0, 5) > 0.0);
        assert!(at(stack.channel(1), 16, 15, 15) > 0.0);
    }

    #[test]
    fn values_below_the_floor_are_zero() {
        let map = render_heatmap(Point::new(0.5, 0.5), 64, 1, 2.0).unwrap();
        for (i, &v) in map.iter().enumerate() {
            let exact = (-(i as f64).powi(2) / 8.0).exp();
            if exact < HEATMAP_FLOOR as f64 * 0.99 {
                assert_eq!(v, 0.0);
            } else if exact > HEATMAP_FLOOR as f64 * 1.01 {
                assert!(v > 0.0);
            }
        }
    }

    #[test]
    fn stack_and_unstack_round_trip() {
        let image = ImageGrid::new(4, 4, 1, (0..16).map(|v| v as f32 / 16.0).collect()).unwrap();
        let pose = Pose::annotated(vec![Point::new(1.0, 1.0); 7]).unwrap();
        let maps = render_pose(&pose, None, 4, 4, 1.0).unwrap();
        let x = stack_input(&image, &maps).unwrap();
        assert_eq!(x.channels(), 8);
        let (i2, m2) = x.unstack();
        assert_eq!(i2, image);
        assert_eq!(m2, maps);

        let rgb = ImageGrid::zeros(4, 4, 3);
        let pose17 = Pose::annotated(vec![Point::ZERO; 17]).unwrap();
        let x = stack_input(&rgb, &render_pose(&pose17, None, 4, 4, 1.0).unwrap()).unwrap();
        assert_eq!(x.channels(), 20);

        let wrong = render_pose(&pose, None, 5, 4, 1.0).unwrap();
        assert!(stack_input(&image, &wrong).is_err());
    }

    #[test]
    fn default_sigma_values() {
        assert_eq!(default_sigma(64, 64), 1.0);
        assert_eq!(default_sigma(224, 224), 4.0);
        assert_eq!(default_sigma(10, 10), 1.0);
    }
}
