use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::skeleton::{self, KEYPOINTS, MARKING_POINT};
use super::{Dataset, DatasetManifest, Example};
use crate::error::{Error, Result};
use crate::pose::{Point, Pose};
use crate::render::{default_sigma, ImageGrid};
use crate::rng;

pub const GENERATOR_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Standing height of the figure as a fraction of the image height.
    pub scale_range: [f64; 2],
    pub max_rotation_deg: f64,
    /// Intensity offset between left (brighter) and right (darker) limbs.
    pub side_contrast: f64,
    pub noise_std: f64,
    /// Limb radius as a fraction of the figure height.
    pub limb_radius_range: [f64; 2],
}

impl GeneratorConfig {
    pub fn square(size: usize) -> Self {
        GeneratorConfig {
            width: size,
            height: size,
            channels: 1,
            scale_range: [0.4, 0.9],
            max_rotation_deg: 30.0,
            side_contrast: 0.12,
            noise_std: 0.03,
            limb_radius_range: [0.018, 0.03],
        }
    }
}

struct Stroke {
    a: Point,
    b: Point,
    radius: f64,
    intensity: f64,
}

fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 == 0.0 { 0.0 } else { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) };
    p.dist(a + ab * t)
}

const SUBSAMPLES: [f64; 2] = [0.25, 0.75];

/// Composites anti-aliased capsules over `plane` using 2x2 coverage samples.
fn draw_strokes(plane: &mut [f32], width: usize, height: usize, strokes: &[Stroke]) {
    for s in strokes {
        let lo_x = (s.a.x.min(s.b.x) - s.radius).floor().max(0.0) as usize;
        let lo_y = (s.a.y.min(s.b.y) - s.radius).floor().max(0.0) as usize;
        let hi_x = ((s.a.x.max(s.b.x) + s.radius).ceil().max(0.0) as usize).min(width);
        let hi_y = ((s.a.y.max(s.b.y) + s.radius).ceil().max(0.0) as usize).min(height);
        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let mut hits = 0;
                for sy in SUBSAMPLES {
                    for sx in SUBSAMPLES {
                        let p = Point::new(x as f64 + sx, y as f64 + sy);
                        if dist_to_segment(p, s.a, s.b) <= s.radius {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    let cover = hits as f64 / 4.0;
                    let v = &mut plane[y * width + x];
                    *v = (*v as f64 * (1.0 - cover) + s.intensity * cover) as f32;
                }
            }
        }
    }
}

fn rotate(v: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    Point::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

// Keypoints sit on a 2^-20 px grid so that mirroring (x -> width - x) is an
// exact involution.
pub(crate) fn quantize(p: Point) -> Point {
    const GRID: f64 = 1048576.0;
    Point::new((p.x * GRID).round() / GRID, (p.y * GRID).round() / GRID)
}

struct Figure {
    keypoints: [Point; KEYPOINTS],
    strokes: Vec<Stroke>,
}

fn sample_figure(rng: &mut impl Rng, config: &GeneratorConfig, h: f64) -> Figure {
    let deg = std::f64::consts::PI / 180.0;
    let (w_img, h_img) = (config.width as f64, config.height as f64);
    let pelvis = Point::new(rng.gen_range(0.3..0.7) * w_img, rng.gen_range(0.35..0.65) * h_img);
    let spin = rng.gen_range(-config.max_rotation_deg..=config.max_rotation_deg) * deg;
    let lean = rng.gen_range(-10.0..10.0) * deg;

    // Local frame: y down, the figure faces the viewer so its left side is at +x.
    let up = rotate(Point::new(0.0, -1.0), lean);
    let side = rotate(Point::new(1.0, 0.0), lean);
    // Direction `a` radians away from "down", swung toward `sign` (+1 = figure's left).
    let limb_dir = |a: f64, sign: f64| rotate(Point::new(sign * a.sin(), a.cos()), lean);

    let origin = Point::ZERO;
    let neck = up * (0.30 * h);
    let head_top = neck + rotate(up, rng.gen_range(-20.0..20.0) * deg) * (0.17 * h);

    let mut arm = |sign: f64| {
        let shoulder = neck + side * (sign * 0.09 * h);
        let upper = rng.gen_range(15.0..130.0) * deg;
        let fore = (upper + rng.gen_range(0.0..100.0) * deg).min(175.0 * deg);
        let elbow = shoulder + limb_dir(upper, sign) * (0.17 * h);
        let hand = elbow + limb_dir(fore, sign) * (0.15 * h);
        (shoulder, elbow, hand)
    };
    let (l_sh, l_el, l_hand) = arm(1.0);
    let (r_sh, r_el, r_hand) = arm(-1.0);
    let mut leg = |sign: f64| {
        let hip = origin + side * (sign * 0.06 * h);
        let thigh = rng.gen_range(-5.0..35.0) * deg;
        let shin = thigh - rng.gen_range(0.0..60.0) * deg;
        let knee = hip + limb_dir(thigh, sign) * (0.25 * h);
        let foot = knee + limb_dir(shin, sign) * (0.24 * h);
        (hip, knee, foot)
    };
    let (l_hip, l_knee, l_foot) = leg(1.0);
    let (r_hip, r_knee, r_foot) = leg(-1.0);

    let base = rng.gen_range(0.55..0.85);
    let radius = rng.gen_range(config.limb_radius_range[0]..=config.limb_radius_range[1]) * h;
    let radius = radius.max(0.6);
    let left = (base + config.side_contrast).min(1.0);
    let right = (base - config.side_contrast).max(0.0);

    let place = |p: Point| quantize(pelvis + rotate(p, spin));
    let stroke = |a: Point, b: Point, radius: f64, intensity: f64| Stroke {
        a: pelvis + rotate(a, spin),
        b: pelvis + rotate(b, spin),
        radius,
        intensity,
    };
    let strokes = vec![
        stroke(r_sh, r_el, radius, right),
        stroke(r_el, r_hand, radius, right),
        stroke(r_hip, r_knee, radius, right),
        stroke(r_knee, r_foot, radius, right),
        stroke(neck, origin, 1.3 * radius, base),
        stroke(l_sh, r_sh, radius, base),
        stroke(l_hip, r_hip, radius, base),
        stroke(neck + (head_top - neck) * 0.35, head_top + (neck - head_top) * 0.25, 2.2 * radius, base),
        stroke(l_sh, l_el, radius, left),
        stroke(l_el, l_hand, radius, left),
        stroke(l_hip, l_knee, radius, left),
        stroke(l_knee, l_foot, radius, left),
    ];
    let keypoints = [place(head_top), place(neck), place(origin), place(l_hand), place(r_hand), place(l_foot), place(r_foot)];
    Figure { keypoints, strokes }
}

/// Samples one stick figure image. Configurations that put a keypoint
/// outside 1.5x the image bounds are redrawn.
pub fn generate_figure(rng: &mut impl Rng, config: &GeneratorConfig, id: u64, seed: u64) -> Result<Example> {
    let (w, h) = (config.width, config.height);
    if w < 32 || h < 32 {
        return Err(Error::InvalidArgument(format!("images must be at least 32x32, got {w}x{h}")));
    }
    if config.channels == 0 {
        return Err(Error::InvalidArgument("images need at least one channel".into()));
    }
    let inside = |p: &Point| p.x >= -0.25 * w as f64 && p.x <= 1.25 * w as f64 && p.y >= -0.25 * h as f64 && p.y <= 1.25 * h as f64;
    let (figure, height_px) = loop {
        let height_px = rng.gen_range(config.scale_range[0]..=config.scale_range[1]) * h as f64;
        let figure = sample_figure(rng, config, height_px);
        if figure.keypoints.iter().all(inside) {
            break (figure, height_px);
        }
    };

    let background = rng.gen_range(0.0..0.3);
    let noise = Normal::new(0.0, config.noise_std.max(0.0)).expect("finite std");
    let mut image = ImageGrid::zeros(w, h, config.channels);
    for c in 0..config.channels {
        let plane = image.plane_mut(c);
        plane.fill(background as f32);
        draw_strokes(plane, w, h, &figure.strokes);
        for v in plane.iter_mut() {
            let noisy = *v as f64 + noise.sample(rng);
            *v = noisy.clamp(0.0, 1.0) as f32;
        }
    }
    let pose = Pose::annotated(figure.keypoints.to_vec())?;
    Ok(Example { id, seed, image, given: vec![(MARKING_POINT, pose.point(MARKING_POINT))], pose, person_height: height_px })
}

/// Generates examples `first_id .. first_id + count`, each from its own
/// `(seed, id)` stream, so the result does not depend on `threads`.
pub fn generate_dataset(count: usize, seed: u64, first_id: u64, config: &GeneratorConfig, threads: usize) -> Result<Dataset> {
    let ids: Vec<u64> = (first_id..first_id + count as u64).collect();
    let make = |id: u64| generate_figure(&mut rng::stream(seed, id), config, id, seed);
    let examples = crate::parallel::map_ordered(&ids, threads, |&id| make(id))?;
    let manifest = DatasetManifest {
        format_version: super::DATASET_FORMAT_VERSION,
        count,
        keypoints: KEYPOINTS,
        width: config.width,
        height: config.height,
        channels: config.channels,
        sigma: default_sigma(config.width, config.height),
        keypoint_names: skeleton::KEYPOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        limbs: skeleton::LIMBS.to_vec(),
        given_keypoints: vec![MARKING_POINT],
        reference_length: skeleton::REFERENCE_LENGTH_DEFINITION.to_string(),
        seed,
        first_id,
        generator_version: GENERATOR_VERSION,
        generator: config.clone(),
    };
    Ok(Dataset { manifest, examples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_example() {
        let config = GeneratorConfig::square(64);
        let a = generate_figure(&mut rng::stream(7, 3), &config, 3, 7).unwrap();
        let b = generate_figure(&mut rng::stream(7, 3), &config, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pose.len(), 7);
        assert_eq!(a.given, vec![(MARKING_POINT, a.pose.point(MARKING_POINT))]);
        assert!(a.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_tiny_images() {
        let config = GeneratorConfig::square(16);
        assert!(generate_figure(&mut rng::stream(1, 1), &config, 0, 1).is_err());
    }

    #[test]
    fn dataset_is_thread_count_independent() {
        let config = GeneratorConfig::square(32);
        let a = generate_dataset(6, 11, 0, &config, 1).unwrap();
        let b = generate_dataset(6, 11, 0, &config, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn figure_is_drawn() {
        let config = GeneratorConfig { noise_std: 0.0, ..GeneratorConfig::square(64) };
        let ex = generate_figure(&mut rng::stream(5, 0), &config, 0, 5).unwrap();
        let p = ex.pose.point(MARKING_POINT);
        let bg = ex.image.data[0];
        let at = ex.image.data[p.y as usize * 64 + p.x as usize];
        assert!(at > bg + 0.1, "pelvis pixel {at} vs background {bg}");
    }
}
