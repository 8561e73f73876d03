//! Keypoint poses and the bounded-correction arithmetic that drives iterative
//! error feedback.
//!
//! Coordinates are continuous pixel positions in the image frame and may lie
//! outside the image. Nothing here rounds; rasterization is the only place
//! where positions meet the pixel grid.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ZERO: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

/// K keypoint positions plus a per-keypoint annotation mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    points: Vec<Point>,
    mask: Vec<bool>,
}

impl Pose {
    pub fn new(points: Vec<Point>, mask: Vec<bool>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("a pose needs at least one keypoint".into()));
        }
        if points.len() != mask.len() {
            return Err(Error::mismatch("pose mask", points.len(), mask.len()));
        }
        if !points.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("pose coordinates"));
        }
        Ok(Pose { points, mask })
    }

    /// A pose with every keypoint annotated.
    pub fn annotated(points: Vec<Point>) -> Result<Self> {
        let mask = vec![true; points.len()];
        Pose::new(points, mask)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn point(&self, k: usize) -> Point {
        self.points[k]
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.points.len() {
            return Err(Error::mismatch("pose mask", self.points.len(), mask.len()));
        }
        self.mask = mask;
        Ok(self)
    }

    /// Moves keypoint `k`; the caller guarantees the coordinate is finite.
    pub(crate) fn set_point(&mut self, k: usize, p: Point) {
        debug_assert!(p.is_finite());
        self.points[k] = p;
    }

    /// Same pose translated by `offset`.
    pub fn translated(&self, offset: Point) -> Pose {
        Pose { points: self.points.iter().map(|&p| p + offset).collect(), mask: self.mask.clone() }
    }

    pub(crate) fn map_points(&self, f: impl Fn(Point) -> Point) -> Pose {
        Pose { points: self.points.iter().map(|&p| f(p)).collect(), mask: self.mask.clone() }
    }
}

/// Per-keypoint displacement vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    deltas: Vec<Point>,
}

impl Correction {
    pub fn new(deltas: Vec<Point>) -> Result<Self> {
        if !deltas.iter().all(|d| d.is_finite()) {
            return Err(Error::NonFinite("correction"));
        }
        Ok(Correction { deltas })
    }

    pub fn zeros(k: usize) -> Self {
        Correction { deltas: vec![Point::ZERO; k] }
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn deltas(&self) -> &[Point] {
        &self.deltas
    }

    pub fn delta(&self, k: usize) -> Point {
        self.deltas[k]
    }

    /// Largest per-keypoint displacement norm.
    pub fn max_norm(&self) -> f64 {
        self.deltas.iter().map(|d| d.norm()).fold(0.0, f64::max)
    }

    /// Flattens to `[dx0, dy0, dx1, dy1, ...]` for the listed keypoints.
    pub fn to_flat(&self, keypoints: &[usize]) -> Vec<f64> {
        keypoints.iter().flat_map(|&k| [self.deltas[k].x, self.deltas[k].y]).collect()
    }
}

/// Bounded displacement of a single keypoint: `min(bound, |u|) * u/|u|` with
/// `u = target - current`, and zero when `u` is zero.
pub fn bounded_step(target: Point, current: Point, bound: f64) -> Point {
    let u = target - current;
    let norm = u.norm();
    if norm == 0.0 {
        Point::ZERO
    } else if norm <= bound {
        u
    } else {
        let unit = u * (1.0 / norm);
        unit * bound
    }
}

fn check_bound(bound: f64) -> Result<()> {
    if !(bound.is_finite() && bound > 0.0) {
        return Err(Error::InvalidArgument(format!("correction bound must be positive and finite, got {bound}")));
    }
    Ok(())
}

/// Target correction that moves `current` toward `target` by at most `bound`
/// pixels per keypoint. Keypoints with `mask[k] == false` get a zero delta.
pub fn bounded_correction(target: &Pose, current: &Pose, bound: f64, mask: &[bool]) -> Result<Correction> {
    check_bound(bound)?;
    if target.len() != current.len() {
        return Err(Error::mismatch("bounded correction poses", target.len(), current.len()));
    }
    if mask.len() != target.len() {
        return Err(Error::mismatch("bounded correction mask", target.len(), mask.len()));
    }
    let deltas = target
        .points
        .iter()
        .zip(&current.points)
        .zip(mask)
        .map(|((&t, &c), &m)| if m { bounded_step(t, c, bound) } else { Point::ZERO })
        .collect();
    Ok(Correction { deltas })
}

/// `current + correction`, keypoint-wise. The mask passes through and the
/// result may leave the image.
pub fn apply_correction(current: &Pose, correction: &Correction) -> Result<Pose> {
    if current.len() != correction.len() {
        return Err(Error::mismatch("applied correction", current.len(), correction.len()));
    }
    let points: Vec<Point> = current.points.iter().zip(&correction.deltas).map(|(&p, &d)| p + d).collect();
    if !points.iter().all(|p| p.is_finite()) {
        return Err(Error::NonFinite("corrected pose"));
    }
    Ok(Pose { points, mask: current.mask.clone() })
}

/// Poses `y_0 .. y_T` and the target corrections between them.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPath {
    pub poses: Vec<Pose>,
    pub targets: Vec<Correction>,
}

impl FixedPath {
    pub fn steps(&self) -> usize {
        self.targets.len()
    }
}

// Remaining distances within this relative slack of the bound are finished in
// one step, so accumulated rounding never produces a vanishing extra step.
const SNAP_SLACK: f64 = 1e-12;

/// Precomputes the training path from `start` to `truth` by repeatedly
/// applying bounded corrections.
///
/// Far from the truth every step is the same vector of length `bound`; the
/// step that arrives lands exactly on the truth and all later targets are
/// zero. Keypoints masked out of `truth` stay at `start` with zero targets.
pub fn fixed_path(start: &Pose, truth: &Pose, bound: f64, steps: usize) -> Result<FixedPath> {
    check_bound(bound)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("a fixed path needs at least one step".into()));
    }
    if start.len() != truth.len() {
        return Err(Error::mismatch("fixed path poses", start.len(), truth.len()));
    }
    // The direction toward the truth never changes along the path, so the
    // far-field step is computed once and repeated verbatim.
    let far_steps: Vec<Point> = (0..start.len()).map(|k| bounded_step(truth.points[k], start.points[k], bound)).collect();
    let mut poses = Vec::with_capacity(steps + 1);
    let mut targets = Vec::with_capacity(steps);
    poses.push(start.clone());
    for _ in 0..steps {
        let current = poses.last().expect("path starts non-empty");
        let mut next = current.clone();
        let mut deltas = Vec::with_capacity(current.len());
        for (k, &d) in far_steps.iter().enumerate() {
            let (c, y) = (current.points[k], truth.points[k]);
            let delta = if !truth.mask[k] || c == y {
                Point::ZERO
            } else if (y - c).norm() <= bound * (1.0 + SNAP_SLACK) {
                next.points[k] = y;
                y - c
            } else {
                next.points[k] = c + d;
                d
            };
            deltas.push(delta);
        }
        targets.push(Correction { deltas });
        poses.push(next);
    }
    Ok(FixedPath { poses, targets })
}

/// Like [`fixed_path`] but every target is the full remaining displacement, so
/// the path reaches the truth after one step.
pub fn unbounded_path(start: &Pose, truth: &Pose, steps: usize) -> Result<FixedPath> {
    if steps == 0 {
        return Err(Error::InvalidArgument("a path needs at least one step".into()));
    }
    if start.len() != truth.len() {
        return Err(Error::mismatch("path poses", start.len(), truth.len()));
    }
    let mut arrived = start.clone();
    let mut first = Vec::with_capacity(start.len());
    for k in 0..start.len() {
        if truth.mask[k] {
            first.push(truth.points[k] - start.points[k]);
            arrived.points[k] = truth.points[k];
        } else {
            first.push(Point::ZERO);
        }
    }
    let mut poses = vec![start.clone(), arrived.clone()];
    let mut targets = vec![Correction { deltas: first }];
    for _ in 1..steps {
        poses.push(arrived.clone());
        targets.push(Correction::zeros(start.len()));
    }
    Ok(FixedPath { poses, targets })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Componentwise median of the annotated instances of each keypoint. Even
/// counts take the mean of the two middle values.
pub fn median_pose<'a>(poses: impl IntoIterator<Item = &'a Pose>) -> Result<Pose> {
    let poses: Vec<&Pose> = poses.into_iter().collect();
    let first = poses.first().ok_or_else(|| Error::InvalidArgument("median of an empty pose collection".into()))?;
    let k = first.len();
    let mut points = Vec::with_capacity(k);
    let mut xs = Vec::with_capacity(poses.len());
    let mut ys = Vec::with_capacity(poses.len());
    for i in 0..k {
        xs.clear();
        ys.clear();
        for pose in &poses {
            if pose.len() != k {
                return Err(Error::mismatch("median pose keypoints", k, pose.len()));
            }
            if pose.mask[i] {
                xs.push(pose.points[i].x);
                ys.push(pose.points[i].y);
            }
        }
        if xs.is_empty() {
            return Err(Error::UnannotatedKeypoint { keypoint: i });
        }
        points.push(Point::new(median(&mut xs), median(&mut ys)));
    }
    Pose::annotated(points)
}
