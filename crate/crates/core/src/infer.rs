//! The test-time loop: render the current estimate, predict a correction,
//! add it, repeat.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{canonical_crop, mirror, unmirror_pose, CropBox, Dataset, Example, ScaleAugment};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::pose::{apply_correction, Correction, Point, Pose};
use crate::render::ImageGrid;

/// Poses `y_0 .. y_T` and the raw corrections between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub corrections: Vec<Correction>,
}

impl Trajectory {
    pub fn last(&self) -> &Pose {
        self.poses.last().expect("a trajectory holds at least y0")
    }

    pub fn steps(&self) -> usize {
        self.corrections.len()
    }
}

/// Runs `steps` feedback iterations from `y0`. Corrections are applied as
/// predicted, with no clipping. Keypoints the model does not predict, the
/// given ones included, keep their `y0` position. With `early_stop = Some(eps)`
/// the loop ends once every predicted displacement is shorter than `eps`.
pub fn infer(model: &Model, image: &ImageGrid, y0: &Pose, steps: usize, early_stop: Option<f64>) -> Result<Trajectory> {
    let mut poses = vec![y0.clone()];
    let mut corrections = Vec::with_capacity(steps);
    for step in 0..steps {
        let current = poses.last().expect("non-empty");
        let input = model.input(image, current)?;
        let output = match model.params.forward(&input) {
            Ok((out, _)) => out,
            Err(Error::NonFinite(_)) => return Err(Error::InferenceDivergence { step }),
            Err(e) => return Err(e),
        };
        let correction = model.correction(&output)?;
        let next = apply_correction(current, &correction)?;
        let small = early_stop.is_some_and(|eps| correction.max_norm() < eps);
        poses.push(next);
        corrections.push(correction);
        if small {
            break;
        }
    }
    Ok(Trajectory { poses, corrections })
}

/// [`infer`] over examples, each starting from the model's initial pose for
/// its given keypoints. Output order matches input order; a failure names the
/// example it came from.
pub fn batch_infer(model: &Model, examples: &[Example], steps: usize, threads: usize) -> Result<Vec<Trajectory>> {
    crate::parallel::map_ordered(examples, threads, |ex| {
        let run = || {
            let y0 = model.initial_pose(&ex.given)?;
            infer(model, &ex.image, &y0, steps, None)
        };
        run().map_err(|e| Error::Example { id: ex.id, source: Box::new(e) })
    })
}

/// One test image processed in the working frame (its canonical crop).
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: u64,
    pub crop: CropBox,
    /// Ground truth in the working frame.
    pub truth: Pose,
    pub reference_length: f64,
    pub trajectory: Trajectory,
}

/// The working-frame examples for a test set: each image cropped to the box
/// closest to the preferred person scale.
pub fn test_crops(dataset: &Dataset, out_size: usize) -> Vec<(CropBox, Example)> {
    let config = ScaleAugment::new(out_size);
    dataset.examples.iter().map(|ex| canonical_crop(ex, &config)).collect()
}

/// Crops, infers, and (with `mirrored`) runs on horizontally flipped inputs,
/// mapping every pose back to the unflipped frame with labels swapped back.
pub fn predict_dataset(model: &Model, dataset: &Dataset, steps: usize, mirrored: bool, threads: usize) -> Result<Vec<Prediction>> {
    let crops = test_crops(dataset, model.width());
    let inputs: Vec<Example> = crops.iter().map(|(_, ex)| if mirrored { mirror(ex) } else { ex.clone() }).collect();
    let trajectories = batch_infer(model, &inputs, steps, threads)?;
    let width = model.width();
    Ok(crops
        .into_iter()
        .zip(trajectories)
        .map(|((crop, ex), mut trajectory)| {
            if mirrored {
                trajectory.poses = trajectory.poses.iter().map(|p| unmirror_pose(p, width)).collect();
                trajectory.corrections = trajectory
                    .corrections
                    .iter()
                    .map(|c| {
                        let flipped: Vec<_> = c.deltas().iter().map(|d| Point::new(-d.x, d.y)).collect();
                        let swapped = crate::data::skeleton::MIRROR_SWAP.iter().map(|&k| flipped[k]).collect();
                        Correction::new(swapped).expect("finite")
                    })
                    .collect();
            }
            Prediction { id: ex.id, crop, reference_length: ex.reference_length(), truth: ex.pose, trajectory }
        })
        .collect())
}

/// CSV with one row per example, step, and keypoint.
pub fn trajectories_csv(predictions: &[Prediction]) -> String {
    let mut out = String::from("example_id,step,keypoint,x,y\n");
    for p in predictions {
        for (step, pose) in p.trajectory.poses.iter().enumerate() {
            for (k, pt) in pose.points().iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{},{}", p.id, step, k, pt.x, pt.y);
            }
        }
    }
    out
}

/// Parses [`trajectories_csv`] output into per-example pose sequences, in
/// order of first appearance.
pub fn parse_trajectories_csv(text: &str, path: &Path) -> Result<Vec<(u64, Vec<Pose>)>> {
    let mut lines = text.lines();
    if lines.next() != Some("example_id,step,keypoint,x,y") {
        return Err(Error::format(path, "missing trajectory header"));
    }
    let mut out: Vec<(u64, Vec<Vec<Point>>)> = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = || Error::format(path, format!("line {}: malformed row", n + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let id: u64 = f[0].parse().map_err(|_| bad())?;
        let step: usize = f[1].parse().map_err(|_| bad())?;
        let k: usize = f[2].parse().map_err(|_| bad())?;
        let p = Point::new(f[3].parse().map_err(|_| bad())?, f[4].parse().map_err(|_| bad())?);
        if out.last().is_none_or(|(last, _)| *last != id) {
            out.push((id, Vec::new()));
        }
        let poses = &mut out.last_mut().expect("pushed").1;
        if step == poses.len() && k == 0 {
            poses.push(Vec::new());
        }
        let current = step + 1 == poses.len();
        match poses.last_mut().filter(|_| current) {
            Some(pose) if pose.len() == k => pose.push(p),
            _ => return Err(bad()),
        }
    }
    out.into_iter().map(|(id, poses)| Ok((id, poses.into_iter().map(Pose::annotated).collect::<Result<Vec<_>>>()?))).collect()
}

/// Rebuilds working-frame predictions from parsed trajectories and the test
/// set they were run on.
pub fn predictions_from_trajectories(dataset: &Dataset, out_size: usize, rows: Vec<(u64, Vec<Pose>)>) -> Result<Vec<Prediction>> {
    let crops = test_crops(dataset, out_size);
    if crops.len() != rows.len() {
        return Err(Error::mismatch("trajectories", crops.len(), rows.len()));
    }
    crops
        .into_iter()
        .zip(rows)
        .map(|((crop, ex), (id, poses))| {
            if id != ex.id {
                return Err(Error::InvalidArgument(format!("trajectory for example {id} where {} was expected", ex.id)));
            }
            if poses.is_empty() || poses.iter().any(|p| p.len() != ex.pose.len()) {
                return Err(Error::InvalidArgument(format!("trajectory of example {id} has the wrong shape")));
            }
            let corrections = poses
                .windows(2)
                .map(|w| Correction::new(w[0].points().iter().zip(w[1].points()).map(|(&a, &b)| b - a).collect()))
                .collect::<Result<Vec<_>>>()?;
            Ok(Prediction {
                id,
                crop,
                reference_length: ex.reference_length(),
                truth: ex.pose,
                trajectory: Trajectory { poses, corrections },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KeypointLayout, Regime};
    use crate::net::{Architecture, PredictorParams};
    use crate::rng;

    fn model(zero: bool) -> Model {
        let arch = Architecture::reference(8, 8, 1, 3, 2);
        let params =
            if zero { PredictorParams::zeros(arch).unwrap() } else { PredictorParams::init(arch, &mut rng::stream(2, 0)).unwrap() };
        Model {
            params,
            layout: KeypointLayout::standard(3, &[1]).unwrap(),
            regime: Regime::Ief,
            sigma: 1.0,
            bound: 2.0,
            test_steps: 3,
            mean_pose: Pose::annotated(vec![Point::new(2.0, 2.0), Point::new(4.0, 4.0), Point::new(6.0, 5.0)]).unwrap(),
        }
    }

    fn image() -> ImageGrid {
        let data = (0..64).map(|i| (i % 7) as f32 / 7.0).collect();
        ImageGrid::new(8, 8, 1, data).unwrap()
    }

    #[test]
    fn zero_weights_keep_y0() {
        let m = model(true);
        let t = infer(&m, &image(), &m.mean_pose, 3, None).unwrap();
        assert_eq!(t.poses.len(), 4);
        assert!(t.poses.iter().all(|p| *p == m.mean_pose));
        assert_eq!(infer(&m, &image(), &m.mean_pose, 0, None).unwrap().poses, vec![m.mean_pose.clone()]);
    }

    #[test]
    fn trajectory_is_additive_and_given_points_stay() {
        let m = model(false);
        let t = infer(&m, &image(), &m.mean_pose, 3, None).unwrap();
        for (s, c) in t.corrections.iter().enumerate() {
            assert_eq!(apply_correction(&t.poses[s], c).unwrap(), t.poses[s + 1]);
            assert_eq!(t.poses[s + 1].point(1), m.mean_pose.point(1));
        }
    }

    #[test]
    fn early_stop_ends_on_small_corrections() {
        let m = model(true);
        let t = infer(&m, &image(), &m.mean_pose, 3, Some(0.5)).unwrap();
        assert_eq!(t.steps(), 1);
    }

    #[test]
    fn batch_matches_single() {
        let m = model(false);
        let ex = Example {
            id: 9,
            seed: 0,
            image: image(),
            pose: m.mean_pose.clone(),
            given: vec![(1, Point::new(4.5, 3.5))],
            person_height: 5.0,
        };
        assert!(batch_infer(&m, &[], 3, 1).unwrap().is_empty());
        let out = batch_infer(&m, std::slice::from_ref(&ex), 3, 1).unwrap();
        let y0 = m.initial_pose(&ex.given).unwrap();
        assert_eq!(out, vec![infer(&m, &ex.image, &y0, 3, None).unwrap()]);
    }

    #[test]
    fn trajectory_csv_round_trips() {
        let ds = crate::data::generate_dataset(3, 4, 0, &crate::data::GeneratorConfig::square(32), 1).unwrap();
        let m = Model {
            params: PredictorParams::init(Architecture::reference(32, 32, 1, 7, 6), &mut rng::stream(2, 0)).unwrap(),
            layout: KeypointLayout::standard(7, &[2]).unwrap(),
            mean_pose: ds.examples[0].pose.clone(),
            ..model(false)
        };
        let preds = predict_dataset(&m, &ds, 2, false, 1).unwrap();
        let rows = parse_trajectories_csv(&trajectories_csv(&preds), Path::new("t.csv")).unwrap();
        let back = predictions_from_trajectories(&ds, 32, rows).unwrap();
        for (a, b) in preds.iter().zip(&back) {
            assert_eq!(a.trajectory.poses, b.trajectory.poses);
            assert_eq!((a.id, &a.truth, a.crop), (b.id, &b.truth, b.crop));
        }
        assert!(parse_trajectories_csv("example_id,step,keypoint,x,y\n0,1,0,1,1\n", Path::new("t.csv")).is_err());
    }
}
