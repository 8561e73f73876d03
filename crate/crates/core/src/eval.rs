//! PCKh, PCP, per-step accuracy curves, and side-by-side run comparisons.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::skeleton::{FULL_BODY, KEYPOINT_NAMES, LIMBS, UPPER_BODY};
use crate::error::{Error, Result};
use crate::infer::{Prediction, Trajectory};
use crate::pose::Pose;

fn same_len(a: &Pose, b: &Pose) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::mismatch("predicted keypoints", b.len(), a.len()));
    }
    Ok(())
}

/// Per keypoint: `Some(error <= alpha * reference_length)`, or `None` when the
/// keypoint is not annotated in `truth`.
pub fn pckh(predicted: &Pose, truth: &Pose, reference_length: f64, alpha: f64) -> Result<Vec<Option<bool>>> {
    same_len(predicted, truth)?;
    if !(reference_length.is_finite() && reference_length > 0.0) {
        return Err(Error::InvalidArgument(format!("reference length must be positive, got {reference_length}")));
    }
    let threshold = alpha * reference_length;
    Ok((0..truth.len()).map(|k| truth.mask()[k].then(|| predicted.point(k).dist(truth.point(k)) <= threshold)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcpOutcome {
    /// `None` for limbs excluded for a missing annotation or zero length.
    pub limbs: Vec<Option<bool>>,
    /// How many limbs were excluded for zero true length.
    pub degenerate: usize,
}

/// A limb is correct when both endpoint errors are within `alpha` times its
/// true length.
pub fn pcp(predicted: &Pose, truth: &Pose, limbs: &[[usize; 2]], alpha: f64) -> Result<PcpOutcome> {
    same_len(predicted, truth)?;
    let mut degenerate = 0;
    let mut out = Vec::with_capacity(limbs.len());
    for &[a, b] in limbs {
        if a >= truth.len() || b >= truth.len() {
            return Err(Error::InvalidArgument(format!("limb ({a}, {b}) out of range")));
        }
        if !(truth.mask()[a] && truth.mask()[b]) {
            out.push(None);
            continue;
        }
        let length = truth.point(a).dist(truth.point(b));
        if length == 0.0 {
            degenerate += 1;
            out.push(None);
            continue;
        }
        let t = alpha * length;
        let ok = predicted.point(a).dist(truth.point(a)) <= t && predicted.point(b).dist(truth.point(b)) <= t;
        out.push(Some(ok));
    }
    Ok(PcpOutcome { limbs: out, degenerate })
}

/// Correct and evaluated counts over `keypoints`, pooled across examples.
fn pooled(rows: &[Vec<Option<bool>>], keypoints: &[usize]) -> (usize, usize) {
    let mut correct = 0;
    let mut evaluated = 0;
    for row in rows {
        for &k in keypoints {
            if let Some(ok) = row[k] {
                evaluated += 1;
                correct += ok as usize;
            }
        }
    }
    (correct, evaluated)
}

fn fraction((correct, evaluated): (usize, usize)) -> f64 {
    if evaluated == 0 {
        0.0
    } else {
        correct as f64 / evaluated as f64
    }
}

/// PCKh over `keypoints` at every step; step 0 scores the initial poses. A
/// trajectory that stopped early keeps its last pose for later steps.
pub fn pckh_curve(
    trajectories: &[Trajectory],
    truths: &[Pose],
    reference_lengths: &[f64],
    alpha: f64,
    keypoints: &[usize],
) -> Result<Vec<f64>> {
    if trajectories.len() != truths.len() {
        return Err(Error::mismatch("truth poses", trajectories.len(), truths.len()));
    }
    if trajectories.len() != reference_lengths.len() {
        return Err(Error::mismatch("reference lengths", trajectories.len(), reference_lengths.len()));
    }
    let steps = trajectories.iter().map(|t| t.poses.len()).max().unwrap_or(0);
    (0..steps)
        .map(|s| {
            let rows = trajectories
                .iter()
                .zip(truths)
                .zip(reference_lengths)
                .map(|((t, truth), &r)| pckh(&t.poses[s.min(t.poses.len() - 1)], truth, r, alpha))
                .collect::<Result<Vec<_>>>()?;
            Ok(fraction(pooled(&rows, keypoints)))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub name: String,
    pub fraction: f64,
    pub evaluated: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub alpha: f64,
    /// PCKh per keypoint, then `ubody` and `fbody`.
    pub pckh: Vec<Score>,
    /// Full-body PCKh at each inference step.
    pub per_step: Vec<f64>,
    /// PCP per limb, then `total`.
    pub pcp: Vec<Score>,
    pub degenerate_limbs: usize,
}

impl MetricReport {
    pub fn pckh_of(&self, name: &str) -> Option<f64> {
        self.pckh.iter().find(|s| s.name == name).map(|s| s.fraction)
    }

    pub fn fbody(&self) -> f64 {
        self.pckh_of("fbody").unwrap_or(0.0)
    }

    /// `(metric, value)` rows in a fixed order.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows: Vec<(String, f64)> = self.pckh.iter().map(|s| (format!("pckh.{}", s.name), s.fraction)).collect();
        rows.extend(self.per_step.iter().enumerate().map(|(t, &v)| (format!("pckh.fbody.step{t}"), v)));
        rows.extend(self.pcp.iter().map(|s| (format!("pcp.{}", s.name), s.fraction)));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,evaluated,excluded\n");
        for s in &self.pckh {
            let _ = writeln!(out, "pckh.{},{:.4},{},{}", s.name, s.fraction, s.evaluated, s.excluded);
        }
        for (t, v) in self.per_step.iter().enumerate() {
            let _ = writeln!(out, "pckh.fbody.step{t},{v:.4},,");
        }
        for s in &self.pcp {
            let _ = writeln!(out, "pcp.{},{:.4},{},{}", s.name, s.fraction, s.evaluated, s.excluded);
        }
        let _ = writeln!(out, "pcp.degenerate,{},,", self.degenerate_limbs);
        let _ = writeln!(out, "alpha,{:.4},,", self.alpha);
        out
    }
}

/// Scores working-frame predictions of the seven-keypoint figure.
pub fn evaluate(predictions: &[Prediction], alpha: f64) -> Result<MetricReport> {
    let finals = predictions.iter().map(|p| pckh(p.trajectory.last(), &p.truth, p.reference_length, alpha)).collect::<Result<Vec<_>>>()?;
    let total = predictions.len();
    let score = |name: &str, keypoints: &[usize]| {
        let (c, e) = pooled(&finals, keypoints);
        Score { name: name.to_string(), fraction: fraction((c, e)), evaluated: e, excluded: total * keypoints.len() - e }
    };
    let mut pckh_scores: Vec<Score> = KEYPOINT_NAMES.iter().enumerate().map(|(k, n)| score(n, &[k])).collect();
    pckh_scores.push(score("ubody", &UPPER_BODY));
    pckh_scores.push(score("fbody", &FULL_BODY));

    let trajectories: Vec<Trajectory> = predictions.iter().map(|p| p.trajectory.clone()).collect();
    let truths: Vec<Pose> = predictions.iter().map(|p| p.truth.clone()).collect();
    let refs: Vec<f64> = predictions.iter().map(|p| p.reference_length).collect();
    let per_step = pckh_curve(&trajectories, &truths, &refs, alpha, &FULL_BODY)?;

    let mut degenerate = 0;
    let mut limb_rows = Vec::with_capacity(total);
    for p in predictions {
        let o = pcp(p.trajectory.last(), &p.truth, &LIMBS, alpha)?;
        degenerate += o.degenerate;
        limb_rows.push(o.limbs);
    }
    let limb_score = |name: String, limbs: &[usize]| {
        let (c, e) = pooled(&limb_rows, limbs);
        Score { name, fraction: fraction((c, e)), evaluated: e, excluded: total * limbs.len() - e }
    };
    let mut pcp_scores: Vec<Score> =
        LIMBS.iter().enumerate().map(|(i, [a, b])| limb_score(format!("{}-{}", KEYPOINT_NAMES[*a], KEYPOINT_NAMES[*b]), &[i])).collect();
    pcp_scores.push(limb_score("total".into(), &(0..LIMBS.len()).collect::<Vec<_>>()));

    Ok(MetricReport { alpha, pckh: pckh_scores, per_step, pcp: pcp_scores, degenerate_limbs: degenerate })
}

/// Full-body PCKh@0.5 reported for full-scale training on real images, shown
/// beside desk-scale comparisons for orientation only.
pub const REFERENCE_FBODY: [(&str, f64); 3] = [("ief", 81.0), ("direct", 74.8), ("iterdirect", 73.4)];

/// Named runs side by side, with deltas against one baseline run.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub runs: Vec<String>,
    pub baseline: usize,
    pub metrics: Vec<String>,
    /// `values[metric][run]`.
    pub values: Vec<Vec<f64>>,
    /// Free-text notes carried into the chart.
    pub annotations: Vec<String>,
}

pub fn compare_report(runs: &[(String, MetricReport)], baseline: usize) -> Result<Comparison> {
    let Some((_, first)) = runs.first() else {
        return Err(Error::InvalidArgument("nothing to compare".into()));
    };
    if baseline >= runs.len() {
        return Err(Error::InvalidArgument(format!("baseline {baseline} out of range")));
    }
    let names: Vec<String> = first.pckh.iter().map(|s| s.name.clone()).collect();
    for (run, r) in runs {
        if r.pckh.iter().map(|s| &s.name).ne(names.iter()) {
            return Err(Error::InvalidArgument(format!("run `{run}` scores a different keypoint set")));
        }
    }
    let metrics: Vec<String> = names.iter().map(|n| format!("pckh.{n}")).collect();
    let values = (0..names.len()).map(|i| runs.iter().map(|(_, r)| r.pckh[i].fraction).collect()).collect();
    Ok(Comparison { runs: runs.iter().map(|(n, _)| n.clone()).collect(), baseline, metrics, values, annotations: Vec::new() })
}

impl Comparison {
    pub fn delta(&self, metric: usize, run: usize) -> f64 {
        self.values[metric][run] - self.values[metric][self.baseline]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for r in &self.runs {
            let _ = write!(out, ",{r}");
        }
        for r in &self.runs {
            let _ = write!(out, ",{r}-{}", self.runs[self.baseline]);
        }
        out.push('\n');
        for (m, name) in self.metrics.iter().enumerate() {
            out.push_str(name);
            for v in &self.values[m] {
                let _ = write!(out, ",{v:.4}");
            }
            for r in 0..self.runs.len() {
                let _ = write!(out, ",{:.4}", self.delta(m, r));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let series: Vec<(String, Vec<f64>)> =
            self.runs.iter().enumerate().map(|(r, name)| (name.clone(), self.values.iter().map(|row| 100.0 * row[r]).collect())).collect();
        let categories: Vec<String> = self.metrics.iter().map(|m| m.trim_start_matches("pckh.").to_string()).collect();
        crate::svg::bar_chart("PCKh by keypoint", &categories, &series, "PCKh (%)", &self.annotations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{Correction, Point};

    fn pose(points: &[(f64, f64)]) -> Pose {
        Pose::annotated(points.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn pckh_boundary_is_inclusive() {
        let truth = pose(&[(0.0, 0.0), (10.0, 0.0)]);
        let pred = pose(&[(0.0, 0.0), (15.0, 0.0)]);
        assert_eq!(pckh(&pred, &truth, 10.0, 0.5).unwrap(), vec![Some(true), Some(true)]);
        assert_eq!(pckh(&pred, &truth, 10.0, 0.49).unwrap(), vec![Some(true), Some(false)]);
        assert!(pckh(&pred, &truth, 0.0, 0.5).is_err());
    }

    #[test]
    fn pckh_excludes_unannotated_truth() {
        let truth = pose(&[(0.0, 0.0), (10.0, 0.0)]).with_mask(vec![true, false]).unwrap();
        let pred = pose(&[(0.0, 0.0), (99.0, 0.0)]);
        assert_eq!(pckh(&pred, &truth, 10.0, 0.5).unwrap(), vec![Some(true), None]);
    }

    #[test]
    fn pcp_needs_both_endpoints() {
        let truth = pose(&[(0.0, 0.0), (10.0, 0.0), (10.0, 0.0)]);
        let exact = pcp(&truth, &truth, &[[0, 1]], 0.5).unwrap();
        assert_eq!(exact.limbs, vec![Some(true)]);
        let off = pose(&[(0.0, 6.0), (10.0, 0.0), (10.0, 0.0)]);
        assert_eq!(pcp(&off, &truth, &[[0, 1]], 0.5).unwrap().limbs, vec![Some(false)]);
        let degenerate = pcp(&truth, &truth, &[[1, 2]], 0.5).unwrap();
        assert_eq!((degenerate.limbs, degenerate.degenerate), (vec![None], 1));
    }

    #[test]
    fn curves_saturate_and_stay_flat() {
        let truth = pose(&[(0.0, 0.0), (10.0, 0.0)]);
        let start = pose(&[(0.0, 0.0), (30.0, 0.0)]);
        let fix = Correction::new(vec![Point::ZERO, Point::new(-20.0, 0.0)]).unwrap();
        let perfect = Trajectory {
            poses: vec![start.clone(), truth.clone(), truth.clone(), truth.clone()],
            corrections: vec![fix, Correction::zeros(2), Correction::zeros(2)],
        };
        let curve = pckh_curve(&[perfect], std::slice::from_ref(&truth), &[10.0], 0.5, &[0, 1]).unwrap();
        assert_eq!(curve, vec![0.5, 1.0, 1.0, 1.0]);
        let flat = Trajectory { poses: vec![start.clone(); 4], corrections: vec![Correction::zeros(2); 3] };
        let curve = pckh_curve(&[flat], &[truth], &[10.0], 0.5, &[0, 1]).unwrap();
        assert_eq!(curve, vec![0.5; 4]);
    }

    fn report(v: f64) -> MetricReport {
        MetricReport {
            alpha: 0.5,
            pckh: vec![Score { name: "fbody".into(), fraction: v, evaluated: 10, excluded: 0 }],
            per_step: vec![v],
            pcp: Vec::new(),
            degenerate_limbs: 0,
        }
    }

    #[test]
    fn comparisons_have_zero_self_deltas() {
        let one = compare_report(&[("ief".into(), report(0.8))], 0).unwrap();
        assert_eq!(one.delta(0, 0), 0.0);
        let two = compare_report(&[("a".into(), report(0.8)), ("b".into(), report(0.8))], 0).unwrap();
        assert_eq!(two.delta(0, 1), 0.0);
        let csv = two.to_csv();
        assert!(csv.contains("pckh.fbody,0.8000,0.8000,0.0000,0.0000"), "{csv}");
        assert!(two.to_svg().starts_with("<svg"));
    }
}
