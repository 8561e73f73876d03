//! A trained predictor together with everything inference needs: which
//! keypoints it renders and predicts, the heatmap width, and the mean pose it
//! starts from.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{load_checkpoint, save_checkpoint, Checkpoint, PredictorParams};
use crate::pose::{Correction, Point, Pose};
use crate::render::{render_pose, stack_input, AugmentedInput, ImageGrid};

/// What each step of the network is trained to output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Bounded corrections along the fixed path.
    Ief,
    /// One step, full displacement from the initial pose.
    Direct,
    /// Several steps, each regressing the full remaining displacement.
    #[serde(rename = "iterdirect")]
    IterativeDirect,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Ief => "ief",
            Regime::Direct => "direct",
            Regime::IterativeDirect => "iterdirect",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ief" => Ok(Regime::Ief),
            "direct" => Ok(Regime::Direct),
            "iterdirect" => Ok(Regime::IterativeDirect),
            _ => Err(Error::Usage(format!("unknown regime `{s}`"))),
        }
    }
}

/// Which keypoints are rendered as input channels, predicted by the network,
/// and given as fixed input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeypointLayout {
    pub keypoints: usize,
    pub rendered: Vec<usize>,
    pub predicted: Vec<usize>,
    pub given: Vec<usize>,
}

impl KeypointLayout {
    /// Every keypoint rendered; all but the given ones predicted.
    pub fn standard(keypoints: usize, given: &[usize]) -> Result<Self> {
        Self::subset(keypoints, &(0..keypoints).collect::<Vec<_>>(), given)
    }

    /// Renders only `subset`, and predicts the members of `subset` that are
    /// not given.
    pub fn subset(keypoints: usize, subset: &[usize], given: &[usize]) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::InvalidArgument("keypoint subset is empty".into()));
        }
        if let Some(&k) = subset.iter().chain(given).find(|&&k| k >= keypoints) {
            return Err(Error::InvalidArgument(format!("keypoint {k} out of range for K = {keypoints}")));
        }
        let mut rendered = subset.to_vec();
        rendered.sort_unstable();
        rendered.dedup();
        let mut given = given.to_vec();
        given.sort_unstable();
        given.dedup();
        let predicted: Vec<usize> = rendered.iter().copied().filter(|k| !given.contains(k)).collect();
        if predicted.is_empty() {
            return Err(Error::InvalidArgument("keypoint subset contains only given keypoints".into()));
        }
        Ok(KeypointLayout { keypoints, rendered, predicted, given })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: PredictorParams<f32>,
    pub layout: KeypointLayout,
    pub regime: Regime,
    pub sigma: f64,
    pub bound: f64,
    pub test_steps: usize,
    /// Median training pose in the working frame.
    pub mean_pose: Pose,
}

impl Model {
    pub fn width(&self) -> usize {
        self.params.arch().width
    }

    pub fn height(&self) -> usize {
        self.params.arch().height
    }

    /// The starting pose for an image: the mean pose translated so that its
    /// first given keypoint sits on the provided position, with every given
    /// keypoint then pinned to its provided position.
    pub fn initial_pose(&self, given: &[(usize, Point)]) -> Result<Pose> {
        initial_pose(&self.mean_pose, given)
    }

    /// `x_t`: the image stacked with heatmaps of the rendered keypoints.
    pub fn input(&self, image: &ImageGrid, pose: &Pose) -> Result<AugmentedInput> {
        if pose.len() != self.layout.keypoints {
            return Err(Error::mismatch("pose keypoints", self.layout.keypoints, pose.len()));
        }
        let heatmaps = render_pose(pose, Some(&self.layout.rendered), image.width, image.height, self.sigma)?;
        stack_input(image, &heatmaps)
    }

    /// Expands a network output into a full correction; keypoints the
    /// network does not predict get zero displacement.
    pub fn correction(&self, output: &[f32]) -> Result<Correction> {
        if output.len() != 2 * self.layout.predicted.len() {
            return Err(Error::mismatch("network outputs", 2 * self.layout.predicted.len(), output.len()));
        }
        let mut deltas = vec![Point::ZERO; self.layout.keypoints];
        for (i, &k) in self.layout.predicted.iter().enumerate() {
            deltas[k] = Point::new(output[2 * i] as f64, output[2 * i + 1] as f64);
        }
        Correction::new(deltas)
    }

    pub fn save(&self, dir: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
        let mut metadata = extra.clone();
        let list = |v: &[usize]| v.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",");
        metadata.insert("regime".into(), self.regime.to_string());
        metadata.insert("sigma".into(), self.sigma.to_string());
        metadata.insert("bound".into(), self.bound.to_string());
        metadata.insert("test_steps".into(), self.test_steps.to_string());
        metadata.insert("keypoints".into(), self.layout.keypoints.to_string());
        metadata.insert("rendered".into(), list(&self.layout.rendered));
        metadata.insert("predicted".into(), list(&self.layout.predicted));
        metadata.insert("given".into(), list(&self.layout.given));
        let pose = self.mean_pose.points().iter().map(|p| format!("{} {}", p.x, p.y)).collect::<Vec<_>>().join(";");
        metadata.insert("mean_pose".into(), pose);
        save_checkpoint(dir, &Checkpoint { params: self.params.clone(), metadata })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ck = load_checkpoint(dir)?;
        let manifest = dir.join("manifest.toml");
        let get = |key: &str| -> Result<&String> {
            ck.metadata.get(key).ok_or_else(|| Error::format(&manifest, format!("metadata lacks `{key}`")))
        };
        let bad = |key: &str| Error::format(&manifest, format!("malformed metadata `{key}`"));
        let num = |key: &str| -> Result<f64> { get(key)?.parse().map_err(|_| bad(key)) };
        let list = |key: &str| -> Result<Vec<usize>> {
            let s = get(key)?;
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',').map(|v| v.parse().map_err(|_| bad(key))).collect()
        };
        let points = get("mean_pose")?
            .split(';')
            .map(|pair| {
                let (x, y) = pair.split_once(' ').ok_or_else(|| bad("mean_pose"))?;
                Ok(Point::new(x.parse().map_err(|_| bad("mean_pose"))?, y.parse().map_err(|_| bad("mean_pose"))?))
            })
            .collect::<Result<Vec<_>>>()?;
        let layout = KeypointLayout {
            keypoints: get("keypoints")?.parse().map_err(|_| bad("keypoints"))?,
            rendered: list("rendered")?,
            predicted: list("predicted")?,
            given: list("given")?,
        };
        let arch = ck.params.arch();
        if arch.heatmap_channels != layout.rendered.len() {
            return Err(Error::mismatch("rendered keypoints", arch.heatmap_channels, layout.rendered.len()));
        }
        if arch.outputs != 2 * layout.predicted.len() {
            return Err(Error::mismatch("network outputs", arch.outputs, 2 * layout.predicted.len()));
        }
        if points.len() != layout.keypoints {
            return Err(Error::mismatch("mean pose keypoints", layout.keypoints, points.len()));
        }
        Ok(Model {
            regime: get("regime")?.parse()?,
            sigma: num("sigma")?,
            bound: num("bound")?,
            test_steps: get("test_steps")?.parse().map_err(|_| bad("test_steps"))?,
            mean_pose: Pose::annotated(points)?,
            layout,
            params: ck.params,
        })
    }
}

/// See [`Model::initial_pose`].
pub fn initial_pose(mean: &Pose, given: &[(usize, Point)]) -> Result<Pose> {
    if let Some(&(k, _)) = given.iter().find(|(k, _)| *k >= mean.len()) {
        return Err(Error::InvalidArgument(format!("given keypoint {k} out of range")));
    }
    let Some(&(anchor, at)) = given.first() else {
        return Ok(mean.clone());
    };
    let mut pose = mean.translated(at - mean.point(anchor));
    for &(k, p) in given {
        pose.set_point(k, p);
    }
    Ok(pose)
}
