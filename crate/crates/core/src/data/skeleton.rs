//! The seven-keypoint figure used by the synthetic data.

use crate::pose::Pose;

pub const HEAD_TOP: usize = 0;
pub const NECK: usize = 1;
pub const PELVIS: usize = 2;
pub const LEFT_HAND: usize = 3;
pub const RIGHT_HAND: usize = 4;
pub const LEFT_FOOT: usize = 5;
pub const RIGHT_FOOT: usize = 6;

pub const KEYPOINTS: usize = 7;

pub const KEYPOINT_NAMES: [&str; KEYPOINTS] = ["head_top", "neck", "pelvis", "left_hand", "right_hand", "left_foot", "right_foot"];

/// Keypoint pairs joined by a visible body segment (hands and feet attach
/// through hidden elbows and knees).
pub const LIMBS: [[usize; 2]; 6] =
    [[HEAD_TOP, NECK], [NECK, PELVIS], [NECK, LEFT_HAND], [NECK, RIGHT_HAND], [PELVIS, LEFT_FOOT], [PELVIS, RIGHT_FOOT]];

/// The marking point: a point inside the person that is given, never predicted.
pub const MARKING_POINT: usize = PELVIS;

/// Label permutation applied by horizontal mirroring.
pub const MIRROR_SWAP: [usize; KEYPOINTS] = [HEAD_TOP, NECK, PELVIS, RIGHT_HAND, LEFT_HAND, RIGHT_FOOT, LEFT_FOOT];

pub const UPPER_BODY: [usize; 4] = [HEAD_TOP, NECK, LEFT_HAND, RIGHT_HAND];
/// Every predicted keypoint (all but the marking point).
pub const FULL_BODY: [usize; 6] = [HEAD_TOP, NECK, LEFT_HAND, RIGHT_HAND, LEFT_FOOT, RIGHT_FOOT];

pub const REFERENCE_LENGTH_DEFINITION: &str = "euclidean distance neck to head_top of the ground-truth pose";

pub fn reference_length(truth: &Pose) -> f64 {
    truth.point(NECK).dist(truth.point(HEAD_TOP))
}

pub fn index_of(name: &str) -> Option<usize> {
    KEYPOINT_NAMES.iter().position(|&n| n == name)
}
