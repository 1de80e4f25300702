//! Joint conventions and pose containers.

use serde::{Deserialize, Serialize};

use crate::geometry::{Point2, Point3};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("joint index {index} out of range for {joints} joints")]
    JointOutOfRange { index: usize, joints: usize },
    #[error("invalid joint convention: {0}")]
    InvalidConvention(String),
    #[error("joint count mismatch: expected {expected}, got {actual}")]
    JointCountMismatch { expected: usize, actual: usize },
}

/// A bone as an ordered pair of joint indices.
pub type Bone = (usize, usize);

/// Left and right bones that should have equal length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetricPair {
    pub left: Bone,
    pub right: Bone,
}

/// Ordered joint names, the root joint, and the symmetric limb pairs.
///
/// On disk the pairs are written as `[[uL, vL], [uR, vR]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConventionRecord", into = "ConventionRecord")]
pub struct JointConvention {
    joint_names: Vec<String>,
    pelvis_index: usize,
    symmetric_pairs: Vec<SymmetricPair>,
}

#[derive(Serialize, Deserialize)]
struct ConventionRecord {
    joint_names: Vec<String>,
    pelvis_index: usize,
    symmetric_bone_pairs: Vec<[[usize; 2]; 2]>,
}

impl TryFrom<ConventionRecord> for JointConvention {
    type Error = SkeletonError;
    fn try_from(r: ConventionRecord) -> Result<Self, Self::Error> {
        let pairs = r
            .symmetric_bone_pairs
            .iter()
            .map(|[l, rr]| SymmetricPair {
                left: (l[0], l[1]),
                right: (rr[0], rr[1]),
            })
            .collect();
        JointConvention::new(r.joint_names, r.pelvis_index, pairs)
    }
}

impl From<JointConvention> for ConventionRecord {
    fn from(c: JointConvention) -> Self {
        ConventionRecord {
            joint_names: c.joint_names,
            pelvis_index: c.pelvis_index,
            symmetric_bone_pairs: c
                .symmetric_pairs
                .iter()
                .map(|p| [[p.left.0, p.left.1], [p.right.0, p.right.1]])
                .collect(),
        }
    }
}

/// Joint names of the 17-joint Human3.6M skeleton, in index order.
pub const H36M_JOINTS: [&str; 17] = [
    "pelvis",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
];

impl JointConvention {
    pub fn new(
        joint_names: Vec<String>,
        pelvis_index: usize,
        symmetric_pairs: Vec<SymmetricPair>,
    ) -> Result<Self, SkeletonError> {
        let j = joint_names.len();
        if j == 0 {
            return Err(SkeletonError::InvalidConvention("no joints".into()));
        }
        if pelvis_index >= j {
            return Err(SkeletonError::JointOutOfRange {
                index: pelvis_index,
                joints: j,
            });
        }
        for (k, p) in symmetric_pairs.iter().enumerate() {
            for idx in [p.left.0, p.left.1, p.right.0, p.right.1] {
                if idx >= j {
                    return Err(SkeletonError::JointOutOfRange { index: idx, joints: j });
                }
            }
            if p.left.0 == p.left.1 || p.right.0 == p.right.1 {
                return Err(SkeletonError::InvalidConvention(format!(
                    "pair {k}: a bone joins a joint to itself"
                )));
            }
            let l = [p.left.0, p.left.1];
            if l.contains(&p.right.0) || l.contains(&p.right.1) {
                return Err(SkeletonError::InvalidConvention(format!(
                    "pair {k}: left and right bones share a joint"
                )));
            }
        }
        Ok(Self {
            joint_names,
            pelvis_index,
            symmetric_pairs,
        })
    }

    /// 17-joint Human3.6M convention. Pairs are upper arm, lower arm, upper
    /// leg, lower leg (shoulder–elbow, elbow–wrist, hip–knee, knee–ankle).
    pub fn h36m() -> Self {
        Self {
            joint_names: H36M_JOINTS.iter().map(|s| s.to_string()).collect(),
            pelvis_index: 0,
            symmetric_pairs: vec![
                SymmetricPair { left: (11, 12), right: (14, 15) },
                SymmetricPair { left: (12, 13), right: (15, 16) },
                SymmetricPair { left: (4, 5), right: (1, 2) },
                SymmetricPair { left: (5, 6), right: (2, 3) },
            ],
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn pelvis_index(&self) -> usize {
        self.pelvis_index
    }

    pub fn symmetric_pairs(&self) -> &[SymmetricPair] {
        &self.symmetric_pairs
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }
}

impl Default for JointConvention {
    fn default() -> Self {
        Self::h36m()
    }
}

/// J world-frame joints in meters with per-joint confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub joints: Vec<Point3>,
    #[serde(rename = "conf")]
    pub confidence: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_camera: Option<String>,
}

impl Pose3D {
    /// Pose with unit confidence on every joint.
    pub fn new(joints: Vec<Point3>) -> Self {
        let confidence = vec![1.0; joints.len()];
        Self {
            joints,
            confidence,
            source_camera: None,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn with_source(mut self, camera_id: impl Into<String>) -> Self {
        self.source_camera = Some(camera_id.into());
        self
    }
}

/// J pixel-frame joints with confidence and visibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub joints: Vec<Point2>,
    #[serde(rename = "conf")]
    pub confidence: Vec<f64>,
    pub visible: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
}

impl Detection2D {
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn is_visible(&self, j: usize) -> bool {
        self.visible.get(j).copied().unwrap_or(false)
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }
}

/// Euclidean distance between joints `a` and `b`.
pub fn bone_length(pose: &Pose3D, a: usize, b: usize) -> Result<f64, SkeletonError> {
    let j = pose.joint_count();
    for idx in [a, b] {
        if idx >= j {
            return Err(SkeletonError::JointOutOfRange { index: idx, joints: j });
        }
    }
    Ok((pose.joints[a] - pose.joints[b]).norm())
}

/// Left-minus-right length difference for every symmetric pair, in meters.
///
/// Panics if the pose has fewer joints than the convention references.
pub fn symmetry_residuals(pose: &Pose3D, conv: &JointConvention) -> Vec<f64> {
    let d = |(a, b): Bone| (pose.joints[a] - pose.joints[b]).norm();
    conv.symmetric_pairs
        .iter()
        .map(|p| d(p.left) - d(p.right))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFiniteJoint { joint: usize },
    ConfidenceOutOfRange { joint: usize, value: f64 },
    ConfidenceLength { expected: usize, actual: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonFiniteJoint { joint } => write!(f, "joint {joint}: non-finite coordinate"),
            Violation::ConfidenceOutOfRange { joint, value } => {
                write!(f, "joint {joint}: confidence {value} outside [0, 1]")
            }
            Violation::ConfidenceLength { expected, actual } => {
                write!(f, "confidence has {actual} entries, expected {expected}")
            }
        }
    }
}

/// Report non-finite coordinates and out-of-range confidences.
pub fn validate(pose: &Pose3D) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if pose.confidence.len() != pose.joints.len() {
        out.push(Violation::ConfidenceLength {
            expected: pose.joints.len(),
            actual: pose.confidence.len(),
        });
    }
    for (joint, p) in pose.joints.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            out.push(Violation::NonFiniteJoint { joint });
        }
    }
    for (joint, &value) in pose.confidence.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            out.push(Violation::ConfidenceOutOfRange { joint, value });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
