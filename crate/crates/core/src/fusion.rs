//! Multi-view fusion of per-camera 3D predictions.
//!
//! Every view contributes a full 3D skeleton in the shared world frame. Each
//! predicted joint is projected into every camera that detected that joint in
//! 2D; the mean squared pixel error across those cameras becomes `e[j][i]`,
//! and its inverse the weight of view `i` for joint `j`. The fused joint is
//! the weighted average of the per-view joints.

use serde::{Deserialize, Serialize};

use crate::geometry::{reprojection_error_sq, GeometryError, Point3, Rig};
use crate::skeleton::{Detection2D, Pose3D};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum FusionError {
    #[error("no view predictions")]
    NoViews,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("view {view}: expected {expected} joints, got {actual}")]
    JointCountMismatch {
        view: usize,
        expected: usize,
        actual: usize,
    },
    #[error("weight matrix is {rows}x{cols}, predictions need {joints}x{views}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        joints: usize,
        views: usize,
    },
    #[error("joints {joints:?} have fewer than the required usable views")]
    JointUnresolvable { joints: Vec<usize> },
}

/// One camera's 3D prediction and 2D detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPrediction {
    pub camera_id: String,
    pub pose3d: Pose3D,
    #[serde(rename = "det2d")]
    pub detection2d: Detection2D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightStrategy {
    /// Inverse mean cross-view reprojection error per joint and view.
    #[default]
    PerJointReprojection,
    /// Mean 2D detection confidence of the view.
    Confidence,
    /// Inverse distance from the camera center to the view's predicted root.
    InverseDistance,
    Uniform,
}

impl std::str::FromStr for WeightStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "per_joint_reprojection" | "reprojection" => Ok(Self::PerJointReprojection),
            "confidence" => Ok(Self::Confidence),
            "inverse_distance" => Ok(Self::InverseDistance),
            "uniform" => Ok(Self::Uniform),
            _ => Err(format!(
                "unknown weight strategy `{s}` (expected per_joint_reprojection, confidence, inverse_distance, uniform)"
            )),
        }
    }
}

impl std::fmt::Display for WeightStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerJointReprojection => "per_joint_reprojection",
            Self::Confidence => "confidence",
            Self::InverseDistance => "inverse_distance",
            Self::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub strategy: WeightStrategy,
    /// Floor on `e` before inversion, in px².
    pub epsilon: f64,
    pub min_views: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            strategy: WeightStrategy::PerJointReprojection,
            epsilon: 1e-6,
            min_views: 1,
        }
    }
}

impl FusionConfig {
    pub fn with_strategy(strategy: WeightStrategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }
}

/// Per-joint, per-view weights (`weights[j][i]`) and mean reprojection errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub weights: Vec<Vec<f64>>,
    pub errors: Vec<Vec<f64>>,
}

impl WeightMatrix {
    pub fn joint_count(&self) -> usize {
        self.weights.len()
    }

    pub fn view_count(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Replace the weights of `joints` with 1 for every view whose prediction
    /// of that joint is finite.
    pub fn fallback_uniform(&mut self, joints: &[usize], preds: &[ViewPrediction]) {
        for &j in joints {
            for (i, p) in preds.iter().enumerate() {
                let finite = p.pose3d.joints[j].iter().all(|v| v.is_finite());
                self.weights[j][i] = if finite { 1.0 } else { 0.0 };
            }
        }
    }
}

fn check_preds(preds: &[ViewPrediction]) -> Result<usize, FusionError> {
    let first = preds.first().ok_or(FusionError::NoViews)?;
    let j = first.pose3d.joint_count();
    for (view, p) in preds.iter().enumerate() {
        for actual in [p.pose3d.joint_count(), p.detection2d.joint_count()] {
            if actual != j {
                return Err(FusionError::JointCountMismatch {
                    view,
                    expected: j,
                    actual,
                });
            }
        }
    }
    Ok(j)
}

/// Mean squared reprojection error of every predicted joint over the cameras
/// that detected it. `+∞` marks a joint/view pair with no usable camera.
pub fn per_joint_errors(preds: &[ViewPrediction], rig: &Rig) -> Result<Vec<Vec<f64>>, FusionError> {
    let joints = check_preds(preds)?;
    let cams = preds
        .iter()
        .map(|p| rig.require(&p.camera_id))
        .collect::<Result<Vec<_>, _>>()?;

    let mut errors = vec![vec![f64::INFINITY; preds.len()]; joints];
    for (j, row) in errors.iter_mut().enumerate() {
        for (i, pred) in preds.iter().enumerate() {
            let p = &pred.pose3d.joints[j];
            if !p.iter().all(|v| v.is_finite()) {
                continue;
            }
            let mut sum = 0.0;
            let mut count = 0usize;
            for (cam, obs) in cams.iter().zip(preds.iter().map(|v| &v.detection2d)) {
                if !obs.is_visible(j) {
                    continue;
                }
                match reprojection_error_sq(cam, p, &obs.joints[j]) {
                    Ok(e) => {
                        sum += e;
                        count += 1;
                    }
                    Err(GeometryError::BehindCamera { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            if count > 0 {
                row[i] = sum / count as f64;
            }
        }
    }
    Ok(errors)
}

/// `w = 1 / max(e, epsilon)`, with `+∞` errors mapping to weight 0.
pub fn per_joint_weights(errors: &[Vec<f64>], config: &FusionConfig) -> WeightMatrix {
    let weights = errors
        .iter()
        .map(|row| {
            row.iter()
                .map(|&e| {
                    if e.is_finite() {
                        1.0 / e.max(config.epsilon)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    WeightMatrix {
        weights,
        errors: errors.to_vec(),
    }
}

/// Weights for any strategy. Non-reprojection strategies use one weight per
/// view, masked to zero wherever the reprojection error is `+∞`.
pub fn strategy_weights(
    preds: &[ViewPrediction],
    rig: &Rig,
    errors: &[Vec<f64>],
    config: &FusionConfig,
) -> Result<WeightMatrix, FusionError> {
    let view_weights: Vec<f64> = match config.strategy {
        WeightStrategy::PerJointReprojection => return Ok(per_joint_weights(errors, config)),
        WeightStrategy::Uniform => vec![1.0; preds.len()],
        WeightStrategy::Confidence => preds
            .iter()
            .map(|p| {
                let c = &p.detection2d.confidence;
                if c.is_empty() {
                    0.0
                } else {
                    c.iter().sum::<f64>() / c.len() as f64
                }
            })
            .collect(),
        WeightStrategy::InverseDistance => preds
            .iter()
            .map(|p| {
                let cam = rig.require(&p.camera_id)?;
                let root = root_estimate(&p.pose3d);
                let d = (root - cam.center()).norm();
                Ok(if d.is_finite() { 1.0 / d.max(1e-9) } else { 0.0 })
            })
            .collect::<Result<_, FusionError>>()?,
    };
    let weights = errors
        .iter()
        .map(|row| {
            row.iter()
                .zip(&view_weights)
                .map(|(e, w)| if e.is_finite() { *w } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(WeightMatrix {
        weights,
        errors: errors.to_vec(),
    })
}

fn root_estimate(pose: &Pose3D) -> Point3 {
    let finite: Vec<_> = pose
        .joints
        .iter()
        .filter(|p| p.iter().all(|v| v.is_finite()))
        .collect();
    if finite.is_empty() {
        return Point3::repeat(f64::NAN);
    }
    finite.iter().copied().sum::<Point3>() / finite.len() as f64
}

/// Per-joint weighted average of the view predictions.
pub fn fuse(
    preds: &[ViewPrediction],
    weights: &WeightMatrix,
    config: &FusionConfig,
) -> Result<Pose3D, FusionError> {
    let joints = check_preds(preds)?;
    if weights.joint_count() != joints || weights.weights.iter().any(|r| r.len() != preds.len()) {
        return Err(FusionError::ShapeMismatch {
            rows: weights.joint_count(),
            cols: weights.view_count(),
            joints,
            views: preds.len(),
        });
    }

    let mut fused = Vec::with_capacity(joints);
    let mut mass = Vec::with_capacity(joints);
    let mut unresolved = Vec::new();
    for (j, row) in weights.weights.iter().enumerate() {
        let usable = row.iter().filter(|w| **w > 0.0).count();
        let total: f64 = row.iter().filter(|w| **w > 0.0).sum();
        if usable < config.min_views || total <= 0.0 {
            unresolved.push(j);
            fused.push(Point3::repeat(f64::NAN));
            mass.push(0.0);
            continue;
        }
        // Average offsets from one usable view so agreeing views fuse exactly.
        let anchor = row
            .iter()
            .zip(preds)
            .find(|(w, _)| **w > 0.0)
            .map(|(_, p)| p.pose3d.joints[j])
            .expect("at least one usable view");
        let mut acc = Point3::zeros();
        for (w, pred) in row.iter().zip(preds) {
            if *w > 0.0 {
                acc += (pred.pose3d.joints[j] - anchor) * (*w / total);
            }
        }
        fused.push(anchor + acc);
        mass.push(total);
    }
    if !unresolved.is_empty() {
        return Err(FusionError::JointUnresolvable { joints: unresolved });
    }
    let max_mass = mass.iter().cloned().fold(0.0, f64::max);
    let confidence = mass.iter().map(|m| m / max_mass).collect();
    Ok(Pose3D {
        joints: fused,
        confidence,
        source_camera: None,
    })
}

/// Errors, weights, and fused pose for one frame. Joints with no usable view
/// are left to the caller (see [`fuse_frame_with_fallback`]).
pub fn fuse_frame(
    preds: &[ViewPrediction],
    rig: &Rig,
    config: &FusionConfig,
) -> Result<(Pose3D, WeightMatrix), FusionError> {
    let errors = per_joint_errors(preds, rig)?;
    let weights = strategy_weights(preds, rig, &errors, config)?;
    let pose = fuse(preds, &weights, config)?;
    Ok((pose, weights))
}

/// Like [`fuse_frame`], but unresolvable joints fall back to the uniform
/// average of all finite view predictions.
pub fn fuse_frame_with_fallback(
    preds: &[ViewPrediction],
    rig: &Rig,
    config: &FusionConfig,
) -> Result<(Pose3D, WeightMatrix), FusionError> {
    let errors = per_joint_errors(preds, rig)?;
    let mut weights = strategy_weights(preds, rig, &errors, config)?;
    match fuse(preds, &weights, config) {
        Ok(pose) => Ok((pose, weights)),
        Err(FusionError::JointUnresolvable { joints }) => {
            weights.fallback_uniform(&joints, preds);
            let relaxed = FusionConfig {
                min_views: 1,
                ..*config
            };
            let pose = fuse(preds, &weights, &relaxed)?;
            Ok((pose, weights))
        }
        Err(e) => Err(e),
    }
}
