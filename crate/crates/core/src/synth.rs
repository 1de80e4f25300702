//! Deterministic multi-camera scene simulator.
//!
//! Produces ground-truth skeleton sequences from an articulated body model,
//! a ring of cameras looking at the subject, and per-view predictions that
//! carry the typical monocular failure modes: a per-view scale error along
//! the viewing rays (a smaller person closer to the camera looks the same as
//! a larger one further away), joint noise, and hallucinated joints in
//! occluded views. Cameras can also be served frames from the wrong instant.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::fusion::ViewPrediction;
use crate::geometry::{
    axis_angle, transform_to_camera, transform_to_world, Camera, CameraExtrinsics, CameraIntrinsics,
    GeometryError, Point2, Point3, Rig,
};
use crate::skeleton::{Detection2D, JointConvention, Pose3D};

pub const FORMAT_VERSION: u32 = 1;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid rig spec: {0}")]
    InvalidRig(String),
    #[error("invalid corruption spec: {0}")]
    InvalidCorruption(String),
    #[error("invalid motion spec: {0}")]
    InvalidMotion(String),
    #[error("camera {index} sits on its look-at point or looks straight up/down")]
    DegenerateLookAt { index: usize },
    #[error("cannot occlude {count} views out of {views}")]
    TooManyOccluded { count: usize, views: usize },
    #[error("sequence has {0} frames, need at least 5 for desync")]
    SequenceTooShort(usize),
    #[error("frame {frame} has no view for camera `{camera}`")]
    MissingView { frame: u64, camera: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigSpec {
    pub camera_count: usize,
    /// Ring radius in meters.
    pub radius: f64,
    /// Camera height above the floor in meters.
    pub height: f64,
    pub look_at: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            camera_count: 4,
            radius: 4.0,
            height: 1.8,
            look_at: [0.0, 0.0, 1.0],
            fx: 1000.0,
            fy: 1000.0,
            image_width: 1000,
            image_height: 1000,
        }
    }
}

/// Evenly spaced cameras on a horizontal circle, all facing `look_at`.
///
/// Camera frames are x right, y down, z forward.
pub fn make_rig(spec: &RigSpec) -> Result<Rig, SynthError> {
    if spec.camera_count < 1 {
        return Err(SynthError::InvalidRig("camera_count must be at least 1".into()));
    }
    if !(spec.radius > 0.0 && spec.radius.is_finite()) {
        return Err(SynthError::InvalidRig(format!("radius must be positive, got {}", spec.radius)));
    }
    let intrinsics = CameraIntrinsics::new(
        spec.fx,
        spec.fy,
        spec.image_width as f64 / 2.0,
        spec.image_height as f64 / 2.0,
        spec.image_width,
        spec.image_height,
    )?;
    let target = Point3::from(spec.look_at);
    let up = Vector3::z();
    let mut cameras = Vec::with_capacity(spec.camera_count);
    for i in 0..spec.camera_count {
        let a = i as f64 * std::f64::consts::TAU / spec.camera_count as f64;
        let center = Point3::new(
            target.x + spec.radius * a.cos(),
            target.y + spec.radius * a.sin(),
            spec.height,
        );
        let dir = target - center;
        if dir.norm() < 1e-9 {
            return Err(SynthError::DegenerateLookAt { index: i });
        }
        let fwd = dir.normalize();
        let right = fwd.cross(&up);
        if right.norm() < 1e-9 {
            return Err(SynthError::DegenerateLookAt { index: i });
        }
        let right = right.normalize();
        let down = fwd.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let extrinsics = CameraExtrinsics::from_center(rot, center)?;
        cameras.push(Camera::new(format!("cam{i}"), intrinsics, extrinsics));
    }
    Ok(Rig::new(cameras)?)
}

/// Articulated 17-joint body in the Human3.6M joint order.
///
/// The body frame is x = subject's left, y = forward, z = up; rest directions
/// describe a T-pose. Each non-root joint rotates its bone relative to the
/// parent's accumulated orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    pub convention: JointConvention,
    pub parents: Vec<Option<usize>>,
    pub rest_directions: Vec<Vector3<f64>>,
    /// Default length of the bone ending at each joint (0 for the root).
    pub bone_lengths: Vec<f64>,
    /// Symmetric angle bound per joint and axis, radians.
    pub angle_ranges: Vec<[f64; 3]>,
    /// Bound on the root's heading, radians.
    pub yaw_range: f64,
    /// `(left, right)` joints whose incoming bones mirror each other.
    pub mirror: Vec<(usize, usize)>,
}

impl BodyModel {
    pub fn h36m() -> Self {
        let l = Vector3::x();
        let r = -Vector3::x();
        let up = Vector3::z();
        let down = -Vector3::z();
        let parents = vec![
            None,
            Some(0),
            Some(1),
            Some(2),
            Some(0),
            Some(4),
            Some(5),
            Some(0),
            Some(7),
            Some(8),
            Some(9),
            Some(8),
            Some(11),
            Some(12),
            Some(8),
            Some(14),
            Some(15),
        ];
        let rest_directions = vec![
            Vector3::zeros(),
            r,
            down,
            down,
            l,
            down,
            down,
            up,
            up,
            up,
            up,
            l,
            l,
            l,
            r,
            r,
            r,
        ];
        let bone_lengths = vec![
            0.0, 0.12, 0.44, 0.43, 0.12, 0.44, 0.43, 0.24, 0.25, 0.12, 0.12, 0.16, 0.28, 0.25, 0.16,
            0.28, 0.25,
        ];
        let angle_ranges = vec![
            [0.0; 3],
            [0.0; 3],
            [0.6, 0.3, 0.2],
            [0.7, 0.0, 0.0],
            [0.0; 3],
            [0.6, 0.3, 0.2],
            [0.7, 0.0, 0.0],
            [0.2, 0.2, 0.2],
            [0.15, 0.15, 0.15],
            [0.2, 0.2, 0.0],
            [0.2, 0.2, 0.3],
            [0.0, 0.1, 0.1],
            [0.8, 0.8, 0.8],
            [0.0, 0.8, 0.8],
            [0.0, 0.1, 0.1],
            [0.8, 0.8, 0.8],
            [0.0, 0.8, 0.8],
        ];
        Self {
            convention: JointConvention::h36m(),
            parents,
            rest_directions,
            bone_lengths,
            angle_ranges,
            yaw_range: std::f64::consts::PI,
            mirror: vec![(4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16)],
        }
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    /// Forward kinematics. Parents precede children in joint order.
    pub fn pose_from_angles(&self, root: Point3, yaw: f64, angles: &[[f64; 3]], bone_lengths: &[f64]) -> Pose3D {
        let n = self.joint_count();
        let mut orient = vec![Matrix3::identity(); n];
        let mut joints = vec![root; n];
        orient[0] = axis_angle(&Vector3::z(), yaw);
        for j in 1..n {
            let parent = self.parents[j].expect("non-root joint has a parent");
            let [ax, ay, az] = angles[j];
            let local = axis_angle(&Vector3::x(), ax) * axis_angle(&Vector3::y(), ay) * axis_angle(&Vector3::z(), az);
            orient[j] = orient[parent] * local;
            joints[j] = joints[parent] + orient[j] * self.rest_directions[j] * bone_lengths[j];
        }
        Pose3D::new(joints)
    }

    /// Copy right-side bone lengths onto the left side.
    pub fn symmetrize(&self, lengths: &mut [f64]) {
        for &(left, right) in &self.mirror {
            lengths[left] = lengths[right];
        }
    }
}

/// Random forward-kinematic pose with angles drawn uniformly within the
/// model's bounds. The root sits at `root`.
pub fn sample_pose<R: Rng + ?Sized>(
    rng: &mut R,
    model: &BodyModel,
    bone_lengths: &[f64],
    root: Point3,
    symmetric: bool,
) -> Pose3D {
    let mut lengths = bone_lengths.to_vec();
    if symmetric {
        model.symmetrize(&mut lengths);
    }
    let mut draw = |bound: f64| if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 };
    let yaw = draw(model.yaw_range);
    let angles: Vec<[f64; 3]> = model
        .angle_ranges
        .iter()
        .map(|r| [draw(r[0]), draw(r[1]), draw(r[2])])
        .collect();
    model.pose_from_angles(root, yaw, &angles, &lengths)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    /// Every joint angle follows its own sinusoid; the root wanders.
    #[default]
    Sinusoidal,
    /// One fixed pose for the whole sequence.
    Static,
    /// A fixed pose translated at constant `root_velocity`.
    Linear,
}

impl std::str::FromStr for MotionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sinusoidal" => Ok(Self::Sinusoidal),
            "static" => Ok(Self::Static),
            "linear" => Ok(Self::Linear),
            _ => Err(format!("unknown motion `{s}` (expected sinusoidal, static, linear)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionSpec {
    pub kind: MotionKind,
    pub fps: f64,
    /// Joint-angle oscillation frequencies are drawn from this range, Hz.
    pub frequency_hz: [f64; 2],
    /// Scales every joint-angle bound.
    pub amplitude_scale: f64,
    /// Root translation velocity, m/s (linear motion).
    pub root_velocity: [f64; 3],
    /// Amplitude of the root's sinusoidal wander, m.
    pub root_wander: f64,
    /// Relative per-bone jitter applied to the default bone lengths.
    pub bone_length_jitter: f64,
    /// Force equal left and right limb lengths.
    pub symmetric: bool,
    pub label: String,
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            kind: MotionKind::Sinusoidal,
            fps: 50.0,
            frequency_hz: [0.2, 1.0],
            amplitude_scale: 1.0,
            root_velocity: [0.0; 3],
            root_wander: 0.3,
            bone_length_jitter: 0.05,
            symmetric: true,
            label: "synthetic".into(),
        }
    }
}

impl MotionSpec {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidMotion(m));
        if self.fps.is_nan() || self.fps <= 0.0 {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        let [lo, hi] = self.frequency_hz;
        if !(lo >= 0.0 && hi >= lo) {
            return bad(format!("bad frequency range [{lo}, {hi}]"));
        }
        if [self.amplitude_scale, self.root_wander].iter().any(|v| v.is_nan() || *v < 0.0) {
            return bad("amplitudes must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.bone_length_jitter) {
            return bad(format!("bone_length_jitter must be in [0, 1), got {}", self.bone_length_jitter));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    /// Detection noise, pixels.
    pub sigma_2d: f64,
    /// Per-joint prediction noise, mm.
    pub sigma_3d: f64,
    /// Per-view scale factor range applied along the viewing rays.
    pub ray_scale_range: [f64; 2],
    pub occluded_view_count: usize,
    pub occluded_joint_fraction: f64,
    /// Extra noise on occluded joints, mm.
    pub sigma_occ: f64,
    pub detection_drop_prob: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            sigma_2d: 3.0,
            sigma_3d: 20.0,
            ray_scale_range: [0.9, 1.1],
            occluded_view_count: 3,
            occluded_joint_fraction: 0.4,
            sigma_occ: 150.0,
            detection_drop_prob: 0.5,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    /// No noise, no scale error, no occlusion.
    pub fn noise_free(seed: u64) -> Self {
        Self {
            sigma_2d: 0.0,
            sigma_3d: 0.0,
            ray_scale_range: [1.0, 1.0],
            occluded_view_count: 0,
            occluded_joint_fraction: 0.0,
            sigma_occ: 0.0,
            detection_drop_prob: 0.0,
            seed,
        }
    }

    pub fn validate(&self, camera_count: usize) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidCorruption(m));
        for (name, v) in [("sigma_2d", self.sigma_2d), ("sigma_3d", self.sigma_3d), ("sigma_occ", self.sigma_occ)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("occluded_joint_fraction", self.occluded_joint_fraction),
            ("detection_drop_prob", self.detection_drop_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        let [lo, hi] = self.ray_scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("bad ray_scale_range [{lo}, {hi}]"));
        }
        if self.occluded_view_count > camera_count {
            return Err(SynthError::TooManyOccluded {
                count: self.occluded_view_count,
                views: camera_count,
            });
        }
        Ok(())
    }
}

/// One time instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: u64,
    pub gt: Pose3D,
    pub views: Vec<ViewPrediction>,
    pub occluded_views: Vec<String>,
    pub occluded_joints: BTreeMap<String, Vec<usize>>,
    /// Frame offset actually served per desynchronized camera.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub desync: BTreeMap<String, i64>,
    /// A desync offset was clamped at the sequence boundary.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub boundary: bool,
}

impl Frame {
    pub fn view(&self, camera_id: &str) -> Option<&ViewPrediction> {
        self.views.iter().find(|v| v.camera_id == camera_id)
    }

    /// Copy of the frame keeping only the listed cameras.
    pub fn with_cameras(&self, keep: &[&str]) -> Frame {
        let mut f = self.clone();
        f.views.retain(|v| keep.contains(&v.camera_id.as_str()));
        f.occluded_views.retain(|c| keep.contains(&c.as_str()));
        f.occluded_joints.retain(|c, _| keep.contains(&c.as_str()));
        f.desync.retain(|c, _| keep.contains(&c.as_str()));
        f
    }
}

/// A view prediction and the joints that were corrupted or lost in it.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedView {
    pub prediction: ViewPrediction,
    pub occluded_joints: Vec<usize>,
}

fn gaussian3<R: Rng + ?Sized>(rng: &mut R, sigma_m: f64) -> Vector3<f64> {
    let n: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    Vector3::from(n) * sigma_m
}

fn bbox(det: &Detection2D) -> Option<[f64; 4]> {
    let pts: Vec<&Point2> = det.joints.iter().zip(&det.visible).filter(|(_, v)| **v).map(|(p, _)| p).collect();
    if pts.is_empty() {
        return None;
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let (mx, my) = (0.1 * (x1 - x0), 0.1 * (y1 - y0));
    Some([x0 - mx, y0 - my, x1 - x0 + 2.0 * mx, y1 - y0 + 2.0 * my])
}

/// Corrupt a random subset of joints in one view: extra 3D noise and
/// probabilistic loss of the 2D detection. Returns the affected joints.
fn occlude_view<R: Rng + ?Sized>(view: &mut ViewPrediction, spec: &CorruptionSpec, rng: &mut R) -> Vec<usize> {
    let j = view.pose3d.joints.len();
    let count = ((spec.occluded_joint_fraction * j as f64).round() as usize).min(j);
    let mut chosen = sample(rng, j, count).into_vec();
    chosen.sort_unstable();
    for &idx in &chosen {
        view.pose3d.joints[idx] += gaussian3(rng, spec.sigma_occ / 1000.0);
        view.pose3d.confidence[idx] = 0.5;
        view.detection2d.confidence[idx] = 0.5;
        if rng.random_bool(spec.detection_drop_prob) {
            view.detection2d.visible[idx] = false;
            view.detection2d.confidence[idx] = 0.0;
        }
    }
    view.detection2d.bbox = bbox(&view.detection2d);
    chosen
}

/// Simulate one camera's 3D prediction and 2D detection of `gt`.
pub fn corrupt_view<R: Rng + ?Sized>(
    gt: &Pose3D,
    camera: &Camera,
    spec: &CorruptionSpec,
    occluded: bool,
    rng: &mut R,
) -> CorruptedView {
    let [lo, hi] = spec.ray_scale_range;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let sigma_3d = spec.sigma_3d / 1000.0;
    let joints: Vec<Point3> = gt
        .joints
        .iter()
        .map(|p| {
            let scaled = scale_along_ray(camera, p, scale);
            scaled + gaussian3(rng, sigma_3d)
        })
        .collect();
    let j = joints.len();

    let mut det = Detection2D {
        joints: Vec::with_capacity(j),
        confidence: vec![1.0; j],
        visible: vec![true; j],
        bbox: None,
    };
    let mut behind = Vec::new();
    for (idx, p) in gt.joints.iter().enumerate() {
        let noise = Point2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * spec.sigma_2d;
        match camera.project(p) {
            Ok(px) => det.joints.push(px + noise),
            Err(_) => {
                det.joints.push(Point2::zeros());
                det.visible[idx] = false;
                det.confidence[idx] = 0.0;
                behind.push(idx);
            }
        }
    }
    det.bbox = bbox(&det);

    let mut view = ViewPrediction {
        camera_id: camera.id.clone(),
        pose3d: Pose3D::new(joints).with_source(camera.id.clone()),
        detection2d: det,
    };
    let mut mask = if occluded { occlude_view(&mut view, spec, rng) } else { Vec::new() };
    mask.extend(behind);
    mask.sort_unstable();
    mask.dedup();
    CorruptedView {
        prediction: view,
        occluded_joints: mask,
    }
}

/// Move `p` along the ray from `camera` so its camera-frame depth scales by
/// `scale`. The pixel it projects to is unchanged.
pub fn scale_along_ray(camera: &Camera, p: &Point3, scale: f64) -> Point3 {
    if scale == 1.0 {
        return *p;
    }
    let q = transform_to_camera(&camera.extrinsics, p);
    transform_to_world(&camera.extrinsics, &(q * scale))
}

/// Occlude a uniformly random subset of `count` views of `frame`.
pub fn occlude_views<R: Rng + ?Sized>(
    frame: &Frame,
    count: usize,
    spec: &CorruptionSpec,
    rng: &mut R,
) -> Result<Frame, SynthError> {
    let n = frame.views.len();
    if count > n {
        return Err(SynthError::TooManyOccluded { count, views: n });
    }
    let mut out = frame.clone();
    let mut picked = sample(rng, n, count).into_vec();
    picked.sort_unstable();
    for i in picked {
        let view = &mut out.views[i];
        let id = view.camera_id.clone();
        let chosen = occlude_view(view, spec, rng);
        let mask = out.occluded_joints.entry(id.clone()).or_default();
        mask.extend(chosen);
        mask.sort_unstable();
        mask.dedup();
        if !out.occluded_views.contains(&id) {
            out.occluded_views.push(id);
        }
    }
    let order: Vec<&str> = frame.views.iter().map(|v| v.camera_id.as_str()).collect();
    out.occluded_views
        .sort_by_key(|c| order.iter().position(|o| o == c).unwrap_or(usize::MAX));
    Ok(out)
}

/// Timing error of a desynchronized camera, uniform over {−2, −1, +1, +2} frames.
pub fn desync_offset<R: Rng + ?Sized>(rng: &mut R) -> i64 {
    const OFFSETS: [i64; 4] = [-2, -1, 1, 2];
    OFFSETS[rng.random_range(0..4)]
}

/// Serve each desynchronized camera's view from frame `t + e`, with a fresh
/// offset per frame and camera, clamped to the sequence.
pub fn apply_desync<R: Rng + ?Sized>(
    sequence: &[Frame],
    desynced: &[&str],
    rng: &mut R,
) -> Result<Vec<Frame>, SynthError> {
    let n = sequence.len();
    if n < 5 {
        return Err(SynthError::SequenceTooShort(n));
    }
    let mut out = sequence.to_vec();
    for (t, frame) in out.iter_mut().enumerate() {
        for &cam in desynced {
            let e = desync_offset(rng);
            let target = t as i64 + e;
            let src = target.clamp(0, n as i64 - 1);
            if src != target {
                frame.boundary = true;
            }
            let source = &sequence[src as usize];
            let view = source.view(cam).ok_or_else(|| SynthError::MissingView {
                frame: source.frame_id,
                camera: cam.to_string(),
            })?;
            let slot = frame
                .views
                .iter_mut()
                .find(|v| v.camera_id == cam)
                .ok_or_else(|| SynthError::MissingView {
                    frame: sequence[t].frame_id,
                    camera: cam.to_string(),
                })?;
            *slot = view.clone();
            let was_occluded = source.occluded_views.iter().any(|c| c == cam);
            frame.occluded_views.retain(|c| c != cam);
            if was_occluded {
                frame.occluded_views.push(cam.to_string());
            }
            match source.occluded_joints.get(cam) {
                Some(m) => {
                    frame.occluded_joints.insert(cam.to_string(), m.clone());
                }
                None => {
                    frame.occluded_joints.remove(cam);
                }
            }
            frame.desync.insert(cam.to_string(), src - t as i64);
        }
        let order: Vec<String> = frame.views.iter().map(|v| v.camera_id.clone()).collect();
        frame
            .occluded_views
            .sort_by_key(|c| order.iter().position(|o| o == c).unwrap_or(usize::MAX));
    }
    Ok(out)
}

/// Everything needed to regenerate a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub frames: usize,
    pub label: String,
    pub convention: String,
    pub rig: RigSpec,
    pub motion: MotionSpec,
    pub corruption: CorruptionSpec,
    #[serde(default)]
    pub boundary_frames: Vec<u64>,
}

/// Per-joint sinusoid parameters for one sequence.
struct Trajectory {
    lengths: Vec<f64>,
    center: Vec<[f64; 3]>,
    amplitude: Vec<[f64; 3]>,
    freq: Vec<[f64; 3]>,
    phase: Vec<[f64; 3]>,
    yaw0: f64,
    root_freq: [f64; 2],
    root_phase: [f64; 2],
}

impl Trajectory {
    fn draw<R: Rng + ?Sized>(rng: &mut R, model: &BodyModel, motion: &MotionSpec) -> Self {
        let mut lengths: Vec<f64> = model
            .bone_lengths
            .iter()
            .map(|l| {
                let j = motion.bone_length_jitter;
                let f = if j > 0.0 { rng.random_range(1.0 - j..=1.0 + j) } else { 1.0 };
                l * f
            })
            .collect();
        if motion.symmetric {
            model.symmetrize(&mut lengths);
        }
        let [flo, fhi] = motion.frequency_hz;
        let n = model.joint_count();
        let mut center = Vec::with_capacity(n);
        let mut amplitude = Vec::with_capacity(n);
        let mut freq = Vec::with_capacity(n);
        let mut phase = Vec::with_capacity(n);
        for r in &model.angle_ranges {
            let mut c = [0.0; 3];
            let mut a = [0.0; 3];
            let mut f = [0.0; 3];
            let mut p = [0.0; 3];
            for ax in 0..3 {
                let bound = r[ax] * motion.amplitude_scale;
                // Center plus swing stays within the bound.
                let split: f64 = rng.random_range(0.0..=1.0);
                c[ax] = bound * (1.0 - split) * rng.random_range(-1.0..=1.0);
                a[ax] = bound * split;
                f[ax] = if fhi > flo { rng.random_range(flo..=fhi) } else { flo };
                p[ax] = rng.random_range(0.0..std::f64::consts::TAU);
            }
            center.push(c);
            amplitude.push(a);
            freq.push(f);
            phase.push(p);
        }
        let yaw0 = rng.random_range(-model.yaw_range..=model.yaw_range);
        let root_freq = [rng.random_range(0.05..=0.2), rng.random_range(0.05..=0.2)];
        let root_phase = [
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
        ];
        Self {
            lengths,
            center,
            amplitude,
            freq,
            phase,
            yaw0,
            root_freq,
            root_phase,
        }
    }

    fn pose_at(&self, model: &BodyModel, motion: &MotionSpec, base: Point3, t: f64) -> Pose3D {
        let tau = std::f64::consts::TAU;
        let moving = motion.kind == MotionKind::Sinusoidal;
        let angles: Vec<[f64; 3]> = (0..model.joint_count())
            .map(|j| {
                std::array::from_fn(|ax| {
                    let swing = if moving {
                        (tau * self.freq[j][ax] * t + self.phase[j][ax]).sin()
                    } else {
                        self.phase[j][ax].sin()
                    };
                    self.center[j][ax] + self.amplitude[j][ax] * swing
                })
            })
            .collect();
        let root = match motion.kind {
            MotionKind::Sinusoidal => {
                base + Vector3::new(
                    motion.root_wander * (tau * self.root_freq[0] * t + self.root_phase[0]).sin(),
                    motion.root_wander * (tau * self.root_freq[1] * t + self.root_phase[1]).sin(),
                    0.0,
                )
            }
            MotionKind::Static => base,
            MotionKind::Linear => base + Vector3::from(motion.root_velocity) * t,
        };
        let yaw = if moving { self.yaw0 + 0.2 * (tau * 0.1 * t).sin() } else { self.yaw0 };
        model.pose_from_angles(root, yaw, &angles, &self.lengths)
    }
}

/// Generate `length` frames. Ground-truth motion and per-view corruption use
/// separate streams of the same seed, so changing the corruption leaves the
/// ground truth untouched.
pub fn generate_sequence(
    rig: &Rig,
    motion: &MotionSpec,
    corruption: &CorruptionSpec,
    rig_spec: &RigSpec,
    length: usize,
) -> Result<(Vec<Frame>, Manifest), SynthError> {
    motion.validate()?;
    corruption.validate(rig.len())?;
    let model = BodyModel::h36m();

    let mut motion_rng = ChaCha8Rng::seed_from_u64(corruption.seed);
    motion_rng.set_stream(0);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(corruption.seed);
    noise_rng.set_stream(1);

    let traj = Trajectory::draw(&mut motion_rng, &model, motion);
    // Pelvis height that puts the ankles near the floor in the T-pose.
    let hip_height = traj.lengths[2] + traj.lengths[3];
    let base = Point3::new(rig_spec.look_at[0], rig_spec.look_at[1], hip_height);

    let mut frames = Vec::with_capacity(length);
    for t in 0..length {
        let gt = traj.pose_at(&model, motion, base, t as f64 / motion.fps);
        let mut views = Vec::with_capacity(rig.len());
        let mut occluded_joints = BTreeMap::new();
        for cam in rig.cameras() {
            let cv = corrupt_view(&gt, cam, corruption, false, &mut noise_rng);
            if !cv.occluded_joints.is_empty() {
                occluded_joints.insert(cam.id.clone(), cv.occluded_joints);
            }
            views.push(cv.prediction);
        }
        let frame = Frame {
            frame_id: t as u64,
            gt,
            views,
            occluded_views: Vec::new(),
            occluded_joints,
            desync: BTreeMap::new(),
            boundary: false,
        };
        frames.push(occlude_views(&frame, corruption.occluded_view_count, corruption, &mut noise_rng)?);
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        seed: corruption.seed,
        frames: length,
        label: motion.label.clone(),
        convention: "h36m-17".into(),
        rig: rig_spec.clone(),
        motion: motion.clone(),
        corruption: corruption.clone(),
        boundary_frames: Vec::new(),
    };
    Ok((frames, manifest))
}

/// Build the rig from `rig_spec` and generate a sequence on it.
pub fn generate(
    rig_spec: &RigSpec,
    motion: &MotionSpec,
    corruption: &CorruptionSpec,
    length: usize,
) -> Result<(Rig, Vec<Frame>, Manifest), SynthError> {
    let rig = make_rig(rig_spec)?;
    let (frames, manifest) = generate_sequence(&rig, motion, corruption, rig_spec, length)?;
    Ok((rig, frames, manifest))
}
