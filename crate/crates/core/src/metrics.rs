//! Mean per-joint position error, absolute and pelvis-aligned.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::Point3;
use crate::skeleton::{JointConvention, Pose3D};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum MetricsError {
    #[error("joint count mismatch: prediction has {pred}, ground truth has {gt}")]
    JointCountMismatch { pred: usize, gt: usize },
    #[error("pose has no joints")]
    Empty,
    #[error("joint {joint} is not finite")]
    NonFinite { joint: usize },
    #[error("no frames to aggregate")]
    NoFrames,
    #[error("pelvis index {0} out of range")]
    BadPelvis(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Leave the pelvis (always zero after alignment) out of the relative average.
    pub exclude_pelvis_from_relative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_id: u64,
    pub label: String,
    pub mpjpe_abs: f64,
    pub mpjpe_rel: f64,
    pub per_joint_abs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub label: String,
    pub frames: usize,
    pub mean_abs: f64,
    pub median_abs: f64,
    pub mean_rel: f64,
    pub median_rel: f64,
}

fn check(pred: &Pose3D, gt: &Pose3D) -> Result<(), MetricsError> {
    if pred.joints.len() != gt.joints.len() {
        return Err(MetricsError::JointCountMismatch {
            pred: pred.joints.len(),
            gt: gt.joints.len(),
        });
    }
    if pred.joints.is_empty() {
        return Err(MetricsError::Empty);
    }
    for (joint, (p, g)) in pred.joints.iter().zip(&gt.joints).enumerate() {
        if !p.iter().chain(g.iter()).all(|v| v.is_finite()) {
            return Err(MetricsError::NonFinite { joint });
        }
    }
    Ok(())
}

/// Per-joint Euclidean errors in millimeters.
pub fn per_joint_errors_mm(pred: &Pose3D, gt: &Pose3D) -> Result<Vec<f64>, MetricsError> {
    check(pred, gt)?;
    Ok(pred
        .joints
        .iter()
        .zip(&gt.joints)
        .map(|(p, g)| (p - g).norm() * 1000.0)
        .collect())
}

/// Mean joint distance in millimeters.
pub fn mpjpe_absolute(pred: &Pose3D, gt: &Pose3D) -> Result<f64, MetricsError> {
    let errs = per_joint_errors_mm(pred, gt)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// MPJPE after translating `pred` so its pelvis coincides with the ground truth pelvis.
pub fn mpjpe_relative(pred: &Pose3D, gt: &Pose3D, conv: &JointConvention) -> Result<f64, MetricsError> {
    mpjpe_relative_with(pred, gt, conv, &MetricOptions::default())
}

pub fn mpjpe_relative_with(
    pred: &Pose3D,
    gt: &Pose3D,
    conv: &JointConvention,
    opts: &MetricOptions,
) -> Result<f64, MetricsError> {
    check(pred, gt)?;
    let root = conv.pelvis_index();
    if root >= pred.joints.len() {
        return Err(MetricsError::BadPelvis(root));
    }
    let shift: Point3 = gt.joints[root] - pred.joints[root];
    let (sum, n) = pred
        .joints
        .iter()
        .zip(&gt.joints)
        .enumerate()
        .filter(|(j, _)| !(opts.exclude_pelvis_from_relative && *j == root))
        .fold((0.0, 0usize), |(s, n), (_, (p, g))| (s + (p + shift - g).norm() * 1000.0, n + 1));
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(sum / n as f64)
}

pub fn frame_metrics(
    frame_id: u64,
    label: &str,
    pred: &Pose3D,
    gt: &Pose3D,
    conv: &JointConvention,
    opts: &MetricOptions,
) -> Result<FrameMetrics, MetricsError> {
    let per_joint_abs = per_joint_errors_mm(pred, gt)?;
    let mpjpe_abs = per_joint_abs.iter().sum::<f64>() / per_joint_abs.len() as f64;
    Ok(FrameMetrics {
        frame_id,
        label: label.to_string(),
        mpjpe_abs,
        mpjpe_rel: mpjpe_relative_with(pred, gt, conv, opts)?,
        per_joint_abs,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn summarize(label: &str, frames: &[&FrameMetrics]) -> SequenceSummary {
    let n = frames.len() as f64;
    let mut abs: Vec<f64> = frames.iter().map(|f| f.mpjpe_abs).collect();
    let mut rel: Vec<f64> = frames.iter().map(|f| f.mpjpe_rel).collect();
    SequenceSummary {
        label: label.to_string(),
        frames: frames.len(),
        mean_abs: abs.iter().sum::<f64>() / n,
        mean_rel: rel.iter().sum::<f64>() / n,
        median_abs: median(&mut abs),
        median_rel: median(&mut rel),
    }
}

/// Per-label summaries, ordered by label.
pub fn aggregate(frames: &[FrameMetrics]) -> Result<Vec<SequenceSummary>, MetricsError> {
    if frames.is_empty() {
        return Err(MetricsError::NoFrames);
    }
    let mut groups: BTreeMap<&str, Vec<&FrameMetrics>> = BTreeMap::new();
    for f in frames {
        groups.entry(f.label.as_str()).or_default().push(f);
    }
    Ok(groups.iter().map(|(label, fs)| summarize(label, fs)).collect())
}

/// One summary over all frames regardless of label.
pub fn overall(frames: &[FrameMetrics], label: &str) -> Result<SequenceSummary, MetricsError> {
    if frames.is_empty() {
        return Err(MetricsError::NoFrames);
    }
    Ok(summarize(label, &frames.iter().collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn pose(points: &[[f64; 3]]) -> Pose3D {
        Pose3D::new(points.iter().map(|p| Point3::from(*p)).collect())
    }

    #[test]
    fn absolute_examples() {
        let gt = pose(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
        assert_eq!(mpjpe_absolute(&gt, &gt).unwrap(), 0.0);
        let shifted = pose(&[[0.003, 0.004, 0.0], [1.003, 2.004, 3.0]]);
        assert!((mpjpe_absolute(&shifted, &gt).unwrap() - 5.0).abs() < 1e-9);
        assert_eq!(
            mpjpe_absolute(&pose(&[[0.0; 3]]), &gt),
            Err(MetricsError::JointCountMismatch { pred: 1, gt: 2 })
        );
        let nan = pose(&[[0.0; 3], [f64::NAN, 0.0, 0.0]]);
        assert_eq!(mpjpe_absolute(&nan, &gt), Err(MetricsError::NonFinite { joint: 1 }));
    }

    #[test]
    fn relative_removes_translation() {
        let conv = JointConvention::h36m();
        let gt = Pose3D::new((0..17).map(|i| Point3::new(i as f64 * 0.1, 0.0, 1.0)).collect());
        let off = Vector3::new(0.010, 0.020, 0.030);
        let pred = Pose3D::new(gt.joints.iter().map(|p| p + off).collect());
        assert!(mpjpe_relative(&pred, &gt, &conv).unwrap() < 1e-12);
        assert!((mpjpe_absolute(&pred, &gt).unwrap() - 1400f64.sqrt()).abs() < 1e-9);
        assert_eq!(mpjpe_relative(&gt, &gt, &conv).unwrap(), 0.0);
    }

    #[test]
    fn relative_can_exclude_pelvis() {
        let conv = JointConvention::h36m();
        let gt = Pose3D::new(vec![Point3::zeros(); 17]);
        let mut pred = gt.clone();
        pred.joints[5].x = 0.017;
        let incl = mpjpe_relative(&pred, &gt, &conv).unwrap();
        let excl = mpjpe_relative_with(&pred, &gt, &conv, &MetricOptions { exclude_pelvis_from_relative: true }).unwrap();
        assert!((incl - 1.0).abs() < 1e-12);
        assert!((excl - 17.0 / 16.0).abs() < 1e-12);
    }

    fn fm(id: u64, label: &str, abs: f64, rel: f64) -> FrameMetrics {
        FrameMetrics { frame_id: id, label: label.into(), mpjpe_abs: abs, mpjpe_rel: rel, per_joint_abs: vec![abs] }
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[]), Err(MetricsError::NoFrames));
        let one = aggregate(&[fm(0, "a", 12.0, 3.0)]).unwrap();
        assert_eq!(one[0].mean_abs, 12.0);
        assert_eq!(one[0].median_rel, 3.0);
        assert_eq!(one[0].frames, 1);

        let two = aggregate(&[fm(0, "a", 10.0, 1.0), fm(1, "a", 20.0, 2.0)]).unwrap();
        assert_eq!(two[0].mean_abs, 15.0);
        assert_eq!(two[0].median_abs, 15.0);
    }

    #[test]
    fn aggregate_groups_like_naive_group_by() {
        let labels = ["walk", "eat", "sit"];
        let frames: Vec<_> = (0..30)
            .map(|i| fm(i, labels[(i * 7 % 3) as usize], (i * i % 13) as f64, (i % 5) as f64))
            .collect();
        let out = aggregate(&frames).unwrap();
        let names: Vec<_> = out.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(names, vec!["eat", "sit", "walk"]);
        for s in &out {
            let mut sum = 0.0;
            let mut n = 0.0;
            for f in &frames {
                if f.label == s.label {
                    sum += f.mpjpe_abs;
                    n += 1.0;
                }
            }
            assert!((s.mean_abs - sum / n).abs() < 1e-12);
            assert_eq!(s.frames as f64, n);
        }
    }

    fn arb_pair() -> impl Strategy<Value = (Pose3D, Pose3D)> {
        let pts = || proptest::collection::vec(proptest::array::uniform3(-3.0..3.0f64), 17);
        (pts(), pts()).prop_map(|(a, b)| {
            (
                Pose3D::new(a.into_iter().map(Point3::from).collect()),
                Pose3D::new(b.into_iter().map(Point3::from).collect()),
            )
        })
    }

    proptest! {
        #[test]
        fn relative_is_translation_invariant((pred, gt) in arb_pair(), t in proptest::array::uniform3(-5.0..5.0f64)) {
            let conv = JointConvention::h36m();
            let moved = Pose3D::new(pred.joints.iter().map(|p| p + Vector3::from(t)).collect());
            let a = mpjpe_relative(&pred, &gt, &conv).unwrap();
            let b = mpjpe_relative(&moved, &gt, &conv).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            let pelvis = (pred.joints[0] - gt.joints[0]).norm() * 1000.0;
            prop_assert!(a <= mpjpe_absolute(&pred, &gt).unwrap() + pelvis + 1e-9);
        }

        #[test]
        fn metrics_permutation_invariant((pred, gt) in arb_pair(), shift in 0usize..17) {
            let mut p2 = pred.joints.clone();
            let mut g2 = gt.joints.clone();
            p2.rotate_left(shift);
            g2.rotate_left(shift);
            let a = mpjpe_absolute(&pred, &gt).unwrap();
            let b = mpjpe_absolute(&Pose3D::new(p2), &Pose3D::new(g2)).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
