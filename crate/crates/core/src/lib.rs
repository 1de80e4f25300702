//! Occlusion-aware multi-view 3D human pose fusion.
//!
//! Each camera contributes a monocular 3D skeleton prediction and a 2D
//! detection. [`fusion`] averages the 3D predictions per joint, weighting each
//! view by how well its joint reprojects onto every camera's detections, and
//! [`optimizer`] refines the result by minimising reprojection error with a
//! left/right limb-length symmetry penalty. [`synth`] simulates calibrated
//! rigs, occlusions, and timing errors for evaluation with [`metrics`].

pub mod fusion;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod skeleton;
pub mod synth;

pub use fusion::{FusionConfig, ViewPrediction, WeightMatrix, WeightStrategy};
pub use geometry::{Camera, CameraExtrinsics, CameraIntrinsics, Point2, Point3, Rig};
pub use metrics::{FrameMetrics, MetricOptions, SequenceSummary};
pub use optimizer::{ObjectiveConfig, OptimizationResult};
pub use pipeline::{FrameResult, PipelineConfig};
pub use skeleton::{Detection2D, JointConvention, Pose3D};
pub use synth::{CorruptionSpec, Frame, Manifest, MotionSpec, RigSpec};
