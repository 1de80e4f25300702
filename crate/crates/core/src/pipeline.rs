//! Per-frame pipeline (fuse, refine, score) and the two ablation drivers.
//!
//! Frames are independent, so sequences are processed in parallel; results
//! always come back in input order.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fusion::{fuse_frame_with_fallback, FusionConfig, FusionError, WeightMatrix, WeightStrategy};
use crate::geometry::Rig;
use crate::io::PoseRecord;
use crate::metrics::{frame_metrics, FrameMetrics, MetricOptions, MetricsError};
use crate::optimizer::{refine_views, ObjectiveConfig, OptimizationResult, OptimizeError};
use crate::skeleton::{JointConvention, Pose3D};
use crate::synth::{apply_desync, Frame, SynthError};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum PipelineError {
    #[error("frame {frame}: {source}")]
    Fusion {
        frame: u64,
        #[source]
        source: FusionError,
    },
    #[error("frame {frame}: {source}")]
    Optimize {
        frame: u64,
        #[source]
        source: OptimizeError,
    },
    #[error("frame {frame}: {source}")]
    Metrics {
        frame: u64,
        #[source]
        source: MetricsError,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("no frames left to evaluate")]
    NoFrames,
    #[error("no prediction for frame {0}")]
    MissingPrediction(u64),
    #[error("ablation needs at least {needed} cameras, rig has {actual}")]
    TooFewCameras { needed: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub fusion: FusionConfig,
    pub objective: ObjectiveConfig,
    pub optimize: bool,
    pub metrics: MetricOptions,
    /// Score frames whose desync offsets were clamped at the sequence ends.
    pub include_boundary: bool,
}

impl PipelineConfig {
    pub fn full() -> Self {
        Self {
            optimize: true,
            ..Self::default()
        }
    }

    pub fn fusion_only() -> Self {
        Self::default()
    }

    /// Naive control: equal weights, no refinement.
    pub fn uniform_average() -> Self {
        Self {
            fusion: FusionConfig::with_strategy(WeightStrategy::Uniform),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_id: u64,
    pub fused: Pose3D,
    pub weights: WeightMatrix,
    pub refinement: Option<OptimizationResult>,
    pub metrics: FrameMetrics,
}

impl FrameResult {
    /// The refined pose when refinement ran, else the fused pose.
    pub fn output(&self) -> &Pose3D {
        self.refinement.as_ref().map_or(&self.fused, |r| &r.pose)
    }
}

pub fn process_frame(
    frame: &Frame,
    rig: &Rig,
    conv: &JointConvention,
    cfg: &PipelineConfig,
    label: &str,
) -> Result<FrameResult, PipelineError> {
    let id = frame.frame_id;
    let (fused, weights) = fuse_frame_with_fallback(&frame.views, rig, &cfg.fusion)
        .map_err(|source| PipelineError::Fusion { frame: id, source })?;
    let refinement = if cfg.optimize {
        Some(
            refine_views(&fused, rig, &frame.views, conv, &cfg.objective)
                .map_err(|source| PipelineError::Optimize { frame: id, source })?,
        )
    } else {
        None
    };
    let output = refinement.as_ref().map_or(&fused, |r| &r.pose);
    let metrics = frame_metrics(id, label, output, &frame.gt, conv, &cfg.metrics)
        .map_err(|source| PipelineError::Metrics { frame: id, source })?;
    Ok(FrameResult {
        frame_id: id,
        fused,
        weights,
        refinement,
        metrics,
    })
}

/// Process every scored frame of a sequence in parallel.
pub fn run_sequence(
    frames: &[Frame],
    rig: &Rig,
    conv: &JointConvention,
    cfg: &PipelineConfig,
    label: &str,
) -> Result<Vec<FrameResult>, PipelineError> {
    frames
        .par_iter()
        .filter(|f| cfg.include_boundary || !f.boundary)
        .map(|f| process_frame(f, rig, conv, cfg, label))
        .collect()
}

/// Score externally produced poses against a sequence's ground truth.
pub fn evaluate_poses(
    poses: &[PoseRecord],
    frames: &[Frame],
    conv: &JointConvention,
    opts: &MetricOptions,
    include_boundary: bool,
) -> Result<Vec<FrameMetrics>, PipelineError> {
    let by_id: BTreeMap<(u64, &str), &PoseRecord> = poses.iter().map(|p| ((p.frame_id, p.label.as_str()), p)).collect();
    let labels: Vec<&str> = {
        let mut l: Vec<&str> = poses.iter().map(|p| p.label.as_str()).collect();
        l.sort_unstable();
        l.dedup();
        l
    };
    let mut out = Vec::new();
    for label in labels {
        for f in frames.iter().filter(|f| include_boundary || !f.boundary) {
            let p = by_id
                .get(&(f.frame_id, label))
                .ok_or(PipelineError::MissingPrediction(f.frame_id))?;
            out.push(
                frame_metrics(f.frame_id, label, &p.pose, &f.gt, conv, opts)
                    .map_err(|source| PipelineError::Metrics { frame: f.frame_id, source })?,
            );
        }
    }
    Ok(out)
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Desynchronized cameras, or available cameras, depending on the study.
    pub setting: usize,
    pub method: String,
    pub frames: usize,
    pub mpjpe_abs: f64,
    pub mpjpe_rel: f64,
}

/// The three pipelines compared by the ablations, derived from `base`.
pub fn standard_methods(base: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
    vec![
        ("full".to_string(), PipelineConfig { optimize: true, ..*base }),
        ("fusion_only".to_string(), PipelineConfig { optimize: false, ..*base }),
        (
            "uniform_average".to_string(),
            PipelineConfig {
                optimize: false,
                fusion: FusionConfig::with_strategy(WeightStrategy::Uniform),
                ..*base
            },
        ),
    ]
}

fn mean_row(setting: usize, method: &str, results: &[FrameResult]) -> Result<AblationRow, PipelineError> {
    if results.is_empty() {
        return Err(PipelineError::NoFrames);
    }
    let n = results.len() as f64;
    Ok(AblationRow {
        setting,
        method: method.to_string(),
        frames: results.len(),
        mpjpe_abs: results.iter().map(|r| r.metrics.mpjpe_abs).sum::<f64>() / n,
        mpjpe_rel: results.iter().map(|r| r.metrics.mpjpe_rel).sum::<f64>() / n,
    })
}

fn ablation_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Error versus number of desynchronized cameras, for counts `0..C`.
///
/// Each count picks a random camera subset and fresh per-frame offsets; every
/// method sees the same desynchronized sequence.
pub fn ablate_desync(
    frames: &[Frame],
    rig: &Rig,
    conv: &JointConvention,
    methods: &[(String, PipelineConfig)],
    seed: u64,
) -> Result<Vec<AblationRow>, PipelineError> {
    let ids: Vec<&str> = rig.ids().collect();
    let mut rows = Vec::new();
    for count in 0..ids.len() {
        let mut rng = ablation_rng(seed, count as u64);
        let mut picked = sample(&mut rng, ids.len(), count).into_vec();
        picked.sort_unstable();
        let chosen: Vec<&str> = picked.iter().map(|&i| ids[i]).collect();
        let seq = if count == 0 {
            frames.to_vec()
        } else {
            apply_desync(frames, &chosen, &mut rng)?
        };
        for (name, cfg) in methods {
            let results = run_sequence(&seq, rig, conv, cfg, "desync")?;
            rows.push(mean_row(count, name, &results)?);
        }
    }
    Ok(rows)
}

/// Error versus number of available cameras, from `C` down to 2. Each frame
/// keeps a random camera subset of the given size.
pub fn ablate_views(
    frames: &[Frame],
    rig: &Rig,
    conv: &JointConvention,
    methods: &[(String, PipelineConfig)],
    seed: u64,
) -> Result<Vec<AblationRow>, PipelineError> {
    let c = rig.len();
    if c < 2 {
        return Err(PipelineError::TooFewCameras { needed: 2, actual: c });
    }
    let ids: Vec<&str> = rig.ids().collect();
    let mut rows = Vec::new();
    for size in (2..=c).rev() {
        let mut rng = ablation_rng(seed, size as u64);
        let seq: Vec<Frame> = if size == c {
            frames.to_vec()
        } else {
            frames
                .iter()
                .map(|f| {
                    let mut picked = sample(&mut rng, c, size).into_vec();
                    picked.sort_unstable();
                    let keep: Vec<&str> = picked.iter().map(|&i| ids[i]).collect();
                    f.with_cameras(&keep)
                })
                .collect()
        };
        for (name, cfg) in methods {
            let results = run_sequence(&seq, rig, conv, cfg, "views")?;
            rows.push(mean_row(size, name, &results)?);
        }
    }
    Ok(rows)
}
