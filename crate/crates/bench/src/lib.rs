//! Shared fixtures for the benchmarks.

use posefuse_core::geometry::Rig;
use posefuse_core::synth::{generate, CorruptionSpec, Frame, MotionSpec, RigSpec};

/// Occluded four-camera sequence with the default corruption model.
pub fn occluded_sequence(seed: u64, frames: usize) -> (Rig, Vec<Frame>) {
    let corruption = CorruptionSpec {
        seed,
        ..CorruptionSpec::default()
    };
    let (rig, seq, _) = generate(&RigSpec::default(), &MotionSpec::default(), &corruption, frames)
        .expect("default specs are valid");
    (rig, seq)
}
