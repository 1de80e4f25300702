use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use posefuse_bench::occluded_sequence;
use posefuse_core::fusion::{fuse_frame_with_fallback, FusionConfig};
use posefuse_core::optimizer::{refine_views, ObjectiveConfig};
use posefuse_core::pipeline::{process_frame, run_sequence, PipelineConfig};
use posefuse_core::skeleton::JointConvention;

fn fusion(c: &mut Criterion) {
    let (rig, frames) = occluded_sequence(1, 8);
    let cfg = FusionConfig::default();
    c.bench_function("fuse_frame", |b| {
        b.iter(|| fuse_frame_with_fallback(black_box(&frames[3].views), &rig, &cfg).unwrap())
    });
}

fn refinement(c: &mut Criterion) {
    let (rig, frames) = occluded_sequence(2, 8);
    let conv = JointConvention::h36m();
    let frame = &frames[3];
    let (fused, _) = fuse_frame_with_fallback(&frame.views, &rig, &FusionConfig::default()).unwrap();
    let cfg = ObjectiveConfig::default();
    c.bench_function("refine", |b| {
        b.iter_batched(
            || fused.clone(),
            |init| refine_views(&init, &rig, &frame.views, &conv, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn frames(c: &mut Criterion) {
    let (rig, frames) = occluded_sequence(3, 100);
    let conv = JointConvention::h36m();
    let cfg = PipelineConfig::full();
    c.bench_function("process_frame", |b| {
        b.iter(|| process_frame(black_box(&frames[10]), &rig, &conv, &cfg, "bench").unwrap())
    });
    let mut group = c.benchmark_group("sequence");
    group.sample_size(10);
    group.bench_function("run_sequence_100", |b| {
        b.iter(|| run_sequence(black_box(&frames), &rig, &conv, &cfg, "bench").unwrap())
    });
    group.finish();
}

criterion_group!(benches, fusion, refinement, frames);
criterion_main!(benches);
