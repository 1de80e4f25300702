use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::CommandFactory;
use posefuse_core::geometry::Rig;
use posefuse_core::io::{self, PoseRecord, RunConfig};
use posefuse_core::metrics::{aggregate, FrameMetrics, SequenceSummary};
use posefuse_core::pipeline::{ablate_desync, ablate_views, evaluate_poses, run_sequence, standard_methods, AblationRow, PipelineConfig};
use posefuse_core::skeleton::JointConvention;
use posefuse_core::synth::{generate, CorruptionSpec, Frame, MotionSpec, RigSpec};

use crate::{AblateArgs, Cli, Command, CompareArgs, EvaluateArgs, GlobalArgs, InputArgs, MethodArgs, RunArgs, SynthArgs};

const ABLATION_HEADER: [&str; 5] = ["setting", "method", "frames", "mpjpe_abs_mm", "mpjpe_rel_mm"];

pub fn dispatch(cli: Cli) -> Result<()> {
    let g = cli.global;
    let mut config = match &g.config {
        Some(path) => io::load_config(path).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Synth(a) => synth(&g, &config, &a),
        Command::Run(a) => run(&g, config, &a),
        Command::Evaluate(a) => evaluate(&g, config, &a),
        Command::AblateDesync(a) => ablate(&g, config, &a, Study::Desync),
        Command::AblateViews(a) => ablate(&g, config, &a, Study::Views),
        Command::Compare(a) => compare(&g, &config, &a),
    }
}

fn output_dir(g: &GlobalArgs, config: &RunConfig, fallback: &str) -> Result<PathBuf> {
    let dir = g
        .output
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from(fallback));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn usage_error(msg: String) -> ! {
    Cli::command().error(clap::error::ErrorKind::ArgumentConflict, msg).exit()
}

fn synth(g: &GlobalArgs, config: &RunConfig, a: &SynthArgs) -> Result<()> {
    if a.occluded_views > a.cameras {
        usage_error(format!(
            "--occluded-views {} exceeds --cameras {}",
            a.occluded_views, a.cameras
        ));
    }
    let rig_spec = RigSpec {
        camera_count: a.cameras,
        radius: a.radius.unwrap_or(RigSpec::default().radius),
        ..RigSpec::default()
    };
    let motion = MotionSpec {
        kind: a.motion,
        label: a.label.clone(),
        ..MotionSpec::default()
    };
    let base = if a.noise_free {
        CorruptionSpec::noise_free(config.seed)
    } else {
        CorruptionSpec {
            seed: config.seed,
            ..CorruptionSpec::default()
        }
    };
    let corruption = CorruptionSpec {
        sigma_2d: a.sigma_2d.unwrap_or(base.sigma_2d),
        sigma_3d: a.sigma_3d.unwrap_or(base.sigma_3d),
        sigma_occ: a.sigma_occ.unwrap_or(base.sigma_occ),
        occluded_joint_fraction: a.occluded_joint_fraction.unwrap_or(base.occluded_joint_fraction),
        detection_drop_prob: a.drop_prob.unwrap_or(base.detection_drop_prob),
        occluded_view_count: a.occluded_views,
        ..base
    };
    let (rig, frames, manifest) = generate(&rig_spec, &motion, &corruption, a.frames)?;
    let dir = output_dir(g, config, "data")?;
    io::save_cameras(dir.join("cameras.json"), &rig)?;
    io::save_convention(dir.join("convention.json"), &JointConvention::h36m())?;
    io::save_sequence(dir.join(format!("{}.jsonl", a.label)), &frames)?;
    io::save_manifest(dir.join(format!("{}.manifest.json", a.label)), &manifest)?;
    if g.verbose {
        eprintln!(
            "wrote {} frames, {} cameras, seed {} to {}",
            frames.len(),
            rig.len(),
            config.seed,
            dir.display()
        );
    }
    Ok(())
}

struct Dataset {
    rig: Rig,
    conv: JointConvention,
    sequences: Vec<(String, Vec<Frame>)>,
}

fn label_of(path: &Path) -> String {
    path.file_stem().map_or_else(|| "sequence".into(), |s| s.to_string_lossy().into_owned())
}

fn load_dataset(input: &InputArgs, config: &RunConfig) -> Result<Dataset> {
    config.check_paths()?;
    let data = input.data.as_deref();
    let cameras = input
        .cameras
        .clone()
        .or_else(|| data.map(|d| d.join("cameras.json")))
        .or_else(|| config.cameras.clone())
        .context("no cameras given (use --data or --cameras)")?;
    let rig = io::load_cameras(&cameras)?;

    let conv_path = input
        .convention
        .clone()
        .or_else(|| data.map(|d| d.join("convention.json")).filter(|p| p.exists()))
        .or_else(|| config.convention.clone());
    let conv = match conv_path {
        Some(p) => io::load_convention(p)?,
        None => JointConvention::h36m(),
    };

    let mut paths = input.sequence.clone();
    if paths.is_empty() {
        if let Some(d) = data {
            let mut found: Vec<PathBuf> = fs::read_dir(d)
                .with_context(|| format!("reading {}", d.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            paths = found;
        } else if let Some(p) = &config.sequence {
            paths.push(p.clone());
        }
    }
    ensure!(!paths.is_empty(), "no sequences given (use --data or --sequence)");
    let mut sequences = Vec::with_capacity(paths.len());
    let mut seen = BTreeSet::new();
    for p in paths {
        let label = label_of(&p);
        ensure!(seen.insert(label.clone()), "two sequences share the label `{label}`");
        let frames = io::load_sequence(&p, Some(&conv))?;
        ensure!(!frames.is_empty(), "{} holds no frames", p.display());
        sequences.push((label, frames));
    }
    Ok(Dataset { rig, conv, sequences })
}

fn apply_method_flags(config: &mut RunConfig, m: &MethodArgs) {
    if let Some(s) = m.weights_strategy {
        config.strategy = s;
    }
    if let Some(l) = m.lambda_sym {
        config.lambda_sym = l;
    }
    if let Some(n) = m.max_iters {
        config.max_iters = n;
    }
    config.optimize &= !m.no_optimize;
    config.include_boundary |= m.include_boundary;
    config.exclude_pelvis |= m.exclude_pelvis;
}

fn pipeline_config(config: &RunConfig) -> Result<PipelineConfig> {
    let objective = config.objective();
    objective.validate()?;
    Ok(PipelineConfig {
        fusion: config.fusion(),
        objective,
        optimize: config.optimize,
        metrics: config.metric_options(),
        include_boundary: config.include_boundary,
    })
}

fn drop_cameras(ds: &mut Dataset, drop: &[String]) -> Result<()> {
    if drop.is_empty() {
        return Ok(());
    }
    for id in drop {
        ensure!(ds.rig.get(id).is_some(), "--drop-cameras: unknown camera `{id}`");
    }
    let keep: Vec<String> = ds.rig.ids().filter(|id| !drop.iter().any(|d| d == id)).map(String::from).collect();
    ensure!(!keep.is_empty(), "--drop-cameras removes every camera");
    let keep: Vec<&str> = keep.iter().map(String::as_str).collect();
    ds.rig = ds.rig.retain_ids(&keep);
    for (_, frames) in &mut ds.sequences {
        for f in frames.iter_mut() {
            *f = f.with_cameras(&keep);
        }
    }
    Ok(())
}

fn print_summary(summaries: &[SequenceSummary]) {
    println!(
        "{:<20} {:>7} {:>12} {:>12} {:>12} {:>12}",
        "label", "frames", "mean_abs", "median_abs", "mean_rel", "median_rel"
    );
    for s in summaries {
        println!(
            "{:<20} {:>7} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
            s.label, s.frames, s.mean_abs, s.median_abs, s.mean_rel, s.median_rel
        );
    }
}

fn run(g: &GlobalArgs, mut config: RunConfig, a: &RunArgs) -> Result<()> {
    apply_method_flags(&mut config, &a.method);
    let mut ds = load_dataset(&a.input, &config)?;
    drop_cameras(&mut ds, &a.method.drop_cameras)?;
    let cfg = pipeline_config(&config)?;
    let mut metrics: Vec<FrameMetrics> = Vec::new();
    let mut poses: Vec<PoseRecord> = Vec::new();
    for (label, frames) in &ds.sequences {
        let start = Instant::now();
        let results = run_sequence(frames, &ds.rig, &ds.conv, &cfg, label)?;
        if g.verbose {
            let iters: usize = results.iter().filter_map(|r| r.refinement.as_ref()).map(|r| r.iterations).sum();
            eprintln!(
                "{label}: {} frames in {:.2?}, {iters} solver iterations",
                results.len(),
                start.elapsed()
            );
        }
        for r in results {
            poses.push(PoseRecord {
                frame_id: r.frame_id,
                label: label.clone(),
                pose: r.output().clone(),
            });
            metrics.push(r.metrics);
        }
    }
    ensure!(!metrics.is_empty(), "no frames left to score");
    let summaries = aggregate(&metrics)?;
    let dir = output_dir(g, &config, "out")?;
    io::write_metrics(&metrics, dir.join("metrics.csv"), config.seed)?;
    io::write_summary(&summaries, dir.join("summary.csv"), config.seed)?;
    io::write_poses(dir.join("poses.jsonl"), &poses)?;
    io::save_config(dir.join("run.toml"), &config)?;
    print_summary(&summaries);
    Ok(())
}

fn evaluate(g: &GlobalArgs, mut config: RunConfig, a: &EvaluateArgs) -> Result<()> {
    config.include_boundary |= a.include_boundary;
    config.exclude_pelvis |= a.exclude_pelvis;
    let ds = load_dataset(&a.input, &config)?;
    let poses = io::read_poses(&a.poses)?;
    let mut metrics = Vec::new();
    for (label, frames) in &ds.sequences {
        let mine: Vec<PoseRecord> = poses.iter().filter(|p| &p.label == label).cloned().collect();
        ensure!(!mine.is_empty(), "{} has no poses labelled `{label}`", a.poses.display());
        metrics.extend(evaluate_poses(&mine, frames, &ds.conv, &config.metric_options(), config.include_boundary)?);
    }
    ensure!(!metrics.is_empty(), "no frames left to score");
    let summaries = aggregate(&metrics)?;
    let dir = output_dir(g, &config, "out")?;
    io::write_metrics(&metrics, dir.join("metrics.csv"), config.seed)?;
    io::write_summary(&summaries, dir.join("summary.csv"), config.seed)?;
    print_summary(&summaries);
    Ok(())
}

#[derive(Clone, Copy)]
enum Study {
    Desync,
    Views,
}

fn ablate(g: &GlobalArgs, mut config: RunConfig, a: &AblateArgs, study: Study) -> Result<()> {
    apply_method_flags(&mut config, &a.method);
    let mut ds = load_dataset(&a.input, &config)?;
    drop_cameras(&mut ds, &a.method.drop_cameras)?;
    let [(label, frames)] = ds.sequences.as_slice() else {
        bail!("ablations take exactly one sequence, got {}", ds.sequences.len());
    };
    let methods = standard_methods(&pipeline_config(&config)?);
    let start = Instant::now();
    let (rows, file) = match study {
        Study::Desync => {
            ensure!(frames.len() >= 5, "desync ablation needs at least 5 frames, `{label}` has {}", frames.len());
            (ablate_desync(frames, &ds.rig, &ds.conv, &methods, config.seed)?, "ablate_desync.csv")
        }
        Study::Views => (ablate_views(frames, &ds.rig, &ds.conv, &methods, config.seed)?, "ablate_views.csv"),
    };
    if g.verbose {
        eprintln!("{label}: {} rows in {:.2?}", rows.len(), start.elapsed());
    }
    let dir = output_dir(g, &config, "out")?;
    io::write_table(dir.join(file), file.trim_end_matches(".csv"), config.seed, &ABLATION_HEADER, &ablation_cells(&rows))?;
    print_ablation(&rows);
    Ok(())
}

fn ablation_cells(rows: &[AblationRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.setting.to_string(),
                r.method.clone(),
                r.frames.to_string(),
                r.mpjpe_abs.to_string(),
                r.mpjpe_rel.to_string(),
            ]
        })
        .collect()
}

fn print_ablation(rows: &[AblationRow]) {
    println!("{:>7} {:<16} {:>7} {:>12} {:>12}", "setting", "method", "frames", "abs_mm", "rel_mm");
    for r in rows {
        println!(
            "{:>7} {:<16} {:>7} {:>12.3} {:>12.3}",
            r.setting, r.method, r.frames, r.mpjpe_abs, r.mpjpe_rel
        );
    }
}

/// Row name for a summary file: its parent directory, or the stem when the
/// file sits in the working directory.
fn run_name(path: &Path) -> String {
    path.parent()
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| label_of(path))
}

fn compare(g: &GlobalArgs, config: &RunConfig, a: &CompareArgs) -> Result<()> {
    let mut tables: Vec<(String, Vec<SequenceSummary>)> = Vec::new();
    for p in &a.summaries {
        let s = io::read_summary(p)?;
        ensure!(!s.is_empty(), "{} holds no rows", p.display());
        tables.push((run_name(p), s));
    }
    let labels: Vec<String> = tables[0].1.iter().map(|s| s.label.clone()).collect();
    let reference: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
    let mut problems = Vec::new();
    for (path, (_, t)) in a.summaries.iter().zip(&tables).skip(1) {
        let these: BTreeSet<&str> = t.iter().map(|s| s.label.as_str()).collect();
        let missing: Vec<&str> = reference.difference(&these).copied().collect();
        let extra: Vec<&str> = these.difference(&reference).copied().collect();
        if !missing.is_empty() || !extra.is_empty() {
            problems.push(format!("{}: missing {missing:?}, extra {extra:?}", path.display()));
        }
    }
    if !problems.is_empty() {
        bail!(
            "labels differ from {}:\n  {}",
            a.summaries[0].display(),
            problems.join("\n  ")
        );
    }

    let mut header: Vec<&str> = vec!["run"];
    header.extend(labels.iter().map(String::as_str));
    header.push("Avg");
    let rows: Vec<Vec<String>> = tables
        .iter()
        .map(|(name, t)| {
            let values: Vec<f64> = labels
                .iter()
                .map(|l| {
                    let s = t.iter().find(|s| &s.label == l).expect("labels checked");
                    if a.relative { s.mean_rel } else { s.mean_abs }
                })
                .collect();
            let avg = values.iter().sum::<f64>() / values.len() as f64;
            let mut row = vec![name.clone()];
            row.extend(values.iter().chain([&avg]).map(f64::to_string));
            row
        })
        .collect();

    let dir = output_dir(g, config, "out")?;
    io::write_table(dir.join("compare.csv"), "compare", config.seed, &header, &rows)?;
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len().min(12)).chain([header[c].len()]).max().unwrap_or(8))
        .collect();
    let line = |cells: Vec<String>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    println!("{}", line(header.iter().map(|h| h.to_string()).collect()));
    for r in &rows {
        let mut cells = vec![r[0].clone()];
        cells.extend(r[1..].iter().map(|v| format!("{:.3}", v.parse::<f64>().unwrap_or(f64::NAN))));
        println!("{}", line(cells));
    }
    Ok(())
}
