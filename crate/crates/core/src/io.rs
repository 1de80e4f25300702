//! File formats: calibration JSON, convention JSON, sequence JSONL, manifests,
//! metrics CSV, and the run configuration.
//!
//! Loaders validate eagerly and report where a problem is. Floats are written
//! with shortest round-trip formatting so save/load is lossless.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::fusion::{FusionConfig, WeightStrategy};
use crate::geometry::{Camera, CameraExtrinsics, CameraIntrinsics, GeometryError, Rig, ORTHONORMAL_TOL};
use crate::metrics::{FrameMetrics, MetricOptions, SequenceSummary};
use crate::optimizer::ObjectiveConfig;
use crate::skeleton::{JointConvention, Pose3D};
use crate::synth::{Frame, Manifest, FORMAT_VERSION};

#[derive(thiserror::Error, Debug)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: camera `{camera}`: {message}")]
    Camera {
        path: PathBuf,
        camera: String,
        message: String,
    },
    #[error("{path}: duplicate camera id `{camera}`")]
    DuplicateCamera { path: PathBuf, camera: String },
    #[error("{path}:{line}: {what} has {actual} joints, expected {expected}")]
    JointCount {
        path: PathBuf,
        line: usize,
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("nothing to write: {0}")]
    Empty(&'static str),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path, line_offset: usize, e: serde_json::Error) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line: e.line() + line_offset,
        column: e.column(),
        message: e.to_string(),
    }
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Calibration record as stored on disk. `R` is row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    pub t: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortion: Option<Vec<f64>>,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let r = &c.extrinsics.rotation;
        let k = &c.intrinsics;
        let t = &c.extrinsics.translation;
        CameraRecord {
            id: c.id.clone(),
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            t: [t.x, t.y, t.z],
            distortion: None,
        }
    }
}

impl CameraRecord {
    fn into_camera(self, path: &Path) -> Result<Camera, IoError> {
        let fail = |message: String| IoError::Camera {
            path: path.to_path_buf(),
            camera: self.id.clone(),
            message,
        };
        if let Some(d) = &self.distortion {
            if d.iter().any(|v| *v != 0.0) {
                return Err(fail("lens distortion is not supported; coefficients must be zero".into()));
            }
        }
        let intrinsics = CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(|e| fail(e.to_string()))?;
        let extrinsics = CameraExtrinsics::new(Matrix3::from_row_slice(&self.rotation), Vector3::from(self.t))
            .map_err(|e| match e {
                GeometryError::NotOrthonormal { deviation, det } => fail(format!(
                    "rotation is not orthonormal: max |RᵀR − I| = {deviation:e}, det = {det} (tolerance {ORTHONORMAL_TOL:e})"
                )),
                other => fail(other.to_string()),
            })?;
        Ok(Camera::new(self.id.clone(), intrinsics, extrinsics))
    }
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Rig, IoError> {
    let path = path.as_ref();
    let records: Vec<CameraRecord> = serde_json::from_str(&read(path)?).map_err(|e| json_err(path, 0, e))?;
    let mut cams: Vec<Camera> = Vec::with_capacity(records.len());
    for rec in records {
        if cams.iter().any(|c| c.id == rec.id) {
            return Err(IoError::DuplicateCamera {
                path: path.to_path_buf(),
                camera: rec.id,
            });
        }
        cams.push(rec.into_camera(path)?);
    }
    Rig::new(cams).map_err(|e| IoError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn save_cameras(path: impl AsRef<Path>, rig: &Rig) -> Result<(), IoError> {
    let records: Vec<CameraRecord> = rig.cameras().iter().map(CameraRecord::from).collect();
    let mut s = serde_json::to_string_pretty(&records).expect("camera records serialize");
    s.push('\n');
    write_atomic(path.as_ref(), s.as_bytes())
}

pub fn load_convention(path: impl AsRef<Path>) -> Result<JointConvention, IoError> {
    let path = path.as_ref();
    serde_json::from_str(&read(path)?).map_err(|e| json_err(path, 0, e))
}

pub fn save_convention(path: impl AsRef<Path>, conv: &JointConvention) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(conv).expect("convention serializes");
    s.push('\n');
    write_atomic(path.as_ref(), s.as_bytes())
}

fn check_frame(path: &Path, line: usize, frame: &Frame, expected: usize) -> Result<(), IoError> {
    let mismatch = |what: String, actual: usize| IoError::JointCount {
        path: path.to_path_buf(),
        line,
        what,
        expected,
        actual,
    };
    let gt = &frame.gt;
    if gt.joints.len() != expected || gt.confidence.len() != expected {
        return Err(mismatch("gt".into(), gt.joints.len()));
    }
    for v in &frame.views {
        for (what, actual) in [
            ("pose3d", v.pose3d.joints.len()),
            ("pose3d conf", v.pose3d.confidence.len()),
            ("det2d", v.detection2d.joints.len()),
            ("det2d conf", v.detection2d.confidence.len()),
            ("det2d visible", v.detection2d.visible.len()),
        ] {
            if actual != expected {
                return Err(mismatch(format!("view `{}` {what}", v.camera_id), actual));
            }
        }
    }
    Ok(())
}

/// Read a JSONL sequence. With a convention, every joint array must match its
/// joint count; otherwise frames must agree with the first one.
pub fn load_sequence(path: impl AsRef<Path>, conv: Option<&JointConvention>) -> Result<Vec<Frame>, IoError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut frames = Vec::new();
    let mut expected = conv.map(JointConvention::joint_count);
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let frame: Frame = serde_json::from_str(&line).map_err(|e| json_err(path, idx, e))?;
        let j = *expected.get_or_insert(frame.gt.joints.len());
        check_frame(path, lineno, &frame, j)?;
        frames.push(frame);
    }
    Ok(frames)
}

pub fn save_sequence(path: impl AsRef<Path>, frames: &[Frame]) -> Result<(), IoError> {
    let mut buf = String::new();
    for f in frames {
        buf.push_str(&serde_json::to_string(f).expect("frame serializes"));
        buf.push('\n');
    }
    write_atomic(path.as_ref(), buf.as_bytes())
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    s.push('\n');
    write_atomic(path.as_ref(), s.as_bytes())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, IoError> {
    let path = path.as_ref();
    serde_json::from_str(&read(path)?).map_err(|e| json_err(path, 0, e))
}

/// Header comment embedded in every CSV output.
fn csv_header(kind: &str, seed: u64) -> String {
    format!("# posefuse {kind} format={FORMAT_VERSION} seed={seed}\n")
}

/// Per-frame metrics CSV: `frame_id,label,mpjpe_abs_mm,mpjpe_rel_mm,joint_0_mm,...`.
pub fn write_metrics(frames: &[FrameMetrics], path: impl AsRef<Path>, seed: u64) -> Result<(), IoError> {
    let path = path.as_ref();
    let first = frames.first().ok_or(IoError::Empty("metrics"))?;
    let joints = first.per_joint_abs.len();
    if let Some(bad) = frames.iter().find(|f| f.per_joint_abs.len() != joints) {
        return Err(IoError::Invalid {
            path: path.to_path_buf(),
            message: format!("frame {} has {} joints, expected {joints}", bad.frame_id, bad.per_joint_abs.len()),
        });
    }
    let mut out = csv_header("metrics", seed);
    out.push_str("frame_id,label,mpjpe_abs_mm,mpjpe_rel_mm");
    for j in 0..joints {
        let _ = write!(out, ",joint_{j}_mm");
    }
    out.push('\n');
    let mut rows: Vec<&FrameMetrics> = frames.iter().collect();
    rows.sort_by(|a, b| a.label.cmp(&b.label).then(a.frame_id.cmp(&b.frame_id)));
    for f in rows {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let mut rec = vec![f.frame_id.to_string(), f.label.clone(), f.mpjpe_abs.to_string(), f.mpjpe_rel.to_string()];
        rec.extend(f.per_joint_abs.iter().map(f64::to_string));
        w.write_record(&rec).expect("in-memory csv write");
        out.push_str(std::str::from_utf8(&w.into_inner().expect("flush")).expect("utf8"));
    }
    write_atomic(path, out.as_bytes())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        column: 0,
        message: e.to_string(),
    }
}

fn parse_f64(path: &Path, line: usize, field: &str, s: &str) -> Result<f64, IoError> {
    s.parse().map_err(|_| IoError::Parse {
        path: path.to_path_buf(),
        line,
        column: 0,
        message: format!("field `{field}`: `{s}` is not a number"),
    })
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<FrameMetrics>, IoError> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() < 4 {
            return Err(IoError::Invalid {
                path: path.to_path_buf(),
                message: format!("line {line}: expected at least 4 fields"),
            });
        }
        let frame_id = rec[0].parse().map_err(|_| IoError::Parse {
            path: path.to_path_buf(),
            line,
            column: 0,
            message: format!("bad frame id `{}`", &rec[0]),
        })?;
        let per_joint_abs = (4..rec.len())
            .map(|i| parse_f64(path, line, "joint", &rec[i]))
            .collect::<Result<_, _>>()?;
        out.push(FrameMetrics {
            frame_id,
            label: rec[1].to_string(),
            mpjpe_abs: parse_f64(path, line, "mpjpe_abs_mm", &rec[2])?,
            mpjpe_rel: parse_f64(path, line, "mpjpe_rel_mm", &rec[3])?,
            per_joint_abs,
        });
    }
    Ok(out)
}

/// Summary CSV: one row per label.
pub fn write_summary(summaries: &[SequenceSummary], path: impl AsRef<Path>, seed: u64) -> Result<(), IoError> {
    if summaries.is_empty() {
        return Err(IoError::Empty("summary"));
    }
    let mut out = csv_header("summary", seed);
    out.push_str("label,frames,mean_abs_mm,median_abs_mm,mean_rel_mm,median_rel_mm\n");
    for s in summaries {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record([
            s.label.clone(),
            s.frames.to_string(),
            s.mean_abs.to_string(),
            s.median_abs.to_string(),
            s.mean_rel.to_string(),
            s.median_rel.to_string(),
        ])
        .expect("in-memory csv write");
        out.push_str(std::str::from_utf8(&w.into_inner().expect("flush")).expect("utf8"));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Vec<SequenceSummary>, IoError> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 6 {
            return Err(IoError::Invalid {
                path: path.to_path_buf(),
                message: format!("line {line}: expected 6 fields, got {}", rec.len()),
            });
        }
        out.push(SequenceSummary {
            label: rec[0].to_string(),
            frames: rec[1].parse().map_err(|_| IoError::Invalid {
                path: path.to_path_buf(),
                message: format!("line {line}: bad frame count"),
            })?,
            mean_abs: parse_f64(path, line, "mean_abs_mm", &rec[2])?,
            median_abs: parse_f64(path, line, "median_abs_mm", &rec[3])?,
            mean_rel: parse_f64(path, line, "mean_rel_mm", &rec[4])?,
            median_rel: parse_f64(path, line, "median_rel_mm", &rec[5])?,
        });
    }
    Ok(out)
}

/// Generic CSV table with the standard header comment.
pub fn write_table(path: impl AsRef<Path>, kind: &str, seed: u64, header: &[&str], rows: &[Vec<String>]) -> Result<(), IoError> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv write");
    for r in rows {
        w.write_record(r).expect("in-memory csv write");
    }
    let mut out = csv_header(kind, seed).into_bytes();
    out.extend(w.into_inner().expect("flush"));
    write_atomic(path.as_ref(), &out)
}

/// One refined pose per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame_id: u64,
    pub label: String,
    #[serde(flatten)]
    pub pose: Pose3D,
}

pub fn write_poses(path: impl AsRef<Path>, poses: &[PoseRecord]) -> Result<(), IoError> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for p in poses {
        serde_json::to_writer(&mut w, p).expect("pose serializes");
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<PoseRecord>, IoError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| json_err(path, idx, e))?);
    }
    Ok(out)
}

/// Flat run configuration, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cameras: Option<PathBuf>,
    pub sequence: Option<PathBuf>,
    pub convention: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub strategy: WeightStrategy,
    pub epsilon: f64,
    pub min_views: usize,
    pub lambda_sym: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub initial_damping: f64,
    pub optimize: bool,
    pub exclude_pelvis: bool,
    pub include_boundary: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let f = FusionConfig::default();
        let o = ObjectiveConfig::default();
        Self {
            cameras: None,
            sequence: None,
            convention: None,
            output: None,
            seed: 0,
            strategy: f.strategy,
            epsilon: f.epsilon,
            min_views: f.min_views,
            lambda_sym: o.lambda_sym,
            max_iters: o.max_iters,
            grad_tol: o.grad_tol,
            step_tol: o.step_tol,
            initial_damping: o.initial_damping,
            optimize: true,
            exclude_pelvis: false,
            include_boundary: false,
        }
    }
}

impl RunConfig {
    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            strategy: self.strategy,
            epsilon: self.epsilon,
            min_views: self.min_views,
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            lambda_sym: self.lambda_sym,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            step_tol: self.step_tol,
            initial_damping: self.initial_damping,
        }
    }

    pub fn metric_options(&self) -> MetricOptions {
        MetricOptions {
            exclude_pelvis_from_relative: self.exclude_pelvis,
        }
    }

    /// Referenced input files must exist.
    pub fn check_paths(&self) -> Result<(), IoError> {
        for p in [&self.cameras, &self.sequence, &self.convention].into_iter().flatten() {
            if !p.exists() {
                return Err(IoError::Invalid {
                    path: p.clone(),
                    message: "referenced file does not exist".into(),
                });
            }
        }
        Ok(())
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, IoError> {
    let path = path.as_ref();
    let text = read(path)?;
    toml::from_str(&text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| {
                let before = &text[..s.start.min(text.len())];
                let line = before.matches('\n').count() + 1;
                let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                (line, column)
            })
            .unwrap_or((0, 0));
        IoError::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

pub fn save_config(path: impl AsRef<Path>, config: &RunConfig) -> Result<(), IoError> {
    let s = toml::to_string(config).map_err(|e| IoError::Invalid {
        path: path.as_ref().to_path_buf(),
        message: e.to_string(),
    })?;
    write_atomic(path.as_ref(), s.as_bytes())
}
