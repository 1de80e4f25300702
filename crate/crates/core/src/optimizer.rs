//! Reprojection refinement of a fused pose with a limb-symmetry penalty.
//!
//! The objective over all joint positions `P` is
//!
//! ```text
//! F(P) = Σ_k Σ_j visible ‖π_k(P_j) − p_jk‖²  +  λ · Σ_pairs (d_L − d_R)²
//! ```
//!
//! and is minimised with a damped Gauss-Newton (Levenberg-Marquardt) loop
//! using the analytic Jacobian. The normal equations are accumulated block by
//! block since every reprojection residual touches a single joint and every
//! symmetry residual at most four.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::fusion::ViewPrediction;
use crate::geometry::{transform_to_camera, Camera, GeometryError, Point2, Point3, Rig, DEFAULT_Z_MIN};
use crate::skeleton::{symmetry_residuals, Detection2D, JointConvention, Pose3D};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("objective is not finite ({0})")]
    NonFiniteObjective(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("detection for camera `{camera}` has {actual} joints, pose has {expected}")]
    JointCountMismatch {
        camera: String,
        expected: usize,
        actual: usize,
    },
    #[error("invalid objective config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    /// Multiplier on the symmetry cost (m²) relative to the reprojection term (px²).
    pub lambda_sym: f64,
    pub max_iters: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
    /// Stop when the step norm (m) falls below this.
    pub step_tol: f64,
    /// Initial damping relative to the largest diagonal entry of JᵀJ.
    pub initial_damping: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_sym: 1.0,
            max_iters: 100,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: &str| Err(OptimizeError::InvalidConfig(m.to_string()));
        if !(self.lambda_sym >= 0.0 && self.lambda_sym.is_finite()) {
            return bad("lambda_sym must be finite and non-negative");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        for (name, v) in [
            ("grad_tol", self.grad_tol),
            ("step_tol", self.step_tol),
            ("initial_damping", self.initial_damping),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    ZeroObjective,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub pose: Pose3D,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub reprojection_term: f64,
    /// Unweighted symmetry cost; the objective adds `lambda_sym` times this.
    pub symmetry_term: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Objective after each accepted step, starting with the initial value.
    pub objective_trace: Vec<f64>,
}

/// A camera paired with its 2D detection.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub camera: &'a Camera,
    pub detection: &'a Detection2D,
}

/// Resolve `(camera_id, detection)` pairs against the rig. The result is
/// sorted by camera id so downstream sums do not depend on input order.
pub fn observations<'a, I>(rig: &'a Rig, detections: I) -> Result<Vec<Observation<'a>>, OptimizeError>
where
    I: IntoIterator<Item = (&'a str, &'a Detection2D)>,
{
    let mut out = detections
        .into_iter()
        .map(|(id, detection)| {
            Ok(Observation {
                camera: rig.require(id)?,
                detection,
            })
        })
        .collect::<Result<Vec<_>, OptimizeError>>()?;
    out.sort_by(|a, b| a.camera.id.cmp(&b.camera.id));
    Ok(out)
}

/// Observations taken from the detections of a frame's view predictions.
pub fn observations_from_views<'a>(
    rig: &'a Rig,
    views: &'a [ViewPrediction],
) -> Result<Vec<Observation<'a>>, OptimizeError> {
    observations(rig, views.iter().map(|v| (v.camera_id.as_str(), &v.detection2d)))
}

/// Sum of squared left/right length differences, in m².
pub fn symmetry_cost(pose: &Pose3D, conv: &JointConvention) -> f64 {
    symmetry_residuals(pose, conv).iter().map(|r| r * r).sum()
}

/// The two parts of the objective at one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveTerms {
    pub reprojection: f64,
    pub symmetry: f64,
    pub lambda_sym: f64,
    /// `(joint, camera id)` pairs skipped because the joint projects behind the camera.
    pub behind_camera: Vec<(usize, String)>,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.reprojection + self.lambda_sym * self.symmetry
    }
}

fn check_shapes(joints: &[Point3], obs: &[Observation]) -> Result<(), OptimizeError> {
    for o in obs {
        let actual = o.detection.joints.len().min(o.detection.visible.len());
        if actual != joints.len() {
            return Err(OptimizeError::JointCountMismatch {
                camera: o.camera.id.clone(),
                expected: joints.len(),
                actual,
            });
        }
    }
    Ok(())
}

/// Camera-frame point, or `None` when it lies behind the camera.
#[inline]
fn camera_point(cam: &Camera, p: &Point3) -> Option<Point3> {
    let q = transform_to_camera(&cam.extrinsics, p);
    (q.z > DEFAULT_Z_MIN).then_some(q)
}

#[inline]
fn pixel_residual(cam: &Camera, q: &Point3, obs: &Point2) -> nalgebra::Vector2<f64> {
    let k = &cam.intrinsics;
    nalgebra::Vector2::new(
        k.fx * q.x / q.z + k.cx - obs.x,
        k.fy * q.y / q.z + k.cy - obs.y,
    )
}

/// Derivative of the pixel coordinates with respect to the world point.
#[inline]
fn pixel_jacobian(cam: &Camera, q: &Point3) -> Matrix2x3<f64> {
    let k = &cam.intrinsics;
    let iz = 1.0 / q.z;
    let d = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * q.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * q.y * iz * iz,
    );
    d * cam.extrinsics.rotation
}

fn terms_of(joints: &[Point3], obs: &[Observation], conv: &JointConvention, lambda_sym: f64) -> ObjectiveTerms {
    let mut reprojection = 0.0;
    let mut behind_camera = Vec::new();
    for o in obs {
        for (j, p) in joints.iter().enumerate() {
            if !o.detection.visible[j] {
                continue;
            }
            match camera_point(o.camera, p) {
                Some(q) => reprojection += pixel_residual(o.camera, &q, &o.detection.joints[j]).norm_squared(),
                None => behind_camera.push((j, o.camera.id.clone())),
            }
        }
    }
    let symmetry = pair_residuals(joints, conv).iter().map(|r| r * r).sum();
    ObjectiveTerms {
        reprojection,
        symmetry,
        lambda_sym,
        behind_camera,
    }
}

fn pair_residuals(joints: &[Point3], conv: &JointConvention) -> Vec<f64> {
    let d = |(a, b): (usize, usize)| (joints[a] - joints[b]).norm();
    conv.symmetric_pairs()
        .iter()
        .map(|p| d(p.left) - d(p.right))
        .collect()
}

/// Objective decomposition at `pose`.
pub fn objective_terms(
    pose: &Pose3D,
    obs: &[Observation],
    conv: &JointConvention,
    config: &ObjectiveConfig,
) -> Result<ObjectiveTerms, OptimizeError> {
    check_shapes(&pose.joints, obs)?;
    Ok(terms_of(&pose.joints, obs, conv, config.lambda_sym))
}

/// Total objective: reprojection error plus `lambda_sym` times the symmetry cost.
pub fn objective(
    pose: &Pose3D,
    obs: &[Observation],
    conv: &JointConvention,
    config: &ObjectiveConfig,
) -> Result<f64, OptimizeError> {
    Ok(objective_terms(pose, obs, conv, config)?.total())
}

/// Normal equations `JᵀJ` and `Jᵀr` of the residual vector at `joints`.
struct Normal {
    jtj: DMatrix<f64>,
    jtr: DVector<f64>,
}

/// Unit direction from `b` to `a`, or zero for coincident joints.
#[inline]
fn unit(a: &Point3, b: &Point3) -> Vector3<f64> {
    let d = a - b;
    let n = d.norm();
    if n > 0.0 {
        d / n
    } else {
        Vector3::zeros()
    }
}

fn normal_equations(joints: &[Point3], obs: &[Observation], conv: &JointConvention, lambda_sym: f64) -> Normal {
    let n = 3 * joints.len();
    let mut jtj = DMatrix::zeros(n, n);
    let mut jtr = DVector::zeros(n);

    for o in obs {
        for (j, p) in joints.iter().enumerate() {
            if !o.detection.visible[j] {
                continue;
            }
            let Some(q) = camera_point(o.camera, p) else {
                continue;
            };
            let r = pixel_residual(o.camera, &q, &o.detection.joints[j]);
            let jac = pixel_jacobian(o.camera, &q);
            let block: Matrix3<f64> = jac.transpose() * jac;
            let mut view = jtj.fixed_view_mut::<3, 3>(3 * j, 3 * j);
            view += block;
            let mut g = jtr.fixed_rows_mut::<3>(3 * j);
            g += jac.transpose() * r;
        }
    }

    if lambda_sym > 0.0 {
        let s = lambda_sym.sqrt();
        for pair in conv.symmetric_pairs() {
            let (ul, vl) = pair.left;
            let (ur, vr) = pair.right;
            let res = s * ((joints[ul] - joints[vl]).norm() - (joints[ur] - joints[vr]).norm());
            let el = unit(&joints[ul], &joints[vl]);
            let er = unit(&joints[ur], &joints[vr]);
            // Sparse gradient of the scaled residual over its four joints.
            let entries = [(ul, s * el), (vl, -s * el), (ur, -s * er), (vr, s * er)];
            for (a, ga) in &entries {
                let mut g = jtr.fixed_rows_mut::<3>(3 * a);
                g += ga * res;
                for (b, gb) in &entries {
                    let mut view = jtj.fixed_view_mut::<3, 3>(3 * a, 3 * b);
                    view += ga * gb.transpose();
                }
            }
        }
    }
    Normal { jtj, jtr }
}

/// Analytic gradient of the objective, laid out as `[x0, y0, z0, x1, ...]`.
pub fn gradient(
    pose: &Pose3D,
    obs: &[Observation],
    conv: &JointConvention,
    config: &ObjectiveConfig,
) -> Result<DVector<f64>, OptimizeError> {
    check_shapes(&pose.joints, obs)?;
    Ok(normal_equations(&pose.joints, obs, conv, config.lambda_sym).jtr * 2.0)
}

fn apply_step(joints: &[Point3], step: &DVector<f64>) -> Vec<Point3> {
    joints
        .iter()
        .enumerate()
        .map(|(j, p)| p + step.fixed_rows::<3>(3 * j))
        .collect()
}

/// Minimise the objective starting from `initial`.
///
/// Only steps that strictly lower the objective are accepted, so the returned
/// pose is the best one seen and `final_objective <= initial_objective`.
pub fn refine(
    initial: &Pose3D,
    obs: &[Observation],
    conv: &JointConvention,
    config: &ObjectiveConfig,
) -> Result<OptimizationResult, OptimizeError> {
    config.validate()?;
    check_shapes(&initial.joints, obs)?;
    let lambda = config.lambda_sym;

    let mut joints = initial.joints.clone();
    let mut terms = terms_of(&joints, obs, conv, lambda);
    let initial_objective = terms.total();
    if !initial_objective.is_finite() {
        return Err(OptimizeError::NonFiniteObjective(initial_objective));
    }
    let mut f = initial_objective;
    let mut trace = vec![f];
    let mut normal = normal_equations(&joints, obs, conv, lambda);

    let n = normal.jtr.len();
    let max_diag = normal.jtj.diagonal().max();
    let mut mu = config.initial_damping * if max_diag > 0.0 { max_diag } else { 1.0 };
    let mut nu = 2.0;

    let mut iterations = 0;
    let termination = loop {
        if f == 0.0 {
            break Termination::ZeroObjective;
        }
        if 2.0 * normal.jtr.amax() <= config.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= config.max_iters {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let mut lhs = normal.jtj.clone();
        for i in 0..n {
            lhs[(i, i)] += mu;
        }
        let step = match lhs.cholesky() {
            Some(ch) => -ch.solve(&normal.jtr),
            None => {
                mu *= nu;
                nu *= 2.0;
                continue;
            }
        };
        if step.norm() <= config.step_tol {
            break Termination::StepTolerance;
        }

        let candidate = apply_step(&joints, &step);
        let cand_terms = terms_of(&candidate, obs, conv, lambda);
        let f_new = cand_terms.total();
        let predicted = step.dot(&(mu * &step - &normal.jtr));
        if f_new.is_finite() && f_new < f && predicted > 0.0 {
            let rho = (f - f_new) / predicted;
            joints = candidate;
            terms = cand_terms;
            f = f_new;
            trace.push(f);
            normal = normal_equations(&joints, obs, conv, lambda);
            mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
        } else {
            mu *= nu;
            nu *= 2.0;
        }
    };
    debug_assert!(trace.windows(2).all(|w| w[1] <= w[0]) && f <= initial_objective);

    Ok(OptimizationResult {
        pose: Pose3D {
            joints,
            confidence: initial.confidence.clone(),
            source_camera: initial.source_camera.clone(),
        },
        initial_objective,
        final_objective: f,
        reprojection_term: terms.reprojection,
        symmetry_term: terms.symmetry,
        iterations,
        converged: termination != Termination::MaxIterations,
        termination,
        objective_trace: trace,
    })
}

/// [`refine`] against the detections carried by a frame's view predictions.
pub fn refine_views(
    initial: &Pose3D,
    rig: &Rig,
    views: &[ViewPrediction],
    conv: &JointConvention,
    config: &ObjectiveConfig,
) -> Result<OptimizationResult, OptimizeError> {
    let obs = observations_from_views(rig, views)?;
    refine(initial, &obs, conv, config)
}
