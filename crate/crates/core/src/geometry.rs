//! Pinhole camera model.
//!
//! World points are mapped into a camera frame with `q = R·p + t` and then
//! projected with the intrinsic matrix, dividing by depth. There is no lens
//! distortion. All types are plain values and every operation is pure.

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// World-frame point in meters.
pub type Point3 = Vector3<f64>;
/// Pixel-frame point.
pub type Point2 = Vector2<f64>;

/// Points closer than this to the camera plane are treated as behind it.
pub const DEFAULT_Z_MIN: f64 = 1e-6;

/// Tolerance used when validating rotation matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth} m)")]
    BehindCamera { depth: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal (max |RᵀR − I| = {deviation:e}, det = {det})")]
    NotOrthonormal { deviation: f64, det: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("duplicate camera id `{0}`")]
    DuplicateCameraId(String),
    #[error("unknown camera id `{0}`")]
    UnknownCamera(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if ![self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(GeometryError::NonFinite("intrinsics"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "image size must be positive ({}x{})",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Map a camera-frame point to pixels. Caller guarantees positive depth.
    #[inline]
    fn apply(&self, q: &Point3) -> Point2 {
        Point2::new(
            self.fx * q.x / q.z + self.cx,
            self.fy * q.y / q.z + self.cy,
        )
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let e = Self {
            rotation,
            translation,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Build extrinsics from a camera center in world coordinates and a
    /// world-to-camera rotation.
    pub fn from_center(rotation: Matrix3<f64>, center: Point3) -> Result<Self, GeometryError> {
        Self::new(rotation, -(rotation * center))
    }

    /// Largest deviation of `RᵀR` from identity, and the determinant.
    pub fn orthonormality_defect(&self) -> (f64, f64) {
        let r = &self.rotation;
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        (dev, r.determinant())
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.rotation.iter().all(|v| v.is_finite())
            || !self.translation.iter().all(|v| v.is_finite())
        {
            return Err(GeometryError::NonFinite("extrinsics"));
        }
        let (deviation, det) = self.orthonormality_defect();
        if deviation > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotOrthonormal { deviation, det });
        }
        Ok(())
    }

    /// Camera center in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Point3 {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Apply `R·p + t`.
#[inline]
pub fn transform_to_camera(extrinsics: &CameraExtrinsics, p: &Point3) -> Point3 {
    extrinsics.rotation * p + extrinsics.translation
}

/// Inverse of [`transform_to_camera`].
#[inline]
pub fn transform_to_world(extrinsics: &CameraExtrinsics, q: &Point3) -> Point3 {
    extrinsics.rotation.transpose() * (q - extrinsics.translation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: String,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

impl Camera {
    pub fn new(
        id: impl Into<String>,
        intrinsics: CameraIntrinsics,
        extrinsics: CameraExtrinsics,
    ) -> Self {
        Self {
            id: id.into(),
            intrinsics,
            extrinsics,
        }
    }

    pub fn project(&self, p: &Point3) -> Result<Point2, GeometryError> {
        project_with_z_min(self, p, DEFAULT_Z_MIN)
    }

    pub fn center(&self) -> Point3 {
        self.extrinsics.center()
    }

    /// Back-project pixel `(u, v)` to the world point at camera-frame depth `depth`.
    pub fn unproject(&self, pixel: &Point2, depth: f64) -> Point3 {
        let k = &self.intrinsics;
        let q = Point3::new(
            (pixel.x - k.cx) / k.fx * depth,
            (pixel.y - k.cy) / k.fy * depth,
            depth,
        );
        transform_to_world(&self.extrinsics, &q)
    }
}

/// Project a world point to pixels. The result may fall outside the image.
pub fn project(camera: &Camera, p: &Point3) -> Result<Point2, GeometryError> {
    project_with_z_min(camera, p, DEFAULT_Z_MIN)
}

pub fn project_with_z_min(
    camera: &Camera,
    p: &Point3,
    z_min: f64,
) -> Result<Point2, GeometryError> {
    let q = transform_to_camera(&camera.extrinsics, p);
    if q.z <= z_min || q.z.is_nan() {
        return Err(GeometryError::BehindCamera { depth: q.z });
    }
    Ok(camera.intrinsics.apply(&q))
}

/// Squared pixel distance between the projection of `p` and `obs`.
pub fn reprojection_error_sq(
    camera: &Camera,
    p: &Point3,
    obs: &Point2,
) -> Result<f64, GeometryError> {
    Ok((project(camera, p)? - obs).norm_squared())
}

/// An ordered set of cameras sharing one world frame, with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Camera>", into = "Vec<Camera>")]
pub struct Rig {
    cameras: Vec<Camera>,
}

impl Rig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self, GeometryError> {
        let mut seen = HashSet::new();
        for cam in &cameras {
            if !seen.insert(cam.id.as_str()) {
                return Err(GeometryError::DuplicateCameraId(cam.id.clone()));
            }
            cam.intrinsics.validate()?;
            cam.extrinsics.validate()?;
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Camera> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.cameras.iter().position(|c| c.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&Camera, GeometryError> {
        self.get(id)
            .ok_or_else(|| GeometryError::UnknownCamera(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.cameras.iter().map(|c| c.id.as_str())
    }

    /// Subset of the rig keeping only the listed ids, in rig order.
    pub fn retain_ids(&self, keep: &[&str]) -> Rig {
        Rig {
            cameras: self
                .cameras
                .iter()
                .filter(|c| keep.contains(&c.id.as_str()))
                .cloned()
                .collect(),
        }
    }
}

impl TryFrom<Vec<Camera>> for Rig {
    type Error = GeometryError;
    fn try_from(cameras: Vec<Camera>) -> Result<Self, Self::Error> {
        Rig::new(cameras)
    }
}

impl From<Rig> for Vec<Camera> {
    fn from(rig: Rig) -> Self {
        rig.cameras
    }
}

/// Rotation of `angle` radians about the unit `axis`.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).into_inner()
}
