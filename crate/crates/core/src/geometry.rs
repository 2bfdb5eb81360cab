//! Pinhole projection chain: world frame -> camera frame -> pixels.
//!
//! Conventions: a world point maps to the camera frame as `Pc = R Pw + t`,
//! and to pixels through the upper-triangular intrinsic matrix
//!
//! ```text
//!     | alpha  gamma  u0 |
//! A = |   0    beta   v0 |
//!     |   0     0      1 |
//! ```
//!
//! Angles are radians throughout the library.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Tolerance on `RᵀR = I` and `det R = 1`.
pub const ROTATION_TOL: f64 = 1e-9;

const DEPTH_EPS: f64 = 1e-12;
const GIMBAL_EPS: f64 = 1e-9;

/// World point, centimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3W {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3W {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// Pixel coordinates. Pixel `(row r, col c)` has its center at `(u, v) = (c, r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2Px {
    pub u: f64,
    pub v: f64,
}

impl Point2Px {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn dist(self, other: Point2Px) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Camera-plane coordinates with unit third component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPoint {
    pub x: f64,
    pub y: f64,
}

impl NormalizedPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// The five linear intrinsic parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub u0: f64,
    pub v0: f64,
}

impl CameraIntrinsics {
    pub fn new(alpha: f64, beta: f64, gamma: f64, u0: f64, v0: f64) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            u0,
            v0,
        }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 1.0, 0.0, 0.0, 0.0)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.alpha, self.gamma, self.u0, //
            0.0, self.beta, self.v0, //
            0.0, 0.0, 1.0,
        )
    }

    /// Closed-form `A⁻¹`.
    pub fn inverse_matrix(&self) -> Result<Matrix3<f64>> {
        self.check_invertible()?;
        let (a, b, g, u0, v0) = (self.alpha, self.beta, self.gamma, self.u0, self.v0);
        Ok(Matrix3::new(
            1.0 / a,
            -g / (a * b),
            -u0 / a + v0 * g / (a * b),
            0.0,
            1.0 / b,
            -v0 / b,
            0.0,
            0.0,
            1.0,
        ))
    }

    pub fn check_invertible(&self) -> Result<()> {
        if !(self.alpha * self.beta).is_finite() || (self.alpha * self.beta).abs() < 1e-12 {
            return Err(Error::SingularIntrinsics);
        }
        Ok(())
    }
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    /// Validates orthonormality and `det = +1` within [`ROTATION_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let r = Rotation3(m);
        if r.orthonormality_error() >= ROTATION_TOL || (m.determinant() - 1.0).abs() >= ROTATION_TOL
        {
            return Err(Error::InvalidInput(format!(
                "matrix is not a rotation (orthonormality error {:e}, det {})",
                r.orthonormality_error(),
                m.determinant()
            )));
        }
        Ok(r)
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation3(m)
    }

    pub fn identity() -> Self {
        Rotation3(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rotation3 {
        Rotation3(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation3) -> Rotation3 {
        Rotation3(self.0 * other.0)
    }

    /// `max |RᵀR - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }

    pub fn rz(angle: f64) -> Rotation3 {
        let (s, c) = angle.sin_cos();
        Rotation3(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn ry(angle: f64) -> Rotation3 {
        let (s, c) = angle.sin_cos();
        Rotation3(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rx(angle: f64) -> Rotation3 {
        let (s, c) = angle.sin_cos();
        Rotation3(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }
}

/// Camera pose: `Pc = rot · Pw + t`, translation in centimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub rot: Rotation3,
    pub t: Vector3<f64>,
}

impl Extrinsics {
    pub fn new(rot: Rotation3, t: Vector3<f64>) -> Self {
        Self { rot, t }
    }

    pub fn to_camera(&self, pw: Point3W) -> Vector3<f64> {
        self.rot.matrix() * pw.to_vector() + self.t
    }
}

/// ZYZ Euler angles, `R = Rz(a) Ry(b) Rz(c)`, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerZYZ {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl EulerZYZ {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }
}

/// Projects a world point to pixels. The homogeneous scale equals the
/// camera-frame depth `Zc`.
pub fn project(pw: Point3W, ex: &Extrinsics, k: &CameraIntrinsics) -> Result<Point2Px> {
    let pc = ex.to_camera(pw);
    let n = camera_to_normalized(&pc)?;
    Ok(denormalize(n, k))
}

pub(crate) fn camera_to_normalized(pc: &Vector3<f64>) -> Result<NormalizedPoint> {
    if !(pc.z.abs() >= DEPTH_EPS) {
        return Err(Error::DegenerateDepth(pc.z));
    }
    Ok(NormalizedPoint::new(pc.x / pc.z, pc.y / pc.z))
}

/// `A⁻¹ [u v 1]ᵀ`.
pub fn normalize(p: Point2Px, k: &CameraIntrinsics) -> Result<NormalizedPoint> {
    k.check_invertible()?;
    let y = (p.v - k.v0) / k.beta;
    let x = (p.u - k.u0 - k.gamma * y) / k.alpha;
    Ok(NormalizedPoint::new(x, y))
}

/// `A [x y 1]ᵀ`.
pub fn denormalize(n: NormalizedPoint, k: &CameraIntrinsics) -> Point2Px {
    Point2Px::new(
        k.alpha * n.x + k.gamma * n.y + k.u0,
        k.beta * n.y + k.v0,
    )
}

pub fn euler_zyz_from_rotation(rot: &Rotation3) -> Result<EulerZYZ> {
    let r = rot.matrix();
    let sb_mag = r[(2, 0)].hypot(r[(2, 1)]);
    if sb_mag < GIMBAL_EPS {
        return Err(Error::GimbalDegenerate);
    }
    let b = sb_mag.atan2(r[(2, 2)]);
    let sb = b.sin();
    let a = (r[(1, 2)] / sb).atan2(r[(0, 2)] / sb);
    let c = (r[(2, 1)] / sb).atan2(-r[(2, 0)] / sb);
    Ok(EulerZYZ::new(a, b, c))
}

pub fn rotation_from_euler_zyz(e: EulerZYZ) -> Rotation3 {
    Rotation3::rz(e.a)
        .compose(&Rotation3::ry(e.b))
        .compose(&Rotation3::rz(e.c))
}

/// Like [`euler_zyz_from_rotation`], but at the singularity returns the
/// `c = 0` representative instead of failing. Used only for reporting.
pub fn euler_zyz_lenient(rot: &Rotation3) -> EulerZYZ {
    euler_zyz_from_rotation(rot).unwrap_or_else(|_| {
        let r = rot.matrix();
        if r[(2, 2)] > 0.0 {
            EulerZYZ::new(r[(1, 0)].atan2(r[(0, 0)]), 0.0, 0.0)
        } else {
            EulerZYZ::new((-r[(1, 0)]).atan2(-r[(0, 0)]), std::f64::consts::PI, 0.0)
        }
    })
}
