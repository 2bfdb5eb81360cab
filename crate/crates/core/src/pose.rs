//! Single-view pose tools: camera orientation from one view of a known
//! plane, and yaw/position correction of a ground vehicle from one observed
//! line segment of known location.
//!
//! This module uses the robot-centric convention `Pc = R⁻¹ (Pw − t)`: `R`
//! orients the camera in the world and `t` is the camera center. Convert
//! from calibration extrinsics with [`CameraPose::from_extrinsics`].

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::calib::extrinsics_from_homography;
use crate::distortion::{distort_pixel, undistort_pixel, DistortionCoeffs};
use crate::error::{Error, Result};
use crate::geometry::{
    euler_zyz_from_rotation, normalize, project, CameraIntrinsics, EulerZYZ, Extrinsics, Point2Px, Point3W, Rotation3,
};
use crate::homography::{estimate_homography, PlanarCorrespondences};

/// Camera orientation `rot` (camera to world) and center `t`, world units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rot: Rotation3,
    pub t: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rot: Rotation3, t: Vector3<f64>) -> Self {
        Self { rot, t }
    }

    /// From `Pc = R·Pw + t` extrinsics.
    pub fn from_extrinsics(ex: &Extrinsics) -> Self {
        let rot = ex.rot.transpose();
        let t = -(rot.matrix() * ex.t);
        Self { rot, t }
    }

    pub fn to_extrinsics(&self) -> Extrinsics {
        let rot = self.rot.transpose();
        let t = -(rot.matrix() * self.t);
        Extrinsics::new(rot, t)
    }

    pub fn to_camera(&self, pw: Point3W) -> Vector3<f64> {
        self.rot.matrix().transpose() * (pw.to_vector() - self.t)
    }
}

/// Known ground-plane endpoints of a line and their observed (distorted)
/// pixel positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineObservation {
    pub world_a: Point3W,
    pub world_b: Point3W,
    pub image_a: Point2Px,
    pub image_b: Point2Px,
}

/// Yaw and position correction: the true pose is
/// `R1 = ΔR⁻¹·R2`, `t1`, where `ΔR` is a rotation by `delta_theta` about `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseCorrection {
    pub delta_theta: f64,
    pub t1: Vector3<f64>,
}

impl PoseCorrection {
    pub fn delta_r(&self) -> Rotation3 {
        Rotation3::rz(self.delta_theta)
    }

    /// The corrected pose, given the assumed one.
    pub fn corrected(&self, assumed: &CameraPose) -> CameraPose {
        CameraPose::new(self.delta_r().transpose().compose(&assumed.rot), self.t1)
    }
}

/// ZYZ angles of the target-to-camera rotation estimated from one view of the
/// planar target.
pub fn pan_tilt_from_view(
    world: &[(f64, f64)],
    corners: &[Point2Px],
    k: &CameraIntrinsics,
) -> Result<EulerZYZ> {
    let c = PlanarCorrespondences::new(world.to_vec(), corners.to_vec())?;
    let h = estimate_homography(&c)?;
    let ex = extrinsics_from_homography(&h, k)?;
    euler_zyz_from_rotation(&ex.rot)
}

/// Ground-plane (`Z = 0`) point seen at the distorted pixel `pd` from `pose`.
pub fn back_project_to_ground(
    pd: Point2Px,
    k: &CameraIntrinsics,
    d: &DistortionCoeffs,
    pose: &CameraPose,
) -> Result<Point3W> {
    let ideal = undistort_pixel(pd, k, d)?;
    let n = normalize(ideal, k)?;
    // Rows of R⁻¹ applied to (X − tx, Y − ty, −tz); X^c = x·Z^c, Y^c = y·Z^c.
    let m = pose.rot.matrix().transpose();
    let e1 = m.row(0) - m.row(2) * n.x;
    let e2 = m.row(1) - m.row(2) * n.y;
    let a = Matrix2::new(e1[0], e1[1], e2[0], e2[1]);
    let det = a.determinant();
    if det.abs() < 1e-12 * e1.norm() * e2.norm() {
        return Err(Error::RayParallelToPlane);
    }
    let t = pose.t;
    let rhs = Vector2::new(
        e1[0] * t.x + e1[1] * t.y + e1[2] * t.z,
        e2[0] * t.x + e2[1] * t.y + e2[2] * t.z,
    );
    let xy = a.try_inverse().ok_or(Error::RayParallelToPlane)? * rhs;
    let p = Point3W::new(xy.x, xy.y, 0.0);
    if pose.to_camera(p).z <= 0.0 {
        return Err(Error::InvalidInput("ground point lies behind the camera".into()));
    }
    Ok(p)
}

/// Non-iterative yaw and `(x, y)` correction from one line of known
/// location, assuming only the vehicle's yaw and planar position are off.
///
/// `t1` comes from `ΔR (P − t1) = P' − t2` for each endpoint `P` and its
/// back-projection `P'`; the two endpoint solutions are averaged.
pub fn align_from_line(
    obs: &LineObservation,
    k: &CameraIntrinsics,
    d: &DistortionCoeffs,
    assumed: &CameraPose,
) -> Result<PoseCorrection> {
    let (pa, pb) = (obs.world_a.to_vector(), obs.world_b.to_vector());
    let world_dir = Vector2::new(pb.x - pa.x, pb.y - pa.y);
    if world_dir.norm() < 1e-12 {
        return Err(Error::DegenerateLine);
    }
    let paa = back_project_to_ground(obs.image_a, k, d, assumed)?.to_vector();
    let pbb = back_project_to_ground(obs.image_b, k, d, assumed)?.to_vector();
    let seen_dir = Vector2::new(pbb.x - paa.x, pbb.y - paa.y);
    if seen_dir.norm() < 1e-9 * (1.0 + paa.norm()) {
        return Err(Error::DegenerateLine);
    }
    let cross = world_dir.x * seen_dir.y - world_dir.y * seen_dir.x;
    let dot = world_dir.dot(&seen_dir);
    let delta_theta = cross.atan2(dot);
    // atan2 yields (−π, π]; fold −π onto π.
    let delta_theta = if delta_theta == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        delta_theta
    };

    let inv = Rotation3::rz(-delta_theta);
    let t_from = |p: &Vector3<f64>, seen: &Vector3<f64>| p - inv.matrix() * (seen - assumed.t);
    let t1 = (t_from(&pa, &paa) + t_from(&pb, &pbb)) / 2.0;
    Ok(PoseCorrection { delta_theta, t1 })
}

/// Pixel where `pw` appears from `pose`, distortion included.
pub fn observe(pw: Point3W, pose: &CameraPose, k: &CameraIntrinsics, d: &DistortionCoeffs) -> Result<Point2Px> {
    let ideal = project(pw, &pose.to_extrinsics(), k)?;
    distort_pixel(ideal, k, d)
}
