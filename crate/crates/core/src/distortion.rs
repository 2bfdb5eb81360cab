//! Radial distortion about the principal point and its inverse.
//!
//! A distorted normalized point is `(x', y') = f(r) · (x, y)` with
//! `r² = x² + y²` and one of three radial factors:
//!
//! - Model 1: `f(r) = 1 + k1 r² + k2 r⁴`
//! - Model 2: `f(r) = 1 + k1 r²`
//! - Model 3: `f(r) = 1 + k1 r + k2 r²`
//!
//! Along a ray `y = c x` each model reduces to an odd scalar polynomial in
//! `x`. Models 2 and 3 are cubics and are inverted in closed form; model 1
//! is quintic and is inverted by fixed-point iteration.

use crate::error::{Error, Result};
use crate::geometry::{denormalize, normalize, CameraIntrinsics, NormalizedPoint, Point2Px};
use crate::imaging::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RadialModel {
    Model1,
    Model2,
    Model3,
}

impl RadialModel {
    pub const ALL: [RadialModel; 3] = [RadialModel::Model1, RadialModel::Model2, RadialModel::Model3];

    /// Model number as written in text files (1, 2 or 3).
    pub fn tag(self) -> u8 {
        match self {
            RadialModel::Model1 => 1,
            RadialModel::Model2 => 2,
            RadialModel::Model3 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(RadialModel::Model1),
            2 => Some(RadialModel::Model2),
            3 => Some(RadialModel::Model3),
            _ => None,
        }
    }

    /// The two radial basis terms multiplying `(k1, k2)` in `f(r) - 1`.
    /// Model 2 has no second term.
    pub fn basis(self, r2: f64) -> (f64, f64) {
        match self {
            RadialModel::Model1 => (r2, r2 * r2),
            RadialModel::Model2 => (r2, 0.0),
            RadialModel::Model3 => (r2.sqrt(), r2),
        }
    }
}

/// Radial distortion coefficients and the model they belong to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionCoeffs {
    pub k1: f64,
    pub k2: f64,
    pub model: RadialModel,
}

impl DistortionCoeffs {
    /// Model 2 ignores `k2`; it is stored as zero.
    pub fn new(model: RadialModel, k1: f64, k2: f64) -> Self {
        let k2 = if model == RadialModel::Model2 { 0.0 } else { k2 };
        Self { k1, k2, model }
    }

    pub fn none(model: RadialModel) -> Self {
        Self::new(model, 0.0, 0.0)
    }

    /// `f(r)` evaluated from `r²`.
    pub fn factor(&self, r2: f64) -> f64 {
        let (b1, b2) = self.model.basis(r2);
        1.0 + self.k1 * b1 + self.k2 * b2
    }

    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0
    }
}

/// `A⁻¹ [u_d v_d 1]ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortedNormalized {
    pub x: f64,
    pub y: f64,
}

impl DistortedNormalized {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

pub fn distort_normalized(n: NormalizedPoint, d: &DistortionCoeffs) -> DistortedNormalized {
    let f = d.factor(n.x * n.x + n.y * n.y);
    DistortedNormalized::new(n.x * f, n.y * f)
}

/// Distorts an ideal pixel: `u_d = u + (u - u0)(f(r) - 1)`, likewise for `v`.
pub fn distort_pixel(p: Point2Px, k: &CameraIntrinsics, d: &DistortionCoeffs) -> Result<Point2Px> {
    let n = normalize(p, k)?;
    let g = d.factor(n.x * n.x + n.y * n.y) - 1.0;
    Ok(Point2Px::new(p.u + (p.u - k.u0) * g, p.v + (p.v - k.v0) * g))
}

pub fn undistort_normalized(q: DistortedNormalized, d: &DistortionCoeffs) -> Result<NormalizedPoint> {
    if !(q.x.is_finite() && q.y.is_finite()) {
        return Err(Error::InvalidInput("non-finite distorted point".into()));
    }
    if q.x == 0.0 && q.y == 0.0 {
        return Ok(NormalizedPoint::new(0.0, 0.0));
    }
    if d.is_zero() {
        return Ok(NormalizedPoint::new(q.x, q.y));
    }
    match d.model {
        RadialModel::Model1 => undistort_fixed_point(q, d),
        RadialModel::Model2 | RadialModel::Model3 => undistort_along_ray(q, d),
    }
}

pub fn undistort_pixel(pd: Point2Px, k: &CameraIntrinsics, d: &DistortionCoeffs) -> Result<Point2Px> {
    let q = normalize(pd, k)?;
    let n = undistort_normalized(DistortedNormalized::new(q.x, q.y), d)?;
    Ok(denormalize(n, k))
}

/// Resamples `img` so that straight world lines become straight: each output
/// pixel is pushed through the forward distortion and the source is sampled
/// bilinearly there. Samples falling outside the source are 0.
pub fn undistort_image(img: &GrayImage, k: &CameraIntrinsics, d: &DistortionCoeffs) -> Result<GrayImage> {
    k.check_invertible()?;
    let (w, h) = (img.width(), img.height());
    let mut out = vec![0u8; w * h];
    for row in 0..h {
        for col in 0..w {
            let src = distort_pixel(Point2Px::new(col as f64, row as f64), k, d)?;
            out[row * w + col] = sample_bilinear(img, src.u, src.v).unwrap_or(0);
        }
    }
    GrayImage::new(w, h, out)
}

fn sample_bilinear(img: &GrayImage, u: f64, v: f64) -> Option<u8> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if !(u >= 0.0 && v >= 0.0 && u <= w - 1.0 && v <= h - 1.0) {
        return None;
    }
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let p = |r: usize, c: usize| img.get(r, c) as f64;
    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
    let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
    Some((top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8)
}

const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_MAX_ITER: usize = 100;

fn undistort_fixed_point(q: DistortedNormalized, d: &DistortionCoeffs) -> Result<NormalizedPoint> {
    let residual = |x: f64, y: f64| {
        let f = d.factor(x * x + y * y);
        (x * f - q.x).hypot(y * f - q.y)
    };
    let (mut x, mut y) = (q.x, q.y);
    let mut omega = 1.0;
    let mut last = residual(x, y);
    let scale = 1.0 + q.x.hypot(q.y);
    for _ in 0..FIXED_POINT_MAX_ITER {
        let f = d.factor(x * x + y * y);
        if !(f > 0.0) {
            return Err(Error::NoConvergence);
        }
        let (dx, dy) = (q.x / f - x, q.y / f - y);
        x += omega * dx;
        y += omega * dy;
        if dx.hypot(dy) * omega < FIXED_POINT_TOL * scale {
            return Ok(NormalizedPoint::new(x, y));
        }
        let res = residual(x, y);
        if res > last {
            omega = (omega * 0.5).max(1.0 / 64.0);
        }
        last = res;
    }
    Err(Error::NoConvergence)
}

/// Models 2 and 3: parameterize the ray by its dominant coordinate `t` with
/// the other coordinate `c·t`, solve the scalar cubic, pick the admissible root.
fn undistort_along_ray(q: DistortedNormalized, d: &DistortionCoeffs) -> Result<NormalizedPoint> {
    let swap = q.x.abs() < q.y.abs();
    let (tp, other) = if swap { (q.y, q.x) } else { (q.x, q.y) };
    let c = other / tp;
    let s2 = 1.0 + c * c;
    let s = s2.sqrt();

    let mut candidates: Vec<f64> = Vec::with_capacity(6);
    match d.model {
        RadialModel::Model2 => {
            // k1 s² t³ + t - t' = 0
            candidates.extend(solve_cubic(d.k1 * s2, 0.0, 1.0, -tp));
        }
        RadialModel::Model3 => {
            // t > 0: k2 s² t³ + k1 s t² + t - t' = 0
            candidates.extend(
                solve_cubic(d.k2 * s2, d.k1 * s, 1.0, -tp)
                    .into_iter()
                    .filter(|&t| t > 0.0),
            );
            // t < 0: k2 s² t³ - k1 s t² + t - t' = 0
            candidates.extend(
                solve_cubic(d.k2 * s2, -d.k1 * s, 1.0, -tp)
                    .into_iter()
                    .filter(|&t| t < 0.0),
            );
        }
        RadialModel::Model1 => unreachable!("model 1 has no closed-form inverse"),
    }

    let forward = |t: f64| {
        let r2 = s2 * t * t;
        t * d.factor(r2)
    };
    let tie = 1e-12 * (1.0 + tp.abs());
    let best = candidates
        .into_iter()
        .filter(|t| t.is_finite())
        .map(|t| ((forward(t) - tp).abs(), t))
        .fold(None::<(f64, f64)>, |best, (res, t)| match best {
            None => Some((res, t)),
            Some((bres, bt)) => {
                if res < bres - tie || (res <= bres + tie && (t - tp).abs() < (bt - tp).abs()) {
                    Some((res, t))
                } else {
                    Some((bres, bt))
                }
            }
        });
    let (res, t) = best.ok_or(Error::NoRealRoot)?;
    if res > 1e-9 * (1.0 + tp.abs()) {
        return Err(Error::NoRealRoot);
    }
    let (x, y) = if swap { (c * t, t) } else { (t, c * t) };
    Ok(NormalizedPoint::new(x, y))
}

const CUBIC_DISCRIMINANT_GUARD: f64 = 1e-14;

/// Real roots of `a t³ + b t² + c t + d = 0` by the Cardano / trigonometric
/// formulas, each polished with two Newton steps. Degrades to the quadratic
/// or linear formula when leading coefficients vanish.
pub fn solve_cubic(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let scale = b.abs().max(c.abs()).max(d.abs());
    let roots = if a.abs() <= f64::EPSILON * scale {
        solve_quadratic(b, c, d)
    } else {
        let (b, c, d) = (b / a, c / a, d / a);
        // t = s - b/3 gives s³ + p s + q = 0
        let shift = b / 3.0;
        let p = c - b * b / 3.0;
        let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
        let half_q = q / 2.0;
        let third_p = p / 3.0;
        let disc = half_q * half_q + third_p * third_p * third_p;
        let disc_scale = half_q * half_q + third_p.abs().powi(3);
        if disc > CUBIC_DISCRIMINANT_GUARD * disc_scale {
            let sq = disc.sqrt();
            // Choose the non-cancelling branch, then recover the other cube root.
            let w = if half_q > 0.0 { -half_q - sq } else { -half_q + sq };
            let u = w.cbrt();
            let s = if u == 0.0 { 0.0 } else { u - third_p / u };
            vec![s - shift]
        } else if disc < -CUBIC_DISCRIMINANT_GUARD * disc_scale {
            let m = 2.0 * (-third_p).sqrt();
            let theta = (3.0 * q / (p * m)).clamp(-1.0, 1.0).acos() / 3.0;
            (0..3)
                .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift)
                .collect()
        } else if p == 0.0 {
            vec![-shift]
        } else {
            vec![3.0 * q / p - shift, -1.5 * q / p - shift]
        }
    };
    roots
        .into_iter()
        .map(|t| polish(a, b, c, d, t))
        .collect()
}

fn solve_quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a.abs() <= f64::EPSILON * b.abs().max(c.abs()) {
        if b == 0.0 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    let qq = -0.5 * (b + b.signum() * sq);
    if qq == 0.0 {
        return vec![0.0];
    }
    vec![qq / a, c / qq]
}

fn polish(a: f64, b: f64, c: f64, d: f64, mut t: f64) -> f64 {
    for _ in 0..2 {
        let f = ((a * t + b) * t + c) * t + d;
        let df = (3.0 * a * t + 2.0 * b) * t + c;
        if df == 0.0 || !f.is_finite() {
            break;
        }
        let next = t - f / df;
        if !next.is_finite() {
            break;
        }
        t = next;
    }
    t
}
