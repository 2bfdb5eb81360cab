//! Synthetic ground truth: the box target, camera poses, exact and noisy
//! corner projections, and rendered images.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::distortion::{distort_pixel, undistort_pixel, DistortionCoeffs, RadialModel};
use crate::error::{Error, Result};
use crate::geometry::{project, rotation_from_euler_zyz, CameraIntrinsics, EulerZYZ, Extrinsics, Point2Px, Point3W};
use crate::imaging::GrayImage;

/// Box intensity in rendered images.
pub const DARK: u8 = 40;
/// Paper intensity in rendered images.
pub const LIGHT: u8 = 220;
const SUPERSAMPLE: usize = 4;

/// Grid of `boxes_x × boxes_y` square boxes of side `side`, separated by
/// `gap` (centimeters). Box `(0, 0)` has its top-left corner at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSpec {
    pub boxes_x: usize,
    pub boxes_y: usize,
    pub side: f64,
    pub gap: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            boxes_x: 8,
            boxes_y: 8,
            side: 1.3,
            gap: 1.3,
        }
    }
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.boxes_x == 0 || self.boxes_y == 0 || !(self.side > 0.0) || !(self.gap > 0.0) {
            return Err(Error::InvalidInput(format!("invalid target {self:?}")));
        }
        Ok(())
    }

    pub fn pitch(&self) -> f64 {
        self.side + self.gap
    }

    pub fn width(&self) -> f64 {
        self.boxes_x as f64 * self.pitch() - self.gap
    }

    pub fn height(&self) -> f64 {
        self.boxes_y as f64 * self.pitch() - self.gap
    }

    pub fn center(&self) -> (f64, f64) {
        (self.width() / 2.0, self.height() / 2.0)
    }

    /// Whether the plane point lies on a box (edges included).
    pub fn covers(&self, x: f64, y: f64) -> bool {
        let p = self.pitch();
        if x < 0.0 || y < 0.0 || x > self.width() || y > self.height() {
            return false;
        }
        let fx = x - (x / p).floor() * p;
        let fy = y - (y / p).floor() * p;
        (fx <= self.side || x >= self.width()) && (fy <= self.side || y >= self.height())
    }
}

/// Model corners: boxes row-major, each box `(0,0) → (s,0) → (s,s) → (0,s)`
/// relative to its own top-left corner.
pub fn make_target(spec: &TargetSpec) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    let (p, s) = (spec.pitch(), spec.side);
    let mut out = Vec::with_capacity(4 * spec.boxes_x * spec.boxes_y);
    for by in 0..spec.boxes_y {
        for bx in 0..spec.boxes_x {
            let (x0, y0) = (bx as f64 * p, by as f64 * p);
            out.extend_from_slice(&[(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)]);
        }
    }
    Ok(out)
}

/// Everything needed to synthesize a calibration data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub distortion: DistortionCoeffs,
    pub target: TargetSpec,
    pub views: Vec<Extrinsics>,
    /// Standard deviation of the additive corner noise, pixels.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    /// A 640×480 camera with strong barrel distortion looking at the default
    /// target from five directions, noise-free.
    fn default() -> Self {
        let target = TargetSpec::default();
        Self {
            width: 640,
            height: 480,
            intrinsics: CameraIntrinsics::new(832.5010, 832.5309, 0.2046, 303.9584, 206.5879),
            distortion: DistortionCoeffs::new(RadialModel::Model1, -0.2286, 0.1903),
            target,
            views: standard_views(&target, 50.0),
            noise_sigma: 0.0,
            seed: 1,
        }
    }
}

/// Pose looking at the target center from `distance`, tilted by `tilt` about
/// an in-plane axis at angle `axis`, with no net spin of the target.
pub fn tilted_view(target: &TargetSpec, axis: f64, tilt: f64, distance: f64) -> Extrinsics {
    aimed_view(target, axis, tilt, Vector3::new(0.0, 0.0, distance))
}

/// Like [`tilted_view`], with the target center placed at `center` in
/// camera coordinates.
pub fn aimed_view(target: &TargetSpec, axis: f64, tilt: f64, center: Vector3<f64>) -> Extrinsics {
    let rot = rotation_from_euler_zyz(EulerZYZ::new(axis, tilt, -axis));
    let (cx, cy) = target.center();
    let t = center - rot.matrix() * Vector3::new(cx, cy, 0.0);
    Extrinsics::new(rot, t)
}

/// Five views tilted 20°–35° about different axes.
pub fn standard_views(target: &TargetSpec, distance: f64) -> Vec<Extrinsics> {
    [(0.0, 25.0), (90.0, 30.0), (180.0, 20.0), (-90.0, 35.0), (45.0, 28.0)]
        .iter()
        .enumerate()
        .map(|(i, &(axis, tilt)): (usize, &(f64, f64))| {
            tilted_view(target, axis.to_radians(), tilt.to_radians(), distance + 3.0 * i as f64)
        })
        .collect()
}

/// Ground-truth camera and the corners it sees.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub world: Vec<(f64, f64)>,
    /// Distorted, noise-free corner positions per view.
    pub exact: Vec<Vec<Point2Px>>,
    /// `exact` plus Gaussian noise of `config.noise_sigma`.
    pub observed: Vec<Vec<Point2Px>>,
}

fn exact_corners(cfg: &SceneConfig, world: &[(f64, f64)], view: usize) -> Result<Vec<Point2Px>> {
    let ex = &cfg.views[view];
    let out_of_frame = || Error::PoseOutOfFrame { view };
    world
        .iter()
        .map(|&(x, y)| {
            let pw = Point3W::new(x, y, 0.0);
            if ex.to_camera(pw).z <= 0.0 {
                return Err(out_of_frame());
            }
            let ideal = project(pw, ex, &cfg.intrinsics)?;
            let p = distort_pixel(ideal, &cfg.intrinsics, &cfg.distortion)?;
            let inside = p.u >= 0.0 && p.v >= 0.0 && p.u <= (cfg.width - 1) as f64 && p.v <= (cfg.height - 1) as f64;
            if inside {
                Ok(p)
            } else {
                Err(out_of_frame())
            }
        })
        .collect()
}

/// Projects and distorts every target corner in every view, then adds noise
/// drawn from a ChaCha8 stream seeded with `config.seed` (u then v, view by
/// view, corner by corner).
pub fn synth_views(cfg: &SceneConfig) -> Result<SyntheticScene> {
    if cfg.views.is_empty() {
        return Err(Error::InvalidInput("scene has no views".into()));
    }
    if !(cfg.noise_sigma >= 0.0) || !cfg.noise_sigma.is_finite() {
        return Err(Error::InvalidInput(format!("noise sigma {} must be finite and non-negative", cfg.noise_sigma)));
    }
    cfg.intrinsics.check_invertible()?;
    let world = make_target(&cfg.target)?;
    let exact = (0..cfg.views.len())
        .map(|i| exact_corners(cfg, &world, i))
        .collect::<Result<Vec<_>>>()?;
    let observed = if cfg.noise_sigma == 0.0 {
        exact.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
        exact
            .iter()
            .map(|view| {
                view.iter()
                    .map(|p| {
                        let du = normal.sample(&mut rng);
                        let dv = normal.sample(&mut rng);
                        Point2Px::new(p.u + du, p.v + dv)
                    })
                    .collect()
            })
            .collect()
    };
    Ok(SyntheticScene {
        config: cfg.clone(),
        world,
        exact,
        observed,
    })
}

fn plane_homography(k: &CameraIntrinsics, ex: &Extrinsics) -> Matrix3<f64> {
    let r = ex.rot.matrix();
    k.matrix() * Matrix3::from_columns(&[r.column(0).into_owned(), r.column(1).into_owned(), ex.t])
}

/// Renders one view with 4×4 supersampling: each sample is undistorted,
/// mapped back to the target plane and tested against the boxes.
fn render_with<F>(cfg: &SceneConfig, view: usize, covers: F, extent: (f64, f64)) -> Result<GrayImage>
where
    F: Fn(f64, f64) -> bool,
{
    let ex = cfg.views.get(view).ok_or(Error::PoseOutOfFrame { view })?;
    let (k, d) = (&cfg.intrinsics, &cfg.distortion);
    let h_inv = plane_homography(k, ex)
        .try_inverse()
        .ok_or(Error::DegenerateHomography)?;

    // Pixel bounding box of the target outline, padded.
    let (w_cm, h_cm) = extent;
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let steps = 16;
    for i in 0..=steps {
        let s = i as f64 / steps as f64;
        for (x, y) in [(s * w_cm, 0.0), (s * w_cm, h_cm), (0.0, s * h_cm), (w_cm, s * h_cm)] {
            let pw = Point3W::new(x, y, 0.0);
            if ex.to_camera(pw).z <= 0.0 {
                return Err(Error::PoseOutOfFrame { view });
            }
            let p = distort_pixel(project(pw, ex, k)?, k, d)?;
            lo = (lo.0.min(p.u), lo.1.min(p.v));
            hi = (hi.0.max(p.u), hi.1.max(p.v));
        }
    }
    let clamp = |x: f64, n: usize| x.clamp(0.0, n as f64 - 1.0) as usize;
    let (c0, c1) = (clamp(lo.0 - 3.0, cfg.width), clamp(hi.0 + 3.0, cfg.width));
    let (r0, r1) = (clamp(lo.1 - 3.0, cfg.height), clamp(hi.1 + 3.0, cfg.height));

    let mut img = GrayImage::filled(cfg.width, cfg.height, LIGHT);
    let n = (SUPERSAMPLE * SUPERSAMPLE) as u32;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let mut dark = 0u32;
            for si in 0..SUPERSAMPLE {
                for sj in 0..SUPERSAMPLE {
                    let u = c as f64 + (sj as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    let v = r as f64 + (si as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    let Ok(ideal) = undistort_pixel(Point2Px::new(u, v), k, d) else {
                        continue;
                    };
                    let q = h_inv * Vector3::new(ideal.u, ideal.v, 1.0);
                    if q.z.abs() < 1e-300 {
                        continue;
                    }
                    // The ray must hit the plane in front of the camera.
                    let pw = Point3W::new(q.x / q.z, q.y / q.z, 0.0);
                    if ex.to_camera(pw).z > 0.0 && covers(pw.x, pw.y) {
                        dark += 1;
                    }
                }
            }
            let level = (u32::from(LIGHT) * (n - dark) + u32::from(DARK) * dark + n / 2) / n;
            img.set(r, c, level as u8);
        }
    }
    Ok(img)
}

/// Box-target image of one view; fails with `PoseOutOfFrame` when the view
/// does not show every corner.
pub fn render_pgm(cfg: &SceneConfig, view: usize) -> Result<GrayImage> {
    let world = make_target(&cfg.target)?;
    if view >= cfg.views.len() {
        return Err(Error::PoseOutOfFrame { view });
    }
    exact_corners(cfg, &world, view)?;
    let t = cfg.target;
    render_with(cfg, view, |x, y| t.covers(x, y), (t.width(), t.height()))
}

/// Checkerboard of `squares × squares` squares of side `side` seen from
/// `cfg.views[view]`, with the distorted pixel positions of its inner
/// corners in raster order of the board.
pub fn render_checkerboard(
    cfg: &SceneConfig,
    view: usize,
    squares: usize,
    side: f64,
) -> Result<(GrayImage, Vec<Point2Px>)> {
    if squares < 2 || !(side > 0.0) {
        return Err(Error::InvalidInput("checkerboard needs at least 2×2 squares".into()));
    }
    let ex = cfg.views.get(view).ok_or(Error::PoseOutOfFrame { view })?;
    let size = squares as f64 * side;
    let covers = |x: f64, y: f64| {
        if x < 0.0 || y < 0.0 || x >= size || y >= size {
            return false;
        }
        ((x / side).floor() as i64 + (y / side).floor() as i64) % 2 == 0
    };
    let mut corners = Vec::new();
    for i in 1..squares {
        for j in 1..squares {
            let pw = Point3W::new(j as f64 * side, i as f64 * side, 0.0);
            let ideal = project(pw, ex, &cfg.intrinsics)?;
            corners.push(distort_pixel(ideal, &cfg.intrinsics, &cfg.distortion)?);
        }
    }
    let img = render_with(cfg, view, covers, (size, size))?;
    Ok((img, corners))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{binarize, label_components};

    #[test]
    fn single_box_target() {
        let spec = TargetSpec {
            boxes_x: 1,
            boxes_y: 1,
            side: 1.3,
            gap: 1.3,
        };
        assert_eq!(make_target(&spec).unwrap(), vec![(0.0, 0.0), (1.3, 0.0), (1.3, 1.3), (0.0, 1.3)]);
    }

    #[test]
    fn default_target_has_256_corners() {
        let spec = TargetSpec::default();
        let w = make_target(&spec).unwrap();
        assert_eq!(w.len(), 256);
        // Neighboring boxes are two sides apart.
        assert!((w[4].0 - w[0].0 - 2.6).abs() < 1e-12);
        assert!((w[32].1 - w[0].1 - 2.6).abs() < 1e-12);
    }

    #[test]
    fn invalid_target_rejected() {
        let spec = TargetSpec {
            side: 0.0,
            ..Default::default()
        };
        assert!(make_target(&spec).is_err());
    }

    /// Direct scalar evaluation of the projection and distortion formulas.
    fn scalar_projection(cfg: &SceneConfig, view: usize, x: f64, y: f64) -> (f64, f64) {
        let r = cfg.views[view].rot.matrix();
        let t = cfg.views[view].t;
        let xc = r[(0, 0)] * x + r[(0, 1)] * y + t[0];
        let yc = r[(1, 0)] * x + r[(1, 1)] * y + t[1];
        let zc = r[(2, 0)] * x + r[(2, 1)] * y + t[2];
        let k = &cfg.intrinsics;
        let (xn, yn) = (xc / zc, yc / zc);
        let u = k.alpha * xn + k.gamma * yn + k.u0;
        let v = k.beta * yn + k.v0;
        let r2 = xn * xn + yn * yn;
        let f = cfg.distortion.k1 * r2 + cfg.distortion.k2 * r2 * r2;
        (u + (u - k.u0) * f, v + (v - k.v0) * f)
    }

    #[test]
    fn noise_free_matches_scalar_oracle() {
        let cfg = SceneConfig::default();
        let scene = synth_views(&cfg).unwrap();
        assert_eq!(scene.exact, scene.observed);
        for (i, view) in scene.exact.iter().enumerate() {
            for (&(x, y), p) in scene.world.iter().zip(view) {
                let (u, v) = scalar_projection(&cfg, i, x, y);
                assert!((p.u - u).abs() < 1e-12 * u.abs().max(1.0) * 10.0 && (p.v - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let cfg = SceneConfig {
            noise_sigma: 0.5,
            seed: 42,
            ..Default::default()
        };
        let a = synth_views(&cfg).unwrap();
        let b = synth_views(&cfg).unwrap();
        assert_eq!(a.observed, b.observed);
        let mut samples = Vec::new();
        for (ov, ev) in a.observed.iter().zip(&a.exact) {
            for (o, e) in ov.iter().zip(ev) {
                samples.push(o.u - e.u);
                samples.push(o.v - e.v);
            }
        }
        // 2560 samples from one scene; pool a few seeds for 10k+.
        for seed in 1..4 {
            let s = synth_views(&SceneConfig { seed, ..cfg.clone() }).unwrap();
            for (ov, ev) in s.observed.iter().zip(&s.exact) {
                for (o, e) in ov.iter().zip(ev) {
                    samples.push(o.u - e.u);
                    samples.push(o.v - e.v);
                }
            }
        }
        assert!(samples.len() >= 10_000);
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 0.5).abs() < 0.025, "{sd}");
    }

    #[test]
    fn out_of_frame_view_is_reported() {
        let mut cfg = SceneConfig::default();
        cfg.views[2].t.x += 100.0;
        assert!(matches!(synth_views(&cfg), Err(Error::PoseOutOfFrame { view: 2 })));
        assert!(matches!(render_pgm(&cfg, 2), Err(Error::PoseOutOfFrame { view: 2 })));
    }

    #[test]
    fn fronto_parallel_render_has_64_regions() {
        let target = TargetSpec::default();
        let cfg = SceneConfig {
            views: vec![tilted_view(&target, 0.0, 0.0, 45.0)],
            ..Default::default()
        };
        let img = render_pgm(&cfg, 0).unwrap();
        assert_eq!(label_components(&binarize(&img, 150)).region_count(), 64);
        assert_eq!(render_pgm(&cfg, 0).unwrap(), img);
    }

    #[test]
    fn rendered_views_extract_in_truth_order() {
        use crate::imaging::{extract_corners, flatten_corners, ExtractConfig};
        let cfg = SceneConfig::default();
        let scene = synth_views(&cfg).unwrap();
        for (i, truth) in scene.exact.iter().enumerate() {
            let img = render_pgm(&cfg, i).unwrap();
            let boxes = extract_corners(&img, &ExtractConfig::default()).unwrap();
            let found = flatten_corners(&boxes);
            assert_eq!(found.len(), 256);
            let errs: Vec<f64> = found.iter().zip(truth).map(|(a, b)| a.dist(*b)).collect();
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            let max = errs.iter().cloned().fold(0.0, f64::max);
            assert!(mean < 0.25 && max < 1.0, "view {i}: mean {mean} max {max}");
        }
    }

    #[test]
    fn checkerboard_render_gives_49_corners() {
        use crate::imaging::checkerboard_corners;
        let target = TargetSpec::default();
        let cfg = SceneConfig {
            views: vec![tilted_view(&target, 0.3, 0.2, 45.0)],
            ..Default::default()
        };
        let (img, truth) = render_checkerboard(&cfg, 0, 8, 2.4).unwrap();
        let found = checkerboard_corners(&img, 49).unwrap();
        assert_eq!(found.len(), 49);
        for t in &truth {
            let d = found.iter().map(|f| f.dist(*t)).fold(f64::INFINITY, f64::min);
            assert!(d < 1.5, "{t:?} {d}");
        }
    }
}
