//! Closed-form calibration from plane homographies and the end-to-end
//! calibration driver.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3};

use crate::distortion::{DistortionCoeffs, RadialModel};
use crate::error::{Error, Result, Stage};
use crate::geometry::{project, CameraIntrinsics, Extrinsics, Point2Px, Point3W, Rotation3};
use crate::homography::{estimate_homography, refine_homography, Homography, PlanarCorrespondences};
use crate::optim::{self, ObjectiveReport, OptimConfig, ParamLayout};

/// Symmetric `B = A⁻ᵀA⁻¹` up to scale, as `(B11, B12, B22, B13, B23, B33)`
/// with unit norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConicB(pub SVector<f64, 6>);

impl ConicB {
    pub fn from_matrix(b: &Matrix3<f64>) -> Result<Self> {
        let v = SVector::<f64, 6>::from([
            b[(0, 0)],
            b[(0, 1)],
            b[(1, 1)],
            b[(0, 2)],
            b[(1, 2)],
            b[(2, 2)],
        ]);
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidInput("conic must be finite and nonzero".into()));
        }
        Ok(Self(v / n))
    }

    /// `A⁻ᵀA⁻¹` of the given camera, normalized.
    pub fn from_intrinsics(k: &CameraIntrinsics) -> Result<Self> {
        let inv = k.inverse_matrix()?;
        Self::from_matrix(&(inv.transpose() * inv))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let b = &self.0;
        Matrix3::new(b[0], b[1], b[3], b[1], b[2], b[4], b[3], b[4], b[5])
    }
}

/// `V_ij` with `V_ijᵀ b = h_iᵀ B h_j`.
pub fn constraint_row(hi: &Vector3<f64>, hj: &Vector3<f64>) -> SVector<f64, 6> {
    SVector::<f64, 6>::from([
        hi[0] * hj[0],
        hi[0] * hj[1] + hi[1] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ])
}

/// Smallest right singular vector of the stacked `[V12; V11 − V22]` rows.
pub fn estimate_b(hs: &[Homography]) -> Result<ConicB> {
    if hs.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 homographies, got {}",
            hs.len()
        )));
    }
    let mut v = DMatrix::zeros(2 * hs.len(), 6);
    for (i, h) in hs.iter().enumerate() {
        let m = h.matrix();
        let (h1, h2) = (m.column(0).into_owned(), m.column(1).into_owned());
        let v12 = constraint_row(&h1, &h2);
        let diff = constraint_row(&h1, &h1) - constraint_row(&h2, &h2);
        v.row_mut(2 * i).copy_from(&v12.transpose());
        v.row_mut(2 * i + 1).copy_from(&diff.transpose());
    }
    let svd = v.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::NonFinite)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = &svd.singular_values;
    let ratio = if s[order[0]] > 0.0 {
        s[order[4]] / s[order[0]]
    } else {
        0.0
    };
    if ratio < 1e-10 {
        return Err(Error::DegenerateViews(ratio));
    }
    let b = v_t.row(order[5]).transpose();
    Ok(ConicB(SVector::<f64, 6>::from_iterator(b.iter().copied()) / b.norm()))
}

/// Closed-form intrinsics from `B`. The principal-point abscissa uses
/// `u0 = γ·v0/β − B13·α²/λ`.
pub fn intrinsics_from_b(b: &ConicB) -> Result<CameraIntrinsics> {
    let mut b = b.0;
    if b[0] < 0.0 {
        b = -b;
    }
    let [b11, b12, b22, b13, b23, b33] = [b[0], b[1], b[2], b[3], b[4], b[5]];
    let den = b11 * b22 - b12 * b12;
    if !(b11 > 0.0) || !(den > 0.0) {
        return Err(Error::NegativeDiscriminant);
    }
    let v0 = (b12 * b13 - b11 * b23) / den;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    let ra = lambda / b11;
    let rb = lambda * b11 / den;
    if !(ra > 0.0) || !(rb > 0.0) {
        return Err(Error::NegativeDiscriminant);
    }
    let alpha = ra.sqrt();
    let beta = rb.sqrt();
    let gamma = -b12 * alpha * alpha * beta / lambda;
    let u0 = gamma * v0 / beta - b13 * alpha * alpha / lambda;
    Ok(CameraIntrinsics::new(alpha, beta, gamma, u0, v0))
}

/// Nearest rotation `UVᵀ`, with the reflection case repaired by flipping the
/// singular direction of the smallest singular value.
pub fn best_rotation(m: &Matrix3<f64>) -> Rotation3 {
    let svd = m.svd(true, true);
    let (mut u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let smallest = svd.singular_values.imin();
        let col = -u.column(smallest);
        u.set_column(smallest, &col);
        r = u * v_t;
    }
    Rotation3::from_matrix_unchecked(r)
}

pub fn extrinsics_from_homography(h: &Homography, k: &CameraIntrinsics) -> Result<Extrinsics> {
    let inv = k.inverse_matrix()?;
    let m = h.matrix();
    let a1 = inv * m.column(0);
    let a2 = inv * m.column(1);
    let a3 = inv * m.column(2);
    let n1 = a1.norm();
    if n1 < 1e-12 {
        return Err(Error::DegenerateHomography);
    }
    let lambda = 1.0 / n1;
    let r1 = a1 * lambda;
    let r2 = a2 * lambda;
    let r3 = r1.cross(&r2);
    let raw = Matrix3::from_columns(&[r1, r2, r3]);
    Ok(Extrinsics::new(best_rotation(&raw), a3 * lambda))
}

/// Ordered model corners on the `Z = 0` plane and their observed pixel
/// positions in every view.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDataset {
    pub world: Vec<(f64, f64)>,
    pub views: Vec<Vec<Point2Px>>,
}

impl CalibrationDataset {
    pub fn new(world: Vec<(f64, f64)>, views: Vec<Vec<Point2Px>>) -> Result<Self> {
        if let Some((i, v)) = views.iter().enumerate().find(|(_, v)| v.len() != world.len()) {
            return Err(Error::InvalidInput(format!(
                "view {i} has {} points, expected {}",
                v.len(),
                world.len()
            )));
        }
        Ok(Self { world, views })
    }

    pub fn point_count(&self) -> usize {
        self.world.len()
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }
}

/// Linear distortion estimate: `D k = d` over all points, with rows built
/// from ideal projections under the current camera and poses.
pub fn estimate_distortion(
    data: &CalibrationDataset,
    k: &CameraIntrinsics,
    views: &[Extrinsics],
    model: RadialModel,
) -> Result<DistortionCoeffs> {
    let inv = k.inverse_matrix()?;
    let cols = match model {
        RadialModel::Model2 => 1,
        _ => 2,
    };
    let mut rows: Vec<[f64; 2]> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for (ex, obs) in views.iter().zip(&data.views) {
        for (&(x, y), m) in data.world.iter().zip(obs) {
            let ideal = project(Point3W::new(x, y, 0.0), ex, k)?;
            let n = inv * Vector3::new(ideal.u, ideal.v, 1.0);
            let r2 = n.x * n.x + n.y * n.y;
            let (b1, b2) = model.basis(r2);
            for (center, observed, projected) in [(k.u0, m.u, ideal.u), (k.v0, m.v, ideal.v)] {
                let off = projected - center;
                rows.push([off * b1, off * b2]);
                rhs.push(observed - projected);
            }
        }
    }
    let d = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    let rhs = DVector::from_vec(rhs);
    let dtd = d.transpose() * &d;
    let svals = dtd.singular_values();
    let (smax, smin) = (svals.max(), svals.min());
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= 1e12) {
        return Err(Error::IllConditioned(cond));
    }
    let sol = dtd
        .cholesky()
        .ok_or(Error::IllConditioned(cond))?
        .solve(&(d.transpose() * rhs));
    Ok(DistortionCoeffs::new(
        model,
        sol[0],
        if cols == 2 { sol[1] } else { 0.0 },
    ))
}

/// How the nonlinear stage initializes distortion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistortionInit {
    Zero,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibConfig {
    pub model: RadialModel,
    pub distortion_init: DistortionInit,
    /// ML refinement of each homography before the closed-form stage.
    pub refine_homographies: bool,
    pub optim: OptimConfig,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            model: RadialModel::Model1,
            distortion_init: DistortionInit::Zero,
            refine_homographies: true,
            optim: OptimConfig::default(),
        }
    }
}

/// Parameters of the closed-form stage, before nonlinear refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialEstimate {
    pub intrinsics: CameraIntrinsics,
    /// Starting distortion handed to the optimizer.
    pub distortion: DistortionCoeffs,
    /// Linear least-squares distortion, when it could be computed.
    pub distortion_linear: Option<DistortionCoeffs>,
    pub views: Vec<Extrinsics>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub intrinsics: CameraIntrinsics,
    pub distortion: DistortionCoeffs,
    pub views: Vec<Extrinsics>,
    /// Final reprojection objective, squared pixels.
    pub objective: f64,
    pub report: ObjectiveReport,
    pub initial: InitialEstimate,
}

/// Closed-form stage: homographies, `B`, intrinsics and per-view poses.
pub fn linear_estimate(
    data: &CalibrationDataset,
    refine: bool,
) -> Result<(CameraIntrinsics, Vec<Extrinsics>)> {
    if data.view_count() < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 views, got {}",
            data.view_count()
        )));
    }
    let hs = data
        .views
        .iter()
        .map(|obs| {
            let c = PlanarCorrespondences::new(data.world.clone(), obs.clone())?;
            let h = estimate_homography(&c)?;
            if refine {
                refine_homography(&c, &h)
            } else {
                Ok(h)
            }
        })
        .collect::<Result<Vec<_>>>()
        .map_err(Error::at(Stage::Homography))?;
    let b = estimate_b(&hs).map_err(Error::at(Stage::Conic))?;
    let k = intrinsics_from_b(&b).map_err(Error::at(Stage::Intrinsics))?;
    let views = hs
        .iter()
        .map(|h| extrinsics_from_homography(h, &k))
        .collect::<Result<Vec<_>>>()
        .map_err(Error::at(Stage::Extrinsics))?;
    Ok((k, views))
}

pub fn calibrate(data: &CalibrationDataset, cfg: &CalibConfig) -> Result<CalibrationResult> {
    let (k, views) = linear_estimate(data, cfg.refine_homographies)?;

    let (distortion, distortion_linear) = match estimate_distortion(data, &k, &views, cfg.model) {
        Ok(d) => match cfg.distortion_init {
            DistortionInit::Linear => (d, Some(d)),
            DistortionInit::Zero => (DistortionCoeffs::none(cfg.model), Some(d)),
        },
        Err(e) if cfg.distortion_init == DistortionInit::Linear => {
            return Err(Error::at(Stage::Distortion)(e))
        }
        Err(e) => {
            log::warn!("linear distortion estimate unavailable: {e}");
            (DistortionCoeffs::none(cfg.model), None)
        }
    };

    let layout = ParamLayout::for_views(cfg.model, &views);
    let p0 = layout.pack(&k, &distortion, &views)?;
    let before = optim::objective(&p0, &layout, data).map_err(Error::at(Stage::Refinement))?;
    let initial = InitialEstimate {
        intrinsics: k,
        distortion,
        distortion_linear,
        views,
        objective: before,
    };

    let (p, report, layout) =
        optim::refine_calibration(p0, layout, data, &cfg.optim).map_err(Error::at(Stage::Refinement))?;
    let (intrinsics, distortion, views) = layout.unpack(&p);
    Ok(CalibrationResult {
        intrinsics,
        distortion,
        views,
        objective: report.final_j,
        report,
        initial,
    })
}
