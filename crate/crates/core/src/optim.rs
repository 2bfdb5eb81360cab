//! Nonlinear refinement of all calibration parameters by quasi-Newton
//! minimization of the reprojection objective.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::calib::CalibrationDataset;
use crate::distortion::{distort_normalized, DistortionCoeffs, RadialModel};
use crate::error::{Error, Result};
use crate::geometry::{
    camera_to_normalized, denormalize, euler_zyz_from_rotation, rotation_from_euler_zyz, CameraIntrinsics, EulerZYZ,
    Extrinsics, NormalizedPoint, Point3W, Rotation3,
};

/// Intrinsic and distortion entries ahead of the per-view blocks.
pub const INTRINSIC_PARAMS: usize = 7;
pub const VIEW_PARAMS: usize = 6;

/// Euler charts are re-seeded when `b` comes this close to 0 or π.
const GIMBAL_MARGIN: f64 = 1e-3;
/// Charts are chosen up front when `b` starts this close to 0 or π.
const CHART_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    /// Stop when the accepted step's ∞-norm falls below this.
    pub tol_x: f64,
    /// Stop when the objective changes by less than this fraction of its
    /// previous value.
    pub tol_f: f64,
    pub max_iter: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            tol_x: 1e-5,
            tol_f: 1e-5,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub func_count: usize,
    pub j: f64,
    pub step_size: f64,
    pub directional_derivative: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    StepTolerance,
    FunctionTolerance,
    /// The gradient vanished or no descent direction exists.
    Stationary,
    /// No step along the search direction lowered the objective.
    LineSearch,
    IterationCap,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::StepTolerance => "step below tolerance",
            StopReason::FunctionTolerance => "relative objective change below tolerance",
            StopReason::Stationary => "stationary point",
            StopReason::LineSearch => "line search made no progress",
            StopReason::IterationCap => "iteration cap reached",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    /// Row 0 is the starting point; later rows are accepted iterations.
    pub iterations: Vec<IterationRecord>,
    pub final_j: f64,
    pub stop: StopReason,
}

impl ObjectiveReport {
    pub fn hit_iteration_cap(&self) -> bool {
        self.stop == StopReason::IterationCap
    }

    /// Plain-text table: iteration, function count, objective, step size,
    /// directional derivative.
    pub fn trace_table(&self) -> String {
        let mut s = format!(
            "{:>9} {:>14} {:>16} {:>12} {:>16}\n",
            "Iteration", "Func-count", "f(x)", "Step-size", "Directional"
        );
        for r in &self.iterations {
            s.push_str(&format!(
                "{:>9} {:>14} {:>16.6} {:>12.6} {:>16.6}\n",
                r.iter, r.func_count, r.j, r.step_size, r.directional_derivative
            ));
        }
        s
    }
}

fn step_for(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-6)
}

/// Central differences with per-component step `max(1e−6, 1e−6·|p_i|)`.
pub fn numeric_gradient<F>(f: &mut F, p: &DVector<f64>) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let mut g = DVector::zeros(p.len());
    let mut q = p.clone();
    for i in 0..p.len() {
        let h = step_for(p[i]);
        let (hi, lo) = (p[i] + h, p[i] - h);
        q[i] = hi;
        let fp = f(&q)?;
        q[i] = lo;
        let fm = f(&q)?;
        q[i] = p[i];
        g[i] = (fp - fm) / (hi - lo);
        if !g[i].is_finite() {
            return Err(Error::NonFinite);
        }
    }
    Ok(g)
}

/// BFGS on the inverse Hessian with an Armijo backtracking line search
/// (quadratic-interpolation steps clamped to [0.1, 0.5] of the previous
/// trial). `h0` is the starting inverse Hessian; identity when absent.
///
/// The returned point never has a larger objective than `p0`. Hitting the
/// iteration cap is reported through [`ObjectiveReport::stop`].
pub fn minimize<F>(
    mut f: F,
    p0: DVector<f64>,
    cfg: &OptimConfig,
    h0: Option<DMatrix<f64>>,
) -> Result<(DVector<f64>, ObjectiveReport)>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    const ARMIJO: f64 = 1e-4;
    let n = p0.len();
    let h_start = h0.unwrap_or_else(|| DMatrix::identity(n, n));
    let mut count = 0usize;
    let mut eval = |x: &DVector<f64>, count: &mut usize| -> Result<f64> {
        *count += 1;
        f(x)
    };

    let mut p = p0;
    let mut fx = eval(&p, &mut count)?;
    if !fx.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut g = {
        let mut wrapped = |x: &DVector<f64>| eval(x, &mut count);
        numeric_gradient(&mut wrapped, &p)?
    };
    let mut hinv = h_start.clone();
    let mut rows = vec![IterationRecord {
        iter: 0,
        func_count: count,
        j: fx,
        step_size: 0.0,
        directional_derivative: 0.0,
    }];
    let mut stop = StopReason::IterationCap;

    for iter in 1..=cfg.max_iter {
        if g.iter().all(|&x| x == 0.0) || fx == 0.0 {
            stop = StopReason::Stationary;
            break;
        }
        let mut d = -(&hinv * &g);
        let mut dd = g.dot(&d);
        if !(dd < 0.0) {
            hinv = h_start.clone();
            d = -(&hinv * &g);
            dd = g.dot(&d);
            if !(dd < 0.0) {
                stop = StopReason::Stationary;
                break;
            }
        }

        let mut accepted = None;
        for attempt in 0..2 {
            let mut alpha = 1.0;
            for _ in 0..40 {
                let trial = &p + &d * alpha;
                let ft = match eval(&trial, &mut count) {
                    Ok(v) if v.is_finite() => v,
                    Ok(_) | Err(Error::NonFinite) | Err(Error::DegenerateDepth(_)) => f64::INFINITY,
                    Err(e) => return Err(e),
                };
                if ft <= fx + ARMIJO * alpha * dd {
                    accepted = Some((trial, ft, alpha));
                    break;
                }
                let next = if ft.is_finite() {
                    -dd * alpha * alpha / (2.0 * (ft - fx - dd * alpha))
                } else {
                    0.1 * alpha
                };
                alpha = next.clamp(0.1 * alpha, 0.5 * alpha);
            }
            if accepted.is_some() || attempt == 1 {
                break;
            }
            // Retry once along the starting-metric direction.
            hinv = h_start.clone();
            d = -(&hinv * &g);
            dd = g.dot(&d);
            if !(dd < 0.0) {
                break;
            }
        }
        let Some((p_new, f_new, alpha)) = accepted else {
            stop = StopReason::LineSearch;
            break;
        };

        let g_new = {
            let mut wrapped = |x: &DVector<f64>| eval(x, &mut count);
            numeric_gradient(&mut wrapped, &p_new)?
        };
        let s = &p_new - &p;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            // H ← H − ρ(s·(Hy)ᵀ + (Hy)·sᵀ) + (ρ²·yᵀHy + ρ)·s·sᵀ
            hinv -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }

        let step_inf = s.amax();
        let df = fx - f_new;
        p = p_new;
        fx = f_new;
        g = g_new;
        rows.push(IterationRecord {
            iter,
            func_count: count,
            j: fx,
            step_size: alpha,
            directional_derivative: dd,
        });
        if step_inf < cfg.tol_x {
            stop = StopReason::StepTolerance;
            break;
        }
        if df.abs() < cfg.tol_f * (fx + df).abs() {
            stop = StopReason::FunctionTolerance;
            break;
        }
    }
    Ok((
        p,
        ObjectiveReport {
            iterations: rows,
            final_j: fx,
            stop,
        },
    ))
}

/// Packing of calibration parameters:
/// `[α, γ, u0, β, v0, k1, k2]` then `[a, b, c, tx, ty, tz]` per view.
///
/// Each view's rotation is stored as `R = Rzyz(a, b, c) · Q`, where the
/// fixed chart `Q` is either the identity or a quarter turn about `y`, picked
/// so that the Euler angles stay away from the `sin b = 0` singularity.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub model: RadialModel,
    pub charts: Vec<Rotation3>,
}

fn near_gimbal(rot: &Rotation3, margin: f64) -> bool {
    match euler_zyz_from_rotation(rot) {
        Ok(e) => e.b < margin || e.b > std::f64::consts::PI - margin,
        Err(_) => true,
    }
}

fn chart_for(rot: &Rotation3, margin: f64) -> Rotation3 {
    if near_gimbal(rot, margin) {
        Rotation3::ry(std::f64::consts::FRAC_PI_2)
    } else {
        Rotation3::identity()
    }
}

impl ParamLayout {
    /// Identity charts wherever the pose is comfortably away from the
    /// singularity.
    pub fn for_views(model: RadialModel, views: &[Extrinsics]) -> Self {
        Self {
            model,
            charts: views.iter().map(|v| chart_for(&v.rot, CHART_MARGIN)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        INTRINSIC_PARAMS + VIEW_PARAMS * self.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn view_count(&self) -> usize {
        self.charts.len()
    }

    pub fn pack(
        &self,
        k: &CameraIntrinsics,
        d: &DistortionCoeffs,
        views: &[Extrinsics],
    ) -> Result<DVector<f64>> {
        if views.len() != self.charts.len() {
            return Err(Error::InvalidInput(format!(
                "layout has {} views, got {}",
                self.charts.len(),
                views.len()
            )));
        }
        let mut p = DVector::zeros(self.len());
        p.as_mut_slice()[..INTRINSIC_PARAMS]
            .copy_from_slice(&[k.alpha, k.gamma, k.u0, k.beta, k.v0, d.k1, d.k2]);
        for (i, (ex, q)) in views.iter().zip(&self.charts).enumerate() {
            let e = euler_zyz_from_rotation(&ex.rot.compose(&q.transpose()))?;
            let o = INTRINSIC_PARAMS + VIEW_PARAMS * i;
            p.as_mut_slice()[o..o + VIEW_PARAMS].copy_from_slice(&[e.a, e.b, e.c, ex.t.x, ex.t.y, ex.t.z]);
        }
        Ok(p)
    }

    pub fn intrinsics(&self, p: &DVector<f64>) -> (CameraIntrinsics, DistortionCoeffs) {
        (
            CameraIntrinsics::new(p[0], p[3], p[1], p[2], p[4]),
            DistortionCoeffs::new(self.model, p[5], p[6]),
        )
    }

    pub fn view(&self, p: &DVector<f64>, i: usize) -> Extrinsics {
        let o = INTRINSIC_PARAMS + VIEW_PARAMS * i;
        let e = EulerZYZ::new(p[o], p[o + 1], p[o + 2]);
        let rot = rotation_from_euler_zyz(e).compose(&self.charts[i]);
        Extrinsics::new(rot, nalgebra::Vector3::new(p[o + 3], p[o + 4], p[o + 5]))
    }

    pub fn unpack(&self, p: &DVector<f64>) -> (CameraIntrinsics, DistortionCoeffs, Vec<Extrinsics>) {
        let (k, d) = self.intrinsics(p);
        let views = (0..self.charts.len()).map(|i| self.view(p, i)).collect();
        (k, d, views)
    }
}

/// Observed minus modeled pixel positions, `(u, v)` pairs, view-major.
pub fn residuals(p: &DVector<f64>, layout: &ParamLayout, data: &CalibrationDataset) -> Result<DVector<f64>> {
    if p.len() != layout.len() || data.view_count() != layout.view_count() {
        return Err(Error::InvalidInput("parameter vector does not match the dataset".into()));
    }
    let (k, d) = layout.intrinsics(p);
    let mut out = DVector::zeros(2 * data.point_count() * data.view_count());
    let mut idx = 0;
    for (i, obs) in data.views.iter().enumerate() {
        let ex = layout.view(p, i);
        for (&(x, y), m) in data.world.iter().zip(obs) {
            let pc = ex.to_camera(Point3W::new(x, y, 0.0));
            let n = camera_to_normalized(&pc).map_err(|_| Error::NonFinite)?;
            let dn = distort_normalized(n, &d);
            let px = denormalize(NormalizedPoint::new(dn.x, dn.y), &k);
            out[idx] = m.u - px.u;
            out[idx + 1] = m.v - px.v;
            idx += 2;
        }
    }
    if out.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(out)
}

/// `J = Σ ‖m − m̂‖²`, squared pixels.
pub fn objective(p: &DVector<f64>, layout: &ParamLayout, data: &CalibrationDataset) -> Result<f64> {
    Ok(residuals(p, layout, data)?.norm_squared())
}

/// `(2·JᵀJ)⁻¹` from a central-difference Jacobian of the residuals, used as
/// the starting inverse Hessian. Parameters the objective ignores get a unit
/// diagonal entry.
pub fn gauss_newton_inverse_hessian(
    p: &DVector<f64>,
    layout: &ParamLayout,
    data: &CalibrationDataset,
) -> Result<DMatrix<f64>> {
    let n = p.len();
    let m = 2 * data.point_count() * data.view_count();
    let mut jac = DMatrix::zeros(m, n);
    let mut q = p.clone();
    for i in 0..n {
        let h = step_for(p[i]);
        q[i] = p[i] + h;
        let rp = residuals(&q, layout, data)?;
        q[i] = p[i] - h;
        let rm = residuals(&q, layout, data)?;
        q[i] = p[i];
        jac.set_column(i, &((rp - rm) / (2.0 * h)));
    }
    let mut hess = jac.transpose() * &jac * 2.0;
    let scale = hess.diagonal().amax();
    if !(scale > 0.0) {
        return Ok(DMatrix::identity(n, n));
    }
    for i in 0..n {
        if hess[(i, i)] <= 1e-14 * scale {
            for j in 0..n {
                hess[(i, j)] = 0.0;
                hess[(j, i)] = 0.0;
            }
            hess[(i, i)] = 1.0;
        } else {
            hess[(i, i)] *= 1.0 + 1e-10;
        }
    }
    match hess.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => Ok(DMatrix::identity(n, n) / scale),
    }
}

/// Minimizes the calibration objective from `p0`. If a view's Euler angles
/// approach the singular set, its chart is re-seeded and minimization
/// continues from the same camera state. Returns the layout that matches
/// the returned vector.
pub fn refine_calibration(
    p0: DVector<f64>,
    layout: ParamLayout,
    data: &CalibrationDataset,
    cfg: &OptimConfig,
) -> Result<(DVector<f64>, ObjectiveReport, ParamLayout)> {
    let mut layout = layout;
    let mut p = p0;
    let mut merged: Option<ObjectiveReport> = None;
    for _ in 0..4 {
        let h0 = gauss_newton_inverse_hessian(&p, &layout, data).ok();
        let lay = layout.clone();
        let (p_new, report) = minimize(|x| objective(x, &lay, data), p.clone(), cfg, h0)?;
        merged = Some(match merged {
            None => report,
            Some(mut prev) => {
                let (iter0, count0) = prev
                    .iterations
                    .last()
                    .map(|r| (r.iter, r.func_count))
                    .unwrap_or((0, 0));
                prev.iterations.extend(report.iterations.iter().skip(1).map(|r| IterationRecord {
                    iter: r.iter + iter0,
                    func_count: r.func_count + count0,
                    ..*r
                }));
                prev.final_j = report.final_j;
                prev.stop = report.stop;
                prev
            }
        });
        p = p_new;

        let (k, d, views) = layout.unpack(&p);
        let euler_rots: Vec<Rotation3> = (0..views.len())
            .map(|i| {
                let o = INTRINSIC_PARAMS + VIEW_PARAMS * i;
                rotation_from_euler_zyz(EulerZYZ::new(p[o], p[o + 1], p[o + 2]))
            })
            .collect();
        let stuck: Vec<usize> = (0..views.len())
            .filter(|&i| near_gimbal(&euler_rots[i], GIMBAL_MARGIN))
            .collect();
        if stuck.is_empty() {
            break;
        }
        for &i in &stuck {
            log::debug!("view {i}: re-seeding Euler chart");
            let current = layout.charts[i];
            let flip = Rotation3::ry(std::f64::consts::FRAC_PI_2);
            layout.charts[i] = if near_gimbal(&views[i].rot.compose(&current.transpose()), GIMBAL_MARGIN) {
                flip.compose(&current)
            } else {
                current
            };
        }
        p = layout.pack(&k, &d, &views)?;
    }
    let report = merged.expect("at least one pass");
    Ok((p, report, layout))
}
