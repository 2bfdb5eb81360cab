//! Plane-to-image homographies for the `Z = 0` target plane.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Point2Px;

/// 3×3 homography, stored with `‖H‖_F = 1` and `h33 ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    /// Rescales to the canonical representative.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let norm = m.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite);
        }
        if norm == 0.0 {
            return Err(Error::DegenerateHomography);
        }
        let mut h = m / norm;
        if h[(2, 2)] < 0.0 && h[(2, 2)].abs() > 1e-12 {
            h = -h;
        }
        Ok(Self(h))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Image of the plane point `(x, y)`.
    pub fn apply(&self, x: f64, y: f64) -> Result<Point2Px> {
        let p = self.0 * Vector3::new(x, y, 1.0);
        if p.z.abs() < 1e-300 {
            return Err(Error::DegenerateHomography);
        }
        Ok(Point2Px::new(p.x / p.z, p.y / p.z))
    }
}

/// Model points on the target plane (centimeters) and their pixel images.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarCorrespondences {
    world: Vec<(f64, f64)>,
    image: Vec<Point2Px>,
}

impl PlanarCorrespondences {
    pub fn new(world: Vec<(f64, f64)>, image: Vec<Point2Px>) -> Result<Self> {
        if world.len() != image.len() {
            return Err(Error::InvalidInput(format!(
                "{} world points but {} image points",
                world.len(),
                image.len()
            )));
        }
        if world.len() < 4 {
            return Err(Error::TooFewPoints(world.len()));
        }
        Ok(Self { world, image })
    }

    pub fn world(&self) -> &[(f64, f64)] {
        &self.world
    }

    pub fn image(&self) -> &[Point2Px] {
        &self.image
    }

    pub fn len(&self) -> usize {
        self.world.len()
    }

    pub fn is_empty(&self) -> bool {
        self.world.is_empty()
    }

    /// Sum of squared pixel distances between the images and `H` applied to
    /// the model points.
    pub fn reprojection_sse(&self, h: &Homography) -> Result<f64> {
        let mut sum = 0.0;
        for (&(x, y), m) in self.world.iter().zip(&self.image) {
            let p = h.apply(x, y)?;
            sum += (p.u - m.u).powi(2) + (p.v - m.v).powi(2);
        }
        Ok(sum)
    }
}

/// The `2n × 9` system `L x = 0`, with `x` the rows of `H` stacked.
pub fn build_l(c: &PlanarCorrespondences) -> DMatrix<f64> {
    let n = c.len();
    let mut l = DMatrix::zeros(2 * n, 9);
    for (i, (&(x, y), m)) in c.world.iter().zip(&c.image).enumerate() {
        let (u, v) = (m.u, m.v);
        let odd = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u];
        let even = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v];
        for j in 0..9 {
            l[(2 * i, j)] = odd[j];
            l[(2 * i + 1, j)] = even[j];
        }
    }
    l
}

/// Right singular vector of `L` for the smallest singular value.
pub fn estimate_homography(c: &PlanarCorrespondences) -> Result<Homography> {
    let mut l = build_l(c);
    if l.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let max_coord = c
        .image
        .iter()
        .map(|p| p.u.abs().max(p.v.abs()))
        .fold(0.0, f64::max);
    if max_coord > 1e4 {
        log::warn!("pixel coordinates up to {max_coord:.0}; the linear system is poorly conditioned");
    }
    // Zero rows leave the right singular vectors unchanged but give the thin
    // SVD a full 9×9 V when there are only four correspondences.
    if l.nrows() < 9 {
        l = l.resize_vertically(9, 0.0);
    }
    let svd = l.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::NonFinite)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = |k: usize| svd.singular_values[order[k]];
    if !(sigma(0) > 0.0) || sigma(7) / sigma(0) < 1e-10 {
        return Err(Error::RankDeficient(if sigma(0) > 0.0 {
            sigma(7) / sigma(0)
        } else {
            0.0
        }));
    }
    let x = v_t.row(order[8]);
    let m = Matrix3::from_row_slice(&[x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], x[8]]);
    Homography::from_matrix(m)
}

/// Levenberg–Marquardt on the pixel reprojection error, starting from `h0`.
/// Only steps that lower the objective are accepted, so the result is never
/// worse than the start.
pub fn refine_homography(c: &PlanarCorrespondences, h0: &Homography) -> Result<Homography> {
    let mut h = *h0;
    let mut cost = c.reprojection_sse(&h)?;
    if !cost.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut lambda = 1e-3;
    for _ in 0..100 {
        if cost < 1e-24 {
            break;
        }
        let hm = h.matrix();
        let mut jtj = SMatrix::<f64, 9, 9>::zeros();
        let mut jtr = SVector::<f64, 9>::zeros();
        for (&(x, y), m) in c.world.iter().zip(&c.image) {
            let mv = Vector3::new(x, y, 1.0);
            let p = hm * mv;
            let (u, v) = (p.x / p.z, p.y / p.z);
            let (ru, rv) = (u - m.u, v - m.v);
            let mut ju = SVector::<f64, 9>::zeros();
            let mut jv = SVector::<f64, 9>::zeros();
            for k in 0..3 {
                ju[k] = mv[k] / p.z;
                ju[6 + k] = -u * mv[k] / p.z;
                jv[3 + k] = mv[k] / p.z;
                jv[6 + k] = -v * mv[k] / p.z;
            }
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * ru + jv * rv;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for k in 0..9 {
                a[(k, k)] += lambda * (jtj[(k, k)] + 1e-12);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = hm - Matrix3::from_row_slice(step.as_slice());
            let Ok(trial) = Homography::from_matrix(trial) else {
                lambda *= 10.0;
                continue;
            };
            match c.reprojection_sse(&trial) {
                Ok(tc) if tc < cost => {
                    let rel = (cost - tc) / cost.max(1e-300);
                    h = trial;
                    cost = tc;
                    lambda = (lambda * 0.1).max(1e-12);
                    improved = rel > 1e-15;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    if !cost.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(world: &[(f64, f64)], h: &Matrix3<f64>) -> PlanarCorrespondences {
        let image = world
            .iter()
            .map(|&(x, y)| {
                let p = h * Vector3::new(x, y, 1.0);
                Point2Px::new(p.x / p.z, p.y / p.z)
            })
            .collect();
        PlanarCorrespondences::new(world.to_vec(), image).unwrap()
    }

    fn grid(n: usize, step: f64) -> Vec<(f64, f64)> {
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (j as f64 * step, i as f64 * step)))
            .collect()
    }

    fn aligned_max_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        let b = b / b.norm();
        let d1 = (a - b).amax();
        let d2 = (a + b).amax();
        d1.min(d2)
    }

    fn test_h() -> Matrix3<f64> {
        Matrix3::new(800.0, 3.0, 320.0, -5.0, 790.0, 240.0, 0.01, -0.02, 1.0) * Matrix3::new(
            1.0, 0.0, -5.0, 0.0, 1.0, -5.0, 0.0, 0.0, 30.0,
        ) / 30.0
    }

    #[test]
    fn l_rows() {
        let c = PlanarCorrespondences {
            world: vec![(2.0, 3.0)],
            image: vec![Point2Px::new(5.0, 7.0)],
        };
        let l = build_l(&c);
        let r0: Vec<f64> = l.row(0).iter().copied().collect();
        let r1: Vec<f64> = l.row(1).iter().copied().collect();
        assert_eq!(r0, vec![2.0, 3.0, 1.0, 0.0, 0.0, 0.0, -10.0, -15.0, -5.0]);
        assert_eq!(r1, vec![0.0, 0.0, 0.0, 2.0, 3.0, 1.0, -14.0, -21.0, -7.0]);

        let c = PlanarCorrespondences {
            world: vec![(0.0, 0.0)],
            image: vec![Point2Px::new(0.0, 0.0)],
        };
        let l = build_l(&c);
        assert_eq!(l.row(0).iter().copied().collect::<Vec<_>>(), vec![0., 0., 1., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(l.row(1).iter().copied().collect::<Vec<_>>(), vec![0., 0., 0., 0., 0., 1., 0., 0., 0.]);

        let c = corr(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)], &Matrix3::identity());
        assert_eq!(build_l(&c).shape(), (8, 9));
    }

    #[test]
    fn unit_square_identity() {
        let c = corr(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)], &Matrix3::identity());
        let h = estimate_homography(&c).unwrap();
        let expected = Matrix3::identity() / 3f64.sqrt();
        assert!((h.matrix() - expected).amax() < 1e-12);
    }

    #[test]
    fn grid_recovery() {
        let truth = test_h();
        let c = corr(&grid(3, 4.0), &truth);
        let h = estimate_homography(&c).unwrap();
        assert!(aligned_max_diff(h.matrix(), &truth) < 1e-8);
        assert!(h.matrix()[(2, 2)] >= 0.0);
        assert!((h.matrix().norm() - 1.0).abs() < 1e-12);
        for (&(x, y), m) in c.world().iter().zip(c.image()) {
            assert!(h.apply(x, y).unwrap().dist(*m) < 1e-8);
        }
    }

    #[test]
    fn collinear_is_rank_deficient() {
        let c = corr(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)], &test_h());
        assert!(matches!(estimate_homography(&c), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn permutation_invariance() {
        let truth = test_h();
        let world = grid(4, 2.0);
        let mut rev = world.clone();
        rev.reverse();
        let a = estimate_homography(&corr(&world, &truth)).unwrap();
        let b = estimate_homography(&corr(&rev, &truth)).unwrap();
        assert!(aligned_max_diff(a.matrix(), b.matrix()) < 1e-9);
    }

    #[test]
    fn translation_equivariance() {
        let truth = test_h();
        let world = grid(4, 2.0);
        let (dx, dy) = (1.5, -2.5);
        let shifted: Vec<(f64, f64)> = world.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
        let image = corr(&world, &truth).image().to_vec();
        let a = estimate_homography(&PlanarCorrespondences::new(world, image.clone()).unwrap()).unwrap();
        let b = estimate_homography(&PlanarCorrespondences::new(shifted, image).unwrap()).unwrap();
        // b·T(dx, dy) must equal a.
        let t = Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0);
        assert!(aligned_max_diff(a.matrix(), &(b.matrix() * t)) < 1e-8);
    }

    #[test]
    fn refine_fixed_point_and_basin() {
        let truth = test_h();
        let c = corr(&grid(5, 2.0), &truth);
        let h_true = Homography::from_matrix(truth).unwrap();
        let r = refine_homography(&c, &h_true).unwrap();
        assert!(c.reprojection_sse(&r).unwrap() < 1e-16);
        assert!((r.matrix() - h_true.matrix()).amax() < 1e-12);

        let mut perturbed = *h_true.matrix();
        for (k, e) in perturbed.iter_mut().enumerate() {
            *e += 1e-3 * (k as f64 - 4.0) / 4.0 * e.abs().max(1e-3);
        }
        let r = refine_homography(&c, &Homography::from_matrix(perturbed).unwrap()).unwrap();
        assert!(aligned_max_diff(r.matrix(), h_true.matrix()) < 1e-7);
    }

    #[test]
    fn refine_does_not_increase_error_under_noise() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let truth = test_h();
        let clean = corr(&grid(16, 0.8), &truth);
        let image = clean
            .image()
            .iter()
            .map(|p| Point2Px::new(p.u + noise.sample(&mut rng), p.v + noise.sample(&mut rng)))
            .collect();
        let c = PlanarCorrespondences::new(clean.world().to_vec(), image).unwrap();
        let dlt = estimate_homography(&c).unwrap();
        let refined = refine_homography(&c, &dlt).unwrap();
        assert!(c.reprojection_sse(&refined).unwrap() <= c.reprojection_sse(&dlt).unwrap());
    }
}
