use crate::error::{Error, Result};
use crate::geometry::Point2Px;

/// Homogeneous line `a·u + b·v + c = 0` with `‖(a, b)‖ = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line {
    /// Signed perpendicular distance.
    pub fn eval(&self, p: Point2Px) -> f64 {
        self.a * p.u + self.b * p.v + self.c
    }

    /// Line moved by `delta` along its normal `(a, b)`.
    pub fn shifted(&self, delta: f64) -> Line {
        Line {
            c: self.c - delta,
            ..*self
        }
    }
}

fn dist_to_chord(p: Point2Px, a: Point2Px, b: Point2Px) -> f64 {
    let (dx, dy) = (b.u - a.u, b.v - a.v);
    let len = dx.hypot(dy);
    if len < 1e-12 {
        return p.dist(a);
    }
    ((p.u - a.u) * dy - (p.v - a.v) * dx).abs() / len
}

fn split(pts: &[Point2Px], chain: &[usize], lo: usize, hi: usize, threshold: f64, out: &mut Vec<usize>) {
    if hi <= lo + 1 {
        return;
    }
    let (a, b) = (pts[chain[lo]], pts[chain[hi]]);
    let mut best = (0.0, lo);
    for k in lo + 1..hi {
        let d = dist_to_chord(pts[chain[k]], a, b);
        if d > best.0 {
            best = (d, k);
        }
    }
    if best.0 > threshold {
        let k = best.1;
        split(pts, chain, lo, k, threshold, out);
        out.push(k);
        split(pts, chain, k, hi, threshold, out);
    }
}

/// Recursive scan-line splitting of a closed contour.
///
/// The seed is the adjacent pair `(i, i+1)` whose chord has the largest
/// maximal distance to the rest of the contour; the contour is then opened
/// between them and split recursively wherever a point lies farther than
/// `threshold` from the chord of its piece. The seed itself usually falls in
/// the middle of a side, so it is kept only if it is a genuine vertex.
///
/// Returns sorted, distinct indices into `points`.
pub fn scan_line_partition(points: &[Point2Px], threshold: f64) -> Result<Vec<usize>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidInput(format!("threshold {threshold} must be positive")));
    }

    let mut seed = (f64::NEG_INFINITY, 0);
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        let worst = points
            .iter()
            .map(|&p| dist_to_chord(p, a, b))
            .fold(0.0, f64::max);
        if worst > seed.0 {
            seed = (worst, i);
        }
    }

    // Chain runs from i+1 all the way round to i.
    let start = (seed.1 + 1) % n;
    let chain: Vec<usize> = (0..n).map(|k| (start + k) % n).collect();
    let mut splits = Vec::new();
    split(points, &chain, 0, n - 1, threshold, &mut splits);

    let mut vertices: Vec<usize> = std::iter::once(chain[0])
        .chain(splits.iter().map(|&k| chain[k]))
        .collect();
    vertices.sort_unstable();
    vertices.dedup();

    // The seed and the first split may sit mid-side or on a jog of a nearly
    // axis-aligned side, and dropping one can leave a piece that was never
    // examined. Slide, merge and re-split until the vertex set settles.
    for _ in 0..8 {
        let before = vertices.clone();
        slide_vertices(points, &mut vertices);
        merge_collinear(points, &mut vertices, threshold);
        resplit(points, &mut vertices, threshold);
        if vertices == before {
            break;
        }
    }
    Ok(vertices)
}

/// Moves each vertex to the point between its neighbors that lies farthest
/// from the chord joining them.
fn slide_vertices(points: &[Point2Px], vertices: &mut Vec<usize>) {
    let n = points.len();
    let m = vertices.len();
    if m < 3 {
        return;
    }
    for i in 0..m {
        let (prev, next) = (vertices[(i + m - 1) % m], vertices[(i + 1) % m]);
        let (a, b) = (points[prev], points[next]);
        let span = (next + n - prev) % n;
        let mut best = (dist_to_chord(points[vertices[i]], a, b), vertices[i]);
        for k in 1..span {
            let j = (prev + k) % n;
            let d = dist_to_chord(points[j], a, b);
            if d > best.0 {
                best = (d, j);
            }
        }
        vertices[i] = best.1;
    }
    vertices.sort_unstable();
    vertices.dedup();
}

/// Drops, weakest first, vertices within `threshold` of the chord joining
/// their neighbors.
fn merge_collinear(points: &[Point2Px], vertices: &mut Vec<usize>, threshold: f64) {
    while vertices.len() >= 3 {
        let m = vertices.len();
        let (mut weakest, mut at) = (f64::INFINITY, 0);
        for i in 0..m {
            let prev = points[vertices[(i + m - 1) % m]];
            let next = points[vertices[(i + 1) % m]];
            let d = dist_to_chord(points[vertices[i]], prev, next);
            if d < weakest {
                (weakest, at) = (d, i);
            }
        }
        if weakest > threshold {
            break;
        }
        vertices.remove(at);
    }
}

/// Splits every piece between consecutive vertices, including the one that
/// wraps around the end of the contour.
fn resplit(points: &[Point2Px], vertices: &mut Vec<usize>, threshold: f64) {
    let n = points.len();
    let m = vertices.len();
    if m < 2 {
        return;
    }
    let mut added = Vec::new();
    for i in 0..m {
        let s = vertices[i];
        let e = vertices[(i + 1) % m] + if i + 1 == m { n } else { 0 };
        let chain: Vec<usize> = (s..=e).map(|k| k % n).collect();
        let mut splits = Vec::new();
        split(points, &chain, 0, chain.len() - 1, threshold, &mut splits);
        added.extend(splits.iter().map(|&k| chain[k]));
    }
    vertices.extend(added);
    vertices.sort_unstable();
    vertices.dedup();
}

/// Total-least-squares line through the points.
pub fn fit_line(points: &[Point2Px]) -> Result<Line> {
    if points.is_empty() {
        return Err(Error::DegeneratePoints);
    }
    let n = points.len() as f64;
    let mu = points.iter().map(|p| p.u).sum::<f64>() / n;
    let mv = points.iter().map(|p| p.v).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (du, dv) = (p.u - mu, p.v - mv);
        sxx += du * du;
        syy += dv * dv;
        sxy += du * dv;
    }
    if sxx + syy <= 1e-24 * (1.0 + mu * mu + mv * mv) {
        return Err(Error::DegeneratePoints);
    }
    // Principal direction of the scatter; the line normal is perpendicular.
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (a, b) = (-theta.sin(), theta.cos());
    Ok(Line {
        a,
        b,
        c: -(a * mu + b * mv),
    })
}

pub fn line_intersection(l1: &Line, l2: &Line) -> Result<Point2Px> {
    let w = l1.a * l2.b - l1.b * l2.a;
    if w.abs() <= 1e-9 {
        return Err(Error::ParallelLines);
    }
    let x = l1.b * l2.c - l1.c * l2.b;
    let y = l1.c * l2.a - l1.a * l2.c;
    Ok(Point2Px::new(x / w, y / w))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::imaging::{label_components, trace_boundary, BinaryImage};
    use proptest::prelude::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point2Px> {
        v.iter().map(|&(u, v)| Point2Px::new(u, v)).collect()
    }

    /// Rasterizes a convex polygon given in (u, v) by pixel-center inclusion.
    pub(crate) fn raster_polygon(w: usize, h: usize, poly: &[(f64, f64)]) -> BinaryImage {
        let n = poly.len();
        let area2: f64 = (0..n)
            .map(|i| {
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                a.0 * b.1 - b.0 * a.1
            })
            .sum();
        let s = area2.signum();
        let mut data = vec![false; w * h];
        for r in 0..h {
            for c in 0..w {
                let (x, y) = (c as f64, r as f64);
                data[r * w + c] = (0..n).all(|i| {
                    let (a, b) = (poly[i], poly[(i + 1) % n]);
                    s * ((b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)) >= 0.0
                });
            }
        }
        BinaryImage::new(w, h, data).unwrap()
    }

    pub(crate) fn contour_of(mask: &BinaryImage) -> Vec<Point2Px> {
        let rm = label_components(mask);
        assert_eq!(rm.region_count(), 1);
        trace_boundary(&rm, 1).unwrap().centers()
    }

    fn rotated(center: (f64, f64), local: &[(f64, f64)], angle: f64) -> Vec<(f64, f64)> {
        let (s, c) = angle.sin_cos();
        local
            .iter()
            .map(|&(x, y)| (center.0 + c * x - s * y, center.1 + s * x + c * y))
            .collect()
    }

    #[test]
    fn axis_square_gives_four_corners() {
        let mask = raster_polygon(50, 50, &[(5.0, 5.0), (44.0, 5.0), (44.0, 44.0), (5.0, 44.0)]);
        let contour = contour_of(&mask);
        let parts = scan_line_partition(&contour, 5.0).unwrap();
        assert_eq!(parts.len(), 4);
        let corners = [(5.0, 5.0), (44.0, 5.0), (44.0, 44.0), (5.0, 44.0)];
        for &(u, v) in &corners {
            assert!(parts.iter().any(|&i| contour[i].dist(Point2Px::new(u, v)) <= 1.5));
        }
    }

    #[test]
    fn polygons_at_several_rotations() {
        let shapes: [(&str, Vec<(f64, f64)>); 3] = [
            ("square", vec![(-20.0, -20.0), (20.0, -20.0), (20.0, 20.0), (-20.0, 20.0)]),
            ("rectangle", vec![(-28.0, -15.0), (28.0, -15.0), (28.0, 15.0), (-28.0, 15.0)]),
            ("triangle", vec![(-25.0, 18.0), (25.0, 18.0), (0.0, -26.0)]),
        ];
        for (name, local) in &shapes {
            for k in 0..8 {
                let angle = k as f64 * std::f64::consts::PI / 8.0 + 0.05;
                let poly = rotated((40.0, 40.0), local, angle);
                let contour = contour_of(&raster_polygon(80, 80, &poly));
                let parts = scan_line_partition(&contour, 5.0).unwrap();
                assert_eq!(parts.len(), local.len(), "{name} at rotation {k}");
            }
        }
    }

    #[test]
    fn collinear_points_have_no_extra_splits() {
        let line: Vec<Point2Px> = (0..20).map(|i| Point2Px::new(i as f64, 0.0)).collect();
        let parts = scan_line_partition(&line, 5.0).unwrap();
        assert_eq!(parts.len(), 1);
    }

    #[test]
    fn partition_input_errors() {
        let two = pts(&[(0.0, 0.0), (1.0, 0.0)]);
        assert!(matches!(scan_line_partition(&two, 5.0), Err(Error::TooFewPoints(2))));
    }

    #[test]
    fn fit_line_examples() {
        let l = fit_line(&pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)])).unwrap();
        assert!((l.a + l.b).abs() < 1e-12 && l.c.abs() < 1e-12);
        let l = fit_line(&pts(&[(0.0, 0.0), (0.0, 1.0), (0.0, 5.0)])).unwrap();
        assert!((l.a.abs() - 1.0).abs() < 1e-12 && l.b.abs() < 1e-12 && l.c.abs() < 1e-12);
        // Mirror-symmetric about u = 1.5 and balanced about v = 0.
        let l = fit_line(&pts(&[(0.0, 0.1), (1.0, -0.1), (2.0, -0.1), (3.0, 0.1)])).unwrap();
        assert!(l.a.abs() < 1e-6 && (l.b.abs() - 1.0).abs() < 1e-6 && l.c.abs() < 1e-6);
        // Alternating offsets correlate with u, so the fit tilts slightly.
        let l = fit_line(&pts(&[(0.0, 0.1), (1.0, -0.1), (2.0, 0.1), (3.0, -0.1)])).unwrap();
        let expected = 0.5 * (-0.4f64).atan2(4.96);
        assert!(((-l.a).atan2(l.b) - expected).abs() < 1e-12);
        assert!(matches!(
            fit_line(&pts(&[(3.0, 4.0), (3.0, 4.0)])),
            Err(Error::DegeneratePoints)
        ));
    }

    #[test]
    fn fit_line_beats_angle_sweep() {
        let p = pts(&[(0.0, 0.3), (1.0, 1.1), (2.2, 1.9), (2.9, 3.2), (4.1, 3.8)]);
        let l = fit_line(&p).unwrap();
        let rms = |a: f64, b: f64| {
            let mu = p.iter().map(|q| q.u).sum::<f64>() / 5.0;
            let mv = p.iter().map(|q| q.v).sum::<f64>() / 5.0;
            p.iter()
                .map(|q| (a * (q.u - mu) + b * (q.v - mv)).powi(2))
                .sum::<f64>()
        };
        let fitted = rms(l.a, l.b);
        for k in 0..3142 {
            let phi = k as f64 * 0.001;
            assert!(fitted <= rms(phi.cos(), phi.sin()) + 1e-12);
        }
    }

    #[test]
    fn intersection_examples() {
        let x0 = Line { a: 1.0, b: 0.0, c: 0.0 };
        let y0 = Line { a: 0.0, b: 1.0, c: 0.0 };
        let p = line_intersection(&x0, &y0).unwrap();
        assert_eq!((p.u, p.v), (0.0, 0.0));
        let x1 = Line { a: 1.0, b: 0.0, c: -1.0 };
        let y2 = Line { a: 0.0, b: 1.0, c: -2.0 };
        let p = line_intersection(&x1, &y2).unwrap();
        assert!((p.u - 1.0).abs() < 1e-15 && (p.v - 2.0).abs() < 1e-15);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let d1 = Line { a: r, b: -r, c: 0.0 };
        let d2 = Line { a: r, b: r, c: -2.0 * r };
        let p = line_intersection(&d1, &d2).unwrap();
        assert!((p.u - 1.0).abs() < 1e-12 && (p.v - 1.0).abs() < 1e-12);
        assert!(matches!(line_intersection(&x0, &x1), Err(Error::ParallelLines)));
    }

    proptest! {
        #[test]
        fn fit_line_rotation_equivariant(
            raw in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..12),
            angle in -3.0f64..3.0,
        ) {
            let p = pts(&raw);
            let spread: f64 = raw.iter().map(|&(x, y)| (x - raw[0].0).abs() + (y - raw[0].1).abs()).sum();
            prop_assume!(spread > 1e-3);
            let l = fit_line(&p).unwrap();
            let (s, c) = angle.sin_cos();
            let q: Vec<Point2Px> = p.iter().map(|p| Point2Px::new(c * p.u - s * p.v, s * p.u + c * p.v)).collect();
            let lq = fit_line(&q).unwrap();
            // Compare normal angles modulo pi.
            let expected = l.b.atan2(l.a) + angle;
            let got = lq.b.atan2(lq.a);
            let diff = (got - expected).rem_euclid(std::f64::consts::PI);
            let diff = diff.min(std::f64::consts::PI - diff);
            // Nearly isotropic scatter has no well-defined direction.
            let n = p.len() as f64;
            let (mu, mv) = (p.iter().map(|a| a.u).sum::<f64>() / n, p.iter().map(|a| a.v).sum::<f64>() / n);
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for a in &p { sxx += (a.u - mu).powi(2); syy += (a.v - mv).powi(2); sxy += (a.u - mu) * (a.v - mv); }
            let gap = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
            prop_assume!(gap > 1e-3 * (sxx + syy));
            prop_assert!(diff < 1e-6, "diff {}", diff);
        }
    }
}
