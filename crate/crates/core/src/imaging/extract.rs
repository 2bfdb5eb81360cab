use crate::error::{Error, Result};
use crate::geometry::Point2Px;
use crate::homography::{estimate_homography, Homography, PlanarCorrespondences};

use super::polygon::{fit_line, line_intersection, scan_line_partition, Line};
use super::regions::{label_components, trace_boundary};
use super::{binarize, GrayImage};

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractConfig {
    /// Foreground is `intensity < threshold`.
    pub threshold: u8,
    pub boxes_x: usize,
    pub boxes_y: usize,
    /// Scan-line split distance in pixels. Small regions use a tighter
    /// value, a quarter of the square root of their area, but never below
    /// two pixels.
    pub scan_threshold: f64,
    /// Inclusive region-area gate in pixels.
    pub min_area: usize,
    pub max_area: usize,
    /// Contour points dropped next to each partition point before line fitting.
    pub trim: usize,
    /// Outward shift applied to fitted sides, as a fraction of
    /// `max(|a|, |b|)` for the unit normal `(a, b)`. Boundary pixel centers of
    /// a digitized half-plane sit uniformly between 0 and that depth inside
    /// the edge.
    pub edge_offset: f64,
    /// Refine each side from the gray levels across it. Off means corners
    /// come from the binary mask alone.
    pub subpixel: bool,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            threshold: 150,
            boxes_x: 8,
            boxes_y: 8,
            scan_threshold: 5.0,
            min_area: 21,
            max_area: 2999,
            trim: 1,
            edge_offset: 0.5,
            subpixel: true,
        }
    }
}

impl ExtractConfig {
    pub fn expected_boxes(&self) -> usize {
        self.boxes_x * self.boxes_y
    }
}

/// Corners of one box, positively oriented in `(u, v)` and starting from the
/// top-left corner (smallest `u + v`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadCorners {
    pub c: [Point2Px; 4],
}

impl QuadCorners {
    pub fn centroid(&self) -> Point2Px {
        let u = self.c.iter().map(|p| p.u).sum::<f64>() / 4.0;
        let v = self.c.iter().map(|p| p.v).sum::<f64>() / 4.0;
        Point2Px::new(u, v)
    }

    pub fn is_convex(&self) -> bool {
        let cross = |i: usize| {
            let (a, b, c) = (self.c[i], self.c[(i + 1) % 4], self.c[(i + 2) % 4]);
            (b.u - a.u) * (c.v - b.v) - (b.v - a.v) * (c.u - b.u)
        };
        let s: Vec<f64> = (0..4).map(cross).collect();
        s.iter().all(|&x| x > 0.0) || s.iter().all(|&x| x < 0.0)
    }

    fn canonical(mut c: [Point2Px; 4]) -> Self {
        let area2: f64 = (0..4)
            .map(|i| c[i].u * c[(i + 1) % 4].v - c[(i + 1) % 4].u * c[i].v)
            .sum();
        if area2 < 0.0 {
            c.reverse();
        }
        let first = (0..4)
            .min_by(|&i, &j| (c[i].u + c[i].v).total_cmp(&(c[j].u + c[j].v)))
            .expect("four corners");
        c.rotate_left(first);
        Self { c }
    }
}

pub fn flatten_corners(boxes: &[QuadCorners]) -> Vec<Point2Px> {
    boxes.iter().flat_map(|q| q.c).collect()
}

/// Corners of one region, or `None` when it is not a clean quadrilateral.
fn region_quad(img: &GrayImage, contour: &[Point2Px], area: usize, cfg: &ExtractConfig) -> Option<QuadCorners> {
    let threshold = cfg.scan_threshold.min((0.25 * (area as f64).sqrt()).max(2.0));
    let parts = scan_line_partition(contour, threshold).ok()?;
    if parts.len() != 4 {
        return None;
    }
    let n = contour.len();
    let g = {
        let u = contour.iter().map(|p| p.u).sum::<f64>() / n as f64;
        let v = contour.iter().map(|p| p.v).sum::<f64>() / n as f64;
        Point2Px::new(u, v)
    };
    let mut lines: Vec<Line> = Vec::with_capacity(4);
    for k in 0..4 {
        let (s, e) = (parts[k], parts[(k + 1) % 4]);
        let len = (e + n - s) % n;
        let side: Vec<Point2Px> = if len > 2 * cfg.trim + 1 {
            (cfg.trim..=len - cfg.trim).map(|j| contour[(s + j) % n]).collect()
        } else {
            (0..=len).map(|j| contour[(s + j) % n]).collect()
        };
        if side.len() < 2 {
            return None;
        }
        lines.push(fit_line(&side).ok()?);
    }

    // On small boxes the partition points can land a few pixels away from
    // the digital corner. Reassign contour points to their nearest side,
    // away from the current corners, and refit.
    for _ in 0..3 {
        let c = intersect_sides(&lines)?;
        let mut sides: [Vec<Point2Px>; 4] = Default::default();
        for &p in contour {
            let k = (0..4)
                .min_by(|&i, &j| lines[i].eval(p).abs().total_cmp(&lines[j].eval(p).abs()))
                .expect("four sides");
            // Side k runs from corner k-1 to corner k.
            let near_corner = p.dist(c[(k + 3) % 4]).min(p.dist(c[k])) < cfg.trim as f64 + 0.5;
            if !near_corner {
                sides[k].push(p);
            }
        }
        for k in 0..4 {
            if sides[k].len() >= 2 {
                if let Ok(l) = fit_line(&sides[k]) {
                    lines[k] = l;
                }
            }
        }
    }

    let binary = intersect_sides(&lines)?;
    for (k, line) in lines.iter_mut().enumerate() {
        // Move away from the region interior.
        let outward = -line.eval(g).signum();
        let refined = if cfg.subpixel {
            subpixel_side(img, line, outward, binary[(k + 3) % 4], binary[k])
        } else {
            None
        };
        *line = refined.unwrap_or_else(|| {
            let step = line.a.abs().max(line.b.abs());
            line.shifted(outward * cfg.edge_offset * step)
        });
    }
    let c = intersect_sides(&lines)?;
    let quad = QuadCorners::canonical(c);
    quad.is_convex().then_some(quad)
}

/// Half-width of the gray-level profile taken across each side.
const PROFILE_HALF_WIDTH: f64 = 3.0;
const PROFILE_STEP: f64 = 0.25;

fn bilinear(img: &GrayImage, u: f64, v: f64) -> Option<f64> {
    if u < 0.0 || v < 0.0 {
        return None;
    }
    let (c0, r0) = (u.floor() as usize, v.floor() as usize);
    if c0 + 1 >= img.width() || r0 + 1 >= img.height() {
        return None;
    }
    let (fu, fv) = (u - c0 as f64, v - r0 as f64);
    let at = |r: usize, c: usize| f64::from(img.get(r, c));
    let top = at(r0, c0) * (1.0 - fu) + at(r0, c0 + 1) * fu;
    let bottom = at(r0 + 1, c0) * (1.0 - fu) + at(r0 + 1, c0 + 1) * fu;
    Some(top * (1.0 - fv) + bottom * fv)
}

/// Subpixel edge line for the side running from corner `a` to corner `b`.
///
/// At regular stations along the side the dark fraction is integrated
/// across a band of half-width `w` around the binary line. For a blurred
/// step the integral is `w + δ`, where `δ` is the edge's outward offset, so
/// each station yields one edge point. The line is the fit through them.
fn subpixel_side(img: &GrayImage, line: &Line, outward: f64, a: Point2Px, b: Point2Px) -> Option<Line> {
    let w = PROFILE_HALF_WIDTH;
    let (nu, nv) = (outward * line.a, outward * line.b);
    let len = a.dist(b);
    let margin = w + 1.0;
    if len < 2.0 * margin + 2.0 {
        return None;
    }
    let (du, dv) = ((b.u - a.u) / len, (b.v - a.v) / len);
    // Foot of `a` on the line, so stations sit exactly on it.
    let da = line.eval(a);
    let foot = Point2Px::new(a.u - da * line.a, a.v - da * line.b);

    let steps = (2.0 * w / PROFILE_STEP).round() as usize;
    let mut stations = Vec::new();
    let mut t = margin;
    while t <= len - margin {
        let p = Point2Px::new(foot.u + t * du, foot.v + t * dv);
        let profile: Option<Vec<f64>> = (0..=steps)
            .map(|i| {
                let d = -w + i as f64 * PROFILE_STEP;
                bilinear(img, p.u + d * nu, p.v + d * nv)
            })
            .collect();
        stations.push((p, profile?));
        t += 0.5;
    }
    if stations.len() < 2 {
        return None;
    }

    // Paper and ink levels from the profile ends.
    let mut dark: Vec<f64> = stations.iter().map(|(_, pr)| pr[0]).collect();
    let mut light: Vec<f64> = stations.iter().map(|(_, pr)| pr[steps]).collect();
    let median = |x: &mut Vec<f64>| {
        x.sort_by(f64::total_cmp);
        x[x.len() / 2]
    };
    let (dark, light) = (median(&mut dark), median(&mut light));
    if light - dark < 10.0 {
        return None;
    }

    let points: Vec<Point2Px> = stations
        .iter()
        .map(|(p, pr)| {
            let f: Vec<f64> = pr.iter().map(|&x| ((light - x) / (light - dark)).clamp(0.0, 1.0)).collect();
            // Trapezoid rule.
            let area = PROFILE_STEP * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[steps]));
            let delta = area - w;
            Point2Px::new(p.u + delta * nu, p.v + delta * nv)
        })
        .collect();
    let refined = fit_line(&points).ok()?;
    // Reject refinements that wander off the binary estimate.
    let moved = points.iter().map(|q| line.eval(*q).abs()).fold(0.0, f64::max);
    (moved < 1.5).then_some(refined)
}

/// Corner `k` joins side `k` to side `k+1`.
fn intersect_sides(lines: &[Line]) -> Option<[Point2Px; 4]> {
    let mut c = [Point2Px::new(0.0, 0.0); 4];
    for k in 0..4 {
        c[k] = line_intersection(&lines[k], &lines[(k + 1) % 4]).ok()?;
    }
    Some(c)
}

/// Sorts boxes row-major: by centroid `v` into rows of `boxes_x`, then by `u`.
fn sort_boxes(mut quads: Vec<QuadCorners>, boxes_x: usize) -> Vec<QuadCorners> {
    quads.sort_by(|a, b| a.centroid().v.total_cmp(&b.centroid().v));
    for row in quads.chunks_mut(boxes_x) {
        row.sort_by(|a, b| a.centroid().u.total_cmp(&b.centroid().u));
    }
    quads
}

/// Row-major box order from a projective map between box centroids and grid
/// cells, seeded by the four extreme boxes and refit on all of them. Within
/// each box the first corner is the one facing grid cell `(0, 0)`. Falls
/// back to [`sort_boxes`] when no consistent assignment is found.
fn order_boxes(quads: Vec<QuadCorners>, boxes_x: usize, boxes_y: usize) -> Vec<QuadCorners> {
    if boxes_x < 2 || boxes_y < 2 {
        return sort_boxes(quads, boxes_x);
    }
    match grid_assignment(&quads, boxes_x, boxes_y) {
        Some(order) => order
            .into_iter()
            .map(|(q, diag)| {
                let g = quads[q].centroid();
                let first = (0..4)
                    .min_by(|&i, &j| {
                        let di = (quads[q].c[i].u - g.u) * diag.0 + (quads[q].c[i].v - g.v) * diag.1;
                        let dj = (quads[q].c[j].u - g.u) * diag.0 + (quads[q].c[j].v - g.v) * diag.1;
                        di.total_cmp(&dj)
                    })
                    .expect("four corners");
                let mut c = quads[q].c;
                c.rotate_left(first);
                QuadCorners { c }
            })
            .collect(),
        None => {
            log::debug!("grid assignment failed; sorting boxes by rows");
            sort_boxes(quads, boxes_x)
        }
    }
}

/// For each grid cell in row-major order: the index of its box and the image
/// direction of increasing row and column at that box.
fn grid_assignment(quads: &[QuadCorners], boxes_x: usize, boxes_y: usize) -> Option<Vec<(usize, (f64, f64))>> {
    let cents: Vec<Point2Px> = quads.iter().map(QuadCorners::centroid).collect();
    let pick = |key: &dyn Fn(&Point2Px) -> f64| {
        (0..cents.len()).min_by(|&i, &j| key(&cents[i]).total_cmp(&key(&cents[j])))
    };
    let (mx, my) = ((boxes_x - 1) as f64, (boxes_y - 1) as f64);
    let seeds = [
        (pick(&|p| p.u + p.v)?, (0.0, 0.0)),
        (pick(&|p| p.v - p.u)?, (mx, 0.0)),
        (pick(&|p| -p.u - p.v)?, (mx, my)),
        (pick(&|p| p.u - p.v)?, (0.0, my)),
    ];
    let fit = |pairs: &[(usize, (f64, f64))]| -> Option<(Homography, Homography)> {
        let image: Vec<(f64, f64)> = pairs.iter().map(|&(q, _)| (cents[q].u, cents[q].v)).collect();
        let grid: Vec<(f64, f64)> = pairs.iter().map(|&(_, g)| g).collect();
        let as_px = |v: &[(f64, f64)]| v.iter().map(|&(a, b)| Point2Px::new(a, b)).collect::<Vec<_>>();
        let to_grid = estimate_homography(&PlanarCorrespondences::new(image.clone(), as_px(&grid)).ok()?).ok()?;
        let to_image = estimate_homography(&PlanarCorrespondences::new(grid, as_px(&image)).ok()?).ok()?;
        Some((to_grid, to_image))
    };
    let assign = |to_grid: &Homography| -> Option<Vec<usize>> {
        let mut cell_of = vec![usize::MAX; boxes_x * boxes_y];
        for (q, c) in cents.iter().enumerate() {
            let g = to_grid.apply(c.u, c.v).ok()?;
            let (i, j) = (g.u.round(), g.v.round());
            // Centroids must land near a cell center.
            if (g.u - i).abs() > 0.35 || (g.v - j).abs() > 0.35 || i < 0.0 || j < 0.0 || i > mx || j > my {
                return None;
            }
            let cell = j as usize * boxes_x + i as usize;
            if cell_of[cell] != usize::MAX {
                return None;
            }
            cell_of[cell] = q;
        }
        Some(cell_of)
    };

    let (to_grid, _) = fit(&seeds)?;
    let cell_of = assign(&to_grid)?;
    // Refit on every box so perspective across the whole target is captured.
    let pairs: Vec<(usize, (f64, f64))> = cell_of
        .iter()
        .enumerate()
        .map(|(cell, &q)| (q, ((cell % boxes_x) as f64, (cell / boxes_x) as f64)))
        .collect();
    let (to_grid, to_image) = fit(&pairs)?;
    let cell_of = assign(&to_grid)?;
    cell_of
        .iter()
        .enumerate()
        .map(|(cell, &q)| {
            let (i, j) = ((cell % boxes_x) as f64, (cell / boxes_x) as f64);
            let a = to_image.apply(i, j).ok()?;
            let b = to_image.apply(i + 0.5, j + 0.5).ok()?;
            Some((q, (b.u - a.u, b.v - a.v)))
        })
        .collect()
}

/// Box corners of the square-box target, grouped per box in row-major box
/// order. Assumes the target's first box is the top-left one in the image,
/// i.e. no in-plane rotation near 45° or beyond.
pub fn extract_corners(img: &GrayImage, cfg: &ExtractConfig) -> Result<Vec<QuadCorners>> {
    let expected = cfg.expected_boxes();
    if expected == 0 {
        return Err(Error::InvalidInput("expected box count must be positive".into()));
    }
    let mask = binarize(img, cfg.threshold);
    let regions = label_components(&mask);
    let areas = regions.areas();
    let mut quads = Vec::new();
    for label in 1..=regions.region_count() {
        let area = areas[label as usize];
        if area < cfg.min_area || area > cfg.max_area {
            continue;
        }
        let Ok(trace) = trace_boundary(&regions, label) else {
            log::debug!("region {label}: boundary is not a simple curve");
            continue;
        };
        match region_quad(img, &trace.centers(), area, cfg) {
            Some(q) => quads.push(q),
            None => log::debug!("region {label}: not a quadrilateral"),
        }
    }
    if quads.len() != expected {
        return Err(Error::WrongBoxCount {
            found: quads.len(),
            expected,
        });
    }
    Ok(order_boxes(quads, cfg.boxes_x, cfg.boxes_y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::polygon::tests::raster_polygon;

    fn to_gray(mask: &crate::imaging::BinaryImage) -> GrayImage {
        let data = mask.data().iter().map(|&b| if b { 40 } else { 220 }).collect();
        GrayImage::new(mask.width(), mask.height(), data).unwrap()
    }

    #[test]
    fn blank_image_finds_no_boxes() {
        let img = GrayImage::filled(64, 48, 220);
        assert!(matches!(
            extract_corners(&img, &ExtractConfig::default()),
            Err(Error::WrongBoxCount { found: 0, expected: 64 })
        ));
    }

    #[test]
    fn single_box_corners() {
        let mask = raster_polygon(40, 40, &[(10.0, 8.0), (30.0, 8.0), (30.0, 28.0), (10.0, 28.0)]);
        let cfg = ExtractConfig {
            boxes_x: 1,
            boxes_y: 1,
            ..Default::default()
        };
        let boxes = extract_corners(&to_gray(&mask), &cfg).unwrap();
        // Pixel-center rasterization: the box occupies pixels 10..=30, whose
        // outer edges are at 9.5 and 30.5.
        let truth = [(9.5, 7.5), (30.5, 7.5), (30.5, 28.5), (9.5, 28.5)];
        for (p, &(u, v)) in boxes[0].c.iter().zip(&truth) {
            assert!((p.u - u).abs() < 1e-9 && (p.v - v).abs() < 1e-9, "{p:?}");
        }
    }

    #[test]
    fn triangle_is_rejected() {
        let mask = raster_polygon(40, 40, &[(5.0, 30.0), (35.0, 30.0), (20.0, 5.0)]);
        let cfg = ExtractConfig {
            boxes_x: 1,
            boxes_y: 1,
            ..Default::default()
        };
        assert!(matches!(
            extract_corners(&to_gray(&mask), &cfg),
            Err(Error::WrongBoxCount { found: 0, .. })
        ));
    }

    #[test]
    fn area_gate_is_inclusive() {
        let cfg = ExtractConfig::default();
        assert_eq!((cfg.min_area, cfg.max_area), (21, 2999));
    }

    #[test]
    fn canonical_order_starts_top_left() {
        let pts = [(10.0, 10.0), (10.0, 20.0), (20.0, 20.0), (20.0, 10.0)];
        let q = QuadCorners::canonical(pts.map(|(u, v)| Point2Px::new(u, v)));
        let got: Vec<(f64, f64)> = q.c.iter().map(|p| (p.u, p.v)).collect();
        assert_eq!(got, vec![(10.0, 10.0), (20.0, 10.0), (20.0, 20.0), (10.0, 20.0)]);
    }
}
