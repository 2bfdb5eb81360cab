use crate::error::{Error, Result};

use super::BinaryImage;
use crate::geometry::Point2Px;

/// Integer pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl Pixel {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn center(self) -> Point2Px {
        Point2Px::new(self.col as f64, self.row as f64)
    }
}

/// Connected-component labels; 0 is background, regions are `1..=region_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    region_count: u32,
}

impl RegionMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn region_count(&self) -> u32 {
        self.region_count
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    fn is(&self, row: isize, col: isize, label: u32) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.labels[row as usize * self.width + col as usize] == label
    }

    /// Pixel count of every region, indexed by label (entry 0 is background).
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.region_count as usize + 1];
        for &l in &self.labels {
            areas[l as usize] += 1;
        }
        areas
    }

    /// Mask of the pixels carrying `label`.
    pub fn mask(&self, label: u32) -> BinaryImage {
        BinaryImage::new(
            self.width,
            self.height,
            self.labels.iter().map(|&l| l == label).collect(),
        )
        .expect("dimensions match")
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labeling under 8-adjacency. Final labels follow the
/// raster order of each region's first pixel.
pub fn label_components(img: &BinaryImage) -> RegionMap {
    let (w, h) = (img.width(), img.height());
    let mut provisional = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    for r in 0..h {
        for c in 0..w {
            if !img.get(r, c) {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut n = 0;
            // Already-visited 8-neighbors: W, NW, N, NE.
            for (dr, dc) in [(0isize, -1isize), (-1, -1), (-1, 0), (-1, 1)] {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr >= 0 && cc >= 0 && (cc as usize) < w {
                    let l = provisional[rr as usize * w + cc as usize];
                    if l != 0 {
                        neighbors[n] = l;
                        n += 1;
                    }
                }
            }
            let label = if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let first = neighbors[0];
                for &other in &neighbors[1..n] {
                    union(&mut parent, first, other);
                }
                first
            };
            provisional[r * w + c] = label;
        }
    }

    let mut final_label = vec![0u32; parent.len()];
    let mut count = 0u32;
    let mut labels = vec![0u32; w * h];
    for i in 0..w * h {
        let p = provisional[i];
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p) as usize;
        if final_label[root] == 0 {
            count += 1;
            final_label[root] = count;
        }
        labels[i] = final_label[root];
    }
    RegionMap {
        width: w,
        height: h,
        labels,
        region_count: count,
    }
}

/// `b = (1 - (a ⋄ N)) a`: foreground pixels whose 4-neighborhood minimum is
/// background. Pixels beyond the border count as background.
pub fn interior_8_boundary(img: &BinaryImage) -> BinaryImage {
    let (w, h) = (img.width(), img.height());
    let mut out = vec![false; w * h];
    for r in 0..h {
        for c in 0..w {
            if !img.get(r, c) {
                continue;
            }
            let (ri, ci) = (r as isize, c as isize);
            let min4 = img.get_signed(ri - 1, ci)
                && img.get_signed(ri + 1, ci)
                && img.get_signed(ri, ci - 1)
                && img.get_signed(ri, ci + 1);
            out[r * w + c] = !min4;
        }
    }
    BinaryImage::new(w, h, out).expect("dimensions match")
}

/// Ordered boundary pixels of one region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeTrace {
    pub points: Vec<Pixel>,
}

impl EdgeTrace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centers(&self) -> Vec<Point2Px> {
        self.points.iter().map(|p| p.center()).collect()
    }
}

/// Clockwise on screen starting from west; with `v` pointing down this is the
/// positive orientation in `(u, v)` coordinates.
const RING: [(isize, isize); 8] = [
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
];

fn ring_index(dr: isize, dc: isize) -> usize {
    RING.iter()
        .position(|&d| d == (dr, dc))
        .expect("offset is an 8-neighbor")
}

/// Moore-neighbor contour following of region `label`, starting at its
/// topmost-then-leftmost pixel. The traversal has positive orientation in
/// `(u, v)` = (column, row) coordinates, i.e. it runs rightwards along the
/// top edge first.
///
/// Fails with `NotSimpleBoundary` unless the walk visits every
/// interior-8-boundary pixel of the region exactly once (holes, pinches and
/// one-pixel-wide necks all fail).
pub fn trace_boundary(region: &RegionMap, label: u32) -> Result<EdgeTrace> {
    let w = region.width();
    let start = region
        .labels()
        .iter()
        .position(|&l| l == label)
        .ok_or_else(|| Error::InvalidInput(format!("label {label} not present")))?;
    let start = (start / w, start % w);

    let boundary_count = {
        let mask = region.mask(label);
        interior_8_boundary(&mask).count()
    };

    let is_fg = |r: isize, c: isize| region.is(r, c, label);
    let step = |p: (usize, usize), d: usize| {
        (
            (p.0 as isize + RING[d].0) as usize,
            (p.1 as isize + RING[d].1) as usize,
        )
    };

    let mut points = vec![Pixel::new(start.0, start.1)];
    let mut cur = start;
    // The west neighbor of the first pixel of a raster scan is background.
    let mut back = 0usize;
    let mut first_move: Option<(usize, usize)> = None;
    let cap = 4 * boundary_count + 16;
    loop {
        let found = (1..=8)
            .map(|k| (back + k) % 8)
            .find(|&d| is_fg(cur.0 as isize + RING[d].0, cur.1 as isize + RING[d].1));
        let Some(d) = found else {
            // Isolated pixel.
            break;
        };
        let next = step(cur, d);
        let prev_bg = (
            cur.0 as isize + RING[(d + 7) % 8].0,
            cur.1 as isize + RING[(d + 7) % 8].1,
        );
        if cur == start {
            match first_move {
                None => first_move = Some(next),
                Some(m) if m == next => break,
                Some(_) => {}
            }
        }
        if cur == start && points.len() > 1 && first_move != Some(next) {
            // Re-entering the start pixel by a different route: pinch.
            return Err(Error::NotSimpleBoundary);
        }
        back = ring_index(prev_bg.0 - next.0 as isize, prev_bg.1 - next.1 as isize);
        cur = next;
        if cur != start {
            points.push(Pixel::new(cur.0, cur.1));
        }
        if points.len() > cap {
            return Err(Error::NotSimpleBoundary);
        }
    }

    let mut seen = points.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != points.len() || points.len() != boundary_count {
        return Err(Error::NotSimpleBoundary);
    }
    Ok(EdgeTrace { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn mask_from(rows: &[&str]) -> BinaryImage {
        let h = rows.len();
        let w = rows[0].len();
        let data = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c == '#'))
            .collect();
        BinaryImage::new(w, h, data).unwrap()
    }

    #[test]
    fn diagonal_pixels_are_one_region() {
        let m = mask_from(&["#.", ".#"]);
        assert_eq!(label_components(&m).region_count(), 1);
    }

    #[test]
    fn separated_pixels_are_two_regions() {
        let m = mask_from(&["#", ".", "#"]);
        let rm = label_components(&m);
        assert_eq!(rm.region_count(), 2);
        assert_eq!(rm.labels(), &[1, 0, 2]);
    }

    #[test]
    fn labels_follow_raster_order() {
        // The U-shape is discovered at its left arm first but merges later.
        let m = mask_from(&["#.#.#", "#.#..", "###.."]);
        let rm = label_components(&m);
        assert_eq!(rm.region_count(), 2);
        assert_eq!(rm.label(0, 0), 1);
        assert_eq!(rm.label(0, 2), 1);
        assert_eq!(rm.label(0, 4), 2);
    }

    #[test]
    fn boundary_examples() {
        let single = mask_from(&["#"]);
        assert_eq!(interior_8_boundary(&single), single);

        let block3 = mask_from(&["###", "###", "###"]);
        let b = interior_8_boundary(&block3);
        assert_eq!(b.count(), 8);
        assert!(!b.get(1, 1));

        let block4 = mask_from(&["......", ".####.", ".####.", ".####.", ".####.", "......"]);
        let b = interior_8_boundary(&block4);
        assert_eq!(b.count(), 12);
        assert!(!b.get(2, 2) && !b.get(3, 3));
    }

    #[test]
    fn trace_of_3x3_block() {
        let m = mask_from(&[".....", ".###.", ".###.", ".###.", "....."]);
        let rm = label_components(&m);
        let t = trace_boundary(&rm, 1).unwrap();
        let expect: Vec<Pixel> = [(1, 1), (1, 2), (1, 3), (2, 3), (3, 3), (3, 2), (3, 1), (2, 1)]
            .iter()
            .map(|&(r, c)| Pixel::new(r, c))
            .collect();
        assert_eq!(t.points, expect);
    }

    #[test]
    fn trace_of_single_pixel() {
        let m = mask_from(&["...", ".#.", "..."]);
        let t = trace_boundary(&label_components(&m), 1).unwrap();
        assert_eq!(t.points, vec![Pixel::new(1, 1)]);
    }

    #[test]
    fn figure_eight_is_not_simple() {
        let m = mask_from(&[
            ".......", ".###...", ".###...", ".####..", "...###.", "...###.", "...###.", ".......",
        ]);
        let rm = label_components(&m);
        assert_eq!(rm.region_count(), 1);
        // Pinch at the single pixel linking the two blocks.
        let m2 = mask_from(&[
            "........", ".###....", ".###....", ".###....", "....###.", "....###.", "....###.",
            "........",
        ]);
        let rm2 = label_components(&m2);
        assert_eq!(rm2.region_count(), 1);
        assert!(matches!(trace_boundary(&rm2, 1), Err(Error::NotSimpleBoundary)));
    }

    #[test]
    fn region_with_hole_is_not_simple() {
        let m = mask_from(&["#####", "#...#", "#####"]);
        let rm = label_components(&m);
        // Every pixel is boundary here but the trace still closes; make a real hole.
        assert!(trace_boundary(&rm, 1).is_ok());
        let m = mask_from(&["#####", "#####", "##.##", "#####", "#####"]);
        let rm = label_components(&m);
        assert!(matches!(trace_boundary(&rm, 1), Err(Error::NotSimpleBoundary)));
    }

    #[test]
    fn trace_consecutive_points_are_neighbors() {
        let m = mask_from(&[
            "..........",
            "...####...",
            "..######..",
            ".########.",
            "..######..",
            "...####...",
            "..........",
        ]);
        let rm = label_components(&m);
        let t = trace_boundary(&rm, 1).unwrap();
        let n = t.len();
        for i in 0..n {
            let (a, b) = (t.points[i], t.points[(i + 1) % n]);
            let dr = a.row.abs_diff(b.row);
            let dc = a.col.abs_diff(b.col);
            assert!(dr <= 1 && dc <= 1 && (dr + dc) > 0);
        }
    }
}
