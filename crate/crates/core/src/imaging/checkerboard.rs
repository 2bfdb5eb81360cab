//! Corner detector for checkerboard targets. Experimental: the pipeline uses
//! the box extractor by default.

use crate::error::{Error, Result};
use crate::geometry::Point2Px;

use super::regions::label_components;
use super::{BinaryImage, GrayImage};

const HALF: isize = 3;

fn kernel(dr: isize, dc: isize) -> i32 {
    if dr == 0 || dc == 0 {
        0
    } else if (dr < 0) == (dc < 0) {
        -1
    } else {
        1
    }
}

/// Correlation of the signed mask (+1 darker than `threshold`, −1 lighter,
/// 0 equal) with the 7×7 checkerboard window. Pixels where the window does
/// not fit inside the image get 0.
pub fn checkerboard_response(img: &GrayImage, threshold: u8) -> Vec<i32> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let sign = |r: isize, c: isize| -> i32 {
        let p = img.get(r as usize, c as usize);
        match p.cmp(&threshold) {
            std::cmp::Ordering::Less => 1,
            std::cmp::Ordering::Greater => -1,
            std::cmp::Ordering::Equal => 0,
        }
    };
    let mut out = vec![0i32; (w * h).max(0) as usize];
    for r in HALF..h - HALF {
        for c in HALF..w - HALF {
            let mut acc = 0;
            for dr in -HALF..=HALF {
                for dc in -HALF..=HALF {
                    let k = kernel(dr, dc);
                    if k != 0 {
                        acc += k * sign(r + dr, c + dc);
                    }
                }
            }
            out[(r * w + c) as usize] = acc;
        }
    }
    out
}

pub fn checkerboard_corners(img: &GrayImage, expected: usize) -> Result<Vec<Point2Px>> {
    checkerboard_corners_with(img, expected, 150)
}

/// Strongest response per connected nonzero-response region, the `expected`
/// strongest of those overall, each refined to the |response|-weighted
/// centroid of nearby same-sign pixels. Output is in raster order of the
/// peak pixels.
pub fn checkerboard_corners_with(
    img: &GrayImage,
    expected: usize,
    threshold: u8,
) -> Result<Vec<Point2Px>> {
    if expected == 0 {
        return Err(Error::InvalidInput("expected corner count must be positive".into()));
    }
    let (w, h) = (img.width(), img.height());
    let resp = checkerboard_response(img, threshold);
    let nonzero = BinaryImage::new(w, h, resp.iter().map(|&x| x != 0).collect())?;
    let regions = label_components(&nonzero);

    // (|peak|, index) per region; ties keep the first pixel in raster order.
    let mut peaks = vec![(0i32, usize::MAX); regions.region_count() as usize + 1];
    for (i, &l) in regions.labels().iter().enumerate() {
        if l != 0 && resp[i].abs() > peaks[l as usize].0 {
            peaks[l as usize] = (resp[i].abs(), i);
        }
    }
    let mut candidates: Vec<(i32, usize)> = peaks.into_iter().skip(1).collect();
    if candidates.len() < expected {
        return Err(Error::TooFewResponses {
            found: candidates.len(),
            expected,
        });
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    candidates.truncate(expected);
    candidates.sort_by_key(|&(_, i)| i);

    const RADIUS: isize = 3;
    let corners = candidates
        .into_iter()
        .map(|(peak, i)| {
            let (r0, c0) = ((i / w) as isize, (i % w) as isize);
            let s = resp[i].signum();
            let (mut su, mut sv, mut sw) = (0.0, 0.0, 0.0);
            for r in (r0 - RADIUS).max(0)..=(r0 + RADIUS).min(h as isize - 1) {
                for c in (c0 - RADIUS).max(0)..=(c0 + RADIUS).min(w as isize - 1) {
                    let x = resp[r as usize * w + c as usize];
                    if x.signum() == s && 2 * x.abs() >= peak {
                        let wt = f64::from(x.abs());
                        su += wt * c as f64;
                        sv += wt * r as f64;
                        sw += wt;
                    }
                }
            }
            Point2Px::new(su / sw, sv / sw)
        })
        .collect();
    Ok(corners)
}
