//! Feature extraction for the square-box target.
//!
//! The pipeline for one image: threshold, label 8-connected regions, and for
//! every region of plausible area trace its boundary, split the boundary into
//! polygon sides, and if there are exactly four sides intersect the fitted
//! side lines to get the box corners.

mod checkerboard;
mod extract;
mod pgm;
mod polygon;
mod regions;

pub use checkerboard::{checkerboard_corners, checkerboard_corners_with, checkerboard_response};
pub use extract::{extract_corners, flatten_corners, ExtractConfig, QuadCorners};
pub use pgm::{load_pgm, write_pgm};
pub use polygon::{fit_line, line_intersection, scan_line_partition, Line};
pub use regions::{interior_8_boundary, label_components, trace_boundary, EdgeTrace, Pixel, RegionMap};

use crate::error::{Error, Result};

/// 8-bit intensity image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{}x{} image needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{}x{} mask needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    /// Out-of-bounds reads are background.
    pub fn get_signed(&self, row: isize, col: isize) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.data[row as usize * self.width + col as usize]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Foreground is strictly darker than `threshold` (dark boxes on light paper).
pub fn binarize(img: &GrayImage, threshold: u8) -> BinaryImage {
    BinaryImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&p| p < threshold).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_examples() {
        let white = GrayImage::filled(4, 3, 255);
        assert_eq!(binarize(&white, 150).count(), 0);
        let black = GrayImage::filled(4, 3, 0);
        assert_eq!(binarize(&black, 150).count(), 12);
        let row = GrayImage::new(3, 1, vec![100, 150, 200]).unwrap();
        assert_eq!(binarize(&row, 150).data(), &[true, false, false]);
    }

    #[test]
    fn binarize_is_monotone_in_threshold() {
        let data: Vec<u8> = (0..=255u8).collect();
        let img = GrayImage::new(16, 16, data).unwrap();
        let mut last = 0;
        for t in 0..=255u8 {
            let c = binarize(&img, t).count();
            assert!(c >= last);
            last = c;
        }
    }

    #[test]
    fn size_mismatch_is_rejected() {
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
        assert!(BinaryImage::new(2, 2, vec![false; 5]).is_err());
    }
}
