//! Portable graymap (P2 ASCII / P5 binary) with maxval up to 255.

use crate::error::{Error, Result};

use super::GrayImage;

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next_token(&mut self) -> Option<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            if self.bytes[self.pos] == b'#' {
                break;
            }
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn next_uint(&mut self, what: &str) -> Result<u32> {
        let tok = self
            .next_token()
            .ok_or_else(|| Error::MalformedPgm(format!("truncated before {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| {
                Error::MalformedPgm(format!("bad {what}: {:?}", String::from_utf8_lossy(tok)))
            })
    }
}

pub fn load_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut tokens = Tokens { bytes, pos: 0 };
    let binary = match tokens.next_token() {
        Some(b"P2") => false,
        Some(b"P5") => true,
        Some(other) => {
            return Err(Error::MalformedPgm(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
        None => return Err(Error::MalformedPgm("empty input".into())),
    };
    let width = tokens.next_uint("width")? as usize;
    let height = tokens.next_uint("height")? as usize;
    let maxval = tokens.next_uint("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::MalformedPgm(format!("maxval {maxval} not in 1..=255")));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::MalformedPgm("dimensions overflow".into()))?;

    let data = if binary {
        // Exactly one whitespace byte separates maxval from the raster.
        let start = tokens.pos + 1;
        if start > bytes.len() || bytes.len() - start < count {
            return Err(Error::MalformedPgm(format!(
                "raster truncated: need {count} bytes"
            )));
        }
        let raster = &bytes[start..start + count];
        if let Some(&bad) = raster.iter().find(|&&b| u32::from(b) > maxval) {
            return Err(Error::MalformedPgm(format!("sample {bad} exceeds maxval")));
        }
        raster.to_vec()
    } else {
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let v = tokens.next_uint("sample")?;
            if v > maxval {
                return Err(Error::MalformedPgm(format!("sample {v} exceeds maxval")));
            }
            data.push(v as u8);
        }
        data
    };
    GrayImage::new(width, height, data)
}

/// Binary (P5) encoding with maxval 255.
pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_decode() {
        let img = load_pgm(b"P2 2 2 255\n0 255 128 64\n").unwrap();
        assert_eq!(img, GrayImage::new(2, 2, vec![0, 255, 128, 64]).unwrap());
    }

    #[test]
    fn binary_matches_ascii() {
        let mut bytes = b"P5\n# comment line\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        let a = load_pgm(&bytes).unwrap();
        let b = load_pgm(b"P2\n2 # width\n2\n255\n0 255\n128 64").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        for bad in [
            &b"P6 1 1 255\n\x00\x00\x00"[..],
            b"P2 2 2 65535\n0 1 2 3",
            b"P2 2 2 255\n0 1 2",
            b"P5 2 2 255\n\x00\x01",
            b"P2 1 1 10\n11",
            b"",
        ] {
            assert!(matches!(load_pgm(bad), Err(Error::MalformedPgm(_))), "{bad:?}");
        }
    }

    #[test]
    fn write_then_read() {
        let img = GrayImage::new(3, 2, vec![1, 2, 3, 200, 10, 0]).unwrap();
        assert_eq!(load_pgm(&write_pgm(&img)).unwrap(), img);
    }
}
