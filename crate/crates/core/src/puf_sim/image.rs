//! 8-bit camera frames and their binary PGM (P5) serialisation.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::Dims;

/// A grey-value camera frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeckleImage {
    dims: Dims,
    grey: Vec<u8>,
}

impl SpeckleImage {
    pub fn new(dims: Dims, grey: Vec<u8>) -> Result<Self> {
        if dims.area() == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if grey.len() != dims.area() {
            return Err(Error::invalid(format!(
                "{} grey values for a {}x{} image",
                grey.len(),
                dims.width,
                dims.height
            )));
        }
        Ok(Self { dims, grey })
    }

    pub fn filled(dims: Dims, value: u8) -> Result<Self> {
        Self::new(dims, vec![value; dims.area()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    /// Row-major grey values.
    pub fn pixels(&self) -> &[u8] {
        &self.grey
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.grey[y * self.dims.width + x]
    }

    /// Top-left `dims` sub-frame.
    pub fn crop(&self, dims: Dims) -> Result<Self> {
        if dims.width > self.dims.width || dims.height > self.dims.height {
            return Err(Error::invalid(format!(
                "crop {}x{} exceeds frame {}x{}",
                dims.width, dims.height, self.dims.width, self.dims.height
            )));
        }
        let grey = self
            .grey
            .chunks_exact(self.dims.width)
            .take(dims.height)
            .flat_map(|row| &row[..dims.width])
            .copied()
            .collect();
        Self::new(dims, grey)
    }

    /// Binary PGM bytes: `P5`, maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let header = format!("P5\n{} {}\n255\n", self.dims.width, self.dims.height);
        let mut out = Vec::with_capacity(header.len() + self.grey.len());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.grey);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos).ok_or_else(|| pgm_err("missing magic"))?;
        if magic != b"P5" {
            return Err(pgm_err("not a binary PGM (expected P5)"));
        }
        let mut field = |name: &str| -> Result<usize> {
            let tok = next_token(bytes, &mut pos).ok_or_else(|| pgm_err(&format!("missing {name}")))?;
            std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| pgm_err(&format!("bad {name}")))
        };
        let width = field("width")?;
        let height = field("height")?;
        let maxval = field("maxval")?;
        if maxval != 255 {
            return Err(pgm_err(&format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let dims = Dims::new(width, height);
        let raster = bytes
            .get(pos..pos + dims.area())
            .ok_or_else(|| pgm_err("truncated raster"))?;
        Self::new(dims, raster.to_vec())
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pgm(&bytes).map_err(|e| match e {
            Error::InvalidArgument(message) => Error::Format {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }
}

fn pgm_err(msg: &str) -> Error {
    Error::invalid(format!("PGM: {msg}"))
}

/// Whitespace-separated header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = SpeckleImage::new(Dims::new(3, 2), vec![0, 1, 2, 253, 254, 255]).unwrap();
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(SpeckleImage::from_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20]);
        let img = SpeckleImage::from_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[10, 20]);
    }

    #[test]
    fn pgm_rejects_truncated_and_ascii() {
        assert!(SpeckleImage::from_pgm(b"P5\n2 2\n255\n\x01").is_err());
        assert!(SpeckleImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(SpeckleImage::from_pgm(b"P5\n1 1\n65535\n\0\0").is_err());
    }

    #[test]
    fn crop_takes_top_left() {
        let img = SpeckleImage::new(Dims::new(3, 3), (0..9).collect()).unwrap();
        let c = img.crop(Dims::new(2, 2)).unwrap();
        assert_eq!(c.pixels(), &[0, 1, 3, 4]);
        assert!(img.crop(Dims::new(4, 1)).is_err());
    }

    #[test]
    fn rejects_size_mismatch() {
        assert!(SpeckleImage::new(Dims::new(2, 2), vec![0; 3]).is_err());
        assert!(SpeckleImage::new(Dims::new(0, 2), vec![]).is_err());
    }
}
