//! 8-bit raster images with binary PPM (P6) and PGM (P5) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major.
    pub pixels: Vec<Rgb>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.pixels[y * self.width + x] = c;
    }

    /// Planar 3×H×W tensor with values in [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        let n = self.width * self.height;
        let mut data = vec![0.0; 3 * n];
        for (i, p) in self.pixels.iter().enumerate() {
            for c in 0..3 {
                data[c * n + i] = f64::from(p[c]) / 255.0;
            }
        }
        Tensor::new(&[3, self.height, self.width], data).expect("image shape")
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (w, h, body) = parse_netpbm(&bytes, b"P6", path)?;
        if body.len() != w * h * 3 {
            return Err(Error::Data(format!("{}: truncated pixel data", path.display())));
        }
        Ok(RgbImage {
            width: w,
            height: h,
            pixels: body.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }

    /// Outline of a box, clipped to the image.
    pub fn draw_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, c: Rgb) {
        if self.width == 0 || self.height == 0 || x0 >= x1 || y0 >= y1 {
            return;
        }
        let (x1, y1) = (x1.min(self.width) - 1, y1.min(self.height) - 1);
        if x0 > x1 || y0 > y1 {
            return;
        }
        for x in x0..=x1 {
            self.set(x, y0, c);
            self.set(x, y1, c);
        }
        for y in y0..=y1 {
            self.set(x0, y, c);
            self.set(x1, y, c);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (w, h, body) = parse_netpbm(&bytes, b"P5", path)?;
        if body.len() != w * h {
            return Err(Error::Data(format!("{}: truncated pixel data", path.display())));
        }
        Ok(GrayImage {
            width: w,
            height: h,
            pixels: body.to_vec(),
        })
    }

    /// Row-major heatmap of a matrix, min-max normalised to 0..=255. A
    /// constant matrix maps to all zeros.
    pub fn heatmap(rows: usize, cols: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), rows * cols);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pixels = values
            .iter()
            .map(|&v| {
                if hi > lo {
                    ((v - lo) / (hi - lo) * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect();
        GrayImage {
            width: cols,
            height: rows,
            pixels,
        }
    }
}

fn parse_netpbm<'a>(bytes: &'a [u8], magic: &[u8], path: &Path) -> Result<(usize, usize, &'a [u8])> {
    let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
    if !bytes.starts_with(magic) {
        return Err(bad("wrong image magic"));
    }
    let mut pos = magic.len();
    let mut fields = [0usize; 3];
    for f in &mut fields {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header"))?;
    }
    if fields[2] != 255 || pos >= bytes.len() {
        return Err(bad("only maxval 255 is supported"));
    }
    Ok((fields[0], fields[1], &bytes[pos + 1..]))
}
