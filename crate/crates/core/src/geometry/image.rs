use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector2;
use thiserror::Error;

use super::{GeometryError, Pixel};

/// Grayscale image with real-valued intensities (0-255 scale), row-major.
///
/// Intensities stay real-valued even when loaded from 8-bit files so that
/// residuals are free of quantization artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported magic {0:?}, only binary PGM (\"P5\") is accepted")]
    BadMagic(String),
    #[error("malformed PGM header: {0}")]
    Malformed(String),
    #[error("unsupported maxval {0}, only 8-bit images are accepted")]
    UnsupportedMaxval(u32),
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), (width as usize) * (height as usize), "buffer length must be width * height");
        Self { width, height, data }
    }

    pub fn constant(width: u32, height: u32, value: f64) -> Self {
        Self::new(width, height, vec![value; (width as usize) * (height as usize)])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Self {
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[(y as usize) * (self.width as usize) + (x as usize)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: f64) {
        self.data[(y as usize) * (self.width as usize) + (x as usize)] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Bilinear intensity and its gradient at a sub-pixel position.
    ///
    /// The gradient is the exact derivative of the bilinear surface inside
    /// the sample's cell, which equals central differences of interpolated
    /// values in the limit of a vanishing step. Valid positions keep a
    /// 1-pixel interior margin: `[1, width-2] x [1, height-2]`.
    pub fn sample_bilinear(&self, u: &Pixel) -> Result<(f64, Vector2<f64>), GeometryError> {
        let w = self.width as f64;
        let h = self.height as f64;
        if !(u.u >= 1.0 && u.v >= 1.0 && u.u <= w - 2.0 && u.v <= h - 2.0) {
            return Err(GeometryError::OutOfBounds { u: u.u, v: u.v });
        }
        let x0 = u.u.floor();
        let y0 = u.v.floor();
        let a = u.u - x0;
        let b = u.v - y0;
        let (x0, y0) = (x0 as u32, y0 as u32);
        let i00 = self.get(x0, y0);
        let i10 = self.get(x0 + 1, y0);
        let i01 = self.get(x0, y0 + 1);
        let i11 = self.get(x0 + 1, y0 + 1);
        let value = (1.0 - a) * (1.0 - b) * i00 + a * (1.0 - b) * i10 + (1.0 - a) * b * i01 + a * b * i11;
        let gx = (1.0 - b) * (i10 - i00) + b * (i11 - i01);
        let gy = (1.0 - a) * (i01 - i00) + a * (i11 - i10);
        Ok((value, Vector2::new(gx, gy)))
    }

    /// Factor-2 downsampling by 2x2 box averaging; odd trailing rows/columns
    /// are dropped.
    pub fn downsample(&self) -> Image {
        let w = self.width / 2;
        let h = self.height / 2;
        Image::from_fn(w, h, |x, y| {
            let (x2, y2) = (x * 2, y * 2);
            0.25 * (self.get(x2, y2) + self.get(x2 + 1, y2) + self.get(x2, y2 + 1) + self.get(x2 + 1, y2 + 1))
        })
    }

    /// Loads a binary 8-bit grayscale PGM ("P5"); any other magic is rejected.
    pub fn load_pgm(path: &Path) -> Result<Image, PgmError> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        let mut cursor = 0usize;

        let magic = next_token(&bytes, &mut cursor)
            .ok_or_else(|| PgmError::Malformed("missing magic".into()))?;
        if magic != "P5" {
            return Err(PgmError::BadMagic(magic));
        }
        let mut header = [0u32; 3];
        for slot in header.iter_mut() {
            let tok = next_token(&bytes, &mut cursor)
                .ok_or_else(|| PgmError::Malformed("truncated header".into()))?;
            *slot = tok
                .parse::<u32>()
                .map_err(|_| PgmError::Malformed(format!("bad header token {tok:?}")))?;
        }
        let [width, height, maxval] = header;
        if maxval == 0 || maxval > 255 {
            return Err(PgmError::UnsupportedMaxval(maxval));
        }
        // Exactly one whitespace byte separates the header from the raster;
        // next_token already consumed it.
        let expected = (width as usize) * (height as usize);
        let raster = bytes
            .get(cursor..cursor + expected)
            .ok_or_else(|| PgmError::Malformed("truncated raster".into()))?;
        Ok(Image::new(width, height, raster.iter().map(|&b| b as f64).collect()))
    }

    /// Writes a binary 8-bit PGM, rounding and clamping intensities to 0-255.
    pub fn save_pgm(&self, path: &Path) -> Result<(), PgmError> {
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
        out.write_all(&bytes)?;
        Ok(())
    }
}

/// Next whitespace-delimited header token, skipping '#' comments, leaving the
/// cursor one byte past the token's terminating whitespace.
fn next_token(bytes: &[u8], cursor: &mut usize) -> Option<String> {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    if *cursor >= bytes.len() {
        return None;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    let tok = String::from_utf8_lossy(&bytes[start..*cursor]).into_owned();
    if *cursor < bytes.len() {
        *cursor += 1;
    }
    Some(tok)
}

/// Averaged factor-2 image pyramid; level 0 is the full-resolution image.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<Image>,
}

impl ImagePyramid {
    pub fn build(base: Image, levels: usize) -> Self {
        assert!(levels >= 1, "a pyramid needs at least one level");
        let mut all = Vec::with_capacity(levels);
        all.push(base);
        for _ in 1..levels {
            let next = all.last().unwrap().downsample();
            all.push(next);
        }
        Self { levels: all }
    }

    pub fn level(&self, level: usize) -> &Image {
        &self.levels[level]
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}
