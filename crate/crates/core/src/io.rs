//! Image I/O: a raw float container for lossless buffers and 8-bit sRGB PNG
//! for previews, frames, and masks.
//!
//! Raw float format: ASCII header `NFIMG1\n` then `W H C\n`, followed by
//! `W*H*C` little-endian f32 values in row-major order (channels innermost).

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8] = b"NFIMG1\n";

/// A float image, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        FloatImage {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(MAGIC)?;
        f.write_all(format!("{} {} {}\n", self.width, self.height, self.channels).as_bytes())?;
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Dataset(format!("{}: bad float image magic", path.display())));
        }
        let rest = &bytes[MAGIC.len()..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Dataset(format!("{}: missing size line", path.display())))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Dataset(format!("{}: size line not UTF-8", path.display())))?;
        let mut it = line.split_whitespace();
        let mut next = || -> Result<usize> {
            it.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Dataset(format!("{}: malformed size line", path.display())))
        };
        let (width, height, channels) = (next()?, next()?, next()?);
        let payload = &rest[nl + 1..];
        let n = width * height * channels;
        if payload.len() != n * 4 {
            return Err(Error::Dataset(format!(
                "{}: expected {} payload bytes, found {}",
                path.display(),
                n * 4,
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(FloatImage {
            width,
            height,
            channels,
            data,
        })
    }
}

/// sRGB transfer function on a linear value in [0, 1].
pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Save a linear RGB float image as an 8-bit sRGB PNG.
pub fn save_png_srgb(img: &FloatImage, path: &Path) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::Dataset("PNG color export expects 3 channels".into()));
    }
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.pixel(x, y);
            let px = buf.get_pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                px[c] = (linear_to_srgb(p[c]) * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    buf.save(path)?;
    Ok(())
}

/// Load an 8-bit sRGB PNG into linear RGB floats.
pub fn load_png_srgb(path: &Path) -> Result<FloatImage> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let mut out = FloatImage::new(w as usize, h as usize, 3);
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x, y);
            let o = out.pixel_mut(x as usize, y as usize);
            for c in 0..3 {
                o[c] = srgb_to_linear(px[c] as f64 / 255.0);
            }
        }
    }
    Ok(out)
}

/// Save a [0,1] scalar image as an 8-bit grayscale PNG (no transfer function).
pub fn save_png_gray(img: &FloatImage, path: &Path) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::Dataset("grayscale PNG export expects 1 channel".into()));
    }
    let mut buf = image::GrayImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let v = img.pixel(x, y)[0];
            buf.get_pixel_mut(x as u32, y as u32)[0] =
                (v * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    buf.save(path)?;
    Ok(())
}

/// Load an 8-bit grayscale PNG as a boolean mask: a pixel is inside when its
/// value is at least 128.
pub fn load_mask_png(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let mask = img.pixels().map(|p| p[0] >= 128).collect();
    Ok((w as usize, h as usize, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_image_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = FloatImage::new(5, 3, 2);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37 - 2.0) as f32 as f64;
        }
        let path = dir.path().join("t.nfimg");
        img.save(&path).unwrap();
        let back = FloatImage::load(&path).unwrap();
        assert_eq!(img, back);
        // Header is exactly as documented.
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"NFIMG1\n5 3 2\n"));
        assert_eq!(bytes.len(), "NFIMG1\n5 3 2\n".len() + 5 * 3 * 2 * 4);
    }

    #[test]
    fn srgb_round_trip() {
        for v in [0.0, 0.001, 0.01, 0.2, 0.5, 0.9, 1.0] {
            let back = srgb_to_linear(linear_to_srgb(v));
            assert!((back - v).abs() < 1e-9, "{} -> {}", v, back);
        }
    }

    #[test]
    fn mask_threshold_at_128() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mut img = image::GrayImage::new(3, 1);
        img.get_pixel_mut(0, 0)[0] = 127;
        img.get_pixel_mut(1, 0)[0] = 128;
        img.get_pixel_mut(2, 0)[0] = 255;
        img.save(&path).unwrap();
        let (_, _, mask) = load_mask_png(&path).unwrap();
        assert_eq!(mask, vec![false, true, true]);
    }
}
