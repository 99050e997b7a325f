use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::io::FloatImage;
use crate::{Error, Result};

/// Lat-long environment map. Row 0 is the north pole (+z); texel (i, j) has
/// polar angle theta = (i+0.5)*pi/H and azimuth phi = (j+0.5)*2*pi/W.
/// Channels: 1 (gray, broadcast to RGB) or 3.
#[derive(Debug, Clone, PartialEq)]
pub struct LightProbe {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major texels, channels innermost.
    pub data: Vec<f64>,
    dirs: Vec<Vector3<f64>>,
    solid_angles: Vec<f64>,
}

/// Direction and solid angle of every texel of an H x W lat-long grid.
/// The solid angle is the exact texel-band integral
/// (2pi/W)(cos theta_lo - cos theta_hi) = (2pi/W) * 2 sin(theta) sin(pi/2H),
/// which equals (2pi/W)(pi/H) sin(theta) up to O(1/H^2) and makes the sum
/// over all texels exactly 4pi.
pub fn probe_geometry(height: usize, width: usize) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let mut dirs = Vec::with_capacity(height * width);
    let mut omega = Vec::with_capacity(height * width);
    let band = 2.0 * (0.5 * PI / height as f64).sin() * (2.0 * PI / width as f64);
    for i in 0..height {
        let theta = (i as f64 + 0.5) * PI / height as f64;
        let (st, ct) = theta.sin_cos();
        for j in 0..width {
            let phi = (j as f64 + 0.5) * 2.0 * PI / width as f64;
            dirs.push(Vector3::new(st * phi.cos(), st * phi.sin(), ct));
            omega.push(band * st);
        }
    }
    (dirs, omega)
}

impl LightProbe {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidConfig("probe must have 1 or 3 channels".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "probe data has {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        if data.iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(Error::InvalidConfig("probe texels must be non-negative".into()));
        }
        let (dirs, solid_angles) = probe_geometry(height, width);
        Ok(LightProbe {
            height,
            width,
            channels,
            data,
            dirs,
            solid_angles,
        })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("constant probe is valid")
    }

    pub fn n_texels(&self) -> usize {
        self.height * self.width
    }

    pub fn dir(&self, t: usize) -> Vector3<f64> {
        self.dirs[t]
    }

    pub fn solid_angle(&self, t: usize) -> f64 {
        self.solid_angles[t]
    }

    /// Radiance of texel `t` in channel `c` (gray probes broadcast).
    pub fn radiance(&self, t: usize, c: usize) -> f64 {
        if self.channels == 1 {
            self.data[t]
        } else {
            self.data[t * 3 + c]
        }
    }

    pub fn total_solid_angle(&self) -> f64 {
        self.solid_angles.iter().sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let data = self.data.iter().map(|v| v * s).collect();
        LightProbe::new(self.height, self.width, self.channels, data).expect("scaled probe valid")
    }

    pub fn to_image(&self) -> FloatImage {
        FloatImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.clone(),
        }
    }

    pub fn from_image(img: &FloatImage) -> Result<Self> {
        LightProbe::new(img.height, img.width, img.channels, img.data.clone())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_image().save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_image(&FloatImage::load(path)?)
    }
}
