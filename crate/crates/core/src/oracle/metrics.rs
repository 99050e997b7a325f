//! Image quality metrics on linear-valued images in [0, 1].

use crate::io::FloatImage;
use crate::{Error, Result};

pub const PSNR_CAP: f64 = 99.0;

/// Peak signal-to-noise ratio in dB for unit-range data, capped at 99.
/// An optional pixel mask restricts the comparison region.
pub fn psnr(a: &FloatImage, b: &FloatImage, mask: Option<&[bool]>) -> Result<f64> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return Err(Error::ShapeMismatch("psnr image sizes differ".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..a.height {
        for x in 0..a.width {
            if let Some(m) = mask {
                if !m[y * a.width + x] {
                    continue;
                }
            }
            let pa = a.pixel(x, y);
            let pb = b.pixel(x, y);
            for c in 0..a.channels {
                sum += (pa[c] - pb[c]).powi(2);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::ShapeMismatch("psnr mask selects no pixels".into()));
    }
    let mse = sum / n as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Structural similarity: 11x11 Gaussian window (sigma 1.5), K1=0.01,
/// K2=0.03, dynamic range 1. Computed per channel over windows fully inside
/// the image, then averaged.
pub fn ssim(a: &FloatImage, b: &FloatImage) -> Result<f64> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return Err(Error::ShapeMismatch("ssim image sizes differ".into()));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::ShapeMismatch("ssim needs at least an 11x11 image".into()));
    }
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let half = SSIM_WINDOW / 2;
    let mut total = 0.0;
    for ch in 0..a.channels {
        let mut sum = 0.0;
        let mut n = 0usize;
        for cy in half..a.height - half {
            for cx in half..a.width - half {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let w = k[dy] * k[dx];
                        let va = a.pixel(cx + dx - half, cy + dy - half)[ch];
                        let vb = b.pixel(cx + dx - half, cy + dy - half)[ch];
                        mu_a += w * va;
                        mu_b += w * vb;
                        aa += w * va * va;
                        bb += w * vb * vb;
                        ab += w * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                sum += s;
                n += 1;
            }
        }
        total += sum / n as f64;
    }
    Ok(total / a.channels as f64)
}

/// Pearson correlation between two equal-length samples.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma).powi(2);
        db += (y - mb).powi(2);
    }
    if da <= 0.0 || db <= 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}
