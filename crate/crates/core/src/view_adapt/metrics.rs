//! L1 / SSIM / PSNR on 8-bit-range renderings of signature patches.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
const PEAK: f64 = 255.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
/// Dynamic range kept by the log rendering.
const LOG_RANGE_DB: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub l1_mean: f64,
    pub ssim: f64,
    pub psnr_db: f64,
}

fn check_shapes(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

/// Min-max scales `a` to `[0, 255]`, optionally after converting to dB with
/// a 60 dB floor below the peak. A constant image renders as zeros.
pub fn render(a: &Array2<f64>, log_scale: bool) -> Array2<f64> {
    let src = if log_scale {
        let peak = a.iter().cloned().fold(0.0, f64::max);
        let floor = peak * 10f64.powf(-LOG_RANGE_DB / 10.0);
        if peak > 0.0 {
            a.mapv(|v| 10.0 * v.max(floor).log10())
        } else {
            a.clone()
        }
    } else {
        a.clone()
    };
    let lo = src.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Array2::zeros(a.dim());
    }
    src.mapv(|v| (v - lo) / (hi - lo) * PEAK)
}

/// Mean absolute difference.
pub fn l1_mean(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_shapes(a, b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// `10·log10(255² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_shapes(a, b)?;
    if a.is_empty() {
        return Ok(PSNR_CAP_DB);
    }
    let mse = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| (-0.5 * ((i as f64 - c) / sigma).powi(2)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-region filtering of `a` with `k` along both axes.
fn filter_valid(a: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = a.dim();
    let n = k.len();
    let rows = Array2::from_shape_fn((h, w + 1 - n), |(i, j)| (0..n).map(|t| k[t] * a[[i, j + t]]).sum::<f64>());
    Array2::from_shape_fn((h + 1 - n, w + 1 - n), |(i, j)| (0..n).map(|t| k[t] * rows[[i + t, j]]).sum::<f64>())
}

/// Mean single-scale SSIM with an 11×11 Gaussian window (σ = 1.5) over the
/// valid region. Images narrower than 11 in a dimension use the largest odd
/// window that fits.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = a.dim();
    if h == 0 || w == 0 {
        return Err(Error::Domain("ssim of an empty image".into()));
    }
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_kernel(size, SSIM_SIGMA);
    let c1 = (0.01 * PEAK).powi(2);
    let c2 = (0.03 * PEAK).powi(2);
    let mu_a = filter_valid(a, &k);
    let mu_b = filter_valid(b, &k);
    let aa = filter_valid(&(a * a), &k);
    let bb = filter_valid(&(b * b), &k);
    let ab = filter_valid(&(a * b), &k);
    let total = Zip::from(&mu_a)
        .and(&mu_b)
        .and(&aa)
        .and(&bb)
        .and(&ab)
        .fold(0.0, |acc, &ma, &mb, &xx, &yy, &xy| {
            let va = xx - ma * ma;
            let vb = yy - mb * mb;
            let cov = xy - ma * mb;
            acc + ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        });
    Ok((total / mu_a.len() as f64).clamp(-1.0, 1.0))
}

/// All three metrics on renderings of two raw patches.
pub fn fidelity(predicted: &Array2<f64>, target: &Array2<f64>, log_scale: bool) -> Result<FidelityReport> {
    check_shapes(predicted, target)?;
    let a = render(predicted, log_scale);
    let b = render(target, log_scale);
    Ok(FidelityReport {
        l1_mean: l1_mean(&a, &b)?,
        ssim: ssim(&a, &b)?,
        psnr_db: psnr(&a, &b)?,
    })
}
