//! Reconstruction quality metrics and aggregate statistics.

use dlps_core::operators::{gaussian_kernel, ImageGrid};

use crate::error::{HarnessError, Result};

/// Reported PSNR when the reconstruction is exact.
pub const PSNR_CAP: f64 = 99.0;

/// Side of the SSIM Gaussian window.
pub const SSIM_WINDOW: usize = 11;

/// Standard deviation of the SSIM Gaussian window.
pub const SSIM_SIGMA: f64 = 1.5;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(HarnessError::Length(a, b))
    }
}

/// `10·log10(max² / MSE)` in dB, capped at [`PSNR_CAP`].
pub fn psnr(x: &[f64], x_hat: &[f64], max_val: f64) -> Result<f64> {
    check_lengths(x.len(), x_hat.len())?;
    if x.is_empty() {
        return Err(HarnessError::InvalidArgument("PSNR of empty images".into()));
    }
    if !(max_val > 0.0) {
        return Err(HarnessError::InvalidArgument(format!("max value must be > 0, got {max_val}")));
    }
    let mse = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP))
}

/// Percentage of positions where the two sequences agree.
pub fn token_accuracy(z: &[usize], z_hat: &[usize]) -> Result<f64> {
    check_lengths(z.len(), z_hat.len())?;
    if z.is_empty() {
        return Err(HarnessError::InvalidArgument("accuracy of empty sequences".into()));
    }
    let hits = z.iter().zip(z_hat).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / z.len() as f64)
}

/// Mean SSIM over all valid 11×11 Gaussian windows, averaged over channels.
/// Images are channel-major on `grid`.
pub fn ssim(x: &[f64], x_hat: &[f64], grid: &ImageGrid, max_val: f64) -> Result<f64> {
    check_lengths(x.len(), x_hat.len())?;
    check_lengths(x.len(), grid.len())?;
    if grid.height < SSIM_WINDOW || grid.width < SSIM_WINDOW {
        return Err(HarnessError::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {}×{}",
            grid.height, grid.width
        )));
    }
    if !(max_val > 0.0) {
        return Err(HarnessError::InvalidArgument(format!("max value must be > 0, got {max_val}")));
    }
    let window = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)?;
    let c1 = (0.01 * max_val).powi(2);
    let c2 = (0.03 * max_val).powi(2);
    let rows = grid.height - SSIM_WINDOW + 1;
    let cols = grid.width - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for c in 0..grid.channels {
        let mut channel_sum = 0.0;
        for r0 in 0..rows {
            for c0 in 0..cols {
                let at = |img: &[f64], i: usize, j: usize| img[grid.index(c, r0 + i, c0 + j)];
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        mx += window[[i, j]] * at(x, i, j);
                        my += window[[i, j]] * at(x_hat, i, j);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let dx = at(x, i, j) - mx;
                        let dy = at(x_hat, i, j) - my;
                        vx += window[[i, j]] * dx * dx;
                        vy += window[[i, j]] * dy * dy;
                        cov += window[[i, j]] * dx * dy;
                    }
                }
                channel_sum += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total += channel_sum / (rows * cols) as f64;
    }
    Ok(total / grid.channels as f64)
}

/// Intersection over union and F1 of the positive class. An empty union
/// gives IoU 1; zero precision plus recall gives F1 0.
pub fn iou_f1(b: &[bool], b_hat: &[bool]) -> Result<(f64, f64)> {
    check_lengths(b.len(), b_hat.len())?;
    let (mut inter, mut union, mut truth, mut pred) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &q) in b.iter().zip(b_hat) {
        inter += usize::from(p && q);
        union += usize::from(p || q);
        truth += usize::from(p);
        pred += usize::from(q);
    }
    let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    let precision = if pred == 0 { 0.0 } else { inter as f64 / pred as f64 };
    let recall = if truth == 0 { 0.0 } else { inter as f64 / truth as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((iou, f1))
}

/// Mean and sample standard deviation (`n − 1` denominator, zero for a
/// single value). Empty input gives `(NaN, NaN)`.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
