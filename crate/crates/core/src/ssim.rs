//! Structural similarity on luminance.
//!
//! Mean of the local SSIM map computed with an 11×11 Gaussian window
//! (σ = 1.5), K1 = 0.01, K2 = 0.03 and a dynamic range of 1. Windows are
//! evaluated only where they fit entirely inside the image. Images with a side
//! between 8 and 10 pixels use the largest odd window that fits.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub const WINDOW_SIZE: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 1.0;
pub const MIN_SIDE: usize = 8;

/// Normalized 1-D Gaussian taps. The 2-D window is the outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let mut taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Window size used for an image of the given dimensions.
pub fn window_size_for(width: usize, height: usize) -> usize {
    let side = width.min(height).min(WINDOW_SIZE);
    if side % 2 == 0 {
        side - 1
    } else {
        side
    }
}

pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    let (w, h) = a.dims();
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::InvalidImage(format!(
            "SSIM needs at least {MIN_SIDE}x{MIN_SIDE} pixels, got {w}x{h}"
        )));
    }
    let la = a.to_luminance();
    let lb = b.to_luminance();
    Ok(ssim_planes(la.data(), lb.data(), w, h))
}

/// SSIM of two single-channel planes of identical size (both sides ≥ 8).
pub(crate) fn ssim_planes(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    let win = window_size_for(w, h);
    let taps = gaussian_taps(win, WINDOW_SIGMA);
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);

    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(x, w, h, &taps);
    let mu_y = filter_valid(y, w, h, &taps);
    let e_xx = filter_valid(&xx, w, h, &taps);
    let e_yy = filter_valid(&yy, w, h, &taps);
    let e_xy = filter_valid(&xy, w, h, &taps);

    let n = mu_x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = e_xx[i] - mx * mx;
        let var_y = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
        total += num / den;
    }
    total / n as f64
}

/// Separable "valid" correlation: output is (w-k+1) × (h-k+1).
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, t) in taps.iter().enumerate() {
                acc += t * horiz[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Straight-from-the-formula windowed SSIM: for every window position the
    //! weighted means, variances and covariance are accumulated with direct
    //! double loops over the 2-D Gaussian weights.

    use super::*;

    pub fn ssim_bruteforce(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
        let la = a.to_luminance();
        let lb = b.to_luminance();
        let (w, h) = a.dims();
        let win = window_size_for(w, h);
        let center = (win as f64 - 1.0) / 2.0;
        let mut weights = vec![0.0; win * win];
        for j in 0..win {
            for i in 0..win {
                let (dx, dy) = (i as f64 - center, j as f64 - center);
                weights[j * win + i] =
                    (-(dx * dx + dy * dy) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
            }
        }
        let norm: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|v| *v /= norm);

        let c1 = (K1 * DYNAMIC_RANGE).powi(2);
        let c2 = (K2 * DYNAMIC_RANGE).powi(2);
        let mut total = 0.0;
        let mut count = 0usize;
        for y0 in 0..=(h - win) {
            for x0 in 0..=(w - win) {
                let (mut mx, mut my) = (0.0, 0.0);
                for j in 0..win {
                    for i in 0..win {
                        let wt = weights[j * win + i];
                        mx += wt * la.get(x0 + i, y0 + j, 0);
                        my += wt * lb.get(x0 + i, y0 + j, 0);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for j in 0..win {
                    for i in 0..win {
                        let wt = weights[j * win + i];
                        let dx = la.get(x0 + i, y0 + j, 0) - mx;
                        let dy = lb.get(x0 + i, y0 + j, 0) - my;
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        cxy += wt * dx * dy;
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total / count as f64
    }
}
