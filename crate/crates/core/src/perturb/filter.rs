//! Plane-level filters shared by the base and medical perturbations. All
//! borders use half-sample symmetric reflection (`d c b a | a b c d`).

/// Reflects an arbitrary integer index into `0..n`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Bilinear sample at continuous pixel-index coordinates with reflection.
#[inline]
pub(crate) fn bilinear(plane: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (x0 as isize, y0 as isize);
    let xa = reflect(xi, w);
    let xb = reflect(xi + 1, w);
    let ya = reflect(yi, h);
    let yb = reflect(yi + 1, h);
    let top = plane[ya * w + xa] * (1.0 - fx) + plane[ya * w + xb] * fx;
    let bottom = plane[yb * w + xa] * (1.0 - fx) + plane[yb * w + xb] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Separable correlation with a symmetric 1-D kernel, reflect borders.
pub(crate) fn separable(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * row[reflect(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * tmp[reflect(y as isize + k as isize - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Gaussian blur with radius `ceil(3σ)`. A radius exceeding the image is
/// clamped to the larger side and a warning is logged.
pub(crate) fn gaussian_blur(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let mut radius = (3.0 * sigma).ceil() as usize;
    let limit = w.max(h);
    if radius > limit {
        log::warn!("gaussian kernel radius {radius} exceeds image size {w}x{h}; clamped to {limit}");
        radius = limit;
    }
    let mut kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    separable(plane, w, h, &kernel)
}

/// Anti-aliased disk (pillbox) blur of the given radius.
pub(crate) fn disk_blur(plane: &[f64], w: usize, h: usize, radius: f64) -> Vec<f64> {
    let reach = (radius + 0.5).ceil() as isize;
    let mut taps = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            let wgt = (radius + 0.5 - d).clamp(0.0, 1.0);
            if wgt > 0.0 {
                taps.push((dx, dy, wgt));
            }
        }
    }
    let norm: f64 = taps.iter().map(|t| t.2).sum();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(dx, dy, wgt) in &taps {
                let sx = reflect(x as isize + dx, w);
                let sy = reflect(y as isize + dy, h);
                acc += wgt * plane[sy * w + sx];
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}
