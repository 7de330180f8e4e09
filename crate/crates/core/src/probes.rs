//! Deterministic synthetic test images: textures, gradients and blobs.

use crate::image::ImageBuffer;
use crate::perturb::filter::gaussian_blur;
use crate::rng::{SeededStream, FIELD, PARAMS};

#[derive(Debug, Clone)]
pub struct Probe {
    pub name: String,
    pub image: ImageBuffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Style {
    Texture,
    Gradient,
    Blobs,
}

/// Octave sets as (width / size, amplitude). `Smooth` has no structure
/// finer than a few pixels, so misalignment lowers SSIM steadily over the
/// whole geometric range; `Fine` adds detail that blur and compression
/// can remove.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Detail {
    Smooth,
    Fine,
}

impl Detail {
    fn octaves(self) -> &'static [(f64, f64)] {
        match self {
            Detail::Smooth => &[(0.19, 0.2), (0.094, 0.08), (0.047, 0.03)],
            Detail::Fine => &[(0.19, 0.2), (0.094, 0.08), (0.047, 0.04), (0.023, 0.04)],
        }
    }
}

/// Zero-mean, unit-variance band-limited noise.
fn smooth_noise(size: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = SeededStream::new(seed, FIELD);
    let white: Vec<f64> = (0..size * size).map(|_| rng.normal()).collect();
    let mut field = gaussian_blur(&white, size, size, sigma);
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let var = field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / field.len() as f64;
    let sd = var.sqrt().max(1e-12);
    field.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    field
}

/// Multi-scale smooth noise plus a gradient and blobs. Octave widths scale
/// with `size` so probes of any size have the same relative structure.
fn compose(size: usize, style: Style, detail: Detail, seed: u64) -> Vec<f64> {
    let mut rng = SeededStream::new(seed, PARAMS);
    let s = size as f64;
    let angle = rng.range(0.0, std::f64::consts::TAU);
    let (gs, gc) = angle.sin_cos();
    let blobs: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| (rng.range(0.1, 0.9) * s, rng.range(0.1, 0.9) * s, rng.range(0.08, 0.2) * s, rng.range(-1.0, 1.0)))
        .collect();
    let (grad_amp, blob_amp, noise_gain) = match style {
        Style::Texture => (0.1, 0.05, 1.0),
        Style::Gradient => (0.45, 0.05, 0.6),
        Style::Blobs => (0.1, 0.25, 0.6),
    };
    let octaves: Vec<(Vec<f64>, f64)> = detail
        .octaves()
        .iter()
        .enumerate()
        .map(|(i, &(frac, amp))| {
            let field_seed = seed.wrapping_mul(31).wrapping_add(i as u64 + 1);
            (smooth_noise(size, (frac * s).max(0.5), field_seed), amp * noise_gain)
        })
        .collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / s - 0.5, y as f64 / s - 0.5);
            let mut val = 0.5 + grad_amp * (u * gc + v * gs);
            for &(bx, by, r, a) in &blobs {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                val += blob_amp * a * (-d2 / (2.0 * r * r)).exp();
            }
            let i = y * size + x;
            val += octaves.iter().map(|(f, a)| a * f[i]).sum::<f64>();
            out.push(val.clamp(0.02, 0.98));
        }
    }
    out
}

/// Standard grayscale textured probe.
pub fn textured_probe(size: usize) -> ImageBuffer {
    ImageBuffer::new(size, size, 1, compose(size, Style::Texture, Detail::Smooth, 1)).expect("valid probe")
}

/// Statistically homogeneous fine texture (no gradient or blobs), so any
/// strip of the image has nearly the same mean as any other.
pub fn stationary_probe(size: usize, seed: u64) -> ImageBuffer {
    let field = smooth_noise(size, 1.5, seed);
    ImageBuffer::new(size, size, 1, field.iter().map(|v| (0.5 + 0.12 * v).clamp(0.02, 0.98)).collect())
        .expect("valid probe")
}

/// Stain-like RGB probe (pink/purple hues with texture).
pub fn color_probe(size: usize) -> ImageBuffer {
    let a = compose(size, Style::Texture, Detail::Fine, 101);
    let b = compose(size, Style::Blobs, Detail::Fine, 102);
    ImageBuffer::from_fn_rgb(size, size, |x, y| {
        let i = y * size + x;
        [0.35 + 0.6 * a[i], 0.15 + 0.55 * b[i], 0.3 + 0.5 * (a[i] + b[i]) / 2.0]
    })
}

/// The 10-image grayscale probe set: four textures, three gradients, three
/// blob fields.
pub fn probe_set(size: usize) -> Vec<Probe> {
    let styles = [
        (Style::Texture, "texture"),
        (Style::Texture, "texture"),
        (Style::Texture, "texture"),
        (Style::Texture, "texture"),
        (Style::Gradient, "gradient"),
        (Style::Gradient, "gradient"),
        (Style::Gradient, "gradient"),
        (Style::Blobs, "blobs"),
        (Style::Blobs, "blobs"),
        (Style::Blobs, "blobs"),
    ];
    styles
        .iter()
        .enumerate()
        .map(|(i, (style, name))| Probe {
            name: format!("{name}_{i}"),
            image: ImageBuffer::new(size, size, 1, compose(size, *style, Detail::Fine, 1000 + i as u64)).expect("valid probe"),
        })
        .collect()
}

/// Binary disk mask centred at `(cx, cy)` with radius `r` (pixel units).
pub fn disk_mask(width: usize, height: usize, cx: f64, cy: f64, r: f64) -> crate::metrics::SegmentationMask {
    let bits = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r))
        .collect();
    crate::metrics::SegmentationMask::new(width, height, bits).expect("dimensions match")
}
