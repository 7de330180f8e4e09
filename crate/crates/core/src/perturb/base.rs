//! The twelve cross-modality corruptions.
//!
//! | kind | schedule of `t` |
//! |---|---|
//! | `gaussian_noise` | additive N(0, σ²), σ = 0.5t |
//! | `salt_pepper` | fraction 0.3t of pixels set to 0 or 1 |
//! | `speckle` | x·(1 + n), n ~ N(0, (0.7t)²) |
//! | `gaussian_blur` | σ = 8t px (identity below 0.05) |
//! | `motion_blur` | line kernel, length 1 + ⌊30t⌋, seeded angle |
//! | `brightness` | ±0.6t, seeded sign |
//! | `contrast` | scale about 0.5 by 1 − 0.9t |
//! | `jpeg_compression` | quality round(95 − 90t) |
//! | `pixelate` | block size 1 + ⌊24t⌋ |
//! | `rotation` | ±30t degrees about the centre |
//! | `scaling` | zoom 1 ± 0.4t about the centre |
//! | `translation` | shift (±0.25t·W, ±0.25t·H) |
//!
//! Stochastic fields are drawn in full regardless of `t`, so the realization
//! at a fixed seed is shared across intensities.

use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::rng::{SeededStream, FIELD, PARAMS};

use super::filter::{bilinear, gaussian_blur};
use super::geometry::GeometricTransform;
use super::Intensity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    GaussianNoise,
    SaltPepper,
    Speckle,
    GaussianBlur,
    MotionBlur,
    Brightness,
    Contrast,
    JpegCompression,
    Pixelate,
    Rotation,
    Scaling,
    Translation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseGroup {
    Noise,
    Degradation,
    Geometric,
}

impl BaseKind {
    pub const ALL: [BaseKind; 12] = [
        BaseKind::GaussianNoise,
        BaseKind::SaltPepper,
        BaseKind::Speckle,
        BaseKind::GaussianBlur,
        BaseKind::MotionBlur,
        BaseKind::Brightness,
        BaseKind::Contrast,
        BaseKind::JpegCompression,
        BaseKind::Pixelate,
        BaseKind::Rotation,
        BaseKind::Scaling,
        BaseKind::Translation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaseKind::GaussianNoise => "gaussian_noise",
            BaseKind::SaltPepper => "salt_pepper",
            BaseKind::Speckle => "speckle",
            BaseKind::GaussianBlur => "gaussian_blur",
            BaseKind::MotionBlur => "motion_blur",
            BaseKind::Brightness => "brightness",
            BaseKind::Contrast => "contrast",
            BaseKind::JpegCompression => "jpeg_compression",
            BaseKind::Pixelate => "pixelate",
            BaseKind::Rotation => "rotation",
            BaseKind::Scaling => "scaling",
            BaseKind::Translation => "translation",
        }
    }

    pub fn group(self) -> BaseGroup {
        match self {
            BaseKind::GaussianNoise | BaseKind::SaltPepper | BaseKind::Speckle => BaseGroup::Noise,
            BaseKind::Rotation | BaseKind::Scaling | BaseKind::Translation => BaseGroup::Geometric,
            _ => BaseGroup::Degradation,
        }
    }

    pub fn is_geometric(self) -> bool {
        self.group() == BaseGroup::Geometric
    }
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BaseKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownPerturbation(s.to_string()))
    }
}

pub fn apply_base(kind: BaseKind, img: &ImageBuffer, t: Intensity, seed: u64) -> Result<ImageBuffer> {
    if t.is_zero() {
        return Ok(img.clone());
    }
    let t = t.value();
    let out = match kind {
        BaseKind::GaussianNoise => {
            let sigma = 0.5 * t;
            let noise = normal_field(seed, img.data().len());
            with_field(img, &noise, |v, n| v + sigma * n)
        }
        BaseKind::SaltPepper => salt_pepper(img, 0.3 * t, seed),
        BaseKind::Speckle => {
            let sigma = 0.7 * t;
            let noise = normal_field(seed, img.data().len());
            with_field(img, &noise, |v, n| v * (1.0 + sigma * n))
        }
        BaseKind::GaussianBlur => {
            let sigma = 8.0 * t;
            if sigma < 0.05 {
                img.clone()
            } else {
                per_plane(img, |p, w, h| gaussian_blur(p, w, h, sigma))
            }
        }
        BaseKind::MotionBlur => motion_blur(img, 1 + (30.0 * t).floor() as usize, seed),
        BaseKind::Brightness => {
            let shift = SeededStream::new(seed, PARAMS).sign() * 0.6 * t;
            img.map_samples(|_, _, _, v| v + shift)
        }
        BaseKind::Contrast => {
            let factor = 1.0 - 0.9 * t;
            img.map_samples(|_, _, _, v| 0.5 + (v - 0.5) * factor)
        }
        BaseKind::JpegCompression => {
            let quality = (95.0 - 90.0 * t).round().clamp(1.0, 100.0) as u8;
            jpeg_roundtrip(img, quality)?
        }
        BaseKind::Pixelate => pixelate(img, 1 + (24.0 * t).floor() as usize),
        BaseKind::Rotation | BaseKind::Scaling | BaseKind::Translation => {
            let (w, h) = img.dims();
            let tf = geometric_transform(kind, w, h, Intensity(t), seed)
                .expect("geometric kind always yields a transform");
            tf.warp_image(img)
        }
    };
    Ok(out)
}

/// The spatial transform used by a geometric kind at `(t, seed)`; `None`
/// for the photometric kinds. Annotations are warped with the same value.
pub fn geometric_transform(
    kind: BaseKind,
    width: usize,
    height: usize,
    t: Intensity,
    seed: u64,
) -> Option<GeometricTransform> {
    let t = t.value();
    let mut rng = SeededStream::new(seed, PARAMS);
    match kind {
        BaseKind::Rotation => Some(GeometricTransform::rotation(width, height, rng.sign() * 30.0 * t)),
        BaseKind::Scaling => Some(GeometricTransform::scaling(width, height, 1.0 + rng.sign() * 0.4 * t)),
        BaseKind::Translation => {
            let sx = rng.sign();
            let sy = rng.sign();
            Some(GeometricTransform::translation(
                width,
                height,
                sx * 0.25 * t * width as f64,
                sy * 0.25 * t * height as f64,
            ))
        }
        _ => None,
    }
}

fn normal_field(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = SeededStream::new(seed, FIELD);
    (0..n).map(|_| rng.normal()).collect()
}

fn with_field(img: &ImageBuffer, field: &[f64], f: impl Fn(f64, f64) -> f64) -> ImageBuffer {
    let data = img.data().iter().zip(field).map(|(v, n)| f(*v, *n)).collect();
    ImageBuffer::from_unclamped(img.width(), img.height(), img.channels(), data)
}

fn per_plane(img: &ImageBuffer, f: impl Fn(&[f64], usize, usize) -> Vec<f64>) -> ImageBuffer {
    let (w, h) = img.dims();
    let planes: Vec<Vec<f64>> = (0..img.channels()).map(|c| f(&img.plane(c), w, h)).collect();
    ImageBuffer::from_planes(w, h, &planes)
}

fn salt_pepper(img: &ImageBuffer, fraction: f64, seed: u64) -> ImageBuffer {
    let mut rng = SeededStream::new(seed, FIELD);
    let ch = img.channels();
    let mut data = img.data().to_vec();
    for px in data.chunks_exact_mut(ch) {
        let hit = rng.uniform();
        let salt = rng.coin();
        if hit < fraction {
            px.fill(if salt { 1.0 } else { 0.0 });
        }
    }
    ImageBuffer::from_unclamped(img.width(), img.height(), ch, data)
}

fn motion_blur(img: &ImageBuffer, length: usize, seed: u64) -> ImageBuffer {
    let angle = SeededStream::new(seed, PARAMS).uniform() * std::f64::consts::PI;
    if length <= 1 {
        return img.clone();
    }
    let (w, h) = img.dims();
    let limit = w.max(h);
    let length = if length > limit {
        log::warn!("motion blur length {length} exceeds image size {w}x{h}; clamped to {limit}");
        limit
    } else {
        length
    };
    let (dy, dx) = angle.sin_cos();
    let half = (length as f64 - 1.0) / 2.0;
    let offsets: Vec<(f64, f64)> = (0..length)
        .map(|k| {
            let s = k as f64 - half;
            (s * dx, s * dy)
        })
        .collect();
    per_plane(img, |p, w, h| {
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let acc: f64 = offsets
                    .iter()
                    .map(|(ox, oy)| bilinear(p, w, h, x as f64 + ox, y as f64 + oy))
                    .sum();
                out.push(acc / length as f64);
            }
        }
        out
    })
}

fn pixelate(img: &ImageBuffer, block: usize) -> ImageBuffer {
    if block <= 1 {
        return img.clone();
    }
    let (w, h) = img.dims();
    let limit = w.max(h);
    let block = if block > limit {
        log::warn!("pixelate block {block} exceeds image size {w}x{h}; clamped to {limit}");
        limit
    } else {
        block
    };
    per_plane(img, |p, w, h| {
        let mut out = vec![0.0; w * h];
        for by in (0..h).step_by(block) {
            for bx in (0..w).step_by(block) {
                let (ye, xe) = ((by + block).min(h), (bx + block).min(w));
                let mut sum = 0.0;
                for y in by..ye {
                    sum += p[y * w + bx..y * w + xe].iter().sum::<f64>();
                }
                let mean = sum / ((ye - by) * (xe - bx)) as f64;
                for y in by..ye {
                    out[y * w + bx..y * w + xe].fill(mean);
                }
            }
        }
        out
    })
}

fn jpeg_roundtrip(img: &ImageBuffer, quality: u8) -> Result<ImageBuffer> {
    use image::codecs::jpeg::JpegEncoder;
    use image::{ExtendedColorType, ImageEncoder, ImageFormat};

    let color = if img.channels() == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    let mut bytes = Vec::new();
    JpegEncoder::new_with_quality(&mut bytes, quality)
        .write_image(&img.to_u8_samples(), img.width() as u32, img.height() as u32, color)
        .map_err(|e| Error::Codec(format!("jpeg encode: {e}")))?;
    let decoded = image::load(Cursor::new(bytes), ImageFormat::Jpeg)
        .map_err(|e| Error::Codec(format!("jpeg decode: {e}")))?;
    let mut out = ImageBuffer::from_dynamic(decoded)?;
    if out.channels() != img.channels() {
        out = if img.channels() == 1 {
            out.to_luminance()
        } else {
            let gray = out.into_data();
            ImageBuffer::from_unclamped(
                img.width(),
                img.height(),
                3,
                gray.iter().flat_map(|v| [*v, *v, *v]).collect(),
            )
        };
    }
    Ok(out)
}
