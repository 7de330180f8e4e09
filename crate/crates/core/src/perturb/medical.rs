//! Modality-specific clinical artifact simulators.
//!
//! Geometry (foci, wedges, band positions, highlight layouts) is drawn from
//! the seed's parameter stream in a fixed order and never depends on `t`, so
//! raising `t` only grows or strengthens an artifact that is already there.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::rng::{SeededStream, PARAMS};

use super::filter::{disk_blur, gaussian_blur};
use super::Intensity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "MRI")]
    Mri,
    Ultrasound,
    Pathology,
    Endoscopy,
    #[serde(rename = "OCT")]
    Oct,
    XRay,
    Dermoscopy,
}

impl Modality {
    pub const ALL: [Modality; 8] = [
        Modality::Ct,
        Modality::Mri,
        Modality::Ultrasound,
        Modality::Pathology,
        Modality::Endoscopy,
        Modality::Oct,
        Modality::XRay,
        Modality::Dermoscopy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Ct => "CT",
            Modality::Mri => "MRI",
            Modality::Ultrasound => "Ultrasound",
            Modality::Pathology => "Pathology",
            Modality::Endoscopy => "Endoscopy",
            Modality::Oct => "OCT",
            Modality::XRay => "XRay",
            Modality::Dermoscopy => "Dermoscopy",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownModality(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedicalKind {
    CtMetalStreak,
    CtBeamHardening,
    CtWindowLevel,
    MriBiasField,
    MriGhosting,
    UsAcousticShadow,
    UsReverberation,
    PathStainShift,
    EndoSpecularReflection,
    EndoBubbles,
    OctShadow,
    OctBlink,
    OctDefocus,
    XrayScatter,
    XrayExposure,
    XrayGrid,
    DermLightReflection,
}

impl MedicalKind {
    pub const ALL: [MedicalKind; 17] = [
        MedicalKind::CtMetalStreak,
        MedicalKind::CtBeamHardening,
        MedicalKind::CtWindowLevel,
        MedicalKind::MriBiasField,
        MedicalKind::MriGhosting,
        MedicalKind::UsAcousticShadow,
        MedicalKind::UsReverberation,
        MedicalKind::PathStainShift,
        MedicalKind::EndoSpecularReflection,
        MedicalKind::EndoBubbles,
        MedicalKind::OctShadow,
        MedicalKind::OctBlink,
        MedicalKind::OctDefocus,
        MedicalKind::XrayScatter,
        MedicalKind::XrayExposure,
        MedicalKind::XrayGrid,
        MedicalKind::DermLightReflection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MedicalKind::CtMetalStreak => "ct_metal_streak",
            MedicalKind::CtBeamHardening => "ct_beam_hardening",
            MedicalKind::CtWindowLevel => "ct_window_level",
            MedicalKind::MriBiasField => "mri_bias_field",
            MedicalKind::MriGhosting => "mri_ghosting",
            MedicalKind::UsAcousticShadow => "us_acoustic_shadow",
            MedicalKind::UsReverberation => "us_reverberation",
            MedicalKind::PathStainShift => "path_stain_shift",
            MedicalKind::EndoSpecularReflection => "endo_specular_reflection",
            MedicalKind::EndoBubbles => "endo_bubbles",
            MedicalKind::OctShadow => "oct_shadow",
            MedicalKind::OctBlink => "oct_blink",
            MedicalKind::OctDefocus => "oct_defocus",
            MedicalKind::XrayScatter => "xray_scatter",
            MedicalKind::XrayExposure => "xray_exposure",
            MedicalKind::XrayGrid => "xray_grid",
            MedicalKind::DermLightReflection => "derm_light_reflection",
        }
    }

    pub fn modality(self) -> Modality {
        use MedicalKind::*;
        match self {
            CtMetalStreak | CtBeamHardening | CtWindowLevel => Modality::Ct,
            MriBiasField | MriGhosting => Modality::Mri,
            UsAcousticShadow | UsReverberation => Modality::Ultrasound,
            PathStainShift => Modality::Pathology,
            EndoSpecularReflection | EndoBubbles => Modality::Endoscopy,
            OctShadow | OctBlink | OctDefocus => Modality::Oct,
            XrayScatter | XrayExposure | XrayGrid => Modality::XRay,
            DermLightReflection => Modality::Dermoscopy,
        }
    }
}

impl fmt::Display for MedicalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MedicalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MedicalKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownPerturbation(s.to_string()))
    }
}

pub fn apply_medical(kind: MedicalKind, img: &ImageBuffer, t: Intensity, seed: u64) -> ImageBuffer {
    if t.is_zero() {
        return img.clone();
    }
    let t = t.value();
    let mut rng = SeededStream::new(seed, PARAMS);
    match kind {
        MedicalKind::CtMetalStreak => metal_streak(img, t, &mut rng),
        MedicalKind::CtBeamHardening => beam_hardening(img, t),
        MedicalKind::CtWindowLevel => {
            let level = 0.5 + rng.sign() * 0.3 * t;
            let window = 1.0 - 0.5 * t;
            let low = level - window / 2.0;
            img.map_samples(|_, _, _, v| (v - low) / window)
        }
        MedicalKind::MriBiasField => {
            let (w, h) = dims_f(img);
            let (cx, cy) = (rng.range(0.0, w), rng.range(0.0, h));
            let width = rng.range(0.25, 0.5) * w.max(h);
            let amp = rng.sign() * 0.8 * t;
            img.map_samples(|x, y, _, v| {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                v * (amp * (-d2 / (2.0 * width * width)).exp()).exp()
            })
        }
        MedicalKind::MriGhosting => ghosting(img, 0.5 * t, rng.coin()),
        MedicalKind::UsAcousticShadow => acoustic_shadow(img, t, &mut rng),
        MedicalKind::UsReverberation => {
            let (_, h) = dims_f(img);
            let depth = rng.range(0.2, 0.5) * h;
            let period = rng.range(8.0, 16.0);
            let amp = 0.4 * t;
            img.map_samples(|_, y, _, v| {
                let dy = y as f64 - depth;
                if dy < 0.0 {
                    v
                } else {
                    v + amp * (0.5 + 0.5 * (TAU * dy / period).cos()) * (-dy / (0.6 * h)).exp()
                }
            })
        }
        MedicalKind::PathStainShift => stain_shift(img, t, &mut rng),
        MedicalKind::EndoSpecularReflection => light_reflection(img, t, Modality::Endoscopy, &mut rng),
        MedicalKind::DermLightReflection => light_reflection(img, t, Modality::Dermoscopy, &mut rng),
        MedicalKind::EndoBubbles => bubbles(img, t, &mut rng),
        MedicalKind::OctShadow => {
            let (w, _) = dims_f(img);
            let bands: Vec<(f64, f64)> = (0..4)
                .map(|_| {
                    let c = rng.range(0.0, w);
                    let half = rng.range(0.02, 0.06) * w / 2.0;
                    (c - half, c + half)
                })
                .collect();
            let active = 1 + (3.0 * t).floor() as usize;
            let keep = 1.0 - 0.8 * t;
            img.map_samples(|x, _, _, v| {
                let xf = x as f64;
                if bands[..active].iter().any(|(a, b)| xf >= *a && xf <= *b) {
                    v * keep
                } else {
                    v
                }
            })
        }
        MedicalKind::OctBlink => {
            let (start, rows) = blink_band(img.height(), t, &mut rng);
            img.map_samples(|_, y, _, v| if y >= start && y < start + rows { 0.0 } else { v })
        }
        MedicalKind::OctDefocus => {
            let radius = 6.0 * t;
            let (w, h) = img.dims();
            let planes: Vec<Vec<f64>> =
                (0..img.channels()).map(|c| disk_blur(&img.plane(c), w, h, radius)).collect();
            ImageBuffer::from_planes(w, h, &planes)
        }
        MedicalKind::XrayScatter => {
            let beta = 0.7 * t;
            let (w, h) = img.dims();
            let sigma = w.max(h) as f64 / 6.0;
            let planes: Vec<Vec<f64>> = (0..img.channels())
                .map(|c| {
                    let p = img.plane(c);
                    let haze = gaussian_blur(&p, w, h, sigma);
                    p.iter()
                        .zip(haze)
                        .map(|(v, b)| (1.0 - beta) * v + beta * (b + 0.1))
                        .collect()
                })
                .collect();
            ImageBuffer::from_planes(w, h, &planes)
        }
        MedicalKind::XrayExposure => {
            // Under-exposure darkens with γ = 1 + 1.5t; over-exposure uses the
            // reciprocal so γ stays positive at every t.
            let gamma = if rng.coin() { 1.0 + 1.5 * t } else { 1.0 / (1.0 + 1.5 * t) };
            img.map_samples(|_, _, _, v| v.powf(gamma))
        }
        MedicalKind::XrayGrid => {
            let period = rng.range(4.0, 8.0);
            let vertical = rng.coin();
            let phase = rng.range(0.0, TAU);
            let amp = 0.25 * t;
            img.map_samples(|x, y, _, v| {
                let coord = if vertical { x } else { y } as f64;
                v + amp * (TAU * coord / period + phase).sin()
            })
        }
    }
}

fn dims_f(img: &ImageBuffer) -> (f64, f64) {
    (img.width() as f64, img.height() as f64)
}

/// Start row and height of the missing scan-line band. The start is drawn
/// for the widest band so narrower bands nest inside it.
fn blink_band(height: usize, t: f64, rng: &mut SeededStream) -> (usize, usize) {
    let max_rows = (2 + (0.15 * height as f64).floor() as usize).min(height);
    let rows = (2 + (0.15 * t * height as f64).floor() as usize).min(max_rows);
    let slots = height - max_rows + 1;
    let start = ((rng.uniform() * slots as f64) as usize).min(slots - 1);
    (start, rows)
}

fn metal_streak(img: &ImageBuffer, t: f64, rng: &mut SeededStream) -> ImageBuffer {
    const MAX_RAYS: usize = 16;
    let (w, h) = dims_f(img);
    let fx = rng.range(0.2 * w, 0.8 * w);
    let fy = rng.range(0.2 * h, 0.8 * h);
    let rays: Vec<(f64, f64, f64)> = (0..MAX_RAYS)
        .map(|k| {
            let (s, c) = rng.range(0.0, PI).sin_cos();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            (c, s, sign)
        })
        .collect();
    let active = 4 + (12.0 * t).floor() as usize;
    let amp = 0.5 * t;
    let diag = (w * w + h * h).sqrt();
    let core = 0.02 * w.min(h) + 1.0;
    let field = |x: usize, y: usize| {
        let (px, py) = (x as f64 - fx, y as f64 - fy);
        let r = (px * px + py * py).sqrt();
        let falloff = 1.0 / (1.0 + 2.0 * r / diag);
        let mut acc = amp * (-(r * r) / (2.0 * core * core)).exp();
        for &(c, s, sign) in &rays[..active] {
            let d = px * s - py * c;
            acc += sign * amp * falloff * (-(d * d) / (2.0 * 1.2 * 1.2)).exp();
        }
        acc
    };
    img.map_samples(|x, y, _, v| v + field(x, y))
}

fn beam_hardening(img: &ImageBuffer, t: f64) -> ImageBuffer {
    let (w, h) = dims_f(img);
    let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let r_max2 = cx * cx + cy * cy;
    img.map_samples(|x, y, _, v| {
        let r2 = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / r_max2;
        v * (1.0 - 0.6 * t * (1.0 - r2.min(1.0)))
    })
}

fn ghosting(img: &ImageBuffer, alpha: f64, along_rows: bool) -> ImageBuffer {
    let (w, h) = img.dims();
    let ch = img.channels();
    let n = if along_rows { w } else { h } as isize;
    let shifts = [n / 4, -n / 4, n / 2, -n / 2];
    let src = img.data();
    let mut data = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let ghost: f64 = shifts
                    .iter()
                    .map(|s| {
                        let (gx, gy) = if along_rows {
                            ((x as isize + s).rem_euclid(w as isize) as usize, y)
                        } else {
                            (x, (y as isize + s).rem_euclid(h as isize) as usize)
                        };
                        src[(gy * w + gx) * ch + c]
                    })
                    .sum::<f64>()
                    / shifts.len() as f64;
                data.push((1.0 - alpha) * src[(y * w + x) * ch + c] + alpha * ghost);
            }
        }
    }
    ImageBuffer::from_unclamped(w, h, ch, data)
}

/// Wedge membership for the acoustic shadow: apex, unit direction and the
/// cosine of the half opening angle.
pub(crate) struct Wedge {
    apex: (f64, f64),
    dir: (f64, f64),
    cos_half: f64,
}

impl Wedge {
    fn draw(w: f64, h: f64, rng: &mut SeededStream) -> Self {
        let apex = (rng.range(0.25 * w, 0.75 * w), rng.range(0.0, 0.25 * h));
        let opening = rng.range(20.0, 40.0).to_radians();
        let tilt = rng.range(-10.0, 10.0).to_radians();
        Self {
            apex,
            dir: (tilt.sin(), tilt.cos()),
            cos_half: (opening / 2.0).cos(),
        }
    }

    pub(crate) fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.apex.0, y - self.apex.1);
        let r = (dx * dx + dy * dy).sqrt();
        r > 0.0 && (dx * self.dir.0 + dy * self.dir.1) / r >= self.cos_half
    }

    #[cfg(test)]
    pub(crate) fn for_image(img: &ImageBuffer, seed: u64) -> Self {
        let (w, h) = dims_f(img);
        Self::draw(w, h, &mut SeededStream::new(seed, PARAMS))
    }
}

fn acoustic_shadow(img: &ImageBuffer, t: f64, rng: &mut SeededStream) -> ImageBuffer {
    let (w, h) = dims_f(img);
    let wedge = Wedge::draw(w, h, rng);
    let keep = 1.0 - 0.85 * t;
    img.map_samples(|x, y, _, v| if wedge.contains(x as f64, y as f64) { v * keep } else { v })
}

fn stain_shift(img: &ImageBuffer, t: f64, rng: &mut SeededStream) -> ImageBuffer {
    let hue_shift = rng.sign() * 0.12 * t;
    let sat_scale = 1.0 + rng.sign() * 0.6 * t;
    if img.channels() != 3 {
        log::debug!("path_stain_shift on a single-channel image is the identity");
        return img.clone();
    }
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
            let h = (h + hue_shift).rem_euclid(1.0);
            let s = (s * sat_scale).clamp(0.0, 1.0);
            hsv_to_rgb(h, s, v)
        })
        .collect();
    ImageBuffer::from_unclamped(img.width(), img.height(), 3, data)
}

/// Hexcone RGB → HSV, all components in `[0, 1]`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, v);
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h / 6.0, s, v)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let u = v * (1.0 - s * (1.0 - f));
    match sector as u8 {
        0 => [v, u, p],
        1 => [q, v, p],
        2 => [p, v, u],
        3 => [p, q, v],
        4 => [u, p, v],
        _ => [v, p, q],
    }
}

fn light_reflection(img: &ImageBuffer, t: f64, modality: Modality, rng: &mut SeededStream) -> ImageBuffer {
    const MAX_SPOTS: usize = 8;
    let (w, h) = dims_f(img);
    // Endoscopic highlights are elongated glints along mucosal folds;
    // dermoscopic ring-light reflections are closer to round.
    let aspect_range = match modality {
        Modality::Dermoscopy => (1.0, 1.8),
        _ => (1.5, 4.0),
    };
    struct Spot {
        cx: f64,
        cy: f64,
        weight: f64,
        aspect: f64,
        angle: f64,
    }
    let spots: Vec<Spot> = (0..MAX_SPOTS)
        .map(|_| Spot {
            cx: rng.range(0.0, w),
            cy: rng.range(0.0, h),
            weight: rng.range(0.5, 1.5),
            aspect: rng.range(aspect_range.0, aspect_range.1),
            angle: rng.range(0.0, PI),
        })
        .collect();
    let weight_sum: f64 = spots.iter().map(|s| s.weight).sum();
    let active = 2 + (6.0 * t).floor() as usize;
    // Footprint (q ≤ 1) areas sum to at most 12t% of the frame.
    let budget = 0.12 * t * w * h;
    let shapes: Vec<(f64, f64, f64, f64, f64, f64)> = spots[..active]
        .iter()
        .map(|s| {
            let area = budget * s.weight / weight_sum;
            let minor = (area / (PI * s.aspect)).sqrt();
            let (sin, cos) = s.angle.sin_cos();
            (s.cx, s.cy, s.aspect * minor, minor, cos, sin)
        })
        .collect();
    let mask = |x: usize, y: usize| {
        shapes.iter().fold(0.0f64, |m, &(cx, cy, a, b, cos, sin)| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let u = (dx * cos + dy * sin) / a;
            let v = (-dx * sin + dy * cos) / b;
            let q = (u * u + v * v).sqrt();
            let level = if q <= 0.4 {
                1.0
            } else if q < 1.0 {
                (-((q - 0.4) / 0.25).powi(2)).exp()
            } else {
                0.0
            };
            m.max(level)
        })
    };
    img.map_samples(|x, y, _, v| {
        let m = mask(x, y);
        v + (1.0 - v) * m
    })
}

fn bubbles(img: &ImageBuffer, t: f64, rng: &mut SeededStream) -> ImageBuffer {
    const MAX_BUBBLES: usize = 13;
    let (w, h) = dims_f(img);
    let min_side = w.min(h);
    let all: Vec<(f64, f64, f64)> = (0..MAX_BUBBLES)
        .map(|_| {
            let cx = rng.range(0.0, w);
            let cy = rng.range(0.0, h);
            let r = rng.range(0.02, 0.08) * min_side;
            (cx, cy, r)
        })
        .collect();
    let active = &all[..3 + (10.0 * t).floor() as usize];
    let opacity = t;
    img.map_samples(|x, y, _, mut v| {
        for &(cx, cy, r) in active {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let rim_width = 0.15 * r + 0.5;
            let rim = (-((d - r) / rim_width).powi(2)).exp();
            if d < r {
                v *= 1.0 - 0.15 * opacity;
            }
            v += opacity * 0.6 * rim * (1.0 - v);
        }
        v
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes;
    use crate::ssim::ssim;

    fn t(v: f64) -> Intensity {
        Intensity::new(v).unwrap()
    }

    fn probe_for(kind: MedicalKind) -> ImageBuffer {
        match kind {
            MedicalKind::PathStainShift
            | MedicalKind::EndoSpecularReflection
            | MedicalKind::EndoBubbles
            | MedicalKind::DermLightReflection => probes::color_probe(64),
            _ => probes::textured_probe(64),
        }
    }

    #[test]
    fn names_roundtrip_and_modalities() {
        for k in MedicalKind::ALL {
            assert_eq!(k.as_str().parse::<MedicalKind>().unwrap(), k);
        }
        assert_eq!(MedicalKind::CtWindowLevel.modality(), Modality::Ct);
        assert_eq!(MedicalKind::DermLightReflection.modality(), Modality::Dermoscopy);
        assert_eq!("oct".parse::<Modality>().unwrap(), Modality::Oct);
        assert!("PET".parse::<Modality>().is_err());
    }

    #[test]
    fn zero_intensity_is_identity() {
        for k in MedicalKind::ALL {
            for img in [probes::textured_probe(32), probes::color_probe(32)] {
                assert_eq!(apply_medical(k, &img, Intensity::ZERO, 11), img, "{k}");
            }
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        for k in MedicalKind::ALL {
            let img = probe_for(k);
            let a = apply_medical(k, &img, t(0.7), 5);
            assert_eq!(a, apply_medical(k, &img, t(0.7), 5), "{k}");
            assert_eq!(a.dims(), img.dims());
            assert_eq!(a.channels(), img.channels());
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_ne!(a, img, "{k} had no effect at t=0.7");
        }
    }

    #[test]
    fn oct_blink_band_by_row_scan() {
        let img = ImageBuffer::from_fn_gray(64, 64, |x, y| 0.2 + 0.5 * ((x * y) % 13) as f64 / 12.0);
        let out = apply_medical(MedicalKind::OctBlink, &img, Intensity::MAX, 77);
        let zero_rows: Vec<usize> = (0..64)
            .filter(|&y| (0..64).all(|x| out.get(x, y, 0) == 0.0))
            .collect();
        assert_eq!(zero_rows.len(), 11);
        assert!(zero_rows.windows(2).all(|p| p[1] == p[0] + 1), "{zero_rows:?}");
        for y in (0..64).filter(|y| !zero_rows.contains(y)) {
            for x in 0..64 {
                assert_eq!(out.get(x, y, 0), img.get(x, y, 0));
            }
        }
    }

    #[test]
    fn beam_hardening_profile() {
        let img = ImageBuffer::filled(65, 65, 1, 1.0).unwrap();
        let out = apply_medical(MedicalKind::CtBeamHardening, &img, t(0.5), 0);
        assert!((out.get(32, 32, 0) - 0.70).abs() < 1e-12);
        assert_eq!(out.get(0, 0, 0), 1.0);
        assert_eq!(out.get(64, 64, 0), 1.0);
        let even = ImageBuffer::filled(64, 64, 1, 1.0).unwrap();
        let out = apply_medical(MedicalKind::CtBeamHardening, &even, t(0.5), 0);
        assert!((out.get(31, 31, 0) - 0.70).abs() < 1.0 / 255.0);
        assert_eq!(out.get(0, 0, 0), 1.0);
    }

    #[test]
    fn acoustic_shadow_is_local() {
        let img = probes::textured_probe(64);
        let seed = 31;
        let out = apply_medical(MedicalKind::UsAcousticShadow, &img, t(0.8), seed);
        let wedge = Wedge::for_image(&img, seed);
        let mut inside = 0;
        for y in 0..64 {
            for x in 0..64 {
                if wedge.contains(x as f64, y as f64) {
                    inside += 1;
                    assert!((out.get(x, y, 0) - img.get(x, y, 0) * (1.0 - 0.68)).abs() < 1e-12);
                } else {
                    assert_eq!(out.get(x, y, 0), img.get(x, y, 0));
                }
            }
        }
        assert!(inside > 100, "wedge too small: {inside}");
    }

    #[test]
    fn stain_shift_preserves_value_channel() {
        let img = probes::color_probe(32);
        let out = apply_medical(MedicalKind::PathStainShift, &img, t(0.9), 4);
        for (a, b) in img.data().chunks_exact(3).zip(out.data().chunks_exact(3)) {
            let va = rgb_to_hsv(a[0], a[1], a[2]).2;
            let vb = rgb_to_hsv(b[0], b[1], b[2]).2;
            assert!((va - vb).abs() < 1e-6);
        }
    }

    #[test]
    fn hsv_roundtrip() {
        for &(r, g, b) in &[(0.9, 0.2, 0.4), (0.1, 0.8, 0.3), (0.3, 0.3, 0.95), (0.5, 0.5, 0.5), (0.0, 0.0, 0.0)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let back = hsv_to_rgb(h, s, v);
            assert!((back[0] - r).abs() < 1e-12 && (back[1] - g).abs() < 1e-12 && (back[2] - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reflection_area_budget() {
        let img = ImageBuffer::filled(80, 60, 3, 0.3).unwrap();
        for kind in [MedicalKind::EndoSpecularReflection, MedicalKind::DermLightReflection] {
            for &tv in &[0.25, 1.0] {
                let out = apply_medical(kind, &img, t(tv), 9);
                let touched = out.data().chunks_exact(3).filter(|px| px[0] > 0.3).count();
                assert!(touched as f64 <= 0.12 * tv * 4800.0 * 1.15, "{kind} {tv}: {touched}");
                assert!(out.data().contains(&1.0));
            }
        }
    }

    #[test]
    fn ssim_non_increasing_in_intensity() {
        for k in MedicalKind::ALL {
            let img = probe_for(k);
            for seed in [1u64, 2, 3] {
                let mut prev = 1.0;
                for i in 1..=9 {
                    let s = ssim(&img, &apply_medical(k, &img, t(i as f64 / 10.0), seed)).unwrap();
                    assert!(s <= prev + 1e-12, "{k} seed {seed} t=0.{i}: {s} > {prev}");
                    prev = s;
                }
            }
        }
    }
}
