//! Canonical raster representation and PNG/JPEG codecs.
//!
//! Every perturbation reads and writes [`ImageBuffer`]: a row-major,
//! interleaved buffer of `f64` samples in `[0, 1]` with one (grayscale) or
//! three (RGB) channels. Quantization to 8 bits happens only when an image is
//! written to disk.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Luminance weights (ITU-R BT.601).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    source_depth: u8,
}

impl ImageBuffer {
    /// Builds a buffer, checking the length and `[0, 1]` range of `data`.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroArea);
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::InvalidImage(format!(
                "expected {expected} samples for {width}x{height}x{channels}, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!(
                "sample {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            source_depth: 8,
        })
    }

    /// Builds a buffer from samples that may have left `[0, 1]`; values are
    /// clamped and NaN maps to 0. Callers guarantee the length.
    pub(crate) fn from_unclamped(
        width: usize,
        height: usize,
        channels: usize,
        mut data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self {
            width,
            height,
            channels,
            data,
            source_depth: 8,
        }
    }

    /// Grayscale buffer from a per-pixel function; output is clamped.
    pub fn from_fn_gray(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_unclamped(width, height, 1, data)
    }

    /// RGB buffer from a per-pixel function; output is clamped.
    pub fn from_fn_rgb(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::from_unclamped(width, height, 3, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Bits per sample of the file this buffer was decoded from (metadata only).
    pub fn source_depth(&self) -> u8 {
        self.source_depth
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Applies `f(x, y, channel, value)` to every sample and clamps the result.
    pub fn map_samples(&self, f: impl Fn(usize, usize, usize, f64) -> f64) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let base = (y * self.width + x) * self.channels;
                for c in 0..self.channels {
                    out.push(f(x, y, c, self.data[base + c]));
                }
            }
        }
        Self::from_unclamped(self.width, self.height, self.channels, out)
    }

    /// Extracts one channel as a dense row-major plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Reassembles a buffer from per-channel planes, clamping every sample.
    pub(crate) fn from_planes(width: usize, height: usize, planes: &[Vec<f64>]) -> Self {
        let channels = planes.len();
        let mut data = vec![0.0; width * height * channels];
        for (c, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Self::from_unclamped(width, height, channels, data)
    }

    pub fn to_luminance(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
            .collect();
        let mut out = Self::from_unclamped(self.width, self.height, 1, data);
        out.source_depth = self.source_depth;
        out
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Hex SHA-256 over the dimensions and exact sample bits. Used as the
    /// calibration cache key, so any change to the pixels invalidates entries.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.width as u64).to_le_bytes());
        hasher.update((self.height as u64).to_le_bytes());
        hasher.update((self.channels as u64).to_le_bytes());
        for v in &self.data {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hex_digest(&hasher.finalize())
    }

    pub(crate) fn to_u8_samples(&self) -> Vec<u8> {
        self.data.iter().map(|v| quantize_u8(*v)).collect()
    }

    pub(crate) fn from_dynamic(img: DynamicImage) -> Result<Self> {
        use image::ColorType;

        let (width, height) = (img.width() as usize, img.height() as usize);
        if width == 0 || height == 0 {
            return Err(Error::ZeroArea);
        }
        let color = img.color();
        let (channels, depth, data): (usize, u8, Vec<f64>) = match color {
            ColorType::L8 | ColorType::La8 => {
                let buf = img.into_luma8();
                (1, 8, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
            }
            ColorType::L16 | ColorType::La16 => {
                let buf = img.into_luma16();
                (1, 16, buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
            }
            ColorType::Rgb8 | ColorType::Rgba8 => {
                let buf = img.into_rgb8();
                (3, 8, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
            }
            ColorType::Rgb16 | ColorType::Rgba16 => {
                let buf = img.into_rgb16();
                (3, 16, buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
            }
            _ => {
                let buf = img.into_rgb32f();
                (3, 32, buf.into_raw().into_iter().map(|v| v as f64).collect())
            }
        };
        let mut out = Self::from_unclamped(width, height, channels, data);
        out.source_depth = depth;
        Ok(out)
    }
}

#[inline]
pub(crate) fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Decodes a PNG or JPEG file into a normalized buffer.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    // Format is taken from the content, not the extension.
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match image::guess_format(&bytes) {
        Ok(ImageFormat::Png) | Ok(ImageFormat::Jpeg) => {}
        Ok(other) => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        Err(_) => {
            return Err(Error::UnsupportedFormat(format!(
                "unrecognized content in {}",
                path.display()
            )))
        }
    }
    let reader = ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader
        .decode()
        .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?;
    ImageBuffer::from_dynamic(img)
}

/// Writes an 8-bit lossless PNG (grayscale for one channel, RGB for three).
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let color = if img.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        encoder,
        &img.to_u8_samples(),
        img.width() as u32,
        img.height() as u32,
        color,
    )
    .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(out)
}
