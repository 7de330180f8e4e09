use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, save_image, ImageBuffer};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl SegmentationMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "mask of {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    /// Any nonzero luminance counts as foreground.
    pub fn from_image(img: &ImageBuffer) -> Self {
        let lum = img.to_luminance();
        Self {
            width: img.width(),
            height: img.height(),
            bits: lum.data().iter().map(|v| *v > 0.0).collect(),
        }
    }

    pub fn to_image(&self) -> ImageBuffer {
        let data = self.bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
        ImageBuffer::new(self.width, self.height, 1, data).expect("binary samples are in range")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<SegmentationMask> {
    Ok(SegmentationMask::from_image(&load_image(path)?))
}

pub fn save_mask(mask: &SegmentationMask, path: impl AsRef<Path>) -> Result<()> {
    save_image(&mask.to_image(), path)
}

fn check_dims(p: &SegmentationMask, g: &SegmentationMask) -> Result<()> {
    if (p.width, p.height) != (g.width, g.height) {
        return Err(Error::DimensionMismatch {
            left: (p.width, p.height),
            right: (g.width, g.height),
        });
    }
    Ok(())
}

fn counts(p: &SegmentationMask, g: &SegmentationMask) -> (usize, usize, usize) {
    let inter = p.bits.iter().zip(&g.bits).filter(|(a, b)| **a && **b).count();
    (inter, p.count(), g.count())
}

/// |P ∩ G| / |P ∪ G|; two empty masks score 1.
pub fn mask_iou(p: &SegmentationMask, g: &SegmentationMask) -> Result<f64> {
    check_dims(p, g)?;
    let (inter, np, ng) = counts(p, g);
    let union = np + ng - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// 2|P ∩ G| / (|P| + |G|); two empty masks score 1.
pub fn mask_dice(p: &SegmentationMask, g: &SegmentationMask) -> Result<f64> {
    check_dims(p, g)?;
    let (inter, np, ng) = counts(p, g);
    let denom = np + ng;
    Ok(if denom == 0 { 1.0 } else { 2.0 * inter as f64 / denom as f64 })
}

/// Axis-aligned box in continuous pixel coordinates. Serialized as
/// `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox(format!("[{x_min}, {y_min}, {x_max}, {y_max}]")));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;
    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    inter / (a.area() + b.area() - inter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(w: usize, h: usize, on: &[(usize, usize)]) -> SegmentationMask {
        let mut bits = vec![false; w * h];
        for &(x, y) in on {
            bits[y * w + x] = true;
        }
        SegmentationMask::new(w, h, bits).unwrap()
    }

    /// Per-pixel counting over coordinates, independent of the slice path.
    fn brute(p: &SegmentationMask, g: &SegmentationMask) -> (f64, f64) {
        let (mut i, mut u, mut np, mut ng) = (0usize, 0usize, 0usize, 0usize);
        for y in 0..p.height() {
            for x in 0..p.width() {
                let (a, b) = (p.get(x, y), g.get(x, y));
                i += (a && b) as usize;
                u += (a || b) as usize;
                np += a as usize;
                ng += b as usize;
            }
        }
        let iou = if u == 0 { 1.0 } else { i as f64 / u as f64 };
        let dice = if np + ng == 0 { 1.0 } else { 2.0 * i as f64 / (np + ng) as f64 };
        (iou, dice)
    }

    #[test]
    fn small_examples() {
        let p = mask_from(4, 4, &[(0, 0), (1, 0)]);
        let g = mask_from(4, 4, &[(1, 0), (2, 0)]);
        assert_eq!(mask_iou(&p, &g).unwrap(), 1.0 / 3.0);
        assert_eq!(mask_dice(&p, &g).unwrap(), 0.5);
        assert_eq!(mask_iou(&p, &p).unwrap(), 1.0);
        assert_eq!(mask_dice(&p, &p).unwrap(), 1.0);
        let q = mask_from(4, 4, &[(3, 3)]);
        assert_eq!(mask_iou(&p, &q).unwrap(), 0.0);
        let e = SegmentationMask::empty(4, 4);
        assert_eq!(mask_iou(&e, &e).unwrap(), 1.0);
        assert_eq!(mask_dice(&e, &e).unwrap(), 1.0);
        assert!(mask_iou(&p, &SegmentationMask::empty(4, 5)).is_err());
    }

    #[test]
    fn box_examples() {
        let p = BoundingBox::new(0.0, 0.0, 2.0, 1.0).unwrap();
        let g = BoundingBox::new(1.0, 0.0, 3.0, 1.0).unwrap();
        assert!((box_iou(&p, &g) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(box_iou(&p, &p), 1.0);
        let half = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(box_iou(&p, &half), 0.5);
        assert!(BoundingBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "[0.0,0.0,2.0,1.0]");
        assert!(serde_json::from_str::<BoundingBox>("[3,0,1,1]").is_err());
    }

    #[test]
    fn mask_image_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = mask_from(9, 8, &[(0, 0), (4, 5), (8, 7)]);
        let path = dir.path().join("m.png");
        save_mask(&m, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), m);
    }

    fn mask_pair() -> impl Strategy<Value = (SegmentationMask, SegmentationMask)> {
        (proptest::collection::vec(any::<bool>(), 64), proptest::collection::vec(any::<bool>(), 64)).prop_map(
            |(a, b)| (SegmentationMask::new(8, 8, a).unwrap(), SegmentationMask::new(8, 8, b).unwrap()),
        )
    }

    fn a_box() -> impl Strategy<Value = BoundingBox> {
        (0.0f64..50.0, 0.0f64..50.0, 0.5f64..30.0, 0.5f64..30.0)
            .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #[test]
        fn overlap_matches_bruteforce((p, g) in mask_pair()) {
            let iou = mask_iou(&p, &g).unwrap();
            let dice = mask_dice(&p, &g).unwrap();
            let (bi, bd) = brute(&p, &g);
            prop_assert_eq!(iou, bi);
            prop_assert_eq!(dice, bd);
            prop_assert!(iou <= dice && dice <= 1.0);
            prop_assert!((dice - 2.0 * iou / (1.0 + iou)).abs() <= 1e-12);
        }

        #[test]
        fn box_iou_properties(a in a_box(), b in a_box(), shrink in 0.0f64..0.45) {
            prop_assert!((box_iou(&a, &b) - box_iou(&b, &a)).abs() < 1e-15);
            prop_assert_eq!(box_iou(&a, &a), 1.0);
            let (dw, dh) = ((a.x_max - a.x_min) * shrink, (a.y_max - a.y_min) * shrink);
            let smaller = BoundingBox::new(a.x_min + dw, a.y_min + dh, a.x_max - dw, a.y_max - dh).unwrap();
            prop_assert!(smaller.intersection_area(&b) <= a.intersection_area(&b) + 1e-12);
        }
    }
}
