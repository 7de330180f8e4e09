//! Affine warps shared by the geometric perturbations and the ground-truth
//! co-transformation (masks and boxes).

use crate::image::ImageBuffer;
use crate::metrics::{BoundingBox, SegmentationMask};

use super::filter::{bilinear, reflect};

/// `forward(p) = M·(p − c) + c + shift`, in pixel-index coordinates
/// (pixel `(i, j)` sits at `(i, j)`; its area spans `±0.5`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricTransform {
    pub matrix: [[f64; 2]; 2],
    pub center: (f64, f64),
    pub shift: (f64, f64),
}

impl GeometricTransform {
    pub fn rotation(width: usize, height: usize, degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        Self {
            matrix: [[c, -s], [s, c]],
            center: center_of(width, height),
            shift: (0.0, 0.0),
        }
    }

    pub fn scaling(width: usize, height: usize, factor: f64) -> Self {
        Self {
            matrix: [[factor, 0.0], [0.0, factor]],
            center: center_of(width, height),
            shift: (0.0, 0.0),
        }
    }

    pub fn translation(width: usize, height: usize, dx: f64, dy: f64) -> Self {
        Self {
            matrix: [[1.0, 0.0], [0.0, 1.0]],
            center: center_of(width, height),
            shift: (dx, dy),
        }
    }

    pub fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = self.center;
        let [[a, b], [c, d]] = self.matrix;
        let (px, py) = (x - cx, y - cy);
        (a * px + b * py + cx + self.shift.0, c * px + d * py + cy + self.shift.1)
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = self.center;
        let [[a, b], [c, d]] = self.matrix;
        let det = a * d - b * c;
        let (px, py) = (x - cx - self.shift.0, y - cy - self.shift.1);
        ((d * px - b * py) / det + cx, (-c * px + a * py) / det + cy)
    }

    /// Bilinear inverse-mapped warp with reflect padding.
    pub fn warp_image(&self, img: &ImageBuffer) -> ImageBuffer {
        let (w, h) = img.dims();
        let planes: Vec<Vec<f64>> = (0..img.channels())
            .map(|c| {
                let src = img.plane(c);
                let mut out = Vec::with_capacity(w * h);
                for y in 0..h {
                    for x in 0..w {
                        let (sx, sy) = self.inverse(x as f64, y as f64);
                        out.push(bilinear(&src, w, h, sx, sy));
                    }
                }
                out
            })
            .collect();
        ImageBuffer::from_planes(w, h, &planes)
    }

    /// Nearest-neighbour warp so labels stay strictly binary.
    pub fn warp_mask(&self, mask: &SegmentationMask) -> SegmentationMask {
        let (w, h) = (mask.width(), mask.height());
        let mut bits = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.inverse(x as f64, y as f64);
                let ix = reflect(sx.round() as isize, w);
                let iy = reflect(sy.round() as isize, h);
                bits.push(mask.get(ix, iy));
            }
        }
        SegmentationMask::new(w, h, bits).expect("dimensions preserved")
    }

    /// Maps the four corners (continuous coordinates, pixel edges at
    /// integers) and returns their axis-aligned hull clipped to the frame.
    /// `None` when the box leaves the frame entirely.
    pub fn warp_box(&self, bx: &BoundingBox, width: usize, height: usize) -> Option<BoundingBox> {
        let corners = [
            (bx.x_min, bx.y_min),
            (bx.x_max, bx.y_min),
            (bx.x_min, bx.y_max),
            (bx.x_max, bx.y_max),
        ];
        let mapped: Vec<(f64, f64)> = corners
            .iter()
            .map(|&(u, v)| {
                let (x, y) = self.forward(u - 0.5, v - 0.5);
                (x + 0.5, y + 0.5)
            })
            .collect();
        let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| {
            mapped.iter().map(pick).fold(init, f)
        };
        let x_min = fold(f64::min, f64::INFINITY, |p| p.0).max(0.0);
        let x_max = fold(f64::max, f64::NEG_INFINITY, |p| p.0).min(width as f64);
        let y_min = fold(f64::min, f64::INFINITY, |p| p.1).max(0.0);
        let y_max = fold(f64::max, f64::NEG_INFINITY, |p| p.1).min(height as f64);
        BoundingBox::new(x_min, y_min, x_max, y_max).ok()
    }
}

fn center_of(width: usize, height: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}
