//! Regenerates the bundled smoke dataset used by the acceptance suite:
//! three CT slices and three dermoscopy images (48×48), each a bright
//! textured lesion with its mask and bounding box.
//!
//! cargo run -p medrobust-cli --example smoke_fixture -- crates/cli/tests/fixtures/smoke

use std::path::PathBuf;

use medrobust_core::manifest::{DatasetManifest, Sample};
use medrobust_core::metrics::save_mask;
use medrobust_core::probes::{disk_mask, stationary_probe};
use medrobust_core::{save_image, BoundingBox, ImageBuffer, Modality};

const SIZE: usize = 48;

fn main() -> anyhow::Result<()> {
    let dir: PathBuf = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| "smoke".into());
    std::fs::create_dir_all(&dir)?;
    for (dataset, modality, color) in [("ct_demo", Modality::Ct, false), ("derm_demo", Modality::Dermoscopy, true)] {
        let mut m = DatasetManifest::new(dataset, modality, &dir);
        for i in 0..3u64 {
            let (cx, cy, r) = (20.0 + 4.0 * i as f64, 24.0 - 2.0 * i as f64, 9.0 + 2.0 * i as f64);
            let mask = disk_mask(SIZE, SIZE, cx, cy, r);
            let tex = stationary_probe(SIZE, 40 + i + if color { 10 } else { 0 });
            let level = |x: usize, y: usize| 0.3 + 0.4 * mask.get(x, y) as u8 as f64 + (tex.get(x, y, 0) - 0.5);
            let img = if color {
                ImageBuffer::from_fn_rgb(SIZE, SIZE, |x, y| {
                    let v = level(x, y);
                    [(v + 0.2).min(1.0), v * 0.8, v * 0.7]
                })
            } else {
                ImageBuffer::from_fn_gray(SIZE, SIZE, level)
            };
            let sid = format!("{dataset}_{i}");
            save_image(&img, dir.join(format!("{sid}.png")))?;
            save_mask(&mask, dir.join(format!("{sid}_mask.png")))?;
            let mut s = Sample::new(&sid, format!("{sid}.png"));
            s.mask = Some(format!("{sid}_mask.png").into());
            s.bbox = Some(BoundingBox::new(cx - r, cy - r, cx + r + 1.0, cy + r + 1.0)?);
            m.samples.push(s);
        }
        m.save(dir.join(format!("{dataset}.json")))?;
    }
    Ok(())
}
