//! Deterministic synthesis of SSIM-calibrated corruptions for medical images,
//! and scoring/aggregation of model predictions under those corruptions.
//!
//! ```
//! use medrobust_core::{apply_by_id, probes, ssim, Intensity};
//!
//! let img = probes::textured_probe(32);
//! let out = apply_by_id("gaussian_blur", &img, Intensity::new(0.3).unwrap(), 7).unwrap();
//! assert!(ssim(&img, &out).unwrap() < 1.0);
//! ```

pub mod aggregate;
pub mod calibrate;
pub mod error;
pub mod image;
pub mod manifest;
pub mod metrics;
pub mod perturb;
pub mod pipeline;
pub mod probes;
pub mod rng;
pub mod ssim;

pub use aggregate::{
    drop, mean_drop, rank_perturbations, severity_curve, MetricRecord, RecordCategory, ReportOptions,
    RobustnessReport,
};
pub use calibrate::{calibrate, calibrate_dataset, CalibrationCache, CalibrationEntry, SeverityLevel};
pub use error::{Error, Result};
pub use image::{load_image, save_image, ImageBuffer};
pub use manifest::{DatasetManifest, Sample};
pub use metrics::{BoundingBox, SegmentationMask, Task};
pub use perturb::{
    apply_base, apply_by_id, apply_medical, perturbations_for, BaseKind, Category, GeometricTransform, Intensity,
    MedicalKind, Modality, Perturbation, Registry,
};
pub use pipeline::RunConfig;
pub use rng::derive_seed;
pub use ssim::ssim;
