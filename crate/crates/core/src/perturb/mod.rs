//! Perturbation registry.
//!
//! Each perturbation is driven by one intensity `t ∈ [0, 1]` (identity at 0)
//! and a 64-bit seed, and is addressed by a lowercase snake-case id that is
//! used verbatim in manifests, caches, ledgers and reports.

pub mod base;
pub(crate) mod filter;
pub mod geometry;
pub mod medical;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub use base::{apply_base, BaseGroup, BaseKind};
pub use geometry::GeometricTransform;
pub use medical::{apply_medical, MedicalKind, Modality};

/// Intensity knob in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Intensity(f64);

impl Intensity {
    pub const ZERO: Intensity = Intensity(0.0);
    pub const MAX: Intensity = Intensity(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && (0.0..=1.0).contains(&t) {
            Ok(Self(t))
        } else {
            Err(Error::InvalidIntensity(t))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for Intensity {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Intensity::new(v)
    }
}

impl From<Intensity> for f64 {
    fn from(t: Intensity) -> f64 {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Base,
    MedSpecific,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Base => "base",
            Category::MedSpecific => "med_specific",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A registered corruption.
pub trait Perturbation: Send + Sync {
    fn id(&self) -> &str;
    fn category(&self) -> Category;
    fn applies_to(&self, modality: Modality) -> bool;
    fn apply(&self, img: &ImageBuffer, t: Intensity, seed: u64) -> Result<ImageBuffer>;

    /// Spatial transform shared with annotations, for geometric kinds.
    fn geometry(&self, _width: usize, _height: usize, _t: Intensity, _seed: u64) -> Option<GeometricTransform> {
        None
    }
}

impl Perturbation for BaseKind {
    fn id(&self) -> &str {
        self.as_str()
    }
    fn category(&self) -> Category {
        Category::Base
    }
    fn applies_to(&self, _modality: Modality) -> bool {
        true
    }
    fn apply(&self, img: &ImageBuffer, t: Intensity, seed: u64) -> Result<ImageBuffer> {
        apply_base(*self, img, t, seed)
    }
    fn geometry(&self, width: usize, height: usize, t: Intensity, seed: u64) -> Option<GeometricTransform> {
        base::geometric_transform(*self, width, height, t, seed)
    }
}

impl Perturbation for MedicalKind {
    fn id(&self) -> &str {
        self.as_str()
    }
    fn category(&self) -> Category {
        Category::MedSpecific
    }
    fn applies_to(&self, modality: Modality) -> bool {
        self.modality() == modality
    }
    fn apply(&self, img: &ImageBuffer, t: Intensity, seed: u64) -> Result<ImageBuffer> {
        Ok(apply_medical(*self, img, t, seed))
    }
}

/// Ordered, extensible set of perturbations. Built-ins come first in
/// declaration order (12 base, then 17 medical).
#[derive(Clone)]
pub struct Registry {
    entries: Vec<Arc<dyn Perturbation>>,
}

impl Registry {
    pub fn builtin() -> Self {
        let mut entries: Vec<Arc<dyn Perturbation>> = Vec::new();
        for k in BaseKind::ALL {
            entries.push(Arc::new(k));
        }
        for k in MedicalKind::ALL {
            entries.push(Arc::new(k));
        }
        Self { entries }
    }

    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// Adds a perturbation; an existing entry with the same id is replaced
    /// in place.
    pub fn register(&mut self, p: Arc<dyn Perturbation>) {
        match self.entries.iter().position(|e| e.id() == p.id()) {
            Some(i) => self.entries[i] = p,
            None => self.entries.push(p),
        }
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn Perturbation>> {
        self.entries
            .iter()
            .find(|e| e.id() == id)
            .ok_or_else(|| Error::UnknownPerturbation(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Perturbation>> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Base kinds first, then the kinds registered for `modality`, both in
    /// registry order.
    pub fn for_modality(&self, modality: Modality) -> Vec<(String, Category)> {
        let pick = |cat: Category| {
            self.entries
                .iter()
                .filter(move |e| e.category() == cat && e.applies_to(modality))
                .map(|e| (e.id().to_string(), e.category()))
        };
        pick(Category::Base).chain(pick(Category::MedSpecific)).collect()
    }

    pub fn category_of(&self, id: &str) -> Result<Category> {
        self.get(id).map(|p| p.category())
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.iter().map(|e| e.id())).finish()
    }
}

/// Applicable `(id, category)` pairs for a modality in the built-in registry.
pub fn perturbations_for(modality: Modality) -> Vec<(String, Category)> {
    Registry::builtin().for_modality(modality)
}

/// Looks up a built-in perturbation and applies it.
pub fn apply_by_id(id: &str, img: &ImageBuffer, t: Intensity, seed: u64) -> Result<ImageBuffer> {
    if let Ok(kind) = BaseKind::from_str(id) {
        return apply_base(kind, img, t, seed);
    }
    if let Ok(kind) = MedicalKind::from_str(id) {
        return Ok(apply_medical(kind, img, t, seed));
    }
    Err(Error::UnknownPerturbation(id.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_29_unique_ids() {
        let reg = Registry::builtin();
        assert_eq!(reg.len(), 29);
        let mut ids: Vec<&str> = reg.iter().map(|p| p.id()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 29);
    }

    #[test]
    fn modality_lists() {
        let oct = perturbations_for(Modality::Oct);
        assert_eq!(oct.len(), 15);
        assert_eq!(oct[0].0, "gaussian_noise");
        let tail: Vec<&str> = oct[12..].iter().map(|p| p.0.as_str()).collect();
        assert_eq!(tail, ["oct_shadow", "oct_blink", "oct_defocus"]);
        assert!(oct[..12].iter().all(|p| p.1 == Category::Base));

        let path = perturbations_for(Modality::Pathology);
        assert_eq!(path.len(), 13);
        assert_eq!(path[12].0, "path_stain_shift");

        let derm = perturbations_for(Modality::Dermoscopy);
        assert_eq!(derm.len(), 13);
        assert_eq!(derm[12].0, "derm_light_reflection");

        assert_eq!(perturbations_for(Modality::Ct).len(), 15);
        assert_eq!(perturbations_for(Modality::XRay).len(), 15);
        let total_medical: usize = Modality::ALL
            .iter()
            .map(|m| perturbations_for(*m).len() - 12)
            .sum();
        assert_eq!(total_medical, 17);
    }

    #[test]
    fn intensity_validation() {
        assert!(Intensity::new(0.5).is_ok());
        assert!(Intensity::new(-0.01).is_err());
        assert!(Intensity::new(1.01).is_err());
        assert!(Intensity::new(f64::NAN).is_err());
    }

    #[test]
    fn unknown_id_is_an_error() {
        let img = ImageBuffer::filled(8, 8, 1, 0.5).unwrap();
        assert!(matches!(
            apply_by_id("lens_flare", &img, Intensity::MAX, 1),
            Err(Error::UnknownPerturbation(_))
        ));
        assert!(Registry::builtin().get("lens_flare").is_err());
    }
}
