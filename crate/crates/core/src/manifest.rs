//! Dataset manifests: one dataset, one modality, a list of samples with
//! optional ground truth.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{BoundingBox, CaptionField};
use crate::perturb::Modality;
use crate::rng::{derive_seed, SeededStream, PARAMS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_letter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<CaptionField>,
}

impl Sample {
    pub fn new(sample_id: impl Into<String>, image_path: impl Into<PathBuf>) -> Self {
        Self {
            sample_id: sample_id.into(),
            image_path: image_path.into(),
            mask: None,
            bbox: None,
            question: None,
            answer: None,
            answer_letter: None,
            caption: None,
        }
    }
}

/// Relative paths inside a manifest resolve against `base_dir`, which is the
/// directory holding the manifest file when loaded from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub modality: Modality,
    pub samples: Vec<Sample>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn valid_id(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl DatasetManifest {
    pub fn new(dataset_id: impl Into<String>, modality: Modality, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            modality,
            samples: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    /// Parses a manifest file. Structural problems are validation errors;
    /// path resolution is checked separately by [`DatasetManifest::validate`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match Error::io(path, e) {
            Error::FileNotFound(p) => Error::Validation(format!("manifest file not found: {}", p.display())),
            other => other,
        })?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json("manifest", e))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn image_path(&self, sample: &Sample) -> PathBuf {
        self.resolve(&sample.image_path)
    }

    pub fn sample(&self, sample_id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    /// Checks identifier syntax, id uniqueness and that every referenced
    /// file exists. Ids become path components, hence the restricted
    /// alphabet.
    pub fn validate(&self) -> Result<()> {
        if !valid_id(&self.dataset_id) {
            return Err(Error::Validation(format!("invalid dataset_id `{}`", self.dataset_id)));
        }
        let mut seen = BTreeSet::new();
        for s in &self.samples {
            if !valid_id(&s.sample_id) {
                return Err(Error::Validation(format!("invalid sample_id `{}`", s.sample_id)));
            }
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::DuplicateSample(s.sample_id.clone()));
            }
            for p in std::iter::once(&s.image_path).chain(s.mask.as_ref()) {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::Validation(format!(
                        "sample `{}`: file not found: {}",
                        s.sample_id,
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Seeded uniform subsample of `n` samples, kept in manifest order.
    pub fn subsample(&self, n: usize, seed: u64) -> DatasetManifest {
        let mut out = self.clone();
        if n >= self.samples.len() {
            return out;
        }
        let mut rng = SeededStream::new(derive_seed(seed, &self.dataset_id, "", "subsample", 0), PARAMS);
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        // Partial Fisher-Yates.
        for i in 0..n {
            let j = i + ((rng.uniform() * (idx.len() - i) as f64) as usize).min(idx.len() - i - 1);
            idx.swap(i, j);
        }
        let mut keep = idx[..n].to_vec();
        keep.sort_unstable();
        out.samples = keep.into_iter().map(|i| self.samples[i].clone()).collect();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path) {
        crate::image::save_image(&crate::probes::textured_probe(16), path).unwrap();
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("a.png"));
        let json = r#"{"dataset_id":"demo","modality":"OCT","samples":[{"sample_id":"a","image_path":"a.png","box":[1,1,4,4]}]}"#;
        std::fs::write(dir.path().join("m.json"), json).unwrap();
        let m = DatasetManifest::load(dir.path().join("m.json")).unwrap();
        assert_eq!(m.modality, Modality::Oct);
        m.validate().unwrap();
        assert_eq!(m.image_path(&m.samples[0]), dir.path().join("a.png"));
    }

    #[test]
    fn validation_failures() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("a.png"));
        let mut m = DatasetManifest::new("demo", Modality::Ct, dir.path());
        m.samples.push(Sample::new("a", "a.png"));
        m.validate().unwrap();
        m.samples.push(Sample::new("a", "a.png"));
        assert!(matches!(m.validate(), Err(Error::DuplicateSample(_))));
        m.samples[1] = Sample::new("b", "missing.png");
        assert!(m.validate().unwrap_err().is_validation());
        m.samples[1] = Sample::new("../b", "a.png");
        assert!(m.validate().is_err());
        let missing = DatasetManifest::load(dir.path().join("nope.json")).unwrap_err();
        assert!(missing.is_validation() && missing.to_string().contains("file not found"));
    }

    #[test]
    fn subsample_is_seeded_and_ordered() {
        let mut m = DatasetManifest::new("demo", Modality::Ct, "");
        m.samples = (0..50).map(|i| Sample::new(format!("s{i:02}"), "x.png")).collect();
        let a = m.subsample(10, 3);
        assert_eq!(a, m.subsample(10, 3));
        assert_eq!(a.samples.len(), 10);
        assert!(a.samples.windows(2).all(|w| w[0].sample_id < w[1].sample_id));
        assert_ne!(a, m.subsample(10, 4));
    }
}
