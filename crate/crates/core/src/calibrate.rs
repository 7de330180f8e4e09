//! Severity calibration: bisection on the intensity knob until the SSIM
//! against the clean image falls inside a level's band, with a persistent
//! per-image cache.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, ImageBuffer};
use crate::manifest::DatasetManifest;
use crate::perturb::{Intensity, Perturbation, Registry};
use crate::rng::derive_seed;
use crate::ssim::ssim;

pub const DEFAULT_MAX_ITERATIONS: u32 = 30;
/// Images used to estimate the shared intensity in dataset-level mode.
pub const DATASET_LEVEL_SAMPLE: usize = 32;
pub const CACHE_VERSION: u32 = 1;

/// One of the five SSIM bands. Serialized as its level number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeverityLevel {
    level: u8,
    band_low: f64,
    band_high: f64,
}

const BANDS: [(f64, f64); 5] = [(0.90, 0.98), (0.80, 0.89), (0.70, 0.79), (0.60, 0.69), (0.50, 0.59)];

impl SeverityLevel {
    pub fn new(level: u8) -> Result<Self> {
        let (band_low, band_high) = *BANDS
            .get((level as usize).wrapping_sub(1))
            .ok_or(Error::InvalidLevel(level))?;
        Ok(Self { level, band_low, band_high })
    }

    pub fn all() -> Vec<SeverityLevel> {
        (1..=5).map(|l| Self::new(l).expect("levels 1..=5 are valid")).collect()
    }

    pub fn level(self) -> u8 {
        self.level
    }

    pub fn band_low(self) -> f64 {
        self.band_low
    }

    pub fn band_high(self) -> f64 {
        self.band_high
    }

    pub fn midpoint(self) -> f64 {
        0.5 * (self.band_low + self.band_high)
    }

    pub fn contains(self, s: f64) -> bool {
        (self.band_low..=self.band_high).contains(&s)
    }
}

impl fmt::Display for SeverityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.level)
    }
}

impl Eq for SeverityLevel {}

impl PartialOrd for SeverityLevel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SeverityLevel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.level.cmp(&other.level)
    }
}

impl Serialize for SeverityLevel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.level)
    }
}

impl<'de> Deserialize<'de> for SeverityLevel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let level = u8::deserialize(d)?;
        SeverityLevel::new(level).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub image_key: String,
    pub perturbation_id: String,
    pub level: SeverityLevel,
    pub t: Intensity,
    pub achieved_ssim: f64,
    pub converged: bool,
    pub iterations: u32,
    pub seed: u64,
}

impl CalibrationEntry {
    pub fn cache_key(&self) -> String {
        cache_key(&self.image_key, &self.perturbation_id, self.level, self.seed)
    }
}

pub fn cache_key(image_key: &str, perturbation_id: &str, level: SeverityLevel, seed: u64) -> String {
    format!("{image_key}|{perturbation_id}|{}|{seed}", level.level)
}

fn dataset_cache_key(image_key: &str, perturbation_id: &str, level: SeverityLevel, seed: u64) -> String {
    format!("{}|dataset", cache_key(image_key, perturbation_id, level, seed))
}

/// Result of [`search_band`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOutcome {
    pub t: f64,
    pub ssim: f64,
    pub converged: bool,
    pub iterations: u32,
}

/// Bisection on `[0, 1]` for a `t` with `ssim_at(t)` inside the band,
/// assuming `ssim_at` is non-increasing with `ssim_at(0) = 1`.
///
/// `t = 1` is probed first. If even that stays above the band the level is
/// unreachable and `t = 1` is returned unconverged. When the budget runs out
/// the probe closest to the band midpoint is returned unconverged.
pub fn search_band(
    level: SeverityLevel,
    max_iterations: u32,
    mut ssim_at: impl FnMut(f64) -> Result<f64>,
) -> Result<SearchOutcome> {
    if max_iterations == 0 {
        return Err(Error::InvalidIterationCap);
    }
    let s1 = ssim_at(1.0)?;
    let mut best = SearchOutcome {
        t: 1.0,
        ssim: s1,
        converged: level.contains(s1),
        iterations: 1,
    };
    if best.converged || s1 > level.band_high {
        return Ok(best);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut iterations = 1;
    while iterations < max_iterations {
        let mid = 0.5 * (lo + hi);
        let s = ssim_at(mid)?;
        iterations += 1;
        if level.contains(s) {
            return Ok(SearchOutcome {
                t: mid,
                ssim: s,
                converged: true,
                iterations,
            });
        }
        if (s - level.midpoint()).abs() < (best.ssim - level.midpoint()).abs() {
            best.t = mid;
            best.ssim = s;
        }
        if s > level.band_high {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best.iterations = iterations;
    Ok(best)
}

/// Calibrates one perturbation of one image at one level. The seed is held
/// fixed across probes so every `t` sees the same random realization.
pub fn calibrate_with(
    p: &dyn Perturbation,
    img: &ImageBuffer,
    level: SeverityLevel,
    seed: u64,
    max_iterations: u32,
) -> Result<CalibrationEntry> {
    let out = search_band(level, max_iterations, |t| {
        let perturbed = p.apply(img, Intensity::new(t)?, seed)?;
        ssim(img, &perturbed)
    })?;
    Ok(CalibrationEntry {
        image_key: img.content_hash(),
        perturbation_id: p.id().to_string(),
        level,
        t: Intensity::new(out.t)?,
        achieved_ssim: out.ssim,
        converged: out.converged,
        iterations: out.iterations,
        seed,
    })
}

/// [`calibrate_with`] for a perturbation of the built-in registry.
pub fn calibrate(
    img: &ImageBuffer,
    perturbation_id: &str,
    level: SeverityLevel,
    seed: u64,
    max_iterations: u32,
) -> Result<CalibrationEntry> {
    let registry = Registry::builtin();
    calibrate_with(registry.get(perturbation_id)?.as_ref(), img, level, seed, max_iterations)
}

/// A sample that could not be calibrated (e.g. unreadable image).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CalibrationFailure {
    pub dataset_id: String,
    pub sample_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct CacheDocument {
    version: u32,
    entries: BTreeMap<String, CalibrationEntry>,
    #[serde(default)]
    failures: Vec<CalibrationFailure>,
}

/// Key → entry map persisted as a single JSON document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationCache {
    doc: CacheDocument,
}

impl CalibrationCache {
    pub fn new() -> Self {
        Self {
            doc: CacheDocument {
                version: CACHE_VERSION,
                ..Default::default()
            },
        }
    }

    /// Loads `path`, or returns an empty cache if it does not exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::new()),
            Err(e) => return Err(Error::io(path, e)),
        };
        let doc: CacheDocument =
            serde_json::from_str(&text).map_err(|e| Error::Cache(format!("{}: {e}", path.display())))?;
        if doc.version != CACHE_VERSION {
            return Err(Error::Cache(format!(
                "{}: unsupported cache version {}",
                path.display(),
                doc.version
            )));
        }
        for (k, e) in &doc.entries {
            if !k.starts_with(&e.cache_key()) {
                return Err(Error::Cache(format!("{}: key `{k}` does not match its entry", path.display())));
            }
        }
        Ok(Self { doc })
    }

    /// Writes to a temporary file in the target directory, then renames.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut text = serde_json::to_string_pretty(&self.doc).map_err(|e| Error::json("calibration cache", e))?;
        text.push('\n');
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
        std::io::Write::write_all(&mut tmp, text.as_bytes()).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&CalibrationEntry> {
        self.doc.entries.get(key)
    }

    pub fn insert(&mut self, key: String, entry: CalibrationEntry) {
        self.doc.entries.insert(key, entry);
    }

    pub fn len(&self) -> usize {
        self.doc.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &CalibrationEntry)> {
        self.doc.entries.iter()
    }

    pub fn failures(&self) -> &[CalibrationFailure] {
        &self.doc.failures
    }

    fn record_failure(&mut self, f: CalibrationFailure) {
        if let Err(i) = self.doc.failures.binary_search(&f) {
            self.doc.failures.insert(i, f);
        }
    }

    fn clear_failure(&mut self, dataset_id: &str, sample_id: &str) {
        self.doc
            .failures
            .retain(|f| !(f.dataset_id == dataset_id && f.sample_id == sample_id));
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub master_seed: u64,
    pub max_iterations: u32,
    /// Restrict to these ids (intersected with the modality's set).
    pub perturbations: Option<Vec<String>>,
    /// Calibrate on a fixed subsample and apply the median `t` to all images.
    pub dataset_level: bool,
    pub registry: Registry,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            master_seed: 0,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            perturbations: None,
            dataset_level: false,
            registry: Registry::builtin(),
        }
    }
}

impl CalibrationOptions {
    /// Applicable perturbation ids for a modality after the filter.
    pub fn selected(&self, manifest: &DatasetManifest) -> Result<Vec<String>> {
        let all: Vec<String> = self
            .registry
            .for_modality(manifest.modality)
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        let Some(filter) = &self.perturbations else {
            return Ok(all);
        };
        for id in filter {
            self.registry.get(id)?;
        }
        let wanted: BTreeSet<&str> = filter.iter().map(String::as_str).collect();
        Ok(all.into_iter().filter(|id| wanted.contains(id.as_str())).collect())
    }
}

/// Counters from one [`calibrate_dataset`] run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationStats {
    pub computed: usize,
    pub reused: usize,
    pub failed_samples: usize,
    pub search_iterations: u64,
    /// level → (converged, total) over the entries touched by this run.
    pub per_level: BTreeMap<u8, (usize, usize)>,
}

impl CalibrationStats {
    pub fn total(&self) -> usize {
        self.computed + self.reused
    }

    pub fn converged(&self) -> usize {
        self.per_level.values().map(|v| v.0).sum()
    }

    fn tally(&mut self, e: &CalibrationEntry) {
        let slot = self.per_level.entry(e.level.level).or_default();
        slot.0 += e.converged as usize;
        slot.1 += 1;
    }
}

struct Job<'a> {
    sample_id: &'a str,
    image: &'a ImageBuffer,
    image_key: &'a str,
    perturbation_id: &'a str,
    level: SeverityLevel,
    seed: u64,
}

/// Loaded images in manifest order; unreadable samples are logged, recorded
/// as failures and skipped.
pub(crate) fn load_manifest_images(
    manifest: &DatasetManifest,
    cache: &mut CalibrationCache,
) -> (Vec<(String, ImageBuffer, String)>, usize) {
    let loaded: Vec<_> = manifest
        .samples
        .par_iter()
        .map(|s| (s.sample_id.clone(), load_image(manifest.image_path(s))))
        .collect();
    let mut ok = Vec::new();
    let mut failed = 0;
    for (sample_id, res) in loaded {
        match res {
            Ok(img) => {
                cache.clear_failure(&manifest.dataset_id, &sample_id);
                let key = img.content_hash();
                ok.push((sample_id, img, key));
            }
            Err(e) => {
                log::error!("{}/{sample_id}: {e}; skipping", manifest.dataset_id);
                failed += 1;
                cache.record_failure(CalibrationFailure {
                    dataset_id: manifest.dataset_id.clone(),
                    sample_id,
                    error: e.to_string(),
                });
            }
        }
    }
    (ok, failed)
}

/// Ensures an entry for every (readable image, selected perturbation,
/// level), reusing cached entries and persisting the cache atomically.
pub fn calibrate_dataset(
    manifest: &DatasetManifest,
    levels: &[SeverityLevel],
    cache_path: impl AsRef<Path>,
    opts: &CalibrationOptions,
) -> Result<(CalibrationCache, CalibrationStats)> {
    let cache_path = cache_path.as_ref();
    let mut cache = CalibrationCache::load(cache_path)?;
    let stats = calibrate_into(&mut cache, manifest, levels, opts)?;
    cache.save(cache_path)?;
    Ok((cache, stats))
}

/// In-memory variant of [`calibrate_dataset`].
pub fn calibrate_into(
    cache: &mut CalibrationCache,
    manifest: &DatasetManifest,
    levels: &[SeverityLevel],
    opts: &CalibrationOptions,
) -> Result<CalibrationStats> {
    if opts.max_iterations == 0 {
        return Err(Error::InvalidIterationCap);
    }
    let ids = opts.selected(manifest)?;
    let (images, failed) = load_manifest_images(manifest, cache);
    let mut stats = CalibrationStats {
        failed_samples: failed,
        ..Default::default()
    };
    let jobs: Vec<Job> = images
        .iter()
        .flat_map(|(sample_id, image, image_key)| {
            ids.iter().flat_map(move |pid| {
                levels.iter().map(move |&level| Job {
                    sample_id,
                    image,
                    image_key,
                    perturbation_id: pid,
                    level,
                    seed: derive_seed(opts.master_seed, &manifest.dataset_id, sample_id, pid, level.level),
                })
            })
        })
        .collect();

    let key_of = |j: &Job| {
        if opts.dataset_level {
            dataset_cache_key(j.image_key, j.perturbation_id, j.level, j.seed)
        } else {
            cache_key(j.image_key, j.perturbation_id, j.level, j.seed)
        }
    };
    let (hits, misses): (Vec<&Job>, Vec<&Job>) = jobs.iter().partition(|j| cache.get(&key_of(j)).is_some());
    for j in &hits {
        stats.reused += 1;
        stats.tally(cache.get(&key_of(j)).expect("partitioned as hit"));
    }

    let fresh: Vec<(String, CalibrationEntry)> = if opts.dataset_level {
        dataset_level_entries(&misses, manifest, opts)?
    } else {
        misses
            .par_iter()
            .map(|j| {
                let p = opts.registry.get(j.perturbation_id)?;
                calibrate_with(p.as_ref(), j.image, j.level, j.seed, opts.max_iterations).map(|e| (key_of(j), e))
            })
            .collect::<Result<_>>()?
    };
    for (key, e) in fresh {
        stats.computed += 1;
        stats.search_iterations += e.iterations as u64;
        stats.tally(&e);
        cache.insert(key, e);
    }
    log::info!(
        "{}: {} computed, {} reused, {}/{} converged",
        manifest.dataset_id,
        stats.computed,
        stats.reused,
        stats.converged(),
        stats.total()
    );
    Ok(stats)
}

/// Fixed subsample of sample ids used for dataset-level calibration.
fn reference_samples(manifest: &DatasetManifest, seed: u64) -> BTreeSet<String> {
    manifest
        .subsample(DATASET_LEVEL_SAMPLE, seed)
        .samples
        .into_iter()
        .map(|s| s.sample_id)
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Dataset-level mode: search on the reference subsample, then apply the
/// per-(perturbation, level) median `t` to each image. `iterations` counts
/// the single SSIM evaluation at the shared `t`.
fn dataset_level_entries(
    misses: &[&Job],
    manifest: &DatasetManifest,
    opts: &CalibrationOptions,
) -> Result<Vec<(String, CalibrationEntry)>> {
    let reference = reference_samples(manifest, opts.master_seed);
    let groups: BTreeSet<(&str, SeverityLevel)> = misses.iter().map(|j| (j.perturbation_id, j.level)).collect();
    let mut shared = BTreeMap::new();
    for (pid, level) in groups {
        let p = opts.registry.get(pid)?;
        let ref_jobs: Vec<&&Job> = misses
            .iter()
            .filter(|j| j.perturbation_id == pid && j.level == level && reference.contains(j.sample_id))
            .collect();
        // Reference images may all be cached already; fall back to the
        // misses themselves.
        let pool: Vec<&&Job> = if ref_jobs.is_empty() {
            misses
                .iter()
                .filter(|j| j.perturbation_id == pid && j.level == level)
                .take(DATASET_LEVEL_SAMPLE)
                .collect()
        } else {
            ref_jobs
        };
        let ts: Vec<f64> = pool
            .par_iter()
            .map(|j| calibrate_with(p.as_ref(), j.image, level, j.seed, opts.max_iterations).map(|e| e.t.value()))
            .collect::<Result<_>>()?;
        shared.insert((pid, level), median(ts));
    }
    misses
        .par_iter()
        .map(|j| {
            let p = opts.registry.get(j.perturbation_id)?;
            let t = Intensity::new(shared[&(j.perturbation_id, j.level)])?;
            let s = ssim(j.image, &p.apply(j.image, t, j.seed)?)?;
            let e = CalibrationEntry {
                image_key: j.image_key.to_string(),
                perturbation_id: j.perturbation_id.to_string(),
                level: j.level,
                t,
                achieved_ssim: s,
                converged: j.level.contains(s),
                iterations: 1,
                seed: j.seed,
            };
            Ok((dataset_cache_key(j.image_key, j.perturbation_id, j.level, j.seed), e))
        })
        .collect()
}

/// Looks up the entry for a work item, honouring the dataset-level suffix.
pub fn lookup<'a>(
    cache: &'a CalibrationCache,
    image_key: &str,
    perturbation_id: &str,
    level: SeverityLevel,
    seed: u64,
    dataset_level: bool,
) -> Option<&'a CalibrationEntry> {
    let key = if dataset_level {
        dataset_cache_key(image_key, perturbation_id, level, seed)
    } else {
        cache_key(image_key, perturbation_id, level, seed)
    };
    cache.get(&key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::{Category, Modality};
    use crate::probes::textured_probe;
    use std::sync::Arc;

    fn linear(t: f64) -> Result<f64> {
        Ok(1.0 - 0.5 * t)
    }

    struct Identity;

    impl Perturbation for Identity {
        fn id(&self) -> &str {
            "identity"
        }
        fn category(&self) -> Category {
            Category::Base
        }
        fn applies_to(&self, _: Modality) -> bool {
            true
        }
        fn apply(&self, img: &ImageBuffer, _: Intensity, _: u64) -> Result<ImageBuffer> {
            Ok(img.clone())
        }
    }

    #[test]
    fn bands_are_fixed_and_ordered() {
        let all = SeverityLevel::all();
        assert_eq!((all[0].band_low(), all[0].band_high()), (0.90, 0.98));
        assert_eq!((all[4].band_low(), all[4].band_high()), (0.50, 0.59));
        for w in all.windows(2) {
            assert!(w[0].band_low() > w[1].band_high());
        }
        assert!(SeverityLevel::new(0).is_err());
        assert!(SeverityLevel::new(6).is_err());
    }

    #[test]
    fn identity_stub_is_unreachable() {
        let img = textured_probe(32);
        let e = calibrate_with(&Identity, &img, SeverityLevel::new(1).unwrap(), 5, 30).unwrap();
        assert!(!e.converged);
        assert_eq!(e.t.value(), 1.0);
        assert_eq!(e.achieved_ssim, 1.0);
        assert_eq!(e.iterations, 1);
    }

    #[test]
    fn linear_stub_inverts() {
        let out = search_band(SeverityLevel::new(5).unwrap(), 30, linear).unwrap();
        assert!(out.converged);
        assert!((0.82..=1.0).contains(&out.t), "t = {}", out.t);
        assert!(out.iterations <= 30);
        for level in SeverityLevel::all() {
            let out = search_band(level, 30, linear).unwrap();
            assert!(out.converged && level.contains(out.ssim));
        }
    }

    #[test]
    fn budget_exhaustion_returns_best_so_far() {
        // A step function that jumps over the band.
        let step = |t: f64| Ok(if t < 0.3 { 0.95 } else { 0.4 });
        let out = search_band(SeverityLevel::new(3).unwrap(), 30, step).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 30);
        assert!(search_band(SeverityLevel::new(3).unwrap(), 0, step).is_err());
        let one = search_band(SeverityLevel::new(3).unwrap(), 1, step).unwrap();
        assert_eq!(one.iterations, 1);
    }

    #[test]
    fn gaussian_noise_level_three_on_probe() {
        let img = textured_probe(64);
        let e = calibrate(&img, "gaussian_noise", SeverityLevel::new(3).unwrap(), 11, 30).unwrap();
        assert!(e.converged, "{e:?}");
        assert!((0.70..=0.79).contains(&e.achieved_ssim));
        let again = ssim(&img, &crate::perturb::apply_by_id("gaussian_noise", &img, e.t, e.seed).unwrap()).unwrap();
        assert!((again - e.achieved_ssim).abs() < 1e-9);
    }

    #[test]
    fn unknown_perturbation_is_an_error() {
        let img = textured_probe(16);
        assert!(matches!(
            calibrate(&img, "nope", SeverityLevel::new(1).unwrap(), 0, 30),
            Err(Error::UnknownPerturbation(_))
        ));
    }

    fn oct_manifest(dir: &Path, n: usize) -> DatasetManifest {
        let mut m = DatasetManifest::new("oct", Modality::Oct, dir);
        for i in 0..n {
            let name = format!("s{i}.png");
            let img = crate::probes::probe_set(32).swap_remove(i).image;
            crate::image::save_image(&img, dir.join(&name)).unwrap();
            m.samples.push(crate::manifest::Sample::new(format!("s{i}"), name));
        }
        m
    }

    #[test]
    fn dataset_calibration_counts_and_reuse() {
        let dir = tempfile::tempdir().unwrap();
        let m = oct_manifest(dir.path(), 2);
        let cache_path = dir.path().join("cache.json");
        let opts = CalibrationOptions::default();
        let (cache, stats) = calibrate_dataset(&m, &SeverityLevel::all(), &cache_path, &opts).unwrap();
        assert_eq!(cache.len(), 150);
        assert_eq!((stats.computed, stats.reused), (150, 0));
        let first = std::fs::read(&cache_path).unwrap();
        let (_, again) = calibrate_dataset(&m, &SeverityLevel::all(), &cache_path, &opts).unwrap();
        assert_eq!((again.computed, again.reused, again.search_iterations), (0, 150, 0));
        assert_eq!(first, std::fs::read(&cache_path).unwrap());
        for (_, e) in cache.entries() {
            assert!(e.iterations <= DEFAULT_MAX_ITERATIONS);
            if e.converged {
                assert!(e.level.contains(e.achieved_ssim));
            }
        }
    }

    #[test]
    fn empty_and_unreadable_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::new("empty", Modality::Ct, dir.path());
        let path = dir.path().join("c.json");
        let (cache, _) = calibrate_dataset(&m, &SeverityLevel::all(), &path, &Default::default()).unwrap();
        assert!(cache.is_empty());
        m.samples.push(crate::manifest::Sample::new("gone", "gone.png"));
        let (cache, stats) = calibrate_dataset(&m, &SeverityLevel::all(), &path, &Default::default()).unwrap();
        assert_eq!((cache.len(), stats.failed_samples), (0, 1));
        assert_eq!(cache.failures()[0].sample_id, "gone");
        assert_eq!(CalibrationCache::load(&path).unwrap(), cache);
    }

    #[test]
    fn dataset_level_mode_shares_t() {
        let dir = tempfile::tempdir().unwrap();
        let m = oct_manifest(dir.path(), 3);
        let opts = CalibrationOptions {
            dataset_level: true,
            perturbations: Some(vec!["gaussian_noise".into()]),
            ..Default::default()
        };
        let mut cache = CalibrationCache::new();
        let levels = [SeverityLevel::new(2).unwrap()];
        let stats = calibrate_into(&mut cache, &m, &levels, &opts).unwrap();
        assert_eq!(stats.computed, 3);
        let ts: BTreeSet<u64> = cache.entries().map(|(_, e)| e.t.value().to_bits()).collect();
        assert_eq!(ts.len(), 1);
        assert!(cache.entries().all(|(k, _)| k.ends_with("|dataset")));
    }

    #[test]
    fn registry_override_is_used() {
        let dir = tempfile::tempdir().unwrap();
        let m = oct_manifest(dir.path(), 1);
        let mut registry = Registry::empty();
        registry.register(Arc::new(Identity));
        let opts = CalibrationOptions { registry, ..Default::default() };
        let mut cache = CalibrationCache::new();
        calibrate_into(&mut cache, &m, &[SeverityLevel::new(1).unwrap()], &opts).unwrap();
        let (_, e) = cache.entries().next().unwrap();
        assert_eq!((e.perturbation_id.as_str(), e.converged), ("identity", false));
    }

    #[test]
    fn corrupt_cache_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(CalibrationCache::load(&path), Err(Error::Cache(_))));
    }
}
