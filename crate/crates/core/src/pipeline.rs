//! Run orchestration: calibrate, perturb (with ground-truth co-transform and
//! a ledger), score prediction files and build reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{write_metric_records, MetricRecord, RecordCategory, ReportOptions, RobustnessReport, CLEAN};
use crate::calibrate::{
    calibrate_into, lookup, CalibrationCache, CalibrationOptions, CalibrationStats, SeverityLevel,
    DEFAULT_MAX_ITERATIONS,
};
use crate::error::{Error, Result};
use crate::image::{save_image, ImageBuffer};
use crate::manifest::{DatasetManifest, Sample};
use crate::metrics::{
    bleu, cider, grounding_accuracy, load_mask, mask_dice, mask_iou, read_records, rouge_l, save_mask, vqa_accuracy,
    write_records, JoinStats, Payload, SegmentationMask, Task, TaskRecord,
};
use crate::perturb::{Category, Registry};
use crate::rng::derive_seed;

pub const LEDGER_FILE: &str = "ledger.csv";
pub const GT_DIR: &str = "gt";
pub const GT_FILE: &str = "ground_truth.jsonl";
/// Grounding threshold: a box is correct at IoU ≥ 0.5.
pub const GROUNDING_IOU: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub master_seed: u64,
    pub levels: Vec<SeverityLevel>,
    pub perturbations: Option<Vec<String>>,
    /// Worker threads; `None` uses the rayon default.
    pub workers: Option<usize>,
    pub cache_path: PathBuf,
    pub out_dir: PathBuf,
    pub include_unconverged: bool,
    pub dataset_level: bool,
    /// Warp masks and boxes alongside geometric perturbations.
    pub co_transform: bool,
    pub max_iterations: u32,
    pub registry: Registry,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            levels: SeverityLevel::all(),
            perturbations: None,
            workers: None,
            cache_path: PathBuf::from("calibration.json"),
            out_dir: PathBuf::from("out"),
            include_unconverged: true,
            dataset_level: false,
            co_transform: true,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            registry: Registry::builtin(),
        }
    }
}

impl RunConfig {
    fn calibration_options(&self) -> CalibrationOptions {
        CalibrationOptions {
            master_seed: self.master_seed,
            max_iterations: self.max_iterations,
            perturbations: self.perturbations.clone(),
            dataset_level: self.dataset_level,
            registry: self.registry.clone(),
        }
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.workers {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::Validation(format!("worker pool: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }
}

/// Loads and validates manifests, and checks the perturbation filter
/// against them.
pub fn load_manifests(paths: &[PathBuf], config: &RunConfig) -> Result<Vec<DatasetManifest>> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for p in paths {
        let m = DatasetManifest::load(p)?;
        m.validate()?;
        if !ids.insert(m.dataset_id.clone()) {
            return Err(Error::Validation(format!("dataset_id `{}` appears in two manifests", m.dataset_id)));
        }
        out.push(m);
    }
    check_filter(&out, config)?;
    Ok(out)
}

fn check_filter(manifests: &[DatasetManifest], config: &RunConfig) -> Result<()> {
    let Some(filter) = &config.perturbations else {
        return Ok(());
    };
    for id in filter {
        let p = config.registry.get(id)?;
        if !manifests.is_empty() && !manifests.iter().any(|m| p.applies_to(m.modality)) {
            let mods: Vec<&str> = manifests.iter().map(|m| m.modality.as_str()).collect();
            return Err(Error::ModalityMismatch {
                kind: id.clone(),
                modality: mods.join(", "),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrateSummary {
    pub entries: usize,
    pub stats: CalibrationStats,
}

impl fmt::Display for CalibrateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.stats;
        write!(f, "{} entries: {} computed, {} reused", s.total(), s.computed, s.reused)?;
        if s.total() > 0 {
            write!(f, "; {:.1}% converged", 100.0 * s.converged() as f64 / s.total() as f64)?;
        }
        writeln!(f)?;
        for (level, (c, n)) in &s.per_level {
            writeln!(f, "  level {level}: {c}/{n} converged")?;
        }
        if s.failed_samples > 0 {
            writeln!(f, "  {} samples failed to load", s.failed_samples)?;
        }
        Ok(())
    }
}

fn merge_stats(into: &mut CalibrationStats, s: CalibrationStats) {
    into.computed += s.computed;
    into.reused += s.reused;
    into.failed_samples += s.failed_samples;
    into.search_iterations += s.search_iterations;
    for (l, (c, n)) in s.per_level {
        let e = into.per_level.entry(l).or_default();
        e.0 += c;
        e.1 += n;
    }
}

fn calibrate_all(manifests: &[DatasetManifest], config: &RunConfig) -> Result<(CalibrationCache, CalibrationStats)> {
    let mut cache = CalibrationCache::load(&config.cache_path)?;
    let opts = config.calibration_options();
    let mut stats = CalibrationStats::default();
    for m in manifests {
        let s = config.in_pool(|| calibrate_into(&mut cache, m, &config.levels, &opts))??;
        merge_stats(&mut stats, s);
    }
    cache.save(&config.cache_path)?;
    Ok((cache, stats))
}

pub fn cmd_calibrate(manifests: &[DatasetManifest], config: &RunConfig) -> Result<CalibrateSummary> {
    let (cache, stats) = calibrate_all(manifests, config)?;
    Ok(CalibrateSummary {
        entries: cache.len(),
        stats,
    })
}

/// One row of `ledger.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub dataset_id: String,
    pub sample_id: String,
    pub perturbation_id: String,
    pub category: Category,
    pub level: u8,
    pub t: f64,
    pub achieved_ssim: f64,
    pub converged: bool,
    pub seed: u64,
    pub output_path: String,
}

pub fn read_ledger(path: impl AsRef<Path>) -> Result<Vec<LedgerRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn write_ledger(path: &Path, rows: &[LedgerRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerturbSummary {
    pub images: usize,
    pub unconverged: usize,
    pub calibrated_on_the_fly: usize,
    pub co_transformed: usize,
}

impl fmt::Display for PerturbSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} images written ({} from unconverged calibrations, {} calibrated on the fly, {} with co-transformed ground truth)",
            self.images, self.unconverged, self.calibrated_on_the_fly, self.co_transformed
        )
    }
}

fn rel(parts: &[&str]) -> String {
    parts.join("/")
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Clean ground-truth records for a sample, one per annotated task. Mask
/// paths are relative to the dataset's `gt/` directory.
fn clean_gt(sample: &Sample) -> Vec<TaskRecord> {
    let mut out = Vec::new();
    if sample.mask.is_some() {
        let mut r = TaskRecord::new(&sample.sample_id, Task::Segmentation);
        r.mask = Some(rel(&[CLEAN, &format!("{}.png", sample.sample_id)]));
        out.push(r);
    }
    if sample.bbox.is_some() {
        let mut r = TaskRecord::new(&sample.sample_id, Task::Grounding);
        r.bbox = sample.bbox;
        out.push(r);
    }
    if sample.answer.is_some() || sample.answer_letter.is_some() {
        let mut r = TaskRecord::new(&sample.sample_id, Task::Vqa);
        r.answer = sample.answer.clone();
        r.answer_letter = sample.answer_letter.clone();
        out.push(r);
    }
    if let Some(c) = &sample.caption {
        let mut r = TaskRecord::new(&sample.sample_id, Task::Captioning);
        r.caption = Some(c.clone());
        out.push(r);
    }
    out
}

struct WorkItem<'a> {
    manifest: &'a DatasetManifest,
    sample: &'a Sample,
    image: &'a ImageBuffer,
    image_key: &'a str,
    mask: Option<&'a SegmentationMask>,
    perturbation_id: &'a str,
    level: SeverityLevel,
}

struct WorkOutput {
    row: LedgerRow,
    gt: Vec<TaskRecord>,
}

fn process(item: &WorkItem, cache: &CalibrationCache, config: &RunConfig) -> Result<WorkOutput> {
    let m = item.manifest;
    let pid = item.perturbation_id;
    let level = item.level;
    let seed = derive_seed(config.master_seed, &m.dataset_id, &item.sample.sample_id, pid, level.level());
    let entry = lookup(cache, item.image_key, pid, level, seed, config.dataset_level)
        .ok_or_else(|| Error::Cache(format!("no entry for {}/{} {pid} L{}", m.dataset_id, item.sample.sample_id, level)))?;
    let p = config.registry.get(pid)?;
    let out = p.apply(item.image, entry.t, seed)?;
    let level_dir = level.level().to_string();
    let file = format!("{}.png", item.sample.sample_id);
    let rel_path = rel(&[&m.dataset_id, pid, &level_dir, &file]);
    let path = config.out_dir.join(&rel_path);
    ensure_parent(&path)?;
    save_image(&out, &path)?;

    let mut gt = Vec::new();
    if config.co_transform {
        let (w, h) = item.image.dims();
        if let Some(tf) = p.geometry(w, h, entry.t, seed) {
            let sid = &item.sample.sample_id;
            if let Some(mask) = item.mask {
                let mask_rel = rel(&[pid, &level_dir, &file]);
                let mask_path = config.out_dir.join(GT_DIR).join(&m.dataset_id).join(&mask_rel);
                ensure_parent(&mask_path)?;
                save_mask(&tf.warp_mask(mask), &mask_path)?;
                let mut r = TaskRecord::new(sid, Task::Segmentation);
                r.perturbation_id = Some(pid.to_string());
                r.level = Some(level.level());
                r.mask = Some(mask_rel);
                gt.push(r);
            }
            if let Some(bx) = &item.sample.bbox {
                let mut r = TaskRecord::new(sid, Task::Grounding);
                r.perturbation_id = Some(pid.to_string());
                r.level = Some(level.level());
                // Absent box: the object left the frame; scoring skips it.
                r.bbox = tf.warp_box(bx, w, h);
                gt.push(r);
            }
        }
    }
    Ok(WorkOutput {
        row: LedgerRow {
            dataset_id: m.dataset_id.clone(),
            sample_id: item.sample.sample_id.clone(),
            perturbation_id: pid.to_string(),
            category: p.category(),
            level: level.level(),
            t: entry.t.value(),
            achieved_ssim: entry.achieved_ssim,
            converged: entry.converged,
            seed,
            output_path: rel_path,
        },
        gt,
    })
}

/// Writes every perturbed image, `ledger.csv` and the `gt/` tree. Missing
/// calibration entries are computed first and saved to the cache.
pub fn cmd_perturb(manifests: &[DatasetManifest], config: &RunConfig) -> Result<PerturbSummary> {
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let (mut cache, stats) = calibrate_all(manifests, config)?;
    let mut summary = PerturbSummary {
        calibrated_on_the_fly: stats.computed,
        ..Default::default()
    };
    let opts = config.calibration_options();
    let mut rows = Vec::new();
    for m in manifests {
        let ids = opts.selected(m)?;
        let (images, _) = crate::calibrate::load_manifest_images(m, &mut cache);
        let by_id: BTreeMap<&str, (&ImageBuffer, &str)> = images
            .iter()
            .map(|(sid, img, key)| (sid.as_str(), (img, key.as_str())))
            .collect();

        let gt_root = config.out_dir.join(GT_DIR).join(&m.dataset_id);
        let mut masks: BTreeMap<&str, SegmentationMask> = BTreeMap::new();
        let mut gt_records = Vec::new();
        for s in &m.samples {
            let Some(&(img, _)) = by_id.get(s.sample_id.as_str()) else {
                continue;
            };
            if let Some(mp) = &s.mask {
                let mask = load_mask(m.resolve(mp))?;
                if (mask.width(), mask.height()) != img.dims() {
                    return Err(Error::Validation(format!(
                        "{}/{}: mask is {}×{} but image is {}×{}",
                        m.dataset_id,
                        s.sample_id,
                        mask.width(),
                        mask.height(),
                        img.width(),
                        img.height()
                    )));
                }
                let path = gt_root.join(CLEAN).join(format!("{}.png", s.sample_id));
                ensure_parent(&path)?;
                save_mask(&mask, &path)?;
                masks.insert(&s.sample_id, mask);
            }
            gt_records.extend(clean_gt(s));
        }

        let items: Vec<WorkItem> = m
            .samples
            .iter()
            .filter_map(|s| by_id.get(s.sample_id.as_str()).map(|v| (s, v)))
            .flat_map(|(s, &(image, image_key))| {
                let mask = masks.get(s.sample_id.as_str());
                ids.iter().flat_map(move |pid| {
                    config.levels.iter().map(move |&level| WorkItem {
                        manifest: m,
                        sample: s,
                        image,
                        image_key,
                        mask,
                        perturbation_id: pid,
                        level,
                    })
                })
            })
            .collect();
        let outputs: Vec<WorkOutput> =
            config.in_pool(|| items.par_iter().map(|it| process(it, &cache, config)).collect::<Result<_>>())??;
        for o in outputs {
            summary.images += 1;
            summary.unconverged += !o.row.converged as usize;
            summary.co_transformed += !o.gt.is_empty() as usize;
            gt_records.extend(o.gt);
            rows.push(o.row);
        }
        if !gt_records.is_empty() {
            gt_records.sort_by(|a, b| {
                (a.condition(), &a.sample_id, a.task).cmp(&(b.condition(), &b.sample_id, b.task))
            });
            std::fs::create_dir_all(&gt_root).map_err(|e| Error::io(&gt_root, e))?;
            write_records(gt_root.join(GT_FILE), &gt_records)?;
        }
    }
    rows.sort_by(|a, b| {
        (&a.dataset_id, &a.sample_id, &a.perturbation_id, a.level).cmp(&(
            &b.dataset_id,
            &b.sample_id,
            &b.perturbation_id,
            b.level,
        ))
    });
    write_ledger(&config.out_dir.join(LEDGER_FILE), &rows)?;
    Ok(summary)
}

/// Inputs for [`cmd_score`].
#[derive(Debug, Clone)]
pub struct ScoreRequest {
    pub predictions: PathBuf,
    pub ground_truth: PathBuf,
    pub task: Task,
    pub model: String,
    pub strategy: String,
    pub dataset: String,
    /// Ledger used to mark conditions whose calibration did not converge.
    pub ledger: Option<PathBuf>,
    pub registry: Registry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutcome {
    pub records: Vec<MetricRecord>,
    /// Join counts per condition `(perturbation_id, level)`.
    pub joins: BTreeMap<(String, u8), JoinStats>,
}

impl fmt::Display for ScoreOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} metric records", self.records.len())?;
        for ((pid, level), j) in &self.joins {
            if j.missing > 0 || j.unmatched > 0 {
                writeln!(
                    f,
                    "  {pid} L{level}: {} matched, {} missing predictions, {} unmatched predictions",
                    j.matched, j.missing, j.unmatched
                )?;
            }
        }
        Ok(())
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn segmentation_scores(
    preds: &[TaskRecord],
    gts: &[TaskRecord],
    pred_dir: &Path,
    gt_dir: &Path,
) -> Result<([f64; 2], JoinStats)> {
    let pred_map = unique_ids(preds)?;
    let gt_map = unique_ids(gts)?;
    let mut join = JoinStats::default();
    let (mut iou, mut dice) = (Vec::new(), Vec::new());
    for (id, g) in &gt_map {
        let Payload::Mask(gp) = g.payload()? else { unreachable!("segmentation payload") };
        let gm = load_mask(gt_dir.join(gp))?;
        let pm = match pred_map.get(id) {
            Some(p) => {
                join.matched += 1;
                let Payload::Mask(pp) = p.payload()? else { unreachable!("segmentation payload") };
                load_mask(pred_dir.join(pp))?
            }
            None => {
                join.missing += 1;
                SegmentationMask::empty(gm.width(), gm.height())
            }
        };
        iou.push(mask_iou(&pm, &gm)?);
        dice.push(mask_dice(&pm, &gm)?);
    }
    join.unmatched = pred_map.keys().filter(|k| !gt_map.contains_key(*k)).count();
    if gt_map.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(([mean(iou), mean(dice)], join))
}

fn unique_ids(records: &[TaskRecord]) -> Result<BTreeMap<&str, &TaskRecord>> {
    let mut map = BTreeMap::new();
    for r in records {
        if map.insert(r.sample_id.as_str(), r).is_some() {
            return Err(Error::DuplicateSample(r.sample_id.clone()));
        }
    }
    Ok(map)
}

fn caption_scores(preds: &[TaskRecord], gts: &[TaskRecord]) -> Result<([f64; 3], JoinStats)> {
    let pred_map = unique_ids(preds)?;
    let gt_map = unique_ids(gts)?;
    let mut join = JoinStats::default();
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    for (id, g) in &gt_map {
        let Payload::Caption(r) = g.payload()? else { unreachable!("caption payload") };
        let c = match pred_map.get(id) {
            Some(p) => {
                join.matched += 1;
                let Payload::Caption(c) = p.payload()? else { unreachable!("caption payload") };
                c.into_iter().next().unwrap_or_default()
            }
            None => {
                join.missing += 1;
                String::new()
            }
        };
        cands.push(c);
        refs.push(r);
    }
    join.unmatched = pred_map.keys().filter(|k| !gt_map.contains_key(*k)).count();
    if gt_map.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let c = cider(&cands, &refs, &refs)?;
    Ok(([bleu(&cands, &refs, 4)?, rouge_l(&cands, &refs)?, c.score], join))
}

/// Scores a predictions file against ground truth, one metric record per
/// condition and metric. Ground-truth records tagged with a condition
/// replace the clean annotation for that condition.
pub fn cmd_score(req: &ScoreRequest) -> Result<ScoreOutcome> {
    let preds: Vec<TaskRecord> = read_records(&req.predictions)?
        .into_iter()
        .filter(|r| r.task == req.task)
        .collect();
    let gts: Vec<TaskRecord> = read_records(&req.ground_truth)?
        .into_iter()
        .filter(|r| r.task == req.task)
        .collect();
    let pred_dir = base_dir(&req.predictions);
    let gt_dir = base_dir(&req.ground_truth);

    let mut by_condition: BTreeMap<(String, u8), Vec<TaskRecord>> = BTreeMap::new();
    for p in preds {
        by_condition.entry(p.condition()).or_default().push(p);
    }
    let clean_key = (CLEAN.to_string(), 0u8);
    if !by_condition.contains_key(&clean_key) {
        return Err(Error::MissingBaseline(format!(
            "{}: no clean-condition predictions",
            req.predictions.display()
        )));
    }
    let clean_gt: Vec<&TaskRecord> = gts.iter().filter(|g| g.condition() == clean_key).collect();
    if clean_gt.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no clean {} ground truth",
            req.ground_truth.display(),
            req.task
        )));
    }

    let convergence: BTreeMap<(String, u8), bool> = match &req.ledger {
        None => BTreeMap::new(),
        Some(path) => {
            let mut m: BTreeMap<(String, u8), bool> = BTreeMap::new();
            for row in read_ledger(path)?.into_iter().filter(|r| r.dataset_id == req.dataset) {
                let e = m.entry((row.perturbation_id, row.level)).or_insert(true);
                *e &= row.converged;
            }
            m
        }
    };

    let mut records = Vec::new();
    let mut joins = BTreeMap::new();
    for (cond, preds) in &by_condition {
        let category = if cond.0 == CLEAN {
            RecordCategory::Clean
        } else {
            req.registry.category_of(&cond.0)?.into()
        };
        // Clean annotations, overridden per sample by condition-specific ones.
        let mut gt_map: BTreeMap<&str, &TaskRecord> =
            clean_gt.iter().map(|g| (g.sample_id.as_str(), *g)).collect();
        if cond.0 != CLEAN {
            for g in gts.iter().filter(|g| &g.condition() == cond) {
                gt_map.insert(&g.sample_id, g);
            }
        }
        let mut skipped = 0;
        let gt_set: Vec<TaskRecord> = gt_map
            .into_values()
            .filter(|g| {
                let ok = g.payload().is_ok();
                skipped += !ok as usize;
                ok
            })
            .cloned()
            .collect();
        if skipped > 0 {
            log::warn!("{} L{}: {skipped} samples have no annotation in frame; skipped", cond.0, cond.1);
        }
        let (values, join): (Vec<(&str, f64)>, JoinStats) = match req.task {
            Task::Segmentation => {
                let ([iou, dice], j) = segmentation_scores(preds, &gt_set, &pred_dir, &gt_dir)?;
                (vec![("iou", iou), ("dice", dice)], j)
            }
            Task::Vqa => {
                let s = vqa_accuracy(preds, &gt_set)?;
                (vec![("accuracy", s.value)], s.join)
            }
            Task::Grounding => {
                let s = grounding_accuracy(preds, &gt_set, GROUNDING_IOU)?;
                (vec![("acc_iou50", s.value)], s.join)
            }
            Task::Captioning => {
                let ([b, r, c], j) = caption_scores(preds, &gt_set)?;
                (vec![("bleu4", b), ("rouge_l", r), ("cider", c)], j)
            }
        };
        if join.missing > 0 {
            log::warn!(
                "{} L{}: {} of {} samples have no prediction; counted as incorrect",
                cond.0,
                cond.1,
                join.missing,
                join.missing + join.matched
            );
        }
        for (name, value) in values {
            records.push(MetricRecord {
                model: req.model.clone(),
                strategy: req.strategy.clone(),
                dataset: req.dataset.clone(),
                task: req.task.to_string(),
                perturbation_id: cond.0.clone(),
                category,
                level: cond.1,
                value,
                metric_name: name.to_string(),
                converged: convergence.get(cond).copied(),
            });
        }
        joins.insert(cond.clone(), join);
    }
    Ok(ScoreOutcome { records, joins })
}

/// Scores and writes the metric records as JSONL.
pub fn score_to_file(req: &ScoreRequest, out: impl AsRef<Path>) -> Result<ScoreOutcome> {
    let outcome = cmd_score(req)?;
    let out = out.as_ref();
    ensure_parent(out)?;
    write_metric_records(out, &outcome.records)?;
    Ok(outcome)
}

/// Builds the report from metric-record files and writes `table1.csv`,
/// `delta_grid.csv` and `report.json` into `out_dir`.
pub fn cmd_report(records: &[PathBuf], out_dir: &Path, options: ReportOptions) -> Result<RobustnessReport> {
    let mut all = Vec::new();
    for p in records {
        all.extend(crate::aggregate::read_metric_records(p)?);
    }
    let report = RobustnessReport::build(&all, options)?;
    report.write(out_dir)?;
    let grid = out_dir.join("delta_grid.csv");
    std::fs::write(&grid, delta_grid_csv(&report)?).map_err(|e| Error::io(&grid, e))?;
    Ok(report)
}

/// Long-form Δ grid: one line per (row, category, level) with the unrounded
/// mean drop; absent cells are left empty.
pub fn delta_grid_csv(report: &RobustnessReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "strategy", "task", "metric", "category", "level", "mean_drop"])?;
    for row in &report.rows {
        for (cat, cells) in [("base", &row.grid.base), ("med_specific", &row.grid.med_specific)] {
            for (i, v) in cells.iter().enumerate() {
                w.write_record([
                    row.model.as_str(),
                    &row.strategy,
                    &row.task,
                    &row.metric_name,
                    cat,
                    &(i + 1).to_string(),
                    &v.map(|x| x.to_string()).unwrap_or_default(),
                ])?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Cache(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::BoundingBox;
    use crate::perturb::Modality;
    use crate::probes::{disk_mask, probe_set};

    fn fixture(dir: &Path, n: usize, modality: Modality) -> DatasetManifest {
        let mut m = DatasetManifest::new("demo", modality, dir);
        for (i, probe) in probe_set(32).into_iter().take(n).enumerate() {
            let sid = format!("s{i}");
            save_image(&probe.image, dir.join(format!("{sid}.png"))).unwrap();
            save_mask(&disk_mask(32, 32, 16.0, 16.0, 6.0 + i as f64), dir.join(format!("{sid}_mask.png"))).unwrap();
            let mut s = Sample::new(&sid, format!("{sid}.png"));
            s.mask = Some(format!("{sid}_mask.png").into());
            s.bbox = Some(BoundingBox::new(8.0, 8.0, 20.0, 22.0).unwrap());
            m.samples.push(s);
        }
        m
    }

    fn config(dir: &Path, out: &str) -> RunConfig {
        RunConfig {
            master_seed: 9,
            cache_path: dir.join("cache.json"),
            out_dir: dir.join(out),
            ..Default::default()
        }
    }

    fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn counts_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), 1, Modality::Ct);
        let mut cfg = config(dir.path(), "a");
        let mut ids: Vec<String> = crate::perturb::BaseKind::ALL.iter().map(|k| k.as_str().to_string()).collect();
        ids.push("ct_beam_hardening".into());
        cfg.perturbations = Some(ids);
        let summary = cmd_perturb(std::slice::from_ref(&m), &cfg).unwrap();
        assert_eq!(summary.images, 65);
        assert_eq!(summary.co_transformed, 15);
        let ledger = read_ledger(cfg.out_dir.join(LEDGER_FILE)).unwrap();
        assert_eq!(ledger.len(), 65);
        for row in &ledger {
            assert!(cfg.out_dir.join(&row.output_path).is_file());
        }

        let mut cfg_b = cfg.clone();
        cfg_b.out_dir = dir.path().join("b");
        cfg_b.workers = Some(3);
        let again = cmd_perturb(std::slice::from_ref(&m), &cfg_b).unwrap();
        assert_eq!(again.calibrated_on_the_fly, 0);
        assert_eq!(tree(&cfg.out_dir), tree(&cfg_b.out_dir));
    }

    #[test]
    fn rotation_keeps_mask_aligned() {
        let dir = tempfile::tempdir().unwrap();
        let disk = disk_mask(48, 48, 20.0, 26.0, 10.0);
        let img = disk.to_image().map_samples(|_, _, _, v| 0.2 + 0.6 * v);
        save_image(&img, dir.path().join("d.png")).unwrap();
        save_mask(&disk, dir.path().join("d_mask.png")).unwrap();
        let mut m = DatasetManifest::new("disk", Modality::Mri, dir.path());
        let mut s = Sample::new("d", "d.png");
        s.mask = Some("d_mask.png".into());
        m.samples.push(s);
        let mut cfg = config(dir.path(), "out");
        cfg.perturbations = Some(vec!["rotation".into()]);
        cmd_perturb(&[m], &cfg).unwrap();
        let registry = Registry::builtin();
        for row in read_ledger(cfg.out_dir.join(LEDGER_FILE)).unwrap() {
            let rotated = crate::image::load_image(cfg.out_dir.join(&row.output_path)).unwrap();
            let from_image = SegmentationMask::new(48, 48, rotated.data().iter().map(|v| *v > 0.5).collect()).unwrap();
            let gt_path = cfg.out_dir.join(GT_DIR).join("disk").join("rotation").join(row.level.to_string()).join("d.png");
            let gt = load_mask(&gt_path).unwrap();
            assert!(mask_iou(&from_image, &gt).unwrap() > 0.9, "level {}", row.level);
            let tf = registry
                .get("rotation")
                .unwrap()
                .geometry(48, 48, crate::perturb::Intensity::new(row.t).unwrap(), row.seed)
                .unwrap();
            assert_eq!(mask_iou(&gt, &tf.warp_mask(&disk)).unwrap(), 1.0);
        }
    }

    #[test]
    fn calibrate_summary_and_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let empty = DatasetManifest::new("none", Modality::Oct, dir.path());
        let cfg = config(dir.path(), "out");
        let s = cmd_calibrate(std::slice::from_ref(&empty), &cfg).unwrap();
        assert_eq!(s.entries, 0);
        let m = fixture(dir.path(), 2, Modality::Oct);
        let s = cmd_calibrate(std::slice::from_ref(&m), &cfg).unwrap();
        assert_eq!(s.entries, 150);
        let warm = cmd_calibrate(std::slice::from_ref(&m), &cfg).unwrap();
        assert!(warm.to_string().starts_with("150 entries: 0 computed, 150 reused"), "{warm}");
    }

    #[test]
    fn filter_must_match_a_modality() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), 1, Modality::Ct);
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let mut cfg = config(dir.path(), "out");
        cfg.perturbations = Some(vec!["oct_blink".into()]);
        let err = load_manifests(std::slice::from_ref(&path), &cfg).unwrap_err();
        assert!(matches!(err, Error::ModalityMismatch { .. }));
        cfg.perturbations = Some(vec!["nope".into()]);
        assert!(load_manifests(&[path], &cfg).unwrap_err().is_validation());
    }

    fn write_jsonl(path: &Path, recs: &[TaskRecord]) {
        write_records(path, recs).unwrap();
    }

    fn request(dir: &Path, task: Task) -> ScoreRequest {
        ScoreRequest {
            predictions: dir.join("pred.jsonl"),
            ground_truth: dir.join("gt.jsonl"),
            task,
            model: "m".into(),
            strategy: "s".into(),
            dataset: "demo".into(),
            ledger: None,
            registry: Registry::builtin(),
        }
    }

    #[test]
    fn perfect_segmentation_scores_one() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), 2, Modality::Ct);
        let mut cfg = config(dir.path(), "out");
        cfg.perturbations = Some(vec!["translation".into(), "gaussian_noise".into()]);
        cfg.levels = vec![SeverityLevel::new(1).unwrap(), SeverityLevel::new(4).unwrap()];
        cmd_perturb(&[m], &cfg).unwrap();
        let gt_path = cfg.out_dir.join(GT_DIR).join("demo").join(GT_FILE);
        let gts = read_records(&gt_path).unwrap();
        // Predictions identical to the ground truth of every condition.
        let mut preds: Vec<TaskRecord> = Vec::new();
        for row in read_ledger(cfg.out_dir.join(LEDGER_FILE)).unwrap() {
            let cond = (row.perturbation_id.clone(), row.level);
            let g = gts
                .iter()
                .filter(|g| g.task == Task::Segmentation && g.sample_id == row.sample_id)
                .find(|g| g.condition() == cond)
                .or_else(|| gts.iter().find(|g| g.task == Task::Segmentation && g.sample_id == row.sample_id && g.perturbation_id.is_none()))
                .unwrap();
            let mut p = g.clone();
            p.perturbation_id = Some(row.perturbation_id);
            p.level = Some(row.level);
            preds.push(p);
        }
        preds.extend(gts.iter().filter(|g| g.task == Task::Segmentation && g.perturbation_id.is_none()).cloned());
        let gt_dir = cfg.out_dir.join(GT_DIR).join("demo");
        write_jsonl(&gt_dir.join("pred.jsonl"), &preds);
        let mut req = request(&gt_dir, Task::Segmentation);
        req.ground_truth = gt_path;
        req.ledger = Some(cfg.out_dir.join(LEDGER_FILE));
        let out = cmd_score(&req).unwrap();
        assert_eq!(out.records.len(), 2 * 5);
        assert!(out.records.iter().all(|r| r.value == 1.0), "{:?}", out.records);
        assert!(out.records.iter().filter(|r| r.level > 0).all(|r| r.converged.is_some()));
    }

    #[test]
    fn grounding_and_vqa_scoring_rules() {
        let dir = tempfile::tempdir().unwrap();
        let mut gt = TaskRecord::new("a", Task::Grounding);
        gt.bbox = Some(BoundingBox::new(0.0, 0.0, 2.0, 1.0).unwrap());
        let mut pred = TaskRecord::new("a", Task::Grounding);
        pred.bbox = Some(BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap());
        let mut pert = pred.clone();
        pert.perturbation_id = Some("rotation".into());
        pert.level = Some(2);
        write_jsonl(&dir.path().join("gt.jsonl"), &[gt]);
        write_jsonl(&dir.path().join("pred.jsonl"), &[pred, pert]);
        let out = cmd_score(&request(dir.path(), Task::Grounding)).unwrap();
        assert_eq!(out.records.len(), 2);
        assert!(out.records.iter().all(|r| r.value == 1.0));
        assert_eq!(out.records[1].category, RecordCategory::Base);

        let gts: Vec<TaskRecord> = (0..10)
            .map(|i| {
                let mut r = TaskRecord::new(format!("q{i}"), Task::Vqa);
                r.answer = Some("yes".into());
                r
            })
            .collect();
        write_jsonl(&dir.path().join("gt.jsonl"), &gts);
        write_jsonl(&dir.path().join("pred.jsonl"), &gts[..9]);
        let out = cmd_score(&request(dir.path(), Task::Vqa)).unwrap();
        assert!(out.records[0].value <= 0.9);
        assert_eq!(out.joins[&(CLEAN.to_string(), 0)].missing, 1);
    }

    #[test]
    fn score_requires_clean_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let mut gt = TaskRecord::new("a", Task::Vqa);
        gt.answer = Some("yes".into());
        let mut pred = gt.clone();
        pred.perturbation_id = Some("rotation".into());
        pred.level = Some(1);
        write_jsonl(&dir.path().join("gt.jsonl"), &[gt]);
        write_jsonl(&dir.path().join("pred.jsonl"), &[pred]);
        let err = cmd_score(&request(dir.path(), Task::Vqa)).unwrap_err();
        assert!(matches!(err, Error::MissingBaseline(_)));
    }
}
