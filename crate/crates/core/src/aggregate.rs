//! Robustness-drop statistics over per-condition metric values.
//!
//! A drop is `clean − perturbed` for one grouping key (model, strategy,
//! dataset, task, metric). Every mean below is the arithmetic mean of its
//! member drops, summed in a canonical order so results do not depend on
//! record order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::Category;

pub const CLEAN: &str = "clean";
pub const LEVELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordCategory {
    Base,
    MedSpecific,
    Clean,
}

impl RecordCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordCategory::Base => "base",
            RecordCategory::MedSpecific => "med_specific",
            RecordCategory::Clean => "clean",
        }
    }
}

impl From<Category> for RecordCategory {
    fn from(c: Category) -> Self {
        match c {
            Category::Base => RecordCategory::Base,
            Category::MedSpecific => RecordCategory::MedSpecific,
        }
    }
}

impl fmt::Display for RecordCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Metrics not bounded to `[0, 1]`.
const UNBOUNDED_METRICS: [&str; 1] = ["cider"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub model: String,
    pub strategy: String,
    pub dataset: String,
    pub task: String,
    pub perturbation_id: String,
    pub category: RecordCategory,
    pub level: u8,
    pub value: f64,
    pub metric_name: String,
    /// Calibration status of the condition, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

/// (model, strategy, dataset, task, metric_name).
pub type GroupKey = (String, String, String, String, String);

impl MetricRecord {
    pub fn is_clean(&self) -> bool {
        self.category == RecordCategory::Clean
    }

    pub fn group_key(&self) -> GroupKey {
        (
            self.model.clone(),
            self.strategy.clone(),
            self.dataset.clone(),
            self.task.clone(),
            self.metric_name.clone(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let clean_id = self.perturbation_id == CLEAN;
        let clean_cat = self.category == RecordCategory::Clean;
        let clean_level = self.level == 0;
        if clean_id != clean_cat || clean_id != clean_level {
            return Err(Error::InvalidRecord(format!(
                "`{}` level {} category {}: clean id, level 0 and clean category must coincide",
                self.perturbation_id, self.level, self.category
            )));
        }
        if self.level as usize > LEVELS {
            return Err(Error::InvalidLevel(self.level));
        }
        if !self.value.is_finite() {
            return Err(Error::InvalidRecord(format!("non-finite value for `{}`", self.perturbation_id)));
        }
        if !UNBOUNDED_METRICS.contains(&self.metric_name.as_str()) && !(0.0..=1.0).contains(&self.value) {
            return Err(Error::InvalidRecord(format!(
                "{} value {} outside [0, 1]",
                self.metric_name, self.value
            )));
        }
        Ok(())
    }
}

/// Signed drop `clean − perturbed`. Improvements come out negative.
pub fn drop(clean: &MetricRecord, perturbed: &MetricRecord) -> Result<f64> {
    if clean.group_key() != perturbed.group_key() {
        return Err(Error::MismatchedKeys(format!(
            "{:?} vs {:?}",
            clean.group_key(),
            perturbed.group_key()
        )));
    }
    if !clean.is_clean() {
        return Err(Error::InvalidRecord(format!(
            "baseline `{}` is not a clean record",
            clean.perturbation_id
        )));
    }
    Ok(clean.value - perturbed.value)
}

/// Order-independent mean.
fn canonical_mean(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    Some(xs.into_iter().sum::<f64>() / n)
}

/// One perturbed cell paired with its clean baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct DropCell<'a> {
    pub record: &'a MetricRecord,
    pub drop: f64,
}

/// Validates records, pairs each perturbed record with its baseline and
/// applies the convergence filter.
pub fn drop_cells(records: &[MetricRecord], include_unconverged: bool) -> Result<Vec<DropCell<'_>>> {
    let mut clean: BTreeMap<GroupKey, &MetricRecord> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert((r.group_key(), r.perturbation_id.clone(), r.level)) {
            return Err(Error::InvalidRecord(format!(
                "duplicate record for {:?} `{}` level {}",
                r.group_key(),
                r.perturbation_id,
                r.level
            )));
        }
        if r.is_clean() {
            clean.insert(r.group_key(), r);
        }
    }
    let mut cells = Vec::new();
    for r in records.iter().filter(|r| !r.is_clean()) {
        if !include_unconverged && r.converged == Some(false) {
            continue;
        }
        let key = r.group_key();
        let base = clean
            .get(&key)
            .ok_or_else(|| Error::MissingBaseline(format!("{key:?}")))?;
        cells.push(DropCell {
            record: r,
            drop: drop(base, r)?,
        });
    }
    Ok(cells)
}

/// Mean drop over the cells of category `category` at severity `level`.
pub fn mean_drop(records: &[MetricRecord], category: RecordCategory, level: u8) -> Result<f64> {
    let cells = drop_cells(records, true)?;
    canonical_mean(
        cells
            .iter()
            .filter(|c| c.record.category == category && c.record.level == level)
            .map(|c| c.drop)
            .collect(),
    )
    .ok_or(Error::EmptyGroup {
        category: category.to_string(),
        level,
    })
}

/// Mean drop of a category over all severities.
pub fn category_mean_drop(records: &[MetricRecord], category: RecordCategory) -> Result<f64> {
    let cells = drop_cells(records, true)?;
    canonical_mean(
        cells
            .iter()
            .filter(|c| c.record.category == category)
            .map(|c| c.drop)
            .collect(),
    )
    .ok_or(Error::EmptyGroup {
        category: category.to_string(),
        level: 0,
    })
}

/// Mean drop at one severity over both categories.
pub fn level_mean_drop(records: &[MetricRecord], level: u8) -> Result<f64> {
    let cells = drop_cells(records, true)?;
    canonical_mean(cells.iter().filter(|c| c.record.level == level).map(|c| c.drop).collect()).ok_or(
        Error::EmptyGroup {
            category: "any".into(),
            level,
        },
    )
}

/// Per-level mean drops; `None` marks an absent level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityCurve {
    pub points: [Option<f64>; LEVELS],
}

impl SeverityCurve {
    pub fn present(&self) -> usize {
        self.points.iter().flatten().count()
    }

    pub fn gaps(&self) -> Vec<u8> {
        (1..=LEVELS as u8).filter(|l| self.points[*l as usize - 1].is_none()).collect()
    }
}

fn curve_of(cells: &[&DropCell]) -> SeverityCurve {
    let mut points = [None; LEVELS];
    for (i, p) in points.iter_mut().enumerate() {
        *p = canonical_mean(
            cells
                .iter()
                .filter(|c| c.record.level as usize == i + 1)
                .map(|c| c.drop)
                .collect(),
        );
    }
    SeverityCurve { points }
}

/// How to split records into separate curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveGrouping {
    /// A single curve named "all".
    All,
    /// One curve per `model/strategy`.
    Strategy,
    /// One curve per category.
    Category,
}

pub fn severity_curve(records: &[MetricRecord], grouping: CurveGrouping) -> Result<BTreeMap<String, SeverityCurve>> {
    let cells = drop_cells(records, true)?;
    let mut groups: BTreeMap<String, Vec<&DropCell>> = BTreeMap::new();
    for c in &cells {
        let key = match grouping {
            CurveGrouping::All => "all".to_string(),
            CurveGrouping::Strategy => format!("{}/{}", c.record.model, c.record.strategy),
            CurveGrouping::Category => c.record.category.to_string(),
        };
        groups.entry(key).or_default().push(c);
    }
    Ok(groups.into_iter().map(|(k, v)| (k, curve_of(&v))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPerturbation {
    pub perturbation_id: String,
    pub category: RecordCategory,
    pub mean_drop: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub requested: usize,
    pub entries: Vec<RankedPerturbation>,
    pub med_specific: usize,
}

impl Ranking {
    /// e.g. "9/15 med-specific".
    pub fn summary_line(&self) -> String {
        format!("{}/{} med-specific", self.med_specific, self.entries.len())
    }
}

fn sort_desc<T>(items: &mut [T], key: impl Fn(&T) -> (f64, &str)) {
    items.sort_by(|a, b| {
        let (da, ia) = key(a);
        let (db, ib) = key(b);
        db.total_cmp(&da).then_with(|| ia.cmp(ib))
    });
}

fn rank_cells(cells: &[DropCell], k: usize) -> Ranking {
    let mut by_id: BTreeMap<&str, (RecordCategory, Vec<f64>)> = BTreeMap::new();
    for c in cells {
        by_id
            .entry(&c.record.perturbation_id)
            .or_insert_with(|| (c.record.category, Vec::new()))
            .1
            .push(c.drop);
    }
    let mut entries: Vec<RankedPerturbation> = by_id
        .into_iter()
        .map(|(id, (category, drops))| RankedPerturbation {
            perturbation_id: id.to_string(),
            category,
            cells: drops.len(),
            mean_drop: canonical_mean(drops).expect("nonempty by construction"),
        })
        .collect();
    sort_desc(&mut entries, |e| (e.mean_drop, &e.perturbation_id));
    if k > entries.len() {
        log::warn!("requested top {k} but only {} perturbations have drops", entries.len());
    }
    entries.truncate(k);
    let med_specific = entries
        .iter()
        .filter(|e| e.category == RecordCategory::MedSpecific)
        .count();
    Ranking {
        requested: k,
        entries,
        med_specific,
    }
}

/// Top-`k` perturbations by mean drop over all severities and datasets.
pub fn rank_perturbations(records: &[MetricRecord], k: usize) -> Result<Ranking> {
    Ok(rank_cells(&drop_cells(records, true)?, k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedStrategy {
    pub model: String,
    pub strategy: String,
    pub mean_drop: f64,
}

/// Mean drop per (category, level), with both marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaGrid {
    pub base: [Option<f64>; LEVELS],
    pub med_specific: [Option<f64>; LEVELS],
    pub base_mean: Option<f64>,
    pub med_specific_mean: Option<f64>,
    pub level_mean: [Option<f64>; LEVELS],
}

fn grid_of(cells: &[&DropCell]) -> DeltaGrid {
    let of = |cat: Option<RecordCategory>, level: Option<u8>| {
        canonical_mean(
            cells
                .iter()
                .filter(|c| cat.map_or(true, |k| c.record.category == k) && level.map_or(true, |l| c.record.level == l))
                .map(|c| c.drop)
                .collect(),
        )
    };
    let row = |cat: Option<RecordCategory>| std::array::from_fn(|i| of(cat, Some(i as u8 + 1)));
    DeltaGrid {
        base: row(Some(RecordCategory::Base)),
        med_specific: row(Some(RecordCategory::MedSpecific)),
        base_mean: of(Some(RecordCategory::Base), None),
        med_specific_mean: of(Some(RecordCategory::MedSpecific), None),
        level_mean: row(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset: String,
    pub clean: f64,
    pub delta_b: Option<f64>,
    pub delta_m: Option<f64>,
}

/// One Table-1 row: a (model, strategy, task, metric) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub strategy: String,
    pub task: String,
    pub metric_name: String,
    /// Mean of the per-dataset ΔB values.
    pub avg_delta_b: Option<f64>,
    pub datasets: Vec<DatasetSummary>,
    pub grid: DeltaGrid,
    pub severity_curve: SeverityCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub include_unconverged: bool,
    pub top_k: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            include_unconverged: true,
            top_k: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub options: ReportOptions,
    pub rows: Vec<ReportRow>,
    /// Mean drop per perturbation id, in id order.
    pub perturbation_drops: BTreeMap<String, f64>,
    /// Distinct perturbation ids per category.
    pub perturbation_counts: BTreeMap<RecordCategory, usize>,
    pub perturbation_ranking: Ranking,
    pub ranking_summary: String,
    pub strategy_ranking: Vec<RankedStrategy>,
    pub notices: Vec<String>,
    pub records: Vec<MetricRecord>,
}

type RowKey = (String, String, String, String);

impl RobustnessReport {
    pub fn build(records: &[MetricRecord], options: ReportOptions) -> Result<Self> {
        let cells = drop_cells(records, options.include_unconverged)?;
        let mut notices = Vec::new();
        if cells.is_empty() {
            notices.push("no perturbed records: drop sections are empty".to_string());
        }
        let excluded = records.iter().filter(|r| !r.is_clean() && r.converged == Some(false)).count();
        if excluded > 0 {
            notices.push(if options.include_unconverged {
                format!("{excluded} records from unconverged calibrations included")
            } else {
                format!("{excluded} records from unconverged calibrations excluded")
            });
        }

        let mut row_cells: BTreeMap<RowKey, Vec<&DropCell>> = BTreeMap::new();
        let mut row_clean: BTreeMap<RowKey, BTreeMap<&str, f64>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.is_clean()) {
            row_clean
                .entry((r.model.clone(), r.strategy.clone(), r.task.clone(), r.metric_name.clone()))
                .or_default()
                .insert(&r.dataset, r.value);
        }
        for c in &cells {
            let r = c.record;
            row_cells
                .entry((r.model.clone(), r.strategy.clone(), r.task.clone(), r.metric_name.clone()))
                .or_default()
                .push(c);
        }

        let mut rows = Vec::new();
        for (key, cleans) in &row_clean {
            let members = row_cells.get(key).map(Vec::as_slice).unwrap_or(&[]);
            let datasets: Vec<DatasetSummary> = cleans
                .iter()
                .map(|(ds, &clean)| {
                    let of = |cat| {
                        canonical_mean(
                            members
                                .iter()
                                .filter(|c| c.record.dataset == *ds && c.record.category == cat)
                                .map(|c| c.drop)
                                .collect(),
                        )
                    };
                    DatasetSummary {
                        dataset: ds.to_string(),
                        clean,
                        delta_b: of(RecordCategory::Base),
                        delta_m: of(RecordCategory::MedSpecific),
                    }
                })
                .collect();
            rows.push(ReportRow {
                model: key.0.clone(),
                strategy: key.1.clone(),
                task: key.2.clone(),
                metric_name: key.3.clone(),
                avg_delta_b: canonical_mean(datasets.iter().filter_map(|d| d.delta_b).collect()),
                datasets,
                grid: grid_of(members),
                severity_curve: curve_of(members),
            });
        }

        let all_ranked = rank_cells(&cells, usize::MAX);
        let perturbation_drops = all_ranked
            .entries
            .iter()
            .map(|e| (e.perturbation_id.clone(), e.mean_drop))
            .collect();
        let mut perturbation_counts = BTreeMap::new();
        for e in &all_ranked.entries {
            *perturbation_counts.entry(e.category).or_insert(0) += 1;
        }
        let perturbation_ranking = rank_cells(&cells, options.top_k);
        if options.top_k > all_ranked.entries.len() && !cells.is_empty() {
            notices.push(format!(
                "top {} requested, {} perturbations available",
                options.top_k,
                all_ranked.entries.len()
            ));
        }

        let mut by_strategy: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
        for c in &cells {
            by_strategy
                .entry((&c.record.model, &c.record.strategy))
                .or_default()
                .push(c.drop);
        }
        let mut strategy_ranking: Vec<RankedStrategy> = by_strategy
            .into_iter()
            .map(|((m, s), d)| RankedStrategy {
                model: m.to_string(),
                strategy: s.to_string(),
                mean_drop: canonical_mean(d).expect("nonempty by construction"),
            })
            .collect();
        strategy_ranking.sort_by(|a, b| {
            b.mean_drop
                .total_cmp(&a.mean_drop)
                .then_with(|| (&a.model, &a.strategy).cmp(&(&b.model, &b.strategy)))
        });

        let mut sorted_records = records.to_vec();
        sorted_records.sort_by(|a, b| {
            (a.group_key(), &a.perturbation_id, a.level).cmp(&(b.group_key(), &b.perturbation_id, b.level))
        });

        Ok(Self {
            ranking_summary: perturbation_ranking.summary_line(),
            options,
            rows,
            perturbation_drops,
            perturbation_counts,
            perturbation_ranking,
            strategy_ranking,
            notices,
            records: sorted_records,
        })
    }

    /// Rebuilds the report from its own embedded records and options.
    pub fn recompute(&self) -> Result<Self> {
        Self::build(&self.records, self.options.clone())
    }

    pub fn datasets(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .rows
            .iter()
            .flat_map(|r| r.datasets.iter().map(|d| d.dataset.as_str()))
            .collect();
        set.into_iter().map(String::from).collect()
    }

    /// Table-1-shaped CSV: one row per (model, strategy, task, metric),
    /// `avg_delta_b`, then clean/ΔB/ΔM per dataset. Values are rounded to
    /// three decimals, ties to even; absent cells are empty.
    pub fn table_csv(&self) -> Result<String> {
        let datasets = self.datasets();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "model".to_string(),
            "strategy".into(),
            "task".into(),
            "metric".into(),
            "avg_delta_b".into(),
        ];
        for ds in &datasets {
            header.extend([format!("{ds}_clean"), format!("{ds}_delta_b"), format!("{ds}_delta_m")]);
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut line = vec![
                row.model.clone(),
                row.strategy.clone(),
                row.task.clone(),
                row.metric_name.clone(),
                fmt_cell(row.avg_delta_b),
            ];
            for ds in &datasets {
                match row.datasets.iter().find(|d| &d.dataset == ds) {
                    Some(d) => line.extend([fmt_cell(Some(d.clean)), fmt_cell(d.delta_b), fmt_cell(d.delta_m)]),
                    None => line.extend([String::new(), String::new(), String::new()]),
                }
            }
            w.write_record(&line)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Cache(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::json("report", e))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("report", e))
    }

    /// Writes `table1.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let table = dir.join("table1.csv");
        std::fs::write(&table, self.table_csv()?).map_err(|e| Error::io(&table, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))
    }
}

/// Rounds to three decimals, ties to even.
pub fn round3(x: f64) -> f64 {
    let r = (x * 1000.0).round_ties_even() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn fmt_cell(x: Option<f64>) -> String {
    x.map(|v| format!("{:.3}", round3(v))).unwrap_or_default()
}

pub fn read_metric_records(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e)))
        .collect()
}

pub fn write_metric_records(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::json("metric record", e))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
