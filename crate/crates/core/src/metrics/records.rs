//! Line-delimited prediction and ground-truth records, plus the record-level
//! VQA and grounding accuracies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::overlap::{box_iou, BoundingBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Segmentation,
    Vqa,
    Grounding,
    Captioning,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Segmentation => "segmentation",
            Task::Vqa => "vqa",
            Task::Grounding => "grounding",
            Task::Captioning => "captioning",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Task::Segmentation, Task::Vqa, Task::Grounding, Task::Captioning]
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidRecord(format!("unknown task `{s}`")))
    }
}

/// A caption field holds one caption (predictions) or one or more
/// references (ground truth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CaptionField {
    One(String),
    Many(Vec<String>),
}

impl CaptionField {
    pub fn texts(&self) -> Vec<String> {
        match self {
            CaptionField::One(s) => vec![s.clone()],
            CaptionField::Many(v) => v.clone(),
        }
    }
}

/// One line of a prediction or ground-truth file.
///
/// `perturbation_id`/`level` name the condition the record belongs to; both
/// absent means the clean condition. Ground-truth records carrying a
/// condition override the clean annotation for that condition (used for
/// co-transformed geometric ground truth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub sample_id: String,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_letter: Option<String>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<CaptionField>,
}

pub type PredictionRecord = TaskRecord;
pub type GroundTruthRecord = TaskRecord;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload<'a> {
    Mask(&'a str),
    Answer { text: &'a str, letter: Option<&'a str> },
    Box(BoundingBox),
    Caption(Vec<String>),
}

impl TaskRecord {
    pub fn new(sample_id: impl Into<String>, task: Task) -> Self {
        Self {
            sample_id: sample_id.into(),
            task,
            perturbation_id: None,
            level: None,
            mask: None,
            answer: None,
            answer_letter: None,
            bbox: None,
            caption: None,
        }
    }

    /// The payload matching `task`; an error when it is absent.
    pub fn payload(&self) -> Result<Payload<'_>> {
        let missing = |field: &str| {
            Error::InvalidRecord(format!(
                "sample `{}` ({}) lacks the `{field}` field",
                self.sample_id, self.task
            ))
        };
        match self.task {
            Task::Segmentation => self.mask.as_deref().map(Payload::Mask).ok_or_else(|| missing("mask")),
            Task::Vqa => match (&self.answer, &self.answer_letter) {
                (Some(text), letter) => Ok(Payload::Answer {
                    text,
                    letter: letter.as_deref(),
                }),
                (None, Some(letter)) => Ok(Payload::Answer { text: letter, letter: Some(letter) }),
                (None, None) => Err(missing("answer")),
            },
            Task::Grounding => self.bbox.map(Payload::Box).ok_or_else(|| missing("box")),
            Task::Captioning => self
                .caption
                .as_ref()
                .map(|c| Payload::Caption(c.texts()))
                .ok_or_else(|| missing("caption")),
        }
    }

    /// `(perturbation_id, level)`, with `("clean", 0)` for the clean condition.
    pub fn condition(&self) -> (String, u8) {
        match &self.perturbation_id {
            Some(p) if p != "clean" => (p.clone(), self.level.unwrap_or(0)),
            _ => ("clean".to_string(), 0),
        }
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TaskRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskRecord = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(path: impl AsRef<Path>, records: &[TaskRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::json("record", e))?;
        buf.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Outcome of joining predictions to ground truth by sample id.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JoinStats {
    pub matched: usize,
    /// Ground-truth samples with no prediction (scored as wrong).
    pub missing: usize,
    /// Predictions whose sample id is not in the ground truth (ignored).
    pub unmatched: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub join: JoinStats,
}

fn index_unique<'a>(records: &'a [TaskRecord], what: &str) -> Result<BTreeMap<&'a str, &'a TaskRecord>> {
    let mut map = BTreeMap::new();
    for r in records {
        if map.insert(r.sample_id.as_str(), r).is_some() {
            log::error!("duplicate sample id `{}` in {what}", r.sample_id);
            return Err(Error::DuplicateSample(r.sample_id.clone()));
        }
    }
    Ok(map)
}

type Joined<'a> = Vec<(&'a TaskRecord, Option<&'a TaskRecord>)>;

fn join<'a>(preds: &'a [TaskRecord], gts: &'a [TaskRecord]) -> Result<(Joined<'a>, JoinStats)> {
    let pred_map = index_unique(preds, "predictions")?;
    let gt_map = index_unique(gts, "ground truth")?;
    let mut stats = JoinStats::default();
    let pairs: Vec<_> = gt_map
        .iter()
        .map(|(id, gt)| {
            let p = pred_map.get(id).copied();
            if p.is_some() {
                stats.matched += 1;
            } else {
                stats.missing += 1;
            }
            (*gt, p)
        })
        .collect();
    let gt_ids: BTreeSet<&str> = gt_map.keys().copied().collect();
    stats.unmatched = pred_map.keys().filter(|id| !gt_ids.contains(*id)).count();
    if stats.missing > 0 {
        log::warn!("{} ground-truth samples have no prediction; counted as incorrect", stats.missing);
    }
    if stats.unmatched > 0 {
        log::warn!("{} predictions have no ground truth; ignored", stats.unmatched);
    }
    Ok((pairs, stats))
}

/// Case-fold, trim, collapse whitespace and strip trailing punctuation.
pub fn normalize_answer(s: &str) -> String {
    let folded = s.to_lowercase();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim_end()
        .to_string()
}

/// Exact-match rate after [`normalize_answer`]. A prediction is correct when
/// it equals the gold answer text or the gold option letter.
pub fn vqa_accuracy(preds: &[TaskRecord], gts: &[TaskRecord]) -> Result<Score> {
    let (pairs, join) = join(preds, gts)?;
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut correct = 0usize;
    for (gt, pred) in &pairs {
        let Payload::Answer { text: gold, letter } = gt.payload()? else {
            unreachable!("vqa payload")
        };
        let Some(pred) = pred else { continue };
        let Payload::Answer { text, .. } = pred.payload()? else {
            return Err(Error::InvalidRecord(format!("sample `{}` is not a vqa record", pred.sample_id)));
        };
        let answer = normalize_answer(text);
        let hit = answer == normalize_answer(gold) || letter.is_some_and(|l| answer == normalize_answer(l));
        correct += hit as usize;
    }
    Ok(Score {
        value: correct as f64 / pairs.len() as f64,
        join,
    })
}

/// Fraction of samples whose predicted box reaches `box_iou ≥ threshold`.
pub fn grounding_accuracy(preds: &[TaskRecord], gts: &[TaskRecord], threshold: f64) -> Result<Score> {
    let (pairs, join) = join(preds, gts)?;
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut correct = 0usize;
    for (gt, pred) in &pairs {
        let Payload::Box(gold) = gt.payload()? else {
            return Err(Error::InvalidRecord(format!("sample `{}` is not a grounding record", gt.sample_id)));
        };
        let Some(pred) = pred else { continue };
        let Payload::Box(b) = pred.payload()? else {
            return Err(Error::InvalidRecord(format!("sample `{}` is not a grounding record", pred.sample_id)));
        };
        correct += (box_iou(&b, &gold) >= threshold) as usize;
    }
    Ok(Score {
        value: correct as f64 / pairs.len() as f64,
        join,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vqa(id: &str, answer: &str, letter: Option<&str>) -> TaskRecord {
        let mut r = TaskRecord::new(id, Task::Vqa);
        r.answer = Some(answer.into());
        r.answer_letter = letter.map(Into::into);
        r
    }

    fn gnd(id: &str, b: [f64; 4]) -> TaskRecord {
        let mut r = TaskRecord::new(id, Task::Grounding);
        r.bbox = Some(BoundingBox::try_from(b).unwrap());
        r
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("  B. "), "b");
        assert_eq!(normalize_answer("Left   Lung!?"), "left lung");
    }

    #[test]
    fn vqa_examples() {
        let gts = vec![
            vqa("1", "Pneumonia", Some("B")),
            vqa("2", "normal", None),
            vqa("3", "CT", Some("a")),
            vqa("4", "yes", None),
        ];
        assert_eq!(vqa_accuracy(&gts, &gts).unwrap().value, 1.0);
        let preds = vec![vqa("1", "B.", None), vqa("2", " Normal ", None), vqa("3", "ct", None), vqa("4", "no", None)];
        assert_eq!(vqa_accuracy(&preds, &gts).unwrap().value, 0.75);
        let mut shuffled = preds.clone();
        shuffled.reverse();
        assert_eq!(vqa_accuracy(&shuffled, &gts).unwrap().value, 0.75);
    }

    #[test]
    fn vqa_missing_and_duplicates() {
        let gts: Vec<_> = (0..10).map(|i| vqa(&i.to_string(), "yes", None)).collect();
        let preds: Vec<_> = gts[..9].to_vec();
        let score = vqa_accuracy(&preds, &gts).unwrap();
        assert!(score.value <= 0.9);
        assert_eq!(score.join.missing, 1);
        let dup = vec![vqa("0", "yes", None), vqa("0", "no", None)];
        assert!(matches!(vqa_accuracy(&dup, &gts), Err(Error::DuplicateSample(_))));
    }

    #[test]
    fn grounding_threshold_is_inclusive() {
        let gts = vec![gnd("a", [0.0, 0.0, 2.0, 1.0]), gnd("b", [1.0, 0.0, 3.0, 1.0])];
        assert_eq!(grounding_accuracy(&gts, &gts, 0.5).unwrap().value, 1.0);
        // "a": exact half overlap (iou 0.5) → correct; "b": iou 1/3 → wrong.
        let preds = vec![gnd("a", [0.0, 0.0, 1.0, 1.0]), gnd("b", [0.0, 0.0, 2.0, 1.0])];
        assert_eq!(grounding_accuracy(&preds, &gts, 0.5).unwrap().value, 0.5);
        let only_a = vec![gnd("a", [0.0, 0.0, 2.0, 1.0])];
        let s = grounding_accuracy(&only_a, &gts, 0.5).unwrap();
        assert_eq!((s.value, s.join.missing), (0.5, 1));
    }

    #[test]
    fn payload_must_match_task() {
        let r = TaskRecord::new("x", Task::Segmentation);
        assert!(r.payload().is_err());
        let line = r#"{"sample_id":"s","task":"grounding","box":[1,2,3,4],"perturbation_id":"rotation","level":2}"#;
        let rec: TaskRecord = serde_json::from_str(line).unwrap();
        assert_eq!(rec.condition(), ("rotation".to_string(), 2));
        assert!(matches!(rec.payload().unwrap(), Payload::Box(_)));
        let refs: TaskRecord =
            serde_json::from_str(r#"{"sample_id":"s","task":"captioning","caption":["a","b"]}"#).unwrap();
        assert_eq!(refs.payload().unwrap(), Payload::Caption(vec!["a".into(), "b".into()]));
    }

    #[test]
    fn records_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let recs = vec![vqa("1", "yes", Some("A")), gnd("2", [0.0, 0.0, 4.0, 4.0])];
        write_records(&path, &recs).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
    }
}
