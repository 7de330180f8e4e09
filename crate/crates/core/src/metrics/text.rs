//! Caption metrics. All three share one tokenizer: case-fold, drop
//! punctuation, split on whitespace. BLEU is unsmoothed.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// ROUGE-L F-measure weight.
pub const ROUGE_BETA: f64 = 1.2;
/// CIDEr-D Gaussian length-penalty width.
pub const CIDER_SIGMA: f64 = 6.0;
const CIDER_MAX_N: usize = 4;

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

type Counts = BTreeMap<Vec<String>, usize>;

fn ngram_counts(tokens: &[String], n: usize) -> Counts {
    let mut counts = Counts::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

fn check_aligned(candidates: usize, references: usize) -> Result<()> {
    if candidates == 0 {
        return Err(Error::EmptyCorpus);
    }
    if candidates != references {
        return Err(Error::InvalidRecord(format!(
            "{candidates} candidates but {references} reference sets"
        )));
    }
    Ok(())
}

/// Corpus BLEU: geometric mean of clipped 1..=`max_n`-gram precisions times
/// the brevity penalty `exp(min(0, 1 − r/c))`. Any zero (or undefined)
/// precision makes the score 0.
pub fn bleu(candidates: &[String], references: &[Vec<String>], max_n: usize) -> Result<f64> {
    check_aligned(candidates.len(), references.len())?;
    let mut clipped = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);

    for (cand, refs) in candidates.iter().zip(references) {
        let c = tokenize(cand);
        let rs: Vec<Vec<String>> = refs.iter().map(|r| tokenize(r)).collect();
        cand_len += c.len();
        // closest reference length, ties to the shorter one
        ref_len += rs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| ((l as isize - c.len() as isize).abs(), l))
            .unwrap_or(0);
        for n in 1..=max_n {
            let cc = ngram_counts(&c, n);
            let mut max_ref: Counts = Counts::new();
            for r in &rs {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in &cc {
                clipped[n - 1] += (*k).min(max_ref.get(g).copied().unwrap_or(0));
                totals[n - 1] += k;
            }
        }
    }

    if cand_len == 0 || clipped.iter().zip(&totals).any(|(c, t)| *c == 0 || *t == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = clipped
        .iter()
        .zip(&totals)
        .map(|(c, t)| (*c as f64 / *t as f64).ln())
        .sum::<f64>()
        / max_n as f64;
    let bp = (1.0 - ref_len as f64 / cand_len as f64).min(0.0).exp();
    Ok(bp * log_p.exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean per-sample ROUGE-L F-measure (β = 1.2). With several references the
/// best precision and best recall are combined.
pub fn rouge_l(candidates: &[String], references: &[Vec<String>]) -> Result<f64> {
    check_aligned(candidates.len(), references.len())?;
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(cand, refs)| {
            let c = tokenize(cand);
            let (mut best_p, mut best_r) = (0.0f64, 0.0f64);
            for r in refs {
                let r = tokenize(r);
                if c.is_empty() || r.is_empty() {
                    continue;
                }
                let l = lcs_len(&c, &r) as f64;
                best_p = best_p.max(l / c.len() as f64);
                best_r = best_r.max(l / r.len() as f64);
            }
            if best_p > 0.0 && best_r > 0.0 {
                let b2 = ROUGE_BETA * ROUGE_BETA;
                (1.0 + b2) * best_p * best_r / (best_r + b2 * best_p)
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / candidates.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiderScore {
    /// Mean length-penalized, clipped TF-IDF cosine (before the ×10 scale).
    pub cosine: f64,
    /// Conventional CIDEr-D value: `10 × cosine`.
    pub score: f64,
}

struct TfIdf {
    vecs: Vec<BTreeMap<Vec<String>, f64>>,
    norms: Vec<f64>,
    len: usize,
}

fn tfidf(text: &str, df: &BTreeMap<Vec<String>, usize>, log_docs: f64) -> TfIdf {
    let tokens = tokenize(text);
    let mut vecs = Vec::with_capacity(CIDER_MAX_N);
    let mut norms = Vec::with_capacity(CIDER_MAX_N);
    for n in 1..=CIDER_MAX_N {
        let v: BTreeMap<Vec<String>, f64> = ngram_counts(&tokens, n)
            .into_iter()
            .map(|(g, tf)| {
                let d = df.get(&g).copied().unwrap_or(0).max(1) as f64;
                let w = tf as f64 * (log_docs - d.ln());
                (g, w)
            })
            .collect();
        norms.push(v.values().map(|w| w * w).sum::<f64>().sqrt());
        vecs.push(v);
    }
    TfIdf { vecs, norms, len: tokens.len() }
}

/// CIDEr-D. Document frequencies come from `corpus` (one entry per
/// reference set); each candidate is compared with its own references.
pub fn cider(candidates: &[String], references: &[Vec<String>], corpus: &[Vec<String>]) -> Result<CiderScore> {
    check_aligned(candidates.len(), references.len())?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut df: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for refs in corpus {
        let mut seen = BTreeSet::new();
        for r in refs {
            let tokens = tokenize(r);
            for n in 1..=CIDER_MAX_N {
                seen.extend(ngram_counts(&tokens, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_docs = (corpus.len() as f64).ln();

    let mut total = 0.0;
    for (cand, refs) in candidates.iter().zip(references) {
        let c = tfidf(cand, &df, log_docs);
        let mut per_n = [0.0f64; CIDER_MAX_N];
        for r in refs {
            let r = tfidf(r, &df, log_docs);
            let delta = c.len as f64 - r.len as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for (n, acc) in per_n.iter_mut().enumerate() {
                let mut val: f64 = c.vecs[n]
                    .iter()
                    .map(|(g, cw)| {
                        let rw = r.vecs[n].get(g).copied().unwrap_or(0.0);
                        cw.min(rw) * rw
                    })
                    .sum();
                if c.norms[n] != 0.0 && r.norms[n] != 0.0 {
                    val /= c.norms[n] * r.norms[n];
                }
                *acc += val * penalty;
            }
        }
        let n_refs = refs.len().max(1) as f64;
        total += per_n.iter().map(|v| v / n_refs).sum::<f64>() / CIDER_MAX_N as f64;
    }
    let cosine = total / candidates.len() as f64;
    Ok(CiderScore { cosine, score: 10.0 * cosine })
}
