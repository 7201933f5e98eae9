//! Pseudo-label quality filters and the looping diagnostic.
//!
//! * `ratio_kde`: density of (audio duration, transcript length) under a 2D
//!   KDE fit on the pseudo-labeled set itself; keeps the most probable part.
//! * `ratio_to_gold`: transcript length relative to the gold transcript.
//!   Uses supervision, so it is only meant for analysis runs.
//! * `embedding_similarity`: cosine similarity between sentence embeddings
//!   of the transcript and the translation.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{Corpus, Sample};
use crate::density::{keep_top_fraction, KdeModel};
use crate::error::{Error, Result};
use crate::text::{count_words, WordCounting};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMethod {
    RatioKde,
    RatioToGold,
    EmbeddingSimilarity,
    Preprocess,
    LoopFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Threshold {
    Value { value: f64 },
    Interval { low: f64, high: f64 },
}

/// Scores and keep/drop decisions of one filtering pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub method: FilterMethod,
    /// One score per input sample, in input order.
    pub scores: IndexMap<String, f64>,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
    pub threshold: Threshold,
    pub params: BTreeMap<String, Value>,
}

impl FilterReport {
    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// What "transcript length" means on the KDE and ratio axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthUnit {
    #[default]
    Words,
    Characters,
}

impl LengthUnit {
    pub fn measure(self, text: &str) -> usize {
        match self {
            LengthUnit::Words => count_words(text, WordCounting::Whitespace),
            LengthUnit::Characters => count_words(text, WordCounting::Characters),
        }
    }
}

fn select(corpus: &Corpus, keep: &[String]) -> Corpus {
    let keep: std::collections::HashSet<&str> = keep.iter().map(String::as_str).collect();
    corpus.with_samples(
        corpus
            .samples
            .iter()
            .filter(|s| keep.contains(s.id.as_str()))
            .cloned()
            .collect(),
    )
}

fn scored(corpus: &Corpus, scores: &[f64]) -> IndexMap<String, f64> {
    corpus
        .samples
        .iter()
        .zip(scores)
        .map(|(s, &v)| (s.id.clone(), v))
        .collect()
}

fn validate_fraction(keep_fraction: f64) -> Result<()> {
    if keep_fraction > 0.0 && keep_fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "keep fraction must be in (0, 1], got {keep_fraction}"
        )))
    }
}

fn fraction_filter(
    corpus: &Corpus,
    method: FilterMethod,
    scores: Vec<f64>,
    keep_fraction: f64,
    mut params: BTreeMap<String, Value>,
) -> Result<(Corpus, FilterReport)> {
    let ids: Vec<String> = corpus.samples.iter().map(|s| s.id.clone()).collect();
    let top = keep_top_fraction(&scores, &ids, keep_fraction)?;
    params.insert("keep_fraction".into(), Value::from(keep_fraction));
    let report = FilterReport {
        method,
        scores: scored(corpus, &scores),
        kept: top.kept,
        dropped: top.dropped,
        threshold: Threshold::Value {
            value: top.threshold,
        },
        params,
    };
    Ok((select(corpus, &report.kept), report))
}

/// The (duration, transcript length) point of every sample. Uses the
/// predicted transcript, falling back to gold when there is none.
pub fn length_points(corpus: &Corpus, unit: LengthUnit) -> Result<Vec<[f64; 2]>> {
    corpus
        .samples
        .iter()
        .map(|s| {
            let text = s.any_transcript().ok_or_else(|| Error::MissingField {
                id: s.id.clone(),
                field: "transcript",
            })?;
            Ok([s.duration_s, unit.measure(text) as f64])
        })
        .collect()
}

/// Density of every sample's own (duration, length) point under a 2D KDE
/// fit on the corpus. Shared by the ratio-KDE filter and the scatter export.
pub fn length_ratio_scores(corpus: &Corpus, unit: LengthUnit) -> Result<Vec<f64>> {
    let points = length_points(corpus, unit)?;
    let model = KdeModel::fit(&points, None)?;
    model.pdf_batch(&points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioKdeConfig {
    pub keep_fraction: f64,
    pub unit: LengthUnit,
}

impl Default for RatioKdeConfig {
    fn default() -> Self {
        RatioKdeConfig {
            keep_fraction: 0.9,
            unit: LengthUnit::Words,
        }
    }
}

/// Keeps the `keep_fraction` most probable pseudo-labels by length/duration density.
pub fn filter_ratio_kde(corpus: &Corpus, keep_fraction: f64) -> Result<(Corpus, FilterReport)> {
    filter_ratio_kde_with(
        corpus,
        &RatioKdeConfig {
            keep_fraction,
            ..RatioKdeConfig::default()
        },
    )
}

pub fn filter_ratio_kde_with(
    corpus: &Corpus,
    cfg: &RatioKdeConfig,
) -> Result<(Corpus, FilterReport)> {
    validate_fraction(cfg.keep_fraction)?;
    for s in &corpus.samples {
        s.require("transcript", &s.transcript)?;
    }
    let scores = length_ratio_scores(corpus, cfg.unit)?;
    let mut params = BTreeMap::new();
    params.insert("unit".into(), serde_json::to_value(cfg.unit)?);
    fraction_filter(corpus, FilterMethod::RatioKde, scores, cfg.keep_fraction, params)
}

fn gold_ratio(sample: &Sample, unit: LengthUnit) -> Result<f64> {
    let pseudo = unit.measure(sample.require("transcript", &sample.transcript)?);
    let gold = unit.measure(sample.require("gold_transcript", &sample.gold_transcript)?);
    Ok(match (pseudo, gold) {
        (0, 0) => 1.0,
        (_, 0) => f64::INFINITY,
        (p, g) => p as f64 / g as f64,
    })
}

/// Keeps samples whose transcript length is within `[low, high]` times the
/// gold transcript length (inclusive). Requires gold labels.
pub fn filter_ratio_to_gold(
    corpus: &Corpus,
    low: f64,
    high: f64,
) -> Result<(Corpus, FilterReport)> {
    filter_ratio_to_gold_with(corpus, low, high, LengthUnit::Words)
}

pub fn filter_ratio_to_gold_with(
    corpus: &Corpus,
    low: f64,
    high: f64,
    unit: LengthUnit,
) -> Result<(Corpus, FilterReport)> {
    if !(low.is_finite() && high.is_finite() && 0.0 <= low && low <= high) {
        return Err(Error::invalid(format!(
            "ratio bounds must satisfy 0 <= low <= high, got [{low}, {high}]"
        )));
    }
    let ratios = corpus
        .samples
        .iter()
        .map(|s| gold_ratio(s, unit))
        .collect::<Result<Vec<f64>>>()?;
    let (mut kept, mut dropped) = (Vec::new(), Vec::new());
    for (s, &r) in corpus.samples.iter().zip(&ratios) {
        if low <= r && r <= high {
            kept.push(s.id.clone());
        } else {
            dropped.push(s.id.clone());
        }
    }
    let mut params = BTreeMap::new();
    params.insert("unit".into(), serde_json::to_value(unit)?);
    let report = FilterReport {
        method: FilterMethod::RatioToGold,
        scores: scored(corpus, &ratios),
        kept,
        dropped,
        threshold: Threshold::Interval { low, high },
        params,
    };
    Ok((select(corpus, &report.kept), report))
}

/// `u . v / (|u| |v|)`, clamped to [-1, 1].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            index: None,
            expected: u.len(),
            found: v.len(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm { id: None });
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Keeps the `keep_fraction` of samples whose transcript and translation
/// embeddings agree best.
pub fn filter_embedding_similarity(
    corpus: &Corpus,
    keep_fraction: f64,
) -> Result<(Corpus, FilterReport)> {
    validate_fraction(keep_fraction)?;
    let scores = corpus
        .samples
        .par_iter()
        .map(|s| {
            let missing = |field| Error::MissingField {
                id: s.id.clone(),
                field,
            };
            let tc = s
                .embedding_transcript
                .as_deref()
                .ok_or_else(|| missing("emb_tc"))?;
            let tl = s
                .embedding_translation
                .as_deref()
                .ok_or_else(|| missing("emb_tl"))?;
            cosine_similarity(tc, tl).map_err(|e| match e {
                Error::ZeroNorm { .. } => Error::ZeroNorm {
                    id: Some(s.id.clone()),
                },
                Error::DimensionMismatch { expected, found, .. } => Error::Invariant {
                    id: s.id.clone(),
                    message: format!("embedding dimensions differ: {expected} vs {found}"),
                },
                other => other,
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    fraction_filter(
        corpus,
        FilterMethod::EmbeddingSimilarity,
        scores,
        keep_fraction,
        BTreeMap::new(),
    )
}

/// Longest consecutive repetition of an n-gram found in a text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopFinding {
    pub flagged: bool,
    /// The repeated n-gram, space-joined; `None` for empty input.
    pub ngram: Option<String>,
    pub repeats: usize,
}

/// Scans whitespace tokens for an n-gram (`1 <= n <= max_n`) repeated
/// back-to-back. Reports the highest repeat count; ties go to the shorter
/// n-gram, then the earlier position.
pub fn detect_looping(text: &str, max_n: usize, min_repeats: usize) -> Result<LoopFinding> {
    if max_n < 1 || min_repeats < 2 {
        return Err(Error::invalid(format!(
            "need max_n >= 1 and min_repeats >= 2, got {max_n} and {min_repeats}"
        )));
    }
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return Ok(LoopFinding {
            flagged: false,
            ngram: None,
            repeats: 0,
        });
    }
    let mut best = (1usize, 0usize, 1usize); // (repeats, start, n)
    for n in 1..=max_n.min(tokens.len()) {
        // A run of L consecutive positions with tokens[i] == tokens[i + n]
        // starting at s means the n-gram at s repeats L / n + 1 times.
        let mut i = 0;
        while i + n < tokens.len() {
            if tokens[i] != tokens[i + n] {
                i += 1;
                continue;
            }
            let start = i;
            while i + n < tokens.len() && tokens[i] == tokens[i + n] {
                i += 1;
            }
            let repeats = (i - start) / n + 1;
            if repeats > best.0 {
                best = (repeats, start, n);
            }
        }
    }
    let (repeats, start, n) = best;
    Ok(LoopFinding {
        flagged: repeats >= min_repeats,
        ngram: Some(tokens[start..start + n].join(" ")),
        repeats,
    })
}

/// Looping diagnostic over a corpus. Nothing is removed: `dropped` lists
/// the flagged samples and scores are the repeat counts.
pub fn flag_looping(corpus: &Corpus, max_n: usize, min_repeats: usize) -> Result<FilterReport> {
    let findings = corpus
        .samples
        .par_iter()
        .map(|s| detect_looping(s.any_transcript().unwrap_or(""), max_n, min_repeats))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = findings.iter().map(|f| f.repeats as f64).collect();
    let (mut kept, mut dropped) = (Vec::new(), Vec::new());
    for (s, f) in corpus.samples.iter().zip(&findings) {
        if f.flagged {
            dropped.push(s.id.clone());
        } else {
            kept.push(s.id.clone());
        }
    }
    let mut params = BTreeMap::new();
    params.insert("max_n".into(), Value::from(max_n));
    params.insert("min_repeats".into(), Value::from(min_repeats));
    Ok(FilterReport {
        method: FilterMethod::LoopFlag,
        scores: scored(corpus, &scores),
        kept,
        dropped,
        threshold: Threshold::Value {
            value: min_repeats as f64,
        },
        params,
    })
}
