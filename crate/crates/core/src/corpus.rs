//! Manifest data model: samples, corpora, the line-delimited manifest format,
//! the duration/word-count preprocessing filter and corpus merging.
//!
//! A manifest is a JSON-lines file. The first line may carry corpus metadata
//! as `{"corpus": {...}}`; every other line is one [`Sample`] record.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::filters::{FilterMethod, FilterReport, Threshold};
use crate::text::{count_words, WordCounting};

/// Version of the on-disk manifest layout.
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

const SAMPLE_FIELDS: [&str; 11] = [
    "id",
    "audio_ref",
    "duration_s",
    "transcript",
    "translation",
    "gold_transcript",
    "gold_translation",
    "provenance",
    "segments",
    "emb_tc",
    "emb_tl",
];

const DURATION_TOLERANCE_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Gold,
    Pseudo,
    Augmented,
}

/// One utterance with its gold and/or predicted labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_ref: Option<String>,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_translation: Option<String>,
    #[serde(default)]
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<String>,
    #[serde(rename = "emb_tc", default, skip_serializing_if = "Option::is_none")]
    pub embedding_transcript: Option<Vec<f64>>,
    #[serde(rename = "emb_tl", default, skip_serializing_if = "Option::is_none")]
    pub embedding_translation: Option<Vec<f64>>,
}

impl Sample {
    /// A gold-labeled sample.
    pub fn gold(
        id: impl Into<String>,
        duration_s: f64,
        transcript: impl Into<String>,
        translation: impl Into<String>,
    ) -> Self {
        Sample {
            id: id.into(),
            audio_ref: None,
            duration_s,
            transcript: None,
            translation: None,
            gold_transcript: Some(transcript.into()),
            gold_translation: Some(translation.into()),
            provenance: Provenance::Gold,
            segments: Vec::new(),
            embedding_transcript: None,
            embedding_translation: None,
        }
    }

    /// An unlabeled sample: only audio metadata.
    pub fn unlabeled(id: impl Into<String>, duration_s: f64) -> Self {
        Sample {
            gold_transcript: None,
            gold_translation: None,
            ..Sample::gold(id, duration_s, "", "")
        }
    }

    pub fn has_gold(&self) -> bool {
        self.gold_transcript.is_some() && self.gold_translation.is_some()
    }

    /// Predicted transcript if present, otherwise the gold one.
    pub fn any_transcript(&self) -> Option<&str> {
        self.transcript.as_deref().or(self.gold_transcript.as_deref())
    }

    /// Predicted translation if present, otherwise the gold one.
    pub fn any_translation(&self) -> Option<&str> {
        self.translation
            .as_deref()
            .or(self.gold_translation.as_deref())
    }

    pub(crate) fn require<'a>(
        &self,
        field: &'static str,
        value: &'a Option<String>,
    ) -> Result<&'a str> {
        value.as_deref().ok_or_else(|| Error::MissingField {
            id: self.id.clone(),
            field,
        })
    }

    /// Checks the per-sample invariants that do not need the surrounding corpus.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Invariant {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(fail("empty id".into()));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(fail(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            )));
        }
        match self.provenance {
            Provenance::Pseudo => {
                if self.transcript.is_none() || self.translation.is_none() {
                    return Err(fail(
                        "pseudo-labeled sample needs transcript and translation".into(),
                    ));
                }
            }
            Provenance::Augmented => {
                if self.segments.len() < 2 {
                    return Err(fail("augmented sample needs at least two segments".into()));
                }
            }
            Provenance::Gold => {}
        }
        if self.provenance != Provenance::Augmented && !self.segments.is_empty() {
            return Err(fail("segments are only allowed on augmented samples".into()));
        }
        if let (Some(tc), Some(tl)) = (&self.embedding_transcript, &self.embedding_translation) {
            if tc.len() != tl.len() {
                return Err(fail(format!(
                    "embedding dimensions differ: {} vs {}",
                    tc.len(),
                    tl.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusRole {
    Supervised,
    Unsupervised,
    Augmented,
    #[default]
    Mixed,
}

impl std::str::FromStr for CorpusRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(CorpusRole::Supervised),
            "unsupervised" => Ok(CorpusRole::Unsupervised),
            "augmented" => Ok(CorpusRole::Augmented),
            "mixed" => Ok(CorpusRole::Mixed),
            other => Err(Error::invalid(format!("unknown corpus role {other:?}"))),
        }
    }
}

/// Corpus metadata as stored in the manifest header line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CorpusHeader {
    name: String,
    role: CorpusRole,
    source_lang: String,
    target_lang: String,
    #[serde(default = "default_schema")]
    schema: u32,
}

fn default_schema() -> u32 {
    MANIFEST_SCHEMA_VERSION
}

/// An ordered, role-tagged collection of samples for one language pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub role: CorpusRole,
    pub source_lang: String,
    pub target_lang: String,
    pub samples: Vec<Sample>,
}

impl Corpus {
    /// Builds and validates a corpus.
    pub fn new(
        name: impl Into<String>,
        role: CorpusRole,
        source_lang: impl Into<String>,
        target_lang: impl Into<String>,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let corpus = Corpus {
            name: name.into(),
            role,
            source_lang: source_lang.into(),
            target_lang: target_lang.into(),
            samples,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Same metadata, different samples. The result is not re-validated.
    pub fn with_samples(&self, samples: Vec<Sample>) -> Corpus {
        Corpus {
            name: self.name.clone(),
            role: self.role,
            source_lang: self.source_lang.clone(),
            target_lang: self.target_lang.clone(),
            samples,
        }
    }

    /// Re-tags the corpus, checking the new role's invariants.
    pub fn with_role(mut self, role: CorpusRole) -> Result<Corpus> {
        self.role = role;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, usize> = HashMap::with_capacity(self.samples.len());
        for (idx, sample) in self.samples.iter().enumerate() {
            sample.validate()?;
            if let Some(first) = seen.insert(&sample.id, idx) {
                return Err(Error::DuplicateId {
                    id: sample.id.clone(),
                    first: first + 1,
                    second: idx + 1,
                });
            }
            if self.role == CorpusRole::Supervised && !sample.has_gold() {
                return Err(Error::Invariant {
                    id: sample.id.clone(),
                    message: "supervised corpus requires gold transcript and translation"
                        .into(),
                });
            }
        }
        // Augmented durations can only be checked when the sources are present.
        for sample in &self.samples {
            if sample.provenance != Provenance::Augmented {
                continue;
            }
            let sources: Option<Vec<f64>> = sample
                .segments
                .iter()
                .map(|id| seen.get(id.as_str()).map(|&i| self.samples[i].duration_s))
                .collect();
            if let Some(durations) = sources {
                let total: f64 = durations.iter().sum();
                if (total - sample.duration_s).abs() > DURATION_TOLERANCE_S {
                    return Err(Error::Invariant {
                        id: sample.id.clone(),
                        message: format!(
                            "duration {} does not match segment total {}",
                            sample.duration_s, total
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Result of reading a manifest: the corpus plus the number of record fields
/// that were not part of the schema and were skipped.
#[derive(Debug, Clone)]
pub struct ManifestRead {
    pub corpus: Corpus,
    pub unknown_fields: usize,
}

/// Loads and validates a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
    let read = read_manifest_file(path.as_ref())?;
    if read.unknown_fields > 0 {
        log::warn!(
            "{}: ignored {} unknown field(s)",
            path.as_ref().display(),
            read.unknown_fields
        );
    }
    Ok(read.corpus)
}

pub fn read_manifest_file(path: &Path) -> Result<ManifestRead> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let default_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_manifest(BufReader::new(file), path, &default_name)
}

/// Parses a manifest from any reader. `path` is only used in error messages.
pub fn read_manifest<R: Read>(reader: R, path: &Path, default_name: &str) -> Result<ManifestRead> {
    let reader = BufReader::new(reader);
    let mut header: Option<CorpusHeader> = None;
    let mut samples = Vec::new();
    let mut lines_of: HashMap<String, usize> = HashMap::new();
    let mut unknown_fields = 0usize;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut obj: Map<String, Value> = match serde_json::from_str(&line) {
            Ok(Value::Object(obj)) => obj,
            Ok(_) => return Err(parse_err(line_no, "record is not an object".into())),
            Err(e) => return Err(parse_err(line_no, e.to_string())),
        };
        if !obj.contains_key("id") && obj.contains_key("corpus") {
            if header.is_some() || !samples.is_empty() {
                return Err(parse_err(
                    line_no,
                    "corpus header must be the first record".into(),
                ));
            }
            let h: CorpusHeader = serde_json::from_value(obj.remove("corpus").unwrap())
                .map_err(|e| parse_err(line_no, format!("corpus header: {e}")))?;
            if h.schema > MANIFEST_SCHEMA_VERSION {
                return Err(parse_err(
                    line_no,
                    format!("unsupported manifest schema {}", h.schema),
                ));
            }
            header = Some(h);
            continue;
        }
        let before = obj.len();
        obj.retain(|k, _| SAMPLE_FIELDS.contains(&k.as_str()));
        unknown_fields += before - obj.len();
        let sample: Sample = serde_json::from_value(Value::Object(obj))
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        if let Some(&first) = lines_of.get(&sample.id) {
            return Err(Error::DuplicateId {
                id: sample.id,
                first,
                second: line_no,
            });
        }
        sample.validate()?;
        lines_of.insert(sample.id.clone(), line_no);
        samples.push(sample);
    }

    let header = header.unwrap_or_else(|| CorpusHeader {
        name: default_name.to_string(),
        role: CorpusRole::Mixed,
        source_lang: "und".into(),
        target_lang: "und".into(),
        schema: MANIFEST_SCHEMA_VERSION,
    });
    let corpus = Corpus::new(
        header.name,
        header.role,
        header.source_lang,
        header.target_lang,
        samples,
    )?;
    Ok(ManifestRead {
        corpus,
        unknown_fields,
    })
}

/// Writes the manifest: a header line followed by one line per sample.
pub fn save_manifest(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_manifest(corpus, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_manifest<W: Write>(corpus: &Corpus, w: &mut W) -> std::io::Result<()> {
    let header = CorpusHeader {
        name: corpus.name.clone(),
        role: corpus.role,
        source_lang: corpus.source_lang.clone(),
        target_lang: corpus.target_lang.clone(),
        schema: MANIFEST_SCHEMA_VERSION,
    };
    serde_json::to_writer(&mut *w, &serde_json::json!({ "corpus": header }))?;
    w.write_all(b"\n")?;
    for sample in &corpus.samples {
        serde_json::to_writer(&mut *w, sample)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Cutoffs applied to training data before anything else.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub max_words: usize,
    pub word_counting: WordCounting,
    /// Concatenated samples are meant to be long; they skip the cutoffs.
    pub exempt_augmented: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_duration_s: 0.5,
            max_duration_s: 15.0,
            max_words: 50,
            word_counting: WordCounting::Whitespace,
            exempt_augmented: true,
        }
    }
}

impl PreprocessConfig {
    fn keeps(&self, s: &Sample) -> bool {
        if self.exempt_augmented && s.provenance == Provenance::Augmented {
            return true;
        }
        if s.duration_s < self.min_duration_s || s.duration_s > self.max_duration_s {
            return false;
        }
        [
            &s.transcript,
            &s.translation,
            &s.gold_transcript,
            &s.gold_translation,
        ]
        .into_iter()
        .flatten()
        .all(|t| count_words(t, self.word_counting) <= self.max_words)
    }
}

/// Drops samples outside the duration window or with over-long texts.
pub fn preprocess_filter(corpus: &Corpus) -> (Corpus, FilterReport) {
    preprocess_filter_with(corpus, &PreprocessConfig::default())
}

pub fn preprocess_filter_with(corpus: &Corpus, cfg: &PreprocessConfig) -> (Corpus, FilterReport) {
    let keep: Vec<bool> = corpus.samples.par_iter().map(|s| cfg.keeps(s)).collect();
    let mut kept = Vec::new();
    let mut kept_ids = Vec::new();
    let mut dropped = Vec::new();
    let mut scores = IndexMap::with_capacity(corpus.len());
    for (sample, keep) in corpus.samples.iter().zip(keep) {
        scores.insert(sample.id.clone(), sample.duration_s);
        if keep {
            kept_ids.push(sample.id.clone());
            kept.push(sample.clone());
        } else {
            dropped.push(sample.id.clone());
        }
    }
    let mut params = std::collections::BTreeMap::new();
    params.insert("max_words".to_string(), Value::from(cfg.max_words));
    params.insert(
        "word_counting".to_string(),
        serde_json::to_value(cfg.word_counting).unwrap_or(Value::Null),
    );
    params.insert(
        "exempt_augmented".to_string(),
        Value::from(cfg.exempt_augmented),
    );
    let report = FilterReport {
        method: FilterMethod::Preprocess,
        scores,
        kept: kept_ids,
        dropped,
        threshold: Threshold::Interval {
            low: cfg.min_duration_s,
            high: cfg.max_duration_s,
        },
        params,
    };
    (corpus.with_samples(kept), report)
}

/// Concatenates `b` onto `a`, replicating `b` `round(weight_b)` times.
///
/// Ids from `b` that collide with an existing id get a `#b` suffix (repeated
/// until unique); replica `k >= 1` of a sample is named `<id>#r<k>` first.
pub fn merge_corpora(a: &Corpus, b: &Corpus, weight_b: f64) -> Result<Corpus> {
    if a.source_lang != b.source_lang || a.target_lang != b.target_lang {
        return Err(Error::LanguageMismatch {
            left: format!("{}-{}", a.source_lang, a.target_lang),
            right: format!("{}-{}", b.source_lang, b.target_lang),
        });
    }
    if !(weight_b.is_finite() && weight_b > 0.0) {
        return Err(Error::invalid(format!(
            "weight must be positive, got {weight_b}"
        )));
    }
    let copies = weight_b.round() as usize;
    if copies == 0 {
        return Err(Error::invalid(format!(
            "weight {weight_b} rounds to zero copies"
        )));
    }

    let mut used: HashSet<String> = a.samples.iter().map(|s| s.id.clone()).collect();
    let mut samples = Vec::with_capacity(a.len() + copies * b.len());
    samples.extend(a.samples.iter().cloned());
    for copy in 0..copies {
        for s in &b.samples {
            let mut id = if copy == 0 {
                s.id.clone()
            } else {
                format!("{}#r{copy}", s.id)
            };
            while used.contains(&id) {
                id.push_str("#b");
            }
            used.insert(id.clone());
            let mut s = s.clone();
            s.id = id;
            samples.push(s);
        }
    }
    Ok(Corpus {
        name: format!("{}+{}", a.name, b.name),
        role: CorpusRole::Mixed,
        source_lang: a.source_lang.clone(),
        target_lang: a.target_lang.clone(),
        samples,
    })
}
