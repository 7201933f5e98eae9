//! In-process stand-in for a real trainer. Pseudo-labels are gold labels
//! with word substitutions and duration-dependent n-gram loops; training
//! shrinks the noise in proportion to how clean the pseudo-labels it saw were.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::Backend;
use crate::corpus::{load_manifest, save_manifest, Corpus, Provenance, Sample};
use crate::error::{Error, Result};
use crate::text::{wer_counts, NormalizationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Probability of replacing each word, ε.
    pub word_sub_rate: f64,
    /// Loop probability per second of audio, β; capped at 1.
    pub loop_rate_slope: f64,
    /// Largest order of the repeated n-gram; the order is drawn from 1..=n.
    pub loop_ngram_n: usize,
    /// Times the n-gram is appended, r.
    pub loop_repeats: usize,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            word_sub_rate: 0.1,
            loop_rate_slope: 0.05,
            loop_ngram_n: 4,
            loop_repeats: 3,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.word_sub_rate) {
            return Err(Error::invalid(format!("word_sub_rate {} outside [0, 1]", self.word_sub_rate)));
        }
        if !(self.loop_rate_slope >= 0.0 && self.loop_rate_slope.is_finite()) {
            return Err(Error::invalid(format!("loop_rate_slope {} must be >= 0", self.loop_rate_slope)));
        }
        if self.loop_ngram_n < 1 || self.loop_repeats < 1 {
            return Err(Error::invalid("loop_ngram_n and loop_repeats must be >= 1"));
        }
        Ok(())
    }

    pub fn loop_probability(&self, duration_s: f64) -> f64 {
        (self.loop_rate_slope * duration_s).clamp(0.0, 1.0)
    }
}

fn sample_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Every random draw happens regardless of the noise levels, so lowering
/// ε or β only ever removes corruption events for a fixed seed.
fn substitute(text: &str, eps: f64, rng: &mut ChaCha8Rng) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            let u: f64 = rng.gen();
            let sub: u32 = rng.gen();
            if u < eps {
                format!("qz{sub}")
            } else {
                w.to_string()
            }
        })
        .collect()
}

fn append_loop(words: &mut Vec<String>, order: usize, start_u: f64, repeats: usize) {
    if words.is_empty() {
        return;
    }
    let order = order.min(words.len());
    let start = ((start_u * (words.len() - order + 1) as f64) as usize).min(words.len() - order);
    let gram: Vec<String> = words[start..start + order].to_vec();
    for _ in 0..repeats {
        words.extend(gram.iter().cloned());
    }
}

fn label_one(s: &Sample, noise: &NoiseModel, seed: u64) -> Result<(Sample, bool)> {
    let gold_tc = s.require("gold_transcript", &s.gold_transcript)?;
    let gold_tl = s.require("gold_translation", &s.gold_translation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, &s.id));
    let mut tc = substitute(gold_tc, noise.word_sub_rate, &mut rng);
    let mut tl = substitute(gold_tl, noise.word_sub_rate, &mut rng);
    let u: f64 = rng.gen();
    let order = rng.gen_range(1..=noise.loop_ngram_n);
    let (start_tc, start_tl): (f64, f64) = (rng.gen(), rng.gen());
    let looped = u < noise.loop_probability(s.duration_s) && !tc.is_empty();
    if looped {
        append_loop(&mut tc, order, start_tc, noise.loop_repeats);
        append_loop(&mut tl, order, start_tl, noise.loop_repeats);
    }
    let mut out = s.clone();
    out.transcript = Some(tc.join(" "));
    out.translation = Some(tl.join(" "));
    out.provenance = Provenance::Pseudo;
    out.embedding_transcript = None;
    out.embedding_translation = None;
    Ok((out, looped))
}

/// Simulated model predictions derived from the gold labels.
pub fn mock_label(corpus: &Corpus, noise: &NoiseModel, seed: u64) -> Result<Corpus> {
    mock_label_traced(corpus, noise, seed).map(|(c, _)| c)
}

/// Like [`mock_label`], also returning which samples got a loop injected.
pub fn mock_label_traced(corpus: &Corpus, noise: &NoiseModel, seed: u64) -> Result<(Corpus, Vec<bool>)> {
    noise.validate()?;
    let (samples, looped) = corpus
        .samples
        .iter()
        .map(|s| label_one(s, noise, seed))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((corpus.with_samples(samples), looped))
}

/// Contents of a simulated checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCheckpoint {
    pub noise: NoiseModel,
    /// Training runs that saw pseudo-labels.
    pub updates: usize,
    pub seed: u64,
}

impl SimCheckpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Backend whose "model" is a [`NoiseModel`].
///
/// Training on pseudo-labels with corpus WER `w` against gold multiplies
/// ε and β by `1 - eta * c`, `c = 1 - min(1, w)`; an augmented share `a` of
/// the training set multiplies β by `1 - eta * a`. Training from scratch
/// starts from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedBackend {
    pub base: NoiseModel,
    pub eta: f64,
    /// Pseudo-label updates after which training stops changing the model.
    pub plateau_after: Option<usize>,
    pub seed: u64,
}

impl SimulatedBackend {
    pub fn new(base: NoiseModel, seed: u64) -> Self {
        SimulatedBackend {
            base,
            eta: 0.5,
            plateau_after: None,
            seed,
        }
    }

    fn cleanliness(train: &Corpus) -> Result<Option<f64>> {
        let mut refs = Vec::new();
        let mut hyps = Vec::new();
        for s in &train.samples {
            if s.provenance != Provenance::Pseudo {
                continue;
            }
            if let (Some(r), Some(h)) = (&s.gold_transcript, &s.transcript) {
                refs.push(r.as_str());
                hyps.push(h.as_str());
            }
        }
        if refs.is_empty() {
            return Ok(None);
        }
        match wer_counts(&refs, &hyps, &NormalizationConfig::default()) {
            Ok(c) => Ok(Some(1.0 - (c.errors as f64 / c.ref_words as f64).min(1.0))),
            Err(Error::Empty(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn train_corpus(&self, train: &Corpus, init: Option<&SimCheckpoint>) -> Result<SimCheckpoint> {
        let mut ck = init.cloned().unwrap_or(SimCheckpoint {
            noise: self.base,
            updates: 0,
            seed: self.seed,
        });
        if train.is_empty() {
            return Err(Error::Empty("training manifest has no samples"));
        }
        if self.plateau_after.is_some_and(|p| ck.updates >= p) {
            return Ok(ck);
        }
        let aug = train
            .samples
            .iter()
            .filter(|s| s.provenance == Provenance::Augmented)
            .count() as f64
            / train.len() as f64;
        ck.noise.loop_rate_slope *= 1.0 - self.eta * aug;
        if let Some(c) = Self::cleanliness(train)? {
            let f = 1.0 - self.eta * c;
            ck.noise.word_sub_rate *= f;
            ck.noise.loop_rate_slope *= f;
            ck.updates += 1;
        }
        Ok(ck)
    }

    /// Synthetic sentence embeddings: the transcript vector is fixed and the
    /// translation vector is rotated so their cosine equals the product of the
    /// two sides' word accuracies against gold.
    pub fn embed_corpus(corpus: &Corpus) -> Result<Corpus> {
        let norm = NormalizationConfig::default();
        let accuracy = |gold: &str, hyp: &str| -> Result<f64> {
            match wer_counts(&[gold], &[hyp], &norm) {
                Ok(c) => Ok(1.0 - (c.errors as f64 / c.ref_words as f64).min(1.0)),
                Err(Error::Empty(_)) => Ok(1.0),
                Err(e) => Err(e),
            }
        };
        let samples = corpus
            .samples
            .iter()
            .map(|s| {
                let q = accuracy(
                    s.require("gold_transcript", &s.gold_transcript)?,
                    s.require("transcript", &s.transcript)?,
                )? * accuracy(
                    s.require("gold_translation", &s.gold_translation)?,
                    s.require("translation", &s.translation)?,
                )?;
                let mut out = s.clone();
                out.embedding_transcript = Some(vec![1.0, 0.0]);
                out.embedding_translation = Some(vec![q, (1.0 - q * q).max(0.0).sqrt()]);
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(corpus.with_samples(samples))
    }
}

impl Backend for SimulatedBackend {
    fn train(&self, train_manifest: &Path, init: Option<&Path>, out_checkpoint: &Path) -> Result<()> {
        let train = load_manifest(train_manifest)?;
        let init = init.map(SimCheckpoint::load).transpose()?;
        self.train_corpus(&train, init.as_ref())?.save(out_checkpoint)
    }

    fn label(&self, checkpoint: &Path, in_manifest: &Path, out_manifest: &Path) -> Result<()> {
        let ck = SimCheckpoint::load(checkpoint)?;
        let corpus = load_manifest(in_manifest)?;
        save_manifest(&mock_label(&corpus, &ck.noise, ck.seed)?, out_manifest)
    }

    fn embed(&self, _checkpoint: &Path, in_manifest: &Path, out_manifest: &Path) -> Result<()> {
        let corpus = load_manifest(in_manifest)?;
        save_manifest(&Self::embed_corpus(&corpus)?, out_manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusRole;
    use crate::text::wer;

    fn gold(n: usize, dur: impl Fn(usize) -> f64) -> Corpus {
        Corpus::new(
            "g",
            CorpusRole::Supervised,
            "en",
            "de",
            (0..n)
                .map(|i| {
                    Sample::gold(
                        format!("s{i}"),
                        dur(i),
                        format!("w{} w{} w{} w{} w{}", i % 7, i % 11, i % 13, i, i % 3),
                        format!("v{} v{} v{}", i % 5, i, i % 2),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn transcript_wer(c: &Corpus) -> f64 {
        let refs: Vec<&str> = c.samples.iter().map(|s| s.gold_transcript.as_deref().unwrap()).collect();
        let hyps: Vec<&str> = c.samples.iter().map(|s| s.transcript.as_deref().unwrap()).collect();
        wer(&refs, &hyps, &NormalizationConfig::default()).unwrap()
    }

    fn noise(eps: f64, beta: f64) -> NoiseModel {
        NoiseModel {
            word_sub_rate: eps,
            loop_rate_slope: beta,
            ..NoiseModel::default()
        }
    }

    #[test]
    fn clean_and_fully_substituted() {
        let c = gold(50, |_| 3.0);
        let clean = mock_label(&c, &noise(0.0, 0.0), 1).unwrap();
        assert_eq!(transcript_wer(&clean), 0.0);
        assert!(clean.samples.iter().all(|s| s.transcript == s.gold_transcript
            && s.translation == s.gold_translation
            && s.provenance == Provenance::Pseudo));
        let dirty = mock_label(&c, &noise(1.0, 0.0), 1).unwrap();
        assert_eq!(transcript_wer(&dirty), 1.0);
    }

    #[test]
    fn loops_grow_with_duration() {
        let c = gold(1000, |i| if i % 2 == 0 { 1.0 } else { 10.0 });
        let (_, looped) = mock_label_traced(&c, &noise(0.0, 0.2), 9).unwrap();
        let short = looped.iter().step_by(2).filter(|&&l| l).count();
        let long = looped.iter().skip(1).step_by(2).filter(|&&l| l).count();
        assert!(long > short, "{long} vs {short}");
        assert_eq!(long, 500);
    }

    #[test]
    fn deterministic_and_monotone_in_noise() {
        let c = gold(200, |i| 1.0 + (i % 9) as f64);
        let a = mock_label(&c, &noise(0.3, 0.1), 4).unwrap();
        assert_eq!(a, mock_label(&c, &noise(0.3, 0.1), 4).unwrap());
        let b = mock_label(&c, &noise(0.15, 0.05), 4).unwrap();
        assert!(transcript_wer(&b) < transcript_wer(&a));
    }

    #[test]
    fn requires_gold() {
        let c = Corpus::new("u", CorpusRole::Unsupervised, "en", "de", vec![Sample::unlabeled("x", 1.0)]).unwrap();
        assert!(matches!(mock_label(&c, &noise(0.1, 0.1), 0), Err(Error::MissingField { .. })));
    }

    #[test]
    fn training_reduces_noise_by_cleanliness() {
        let backend = SimulatedBackend::new(noise(0.2, 0.1), 3);
        let l = gold(20, |_| 2.0);
        let base = backend.train_corpus(&l, None).unwrap();
        assert_eq!(base.noise, backend.base);
        assert_eq!(base.updates, 0);

        let perfect = mock_label(&l, &noise(0.0, 0.0), 0).unwrap();
        let ck = backend.train_corpus(&perfect, Some(&base)).unwrap();
        assert!((ck.noise.word_sub_rate - 0.1).abs() < 1e-12);
        assert_eq!(ck.updates, 1);

        let plateau = SimulatedBackend {
            plateau_after: Some(1),
            ..backend.clone()
        };
        assert_eq!(plateau.train_corpus(&perfect, Some(&ck)).unwrap(), ck);
    }

    #[test]
    fn embeddings_reflect_quality() {
        let c = gold(30, |i| 1.0 + i as f64);
        let clean = SimulatedBackend::embed_corpus(&mock_label(&c, &noise(0.0, 0.0), 0).unwrap()).unwrap();
        for s in &clean.samples {
            assert_eq!(s.embedding_translation.as_deref(), Some(&[1.0, 0.0][..]));
        }
        let dirty = SimulatedBackend::embed_corpus(&mock_label(&c, &noise(0.5, 0.0), 0).unwrap()).unwrap();
        assert!(dirty.samples.iter().any(|s| s.embedding_translation.as_ref().unwrap()[0] < 1.0));
    }
}
