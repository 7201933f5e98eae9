//! Concatenation augmentation: random pairs of supervised samples are joined
//! into longer samples (audio, transcript and translation alike).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusRole, Provenance, Sample};
use crate::error::{Error, Result};

pub const DEFAULT_AUGMENT_K: usize = 20_000;

/// Which samples get concatenated, in which order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentPlan {
    /// Source ids per augmented sample; length 2 unless a longer chain was asked for.
    pub pairs: Vec<Vec<String>>,
    pub seed: u64,
    pub separator: String,
}

impl AugmentPlan {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub chain_len: usize,
    pub separator: String,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            chain_len: 2,
            separator: " ".into(),
        }
    }
}

/// Draws `k` ordered pairs of distinct samples uniformly with replacement.
pub fn make_plan(corpus: &Corpus, k: usize, seed: u64) -> Result<AugmentPlan> {
    make_plan_with(corpus, k, seed, &PlanOptions::default())
}

pub fn make_plan_with(
    corpus: &Corpus,
    k: usize,
    seed: u64,
    opts: &PlanOptions,
) -> Result<AugmentPlan> {
    if corpus.role != CorpusRole::Supervised {
        return Err(Error::invalid(format!(
            "augmentation source must be a supervised corpus, got {:?}",
            corpus.role
        )));
    }
    if opts.chain_len < 2 {
        return Err(Error::invalid("chain length must be at least 2"));
    }
    let n = corpus.len();
    if n < opts.chain_len {
        return Err(Error::invalid(format!(
            "corpus has {n} samples, need at least {}",
            opts.chain_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(k);
    let mut chosen = Vec::with_capacity(opts.chain_len);
    for _ in 0..k {
        chosen.clear();
        // Uniform over ordered tuples of distinct indices: each draw is
        // uniform over the indices not yet used.
        for m in 0..opts.chain_len {
            let mut idx = rng.gen_range(0..n - m);
            let mut sorted = chosen.clone();
            sorted.sort_unstable();
            for &c in &sorted {
                if idx >= c {
                    idx += 1;
                }
            }
            chosen.push(idx);
        }
        pairs.push(
            chosen
                .iter()
                .map(|&i| corpus.samples[i].id.clone())
                .collect(),
        );
    }
    Ok(AugmentPlan {
        pairs,
        seed,
        separator: opts.separator.clone(),
    })
}

/// Joins samples into one augmented sample. `index` is the position in the
/// plan and makes the id unique when the same pair is drawn twice.
pub fn concat_samples(parts: &[&Sample], separator: &str, index: usize) -> Result<Sample> {
    if parts.len() < 2 {
        return Err(Error::invalid("need at least two samples to concatenate"));
    }
    let mut transcripts = Vec::with_capacity(parts.len());
    let mut translations = Vec::with_capacity(parts.len());
    for s in parts {
        transcripts.push(s.require("gold_transcript", &s.gold_transcript)?);
        translations.push(s.require("gold_translation", &s.gold_translation)?);
    }
    let ids: Vec<&str> = parts.iter().map(|s| s.id.as_str()).collect();
    Ok(Sample {
        id: format!("aug:{}#{index}", ids.join("+")),
        audio_ref: None,
        duration_s: parts.iter().map(|s| s.duration_s).sum(),
        transcript: None,
        translation: None,
        gold_transcript: Some(transcripts.join(separator)),
        gold_translation: Some(translations.join(separator)),
        provenance: Provenance::Augmented,
        segments: ids.iter().map(|s| s.to_string()).collect(),
        embedding_transcript: None,
        embedding_translation: None,
    })
}

pub fn concat_pair(a: &Sample, b: &Sample, separator: &str, index: usize) -> Result<Sample> {
    concat_samples(&[a, b], separator, index)
}

/// Materializes a plan into an augmented-role corpus with one sample per entry.
pub fn apply_plan(corpus: &Corpus, plan: &AugmentPlan) -> Result<Corpus> {
    let by_id: HashMap<&str, &Sample> = corpus.samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let samples = plan
        .pairs
        .par_iter()
        .enumerate()
        .map(|(i, ids)| {
            let parts = ids
                .iter()
                .map(|id| {
                    by_id.get(id.as_str()).copied().ok_or_else(|| {
                        Error::invalid(format!("plan entry {i} references unknown sample {id:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            for w in parts.windows(2) {
                if w[0].id == w[1].id {
                    return Err(Error::invalid(format!(
                        "plan entry {i} concatenates {:?} with itself",
                        w[0].id
                    )));
                }
            }
            concat_samples(&parts, &plan.separator, i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        name: format!("{}-aug", corpus.name),
        role: CorpusRole::Augmented,
        source_lang: corpus.source_lang.clone(),
        target_lang: corpus.target_lang.clone(),
        samples,
    })
}

fn hound_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::AudioFormat(format!("{}: {other}", path.display())),
    }
}

/// Concatenates PCM WAV files sample-accurately and returns the output
/// duration in seconds. All inputs must share rate, channels and sample format.
pub fn concat_audio<P: AsRef<Path>>(paths: &[P], out_path: impl AsRef<Path>) -> Result<f64> {
    let out_path = out_path.as_ref();
    let first = paths
        .first()
        .ok_or(Error::Empty("no audio inputs"))?
        .as_ref();
    let spec = hound::WavReader::open(first)
        .map_err(|e| hound_err(first, e))?
        .spec();
    let mut writer = hound::WavWriter::create(out_path, spec).map_err(|e| hound_err(out_path, e))?;
    let mut frames: u64 = 0;
    for p in paths {
        let p = p.as_ref();
        let mut reader = hound::WavReader::open(p).map_err(|e| hound_err(p, e))?;
        if reader.spec() != spec {
            return Err(Error::AudioFormat(format!(
                "{} has format {:?}, expected {:?}",
                p.display(),
                reader.spec(),
                spec
            )));
        }
        frames += u64::from(reader.duration());
        match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Float, _) => {
                for s in reader.samples::<f32>() {
                    writer.write_sample(s.map_err(|e| hound_err(p, e))?).map_err(|e| hound_err(out_path, e))?;
                }
            }
            (hound::SampleFormat::Int, bits) if bits <= 16 => {
                for s in reader.samples::<i16>() {
                    writer.write_sample(s.map_err(|e| hound_err(p, e))?).map_err(|e| hound_err(out_path, e))?;
                }
            }
            (hound::SampleFormat::Int, _) => {
                for s in reader.samples::<i32>() {
                    writer.write_sample(s.map_err(|e| hound_err(p, e))?).map_err(|e| hound_err(out_path, e))?;
                }
            }
        }
    }
    writer.finalize().map_err(|e| hound_err(out_path, e))?;
    Ok(frames as f64 / f64::from(spec.sample_rate))
}

/// Builds the concatenated audio for every augmented sample and points its
/// `audio_ref` at the new file under `audio_dir`.
pub fn materialize_audio(source: &Corpus, augmented: &mut Corpus, audio_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(audio_dir).map_err(|e| Error::io(audio_dir, e))?;
    let by_id: HashMap<&str, &Sample> = source.samples.iter().map(|s| (s.id.as_str(), s)).collect();
    augmented
        .samples
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(i, s)| {
            let inputs = s
                .segments
                .iter()
                .map(|id| {
                    let src = by_id
                        .get(id.as_str())
                        .ok_or_else(|| Error::invalid(format!("unknown segment {id:?}")))?;
                    src.audio_ref
                        .as_ref()
                        .map(PathBuf::from)
                        .ok_or_else(|| Error::MissingField {
                            id: id.clone(),
                            field: "audio_ref",
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            let out = audio_dir.join(format!("aug{i:06}.wav"));
            concat_audio(&inputs, &out)?;
            s.audio_ref = Some(out.to_string_lossy().into_owned());
            Ok(())
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn supervised(n: usize) -> Corpus {
        Corpus::new(
            "l",
            CorpusRole::Supervised,
            "en",
            "de",
            (0..n)
                .map(|i| Sample::gold(format!("s{i}"), 1.0 + i as f64, format!("t{i}"), format!("u{i}")))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn plan_size_and_determinism() {
        let c = supervised(50);
        let a = make_plan(&c, 300, 7).unwrap();
        let b = make_plan(&c, 300, 7).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a.to_json_pretty().unwrap(), b.to_json_pretty().unwrap());
        assert_ne!(a, make_plan(&c, 300, 8).unwrap());
        assert!(a.pairs.iter().all(|p| p[0] != p[1]));
        assert!(make_plan(&c, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn two_sample_corpus_yields_both_orders_only() {
        let c = supervised(2);
        let plan = make_plan(&c, 3, 11).unwrap();
        for p in &plan.pairs {
            assert!(p == &["s0", "s1"] || p == &["s1", "s0"], "{p:?}");
        }
    }

    #[test]
    fn plan_preconditions() {
        assert!(make_plan(&supervised(1), 5, 0).is_err());
        let unsup = supervised(5).with_role(CorpusRole::Unsupervised).unwrap();
        assert!(make_plan(&unsup, 5, 0).is_err());
    }

    #[test]
    fn chains_are_distinct() {
        let c = supervised(4);
        let opts = PlanOptions {
            chain_len: 4,
            ..PlanOptions::default()
        };
        let plan = make_plan_with(&c, 50, 3, &opts).unwrap();
        for p in &plan.pairs {
            let mut ids = p.clone();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 4);
        }
    }

    #[test]
    fn concat_pair_example() {
        let a = Sample::gold("a", 2.0, "hello there", "hallo da");
        let b = Sample::gold("b", 3.0, "good morning", "guten morgen");
        let s = concat_pair(&a, &b, " ", 0).unwrap();
        assert_eq!(s.duration_s, 5.0);
        assert_eq!(s.gold_transcript.as_deref(), Some("hello there good morning"));
        assert_eq!(s.gold_translation.as_deref(), Some("hallo da guten morgen"));
        assert_eq!(s.segments, ["a", "b"]);
        assert_eq!(s.id, "aug:a+b#0");
        assert_eq!(s.provenance, Provenance::Augmented);
        s.validate().unwrap();

        let c = Sample::gold("c", 0.6, "x", "y");
        let d = Sample::gold("d", 0.7, "x", "y");
        assert_abs_diff_eq!(concat_pair(&c, &d, " ", 1).unwrap().duration_s, 1.3, epsilon = 1e-6);
    }

    #[test]
    fn concat_word_counts_add_up() {
        let w = |n: usize| vec!["w"; n].join(" ");
        let a = Sample::gold("a", 1.0, w(25), "x");
        let b = Sample::gold("b", 1.0, w(26), "y");
        let s = concat_pair(&a, &b, " ", 0).unwrap();
        assert_eq!(s.gold_transcript.unwrap().split_whitespace().count(), 51);
    }

    #[test]
    fn concat_requires_gold() {
        let a = Sample::unlabeled("a", 1.0);
        let b = Sample::gold("b", 1.0, "x", "y");
        assert!(matches!(concat_pair(&a, &b, " ", 0), Err(Error::MissingField { .. })));
    }

    #[test]
    fn apply_plan_sizes_and_dangling_ids() {
        let c = supervised(10);
        let empty = AugmentPlan {
            pairs: vec![],
            seed: 0,
            separator: " ".into(),
        };
        assert!(apply_plan(&c, &empty).unwrap().is_empty());
        let plan = make_plan(&c, 40, 5).unwrap();
        let aug = apply_plan(&c, &plan).unwrap();
        assert_eq!(aug.len(), 40);
        assert_eq!(aug.role, CorpusRole::Augmented);
        aug.validate().unwrap();
        assert_eq!(apply_plan(&c, &plan).unwrap(), aug);

        let dropped = c.with_samples(c.samples[1..].to_vec());
        let bad = AugmentPlan {
            pairs: vec![vec!["s0".into(), "s1".into()]],
            ..empty
        };
        let err = apply_plan(&dropped, &bad).unwrap_err();
        assert!(err.to_string().contains("s0"), "{err}");
    }

    fn write_wav(path: &Path, rate: u32, samples: &[i16]) {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn audio_concatenation() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.wav");
        let b = dir.path().join("b.wav");
        let a_data: Vec<i16> = (0..16000).map(|i| (i % 300) as i16).collect();
        write_wav(&a, 16000, &a_data);
        write_wav(&b, 16000, &vec![7; 32000]);
        let out = dir.path().join("ab.wav");
        let d = concat_audio(&[&a, &b], &out).unwrap();
        assert_abs_diff_eq!(d, 3.0, epsilon = 1.0 / 16000.0);
        let r = hound::WavReader::open(&out).unwrap();
        assert_eq!(r.duration(), 48000);

        let single = dir.path().join("single.wav");
        concat_audio(&[&a], &single).unwrap();
        let got: Vec<i16> = hound::WavReader::open(&single).unwrap().samples().map(|s| s.unwrap()).collect();
        assert_eq!(got, a_data);

        let c = dir.path().join("c.wav");
        write_wav(&c, 8000, &[0; 100]);
        assert!(matches!(concat_audio(&[&a, &c], dir.path().join("x.wav")), Err(Error::AudioFormat(_))));
        assert!(matches!(
            concat_audio(&[dir.path().join("missing.wav")], dir.path().join("y.wav")),
            Err(Error::Io { .. })
        ));
    }
}
