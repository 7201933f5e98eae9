//! Text normalization, tokenization and the two scoring metrics: corpus WER
//! for transcripts and corpus BLEU for translations.
//!
//! Scoring always runs `normalize_text` first (lowercasing, diacritic and
//! punctuation stripping), then tokenizes. BLEU uses the mteval-13a scheme or
//! the character-level Chinese variant, single reference per hypothesis.

use std::collections::HashMap;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationConfig {
    pub lowercase: bool,
    pub strip_diacritics: bool,
    pub strip_punctuation: bool,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        NormalizationConfig {
            lowercase: true,
            strip_diacritics: true,
            strip_punctuation: true,
        }
    }
}

static PUNCTUATION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{P}+").unwrap());

/// Lowercases, removes diacritics (canonical decomposition, then dropping
/// combining marks) and Unicode punctuation, and collapses whitespace.
pub fn normalize_text(text: &str, cfg: &NormalizationConfig) -> String {
    let mut s = if cfg.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    if cfg.strip_diacritics {
        // Recompose afterwards so scripts like Hangul come back intact.
        s = s.nfd().filter(|c| !is_combining_mark(*c)).nfc().collect();
    }
    if cfg.strip_punctuation {
        s = PUNCTUATION.replace_all(&s, "").into_owned();
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// How "words" are counted for length cutoffs and length ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordCounting {
    /// Whitespace-delimited tokens, for every language.
    #[default]
    Whitespace,
    /// Each CJK character counts as one word; other runs split on whitespace.
    CjkCharacters,
    /// Non-whitespace characters.
    Characters,
}

pub fn count_words(text: &str, mode: WordCounting) -> usize {
    match mode {
        WordCounting::Whitespace => text.split_whitespace().count(),
        WordCounting::Characters => text.chars().filter(|c| !c.is_whitespace()).count(),
        WordCounting::CjkCharacters => {
            let mut count = 0;
            let mut in_word = false;
            for c in text.chars() {
                if is_cjk(c) {
                    count += 1;
                    in_word = false;
                } else if c.is_whitespace() {
                    in_word = false;
                } else if !in_word {
                    count += 1;
                    in_word = true;
                }
            }
            count
        }
    }
}

// Character classes of the mteval-13a tokenizer, spelled as hex ranges:
// {|}~ [\]^_` space-& (-+ :-@ /
static TOK_PUNCT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"([\x7B-\x7E\x5B-\x60\x20-\x26\x28-\x2B\x3A-\x40\x2F])").unwrap()
});
static TOK_PERIOD_COMMA_AFTER_NONDIGIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([^0-9])([\.,])").unwrap());
static TOK_PERIOD_COMMA_BEFORE_NONDIGIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([\.,])([^0-9])").unwrap());
static TOK_DASH_AFTER_DIGIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([0-9])(-)").unwrap());

/// mteval-13a tokenization: pads punctuation with spaces (periods and commas
/// only outside numbers) and splits on whitespace.
pub fn tokenize_13a(text: &str) -> Vec<String> {
    let padded = format!(" {text} ");
    let s = TOK_PUNCT.replace_all(&padded, " ${1} ");
    let s = TOK_PERIOD_COMMA_AFTER_NONDIGIT.replace_all(&s, "${1} ${2} ");
    let s = TOK_PERIOD_COMMA_BEFORE_NONDIGIT.replace_all(&s, " ${1} ${2}");
    let s = TOK_DASH_AFTER_DIGIT.replace_all(&s, "${1} ${2} ");
    s.split_whitespace().map(str::to_string).collect()
}

const CJK_RANGES: &[(u32, u32)] = &[
    (0x2600, 0x26FF),
    (0x2700, 0x27BF),
    (0x2E80, 0x2EFF),
    (0x2F00, 0x2FDF),
    (0x2FF0, 0x2FFF),
    (0x3000, 0x303F),
    (0x3100, 0x312F),
    (0x31A0, 0x31BF),
    (0x31C0, 0x31EF),
    (0x3200, 0x32FF),
    (0x3300, 0x33FF),
    (0x3400, 0x4DB5),
    (0x4E00, 0x9FBB),
    (0xF900, 0xFA2D),
    (0xFA30, 0xFA6A),
    (0xFA70, 0xFAD9),
    (0xFE10, 0xFE1F),
    (0xFE30, 0xFE4F),
    (0xFF00, 0xFFEF),
    (0x20000, 0x2A6D6),
    (0x2F800, 0x2FA1D),
];

pub fn is_cjk(c: char) -> bool {
    let cp = c as u32;
    CJK_RANGES.iter().any(|&(lo, hi)| lo <= cp && cp <= hi)
}

/// Chinese tokenization: every CJK character is its own token and the
/// maximal non-CJK runs in between go through [`tokenize_13a`].
pub fn tokenize_zh(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !run.is_empty() {
                tokens.extend(tokenize_13a(&run));
                run.clear();
            }
            tokens.push(c.to_string());
        } else {
            run.push(c);
        }
    }
    if !run.is_empty() {
        tokens.extend(tokenize_13a(&run));
    }
    tokens
}

/// Levenshtein distance with unit insertion, deletion and substitution costs.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    if reference.is_empty() {
        return hypothesis.len();
    }
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0usize; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Pooled edit counts behind a corpus WER.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WerCounts {
    pub errors: usize,
    pub ref_words: usize,
}

pub fn wer_counts<R: AsRef<str> + Sync, H: AsRef<str> + Sync>(
    refs: &[R],
    hyps: &[H],
    cfg: &NormalizationConfig,
) -> Result<WerCounts> {
    if refs.len() != hyps.len() {
        return Err(Error::LengthMismatch {
            refs: refs.len(),
            hyps: hyps.len(),
        });
    }
    if refs.is_empty() {
        return Err(Error::Empty("no sentences to score"));
    }
    let per_sentence: Vec<(usize, usize)> = refs
        .par_iter()
        .zip(hyps.par_iter())
        .map(|(r, h)| {
            let r = normalize_text(r.as_ref(), cfg);
            let h = normalize_text(h.as_ref(), cfg);
            let r: Vec<&str> = r.split_whitespace().collect();
            let h: Vec<&str> = h.split_whitespace().collect();
            (edit_distance(&r, &h), r.len())
        })
        .collect();
    let counts = per_sentence
        .into_iter()
        .fold(WerCounts::default(), |acc, (e, n)| WerCounts {
            errors: acc.errors + e,
            ref_words: acc.ref_words + n,
        });
    if counts.ref_words == 0 {
        return Err(Error::Empty("reference corpus has no words"));
    }
    Ok(counts)
}

/// Corpus-level WER: total word edits over total reference words.
pub fn wer<R: AsRef<str> + Sync, H: AsRef<str> + Sync>(
    refs: &[R],
    hyps: &[H],
    cfg: &NormalizationConfig,
) -> Result<f64> {
    let c = wer_counts(refs, hyps, cfg)?;
    Ok(c.errors as f64 / c.ref_words as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuTokenizer {
    #[default]
    #[serde(rename = "13a")]
    Tok13a,
    Zh,
}

impl BleuTokenizer {
    /// `zh*` targets get the Chinese tokenizer, everything else 13a.
    pub fn for_language(lang: &str) -> Self {
        if lang.to_ascii_lowercase().starts_with("zh") {
            BleuTokenizer::Zh
        } else {
            BleuTokenizer::Tok13a
        }
    }

    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            BleuTokenizer::Tok13a => tokenize_13a(text),
            BleuTokenizer::Zh => tokenize_zh(text),
        }
    }

    fn name(self) -> &'static str {
        match self {
            BleuTokenizer::Tok13a => "13a",
            BleuTokenizer::Zh => "zh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "value", rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// A zero match count is replaced by this value.
    Floor(f64),
    /// Adds this value to matches and totals for n >= 2.
    AddK(f64),
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::Floor(0.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_ngram: usize,
    pub smoothing: Smoothing,
    pub tokenizer: BleuTokenizer,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_ngram: 4,
            smoothing: Smoothing::default(),
            tokenizer: BleuTokenizer::Tok13a,
        }
    }
}

impl BleuConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_ngram == 0 {
            return Err(Error::invalid("max_ngram must be at least 1"));
        }
        match self.smoothing {
            Smoothing::Floor(v) if !(0.0..=1.0).contains(&v) => {
                Err(Error::invalid(format!("floor smoothing value {v} outside [0, 1]")))
            }
            Smoothing::AddK(v) if !(v >= 0.0 && v.is_finite()) => {
                Err(Error::invalid(format!("add-k smoothing value {v} must be >= 0")))
            }
            _ => Ok(()),
        }
    }

    /// Compact description of the scoring setup, in the spirit of a
    /// sacreBLEU signature.
    pub fn signature(&self, norm: &NormalizationConfig) -> String {
        let smooth = match self.smoothing {
            Smoothing::None => "none".to_string(),
            Smoothing::Floor(v) => format!("floor-{v}"),
            Smoothing::AddK(v) => format!("add-k-{v}"),
        };
        format!(
            "nrefs:1|case:{}|tok:{}|smooth:{}|ngram:{}|diacritics:{}|punct:{}",
            if norm.lowercase { "lc" } else { "mixed" },
            self.tokenizer.name(),
            smooth,
            self.max_ngram,
            if norm.strip_diacritics { "stripped" } else { "kept" },
            if norm.strip_punctuation { "stripped" } else { "kept" },
        )
    }
}

/// Sufficient statistics for corpus BLEU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    /// Clipped n-gram matches, index 0 for unigrams.
    pub matches: Vec<u64>,
    /// Hypothesis n-gram counts.
    pub totals: Vec<u64>,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    fn zero(max_ngram: usize) -> Self {
        BleuStats {
            matches: vec![0; max_ngram],
            totals: vec![0; max_ngram],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    fn add(mut self, other: BleuStats) -> Self {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
        self
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        }
    }

    /// Smoothed precisions in percent; `None` when a total is zero.
    pub fn precisions(&self, smoothing: Smoothing) -> Vec<Option<f64>> {
        (0..self.matches.len())
            .map(|i| {
                let (mut m, mut t) = (self.matches[i] as f64, self.totals[i] as f64);
                if let Smoothing::AddK(k) = smoothing {
                    if i > 0 {
                        m += k;
                        t += k;
                    }
                }
                if t == 0.0 {
                    return None;
                }
                if m == 0.0 {
                    return Some(match smoothing {
                        Smoothing::Floor(v) => 100.0 * v / t,
                        _ => 0.0,
                    });
                }
                Some(100.0 * m / t)
            })
            .collect()
    }

    /// BLEU in [0, 100].
    pub fn score(&self, smoothing: Smoothing) -> f64 {
        let precisions = self.precisions(smoothing);
        let mut log_sum = 0.0;
        for p in &precisions {
            match p {
                Some(p) if *p > 0.0 => log_sum += (p / 100.0).ln(),
                _ => return 0.0,
            }
        }
        let geo = (log_sum / precisions.len() as f64).exp();
        (100.0 * self.brevity_penalty() * geo).clamp(0.0, 100.0)
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn sentence_stats(reference: &[String], hypothesis: &[String], max_ngram: usize) -> BleuStats {
    let mut stats = BleuStats::zero(max_ngram);
    stats.hyp_len = hypothesis.len() as u64;
    stats.ref_len = reference.len() as u64;
    for n in 1..=max_ngram {
        let ref_counts = ngram_counts(reference, n);
        let hyp_counts = ngram_counts(hypothesis, n);
        stats.totals[n - 1] = hypothesis.len().saturating_sub(n - 1) as u64;
        stats.matches[n - 1] = hyp_counts
            .iter()
            .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

pub fn bleu_stats<R: AsRef<str> + Sync, H: AsRef<str> + Sync>(
    refs: &[R],
    hyps: &[H],
    cfg: &BleuConfig,
    norm: &NormalizationConfig,
) -> Result<BleuStats> {
    cfg.validate()?;
    if refs.len() != hyps.len() {
        return Err(Error::LengthMismatch {
            refs: refs.len(),
            hyps: hyps.len(),
        });
    }
    if refs.is_empty() {
        return Err(Error::Empty("no sentences to score"));
    }
    let per_sentence: Vec<BleuStats> = refs
        .par_iter()
        .zip(hyps.par_iter())
        .map(|(r, h)| {
            let r = cfg.tokenizer.tokenize(&normalize_text(r.as_ref(), norm));
            let h = cfg.tokenizer.tokenize(&normalize_text(h.as_ref(), norm));
            sentence_stats(&r, &h, cfg.max_ngram)
        })
        .collect();
    Ok(per_sentence
        .into_iter()
        .fold(BleuStats::zero(cfg.max_ngram), BleuStats::add))
}

/// Corpus BLEU with pooled clipped n-gram precisions and brevity penalty.
pub fn corpus_bleu<R: AsRef<str> + Sync, H: AsRef<str> + Sync>(
    refs: &[R],
    hyps: &[H],
    cfg: &BleuConfig,
    norm: &NormalizationConfig,
) -> Result<f64> {
    Ok(bleu_stats(refs, hyps, cfg, norm)?.score(cfg.smoothing))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wer: f64,
    pub bleu: f64,
    pub n_sentences: usize,
    pub ref_word_count: usize,
    pub bleu_signature: String,
}

/// Transcript-side and translation-side scores for one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub transcript: EvalReport,
    pub translation: EvalReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub normalization: NormalizationConfig,
    pub max_ngram: Option<usize>,
    pub smoothing: Smoothing,
}

fn score_side(
    refs: &[&str],
    hyps: &[&str],
    lang: &str,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let bleu_cfg = BleuConfig {
        max_ngram: cfg.max_ngram.unwrap_or(4),
        smoothing: cfg.smoothing,
        tokenizer: BleuTokenizer::for_language(lang),
    };
    let counts = wer_counts(refs, hyps, &cfg.normalization)?;
    let bleu = corpus_bleu(refs, hyps, &bleu_cfg, &cfg.normalization)?;
    Ok(EvalReport {
        wer: counts.errors as f64 / counts.ref_words as f64,
        bleu,
        n_sentences: refs.len(),
        ref_word_count: counts.ref_words,
        bleu_signature: bleu_cfg.signature(&cfg.normalization),
    })
}

/// Scores predicted labels against gold: WER and BLEU for transcripts
/// (source language) and for translations (target language tokenizer).
pub fn evaluate(corpus: &Corpus, cfg: &EvalConfig) -> Result<EvalPair> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus has no samples to evaluate"));
    }
    let mut tc_ref = Vec::with_capacity(corpus.len());
    let mut tc_hyp = Vec::with_capacity(corpus.len());
    let mut tl_ref = Vec::with_capacity(corpus.len());
    let mut tl_hyp = Vec::with_capacity(corpus.len());
    for s in &corpus.samples {
        tc_ref.push(s.require("gold_transcript", &s.gold_transcript)?);
        tc_hyp.push(s.require("transcript", &s.transcript)?);
        tl_ref.push(s.require("gold_translation", &s.gold_translation)?);
        tl_hyp.push(s.require("translation", &s.translation)?);
    }
    Ok(EvalPair {
        transcript: score_side(&tc_ref, &tc_hyp, &corpus.source_lang, cfg)?,
        translation: score_side(&tl_ref, &tl_hyp, &corpus.target_lang, cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusRole, Sample};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn norm() -> NormalizationConfig {
        NormalizationConfig::default()
    }

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("Héllo, World!", &norm()), "hello world");
        assert_eq!(normalize_text("", &norm()), "");
        assert_eq!(normalize_text("Ça va très bien.", &norm()), "ca va tres bien");
        assert_eq!(normalize_text("  a \t b\n", &norm()), "a b");
        assert_eq!(normalize_text("한국어", &norm()), "한국어");
    }

    #[test]
    fn normalize_flags_are_independent() {
        let keep_all = NormalizationConfig {
            lowercase: false,
            strip_diacritics: false,
            strip_punctuation: false,
        };
        assert_eq!(normalize_text("Héllo,  World!", &keep_all), "Héllo, World!");
    }

    #[test]
    fn tokenize_13a_examples() {
        assert_eq!(tokenize_13a("a b  c"), toks(&["a", "b", "c"]));
        assert_eq!(tokenize_13a("hello, world"), toks(&["hello", ",", "world"]));
        assert_eq!(tokenize_13a("3.5 points"), toks(&["3.5", "points"]));
        assert_eq!(tokenize_13a("1,000-2"), toks(&["1,000", "-", "2"]));
        assert!(tokenize_13a("").is_empty());
    }

    #[test]
    fn tokenize_zh_examples() {
        assert_eq!(tokenize_zh("你好"), toks(&["你", "好"]));
        assert_eq!(tokenize_zh("你好world"), toks(&["你", "好", "world"]));
        assert!(tokenize_zh("").is_empty());
    }

    #[test]
    fn cjk_word_counting() {
        assert_eq!(count_words("你好 world foo", WordCounting::CjkCharacters), 4);
        assert_eq!(count_words("你好 world", WordCounting::Whitespace), 2);
        assert_eq!(count_words("ab c", WordCounting::Characters), 3);
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer(&["a b c"], &["a b c"], &norm()).unwrap(), 0.0);
        assert_eq!(wer(&["a b c"], &[""], &norm()).unwrap(), 1.0);
        // (1 substitution + 1 insertion) / 5 reference words
        assert_abs_diff_eq!(
            wer(&["a b c", "d e"], &["a x c", "d e f"], &norm()).unwrap(),
            0.4,
            epsilon = 1e-12
        );
    }

    #[test]
    fn wer_errors() {
        assert!(matches!(
            wer(&["a"], &["a", "b"], &norm()),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(wer(&[""], &["a"], &norm()), Err(Error::Empty(_))));
        let empty: [&str; 0] = [];
        assert!(matches!(wer(&empty, &empty, &norm()), Err(Error::Empty(_))));
    }

    #[test]
    fn bleu_identity_and_zero() {
        let refs = ["the cat sat on the mat", "a quick brown fox jumps"];
        let cfg = BleuConfig::default();
        assert_abs_diff_eq!(
            corpus_bleu(&refs, &refs, &cfg, &norm()).unwrap(),
            100.0,
            epsilon = 1e-9
        );
        let none = BleuConfig {
            smoothing: Smoothing::None,
            ..cfg
        };
        assert_eq!(
            corpus_bleu(&["the cat sat on the mat"], &["the the the the the the"], &none, &norm())
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn bleu_one_substitution() {
        // p = 5/6, 3/5, 2/4, 1/3; equal lengths so BP = 1.
        let none = BleuConfig {
            smoothing: Smoothing::None,
            ..BleuConfig::default()
        };
        let stats = bleu_stats(
            &["the cat sat on the mat"],
            &["the cat sat on a mat"],
            &none,
            &norm(),
        )
        .unwrap();
        assert_eq!(stats.matches, [5, 3, 2, 1]);
        assert_eq!(stats.totals, [6, 5, 4, 3]);
        let expected = 100.0 * ((5.0 / 6.0f64) * (3.0 / 5.0) * (2.0 / 4.0) * (1.0 / 3.0)).powf(0.25);
        assert_abs_diff_eq!(stats.score(Smoothing::None), expected, epsilon = 1e-9);
        // floor only kicks in for zero counts
        assert_abs_diff_eq!(stats.score(Smoothing::Floor(0.1)), expected, epsilon = 1e-9);
    }

    #[test]
    fn bleu_floor_smoothing_replaces_zero_counts() {
        let stats = bleu_stats(&["a b c d e"], &["a b x d e"], &BleuConfig::default(), &norm()).unwrap();
        assert_eq!(stats.matches, [4, 2, 0, 0]);
        assert_eq!(stats.score(Smoothing::None), 0.0);
        let expected = 100.0 * ((4.0 / 5.0f64) * (2.0 / 4.0) * (0.1 / 3.0) * (0.1 / 2.0)).powf(0.25);
        assert_abs_diff_eq!(stats.score(Smoothing::Floor(0.1)), expected, epsilon = 1e-9);
    }

    #[test]
    fn bleu_signature_mentions_tokenizer() {
        let cfg = BleuConfig {
            tokenizer: BleuTokenizer::Zh,
            ..BleuConfig::default()
        };
        assert_eq!(
            cfg.signature(&norm()),
            "nrefs:1|case:lc|tok:zh|smooth:floor-0.1|ngram:4|diacritics:stripped|punct:stripped"
        );
    }

    fn labeled(id: &str, gtc: &str, tc: &str, gtl: &str, tl: &str) -> Sample {
        let mut s = Sample::gold(id, 1.0, gtc, gtl);
        s.transcript = Some(tc.into());
        s.translation = Some(tl.into());
        s
    }

    #[test]
    fn evaluate_perfect_and_one_off() {
        let c = Corpus::new(
            "c",
            CorpusRole::Mixed,
            "en",
            "de",
            vec![labeled("a", "one two three four", "one two three four", "eins zwei drei vier", "eins zwei drei vier")],
        )
        .unwrap();
        let r = evaluate(&c, &EvalConfig::default()).unwrap();
        assert_eq!(r.transcript.wer, 0.0);
        assert_abs_diff_eq!(r.translation.bleu, 100.0, epsilon = 1e-9);

        let c = c.with_samples(vec![labeled("a", "a b c", "a x c", "x y", "x y")]);
        let r = evaluate(&c, &EvalConfig::default()).unwrap();
        assert_abs_diff_eq!(r.transcript.wer, 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(r.transcript.ref_word_count, 3);
    }

    #[test]
    fn evaluate_errors() {
        let c = Corpus::new("c", CorpusRole::Mixed, "en", "de", vec![]).unwrap();
        assert!(matches!(evaluate(&c, &EvalConfig::default()), Err(Error::Empty(_))));
        let c = c.with_samples(vec![Sample::gold("g", 1.0, "a", "b")]);
        match evaluate(&c, &EvalConfig::default()) {
            Err(Error::MissingField { id, field }) => {
                assert_eq!((id.as_str(), field), ("g", "transcript"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn wer_ignores_case_and_punctuation(words in proptest::collection::vec("[a-z]{1,5}", 1..10),
                                            hyp in proptest::collection::vec("[a-z]{1,5}", 0..10)) {
            let r = words.join(" ");
            let h = hyp.join(" ");
            let shouty = hyp.iter().map(|w| format!("{}!", w.to_uppercase())).collect::<Vec<_>>().join(", ");
            prop_assert_eq!(wer(&[&r], &[&h], &norm()).unwrap(), wer(&[&r], &[&shouty], &norm()).unwrap());
            prop_assert_eq!(wer(&[&r], &[&r], &norm()).unwrap(), 0.0);
        }

        #[test]
        fn zh_tokens_reproduce_non_whitespace(s in "[你好世界 a-z0-9,.!?-]{0,30}") {
            let joined: String = tokenize_zh(&s).concat();
            let expected: String = s.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(joined, expected);
        }

        #[test]
        fn bleu_bounded(refs in proptest::collection::vec("[a-d]( [a-d]){0,8}", 1..5),
                        hyps in proptest::collection::vec("[a-d]( [a-d]){0,8}", 1..5)) {
            let n = refs.len().min(hyps.len());
            let score = corpus_bleu(&refs[..n], &hyps[..n], &BleuConfig::default(), &norm()).unwrap();
            prop_assert!((0.0..=100.0).contains(&score));
        }
    }
}
