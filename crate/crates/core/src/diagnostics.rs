//! Domain-mismatch diagnostics between two corpora: vocabulary overlap,
//! length distributions and the duration/length scatter used by the
//! ratio-KDE filter.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample};
use crate::density::{linspace, KdeModel};
use crate::error::{Error, Result};
use crate::filters::{length_points, length_ratio_scores, LengthUnit};
use crate::text::{normalize_text, NormalizationConfig};

pub const DEFAULT_TAIL_THRESHOLD: usize = 2;
pub const DEFAULT_GRID: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Transcript,
    Translation,
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transcript" => Ok(Side::Transcript),
            "translation" => Ok(Side::Translation),
            _ => Err(Error::invalid(format!("unknown side {s:?}"))),
        }
    }
}

impl Side {
    /// Gold text when available, otherwise the predicted one.
    fn text(self, s: &Sample) -> Option<&str> {
        match self {
            Side::Transcript => s.gold_transcript.as_deref().or(s.transcript.as_deref()),
            Side::Translation => s.gold_translation.as_deref().or(s.translation.as_deref()),
        }
    }

    fn field(self) -> &'static str {
        match self {
            Side::Transcript => "transcript",
            Side::Translation => "translation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabStats {
    pub types_a: usize,
    pub types_b: usize,
    pub common: usize,
    pub jaccard: f64,
    pub tail_mass_a: f64,
    pub tail_mass_b: f64,
}

impl VocabStats {
    pub fn swapped(&self) -> VocabStats {
        VocabStats {
            types_a: self.types_b,
            types_b: self.types_a,
            tail_mass_a: self.tail_mass_b,
            tail_mass_b: self.tail_mass_a,
            ..self.clone()
        }
    }
}

fn type_counts(corpus: &Corpus, side: Side) -> Result<HashMap<String, usize>> {
    let norm = NormalizationConfig::default();
    let mut counts = HashMap::new();
    for s in &corpus.samples {
        let text = side.text(s).ok_or_else(|| Error::MissingField {
            id: s.id.clone(),
            field: side.field(),
        })?;
        for tok in normalize_text(text, &norm).split_whitespace() {
            *counts.entry(tok.to_string()).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Empty("no tokens on the chosen side"));
    }
    Ok(counts)
}

fn tail_mass(counts: &HashMap<String, usize>, threshold: usize) -> f64 {
    let total: usize = counts.values().sum();
    let tail: usize = counts.values().filter(|&&c| c <= threshold).sum();
    tail as f64 / total as f64
}

pub fn vocab_overlap(a: &Corpus, b: &Corpus, side: Side, tail_threshold: usize) -> Result<VocabStats> {
    let ca = type_counts(a, side)?;
    let cb = type_counts(b, side)?;
    let common = ca.keys().filter(|k| cb.contains_key(*k)).count();
    let union = ca.len() + cb.len() - common;
    Ok(VocabStats {
        types_a: ca.len(),
        types_b: cb.len(),
        common,
        jaccard: common as f64 / union as f64,
        tail_mass_a: tail_mass(&ca, tail_threshold),
        tail_mass_b: tail_mass(&cb, tail_threshold),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthField {
    Duration,
    TranscriptWords,
    TranslationWords,
}

impl std::str::FromStr for LengthField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "duration" => Ok(LengthField::Duration),
            "transcript_words" => Ok(LengthField::TranscriptWords),
            "translation_words" => Ok(LengthField::TranslationWords),
            _ => Err(Error::invalid(format!("unknown length field {s:?}"))),
        }
    }
}

pub fn field_values(corpus: &Corpus, field: LengthField) -> Result<Vec<f64>> {
    corpus
        .samples
        .iter()
        .map(|s| {
            let side = match field {
                LengthField::Duration => return Ok(s.duration_s),
                LengthField::TranscriptWords => Side::Transcript,
                LengthField::TranslationWords => Side::Translation,
            };
            let text = side.text(s).ok_or_else(|| Error::MissingField {
                id: s.id.clone(),
                field: side.field(),
            })?;
            Ok(LengthUnit::Words.measure(text) as f64)
        })
        .collect()
}

/// Two densities evaluated on one shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthProfile {
    pub grid: Vec<f64>,
    pub density_a: Vec<f64>,
    pub density_b: Vec<f64>,
}

impl LengthProfile {
    fn mode(&self, ys: &[f64]) -> f64 {
        let mut best = 0;
        for (i, y) in ys.iter().enumerate() {
            if *y > ys[best] {
                best = i;
            }
        }
        self.grid[best]
    }

    pub fn mode_a(&self) -> f64 {
        self.mode(&self.density_a)
    }

    pub fn mode_b(&self) -> f64 {
        self.mode(&self.density_b)
    }

    pub fn write_tsv<W: Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "x\tdensity_a\tdensity_b")?;
        for i in 0..self.grid.len() {
            writeln!(w, "{}\t{}\t{}", self.grid[i], self.density_a[i], self.density_b[i])?;
        }
        Ok(())
    }
}

pub fn length_profile(a: &Corpus, b: &Corpus, field: LengthField, grid: usize) -> Result<LengthProfile> {
    if grid < 2 {
        return Err(Error::invalid("grid needs at least two points"));
    }
    let va = field_values(a, field)?;
    let vb = field_values(b, field)?;
    let ka = KdeModel::fit_1d(&va, None)?;
    let kb = KdeModel::fit_1d(&vb, None)?;
    let h = ka.bandwidth()[0].max(kb.bandwidth()[0]);
    let lo = va.iter().chain(&vb).copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = va.iter().chain(&vb).copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let xs = linspace(lo, hi, grid);
    let pts: Vec<[f64; 1]> = xs.iter().map(|&x| [x]).collect();
    Ok(LengthProfile {
        density_a: ka.pdf_batch(&pts)?,
        density_b: kb.pdf_batch(&pts)?,
        grid: xs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub id: String,
    pub duration_s: f64,
    pub transcript_words: f64,
    pub pdf: f64,
}

/// One row per sample, in corpus order, scored exactly as the ratio-KDE filter scores.
pub fn ratio_scatter_export(corpus: &Corpus) -> Result<Vec<ScatterRow>> {
    let points = length_points(corpus, LengthUnit::Words)?;
    let scores = length_ratio_scores(corpus, LengthUnit::Words)?;
    Ok(corpus
        .samples
        .iter()
        .zip(points)
        .zip(scores)
        .map(|((s, p), pdf)| ScatterRow {
            id: s.id.clone(),
            duration_s: p[0],
            transcript_words: p[1],
            pdf,
        })
        .collect())
}

pub fn write_scatter_tsv<W: Write + ?Sized>(rows: &[ScatterRow], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "id\tduration_s\ttranscript_words\tpdf")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}\t{}", r.id, r.duration_s, r.transcript_words, r.pdf)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOptions {
    pub side: Side,
    pub tail_threshold: usize,
    pub field: LengthField,
    pub grid: usize,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            side: Side::Transcript,
            tail_threshold: DEFAULT_TAIL_THRESHOLD,
            field: LengthField::Duration,
            grid: DEFAULT_GRID,
        }
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Writes `vocab.json`, `length_profile.tsv` and `ratio_scatter.tsv` into `out_dir`.
/// The scatter is computed on corpus `b`.
pub fn write_diagnostics(a: &Corpus, b: &Corpus, opts: &DiagnoseOptions, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let vocab = vocab_overlap(a, b, opts.side, opts.tail_threshold)?;
    let profile = length_profile(a, b, opts.field, opts.grid)?;
    let scatter = ratio_scatter_export(b)?;
    let json = serde_json::to_string_pretty(&vocab)?;
    write_file(&out_dir.join("vocab.json"), |w| writeln!(w, "{json}"))?;
    write_file(&out_dir.join("length_profile.tsv"), |w| profile.write_tsv(w))?;
    write_file(&out_dir.join("ratio_scatter.tsv"), |w| write_scatter_tsv(&scatter, w))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusRole;
    use crate::density::trapezoid;
    use crate::filters::filter_ratio_kde;
    use approx::assert_abs_diff_eq;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            "c",
            CorpusRole::Supervised,
            "en",
            "de",
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Sample::gold(format!("s{i}"), 1.0 + i as f64, *t, *t))
                .collect(),
        )
        .unwrap()
    }

    fn durations(ds: impl IntoIterator<Item = f64>) -> Corpus {
        Corpus::new(
            "d",
            CorpusRole::Supervised,
            "en",
            "de",
            ds.into_iter()
                .enumerate()
                .map(|(i, d)| Sample::gold(format!("s{i}"), d, "x", "y"))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn vocab_examples() {
        let v = vocab_overlap(&corpus(&["a b c"]), &corpus(&["b c d"]), Side::Transcript, 2).unwrap();
        assert_eq!((v.types_a, v.types_b, v.common), (3, 3, 2));
        assert_abs_diff_eq!(v.jaccard, 0.5);

        let c = corpus(&["Hello, world", "hello again"]);
        let v = vocab_overlap(&c, &c, Side::Translation, 2).unwrap();
        assert_eq!(v.common, v.types_a);
        assert_eq!(v.jaccard, 1.0);

        let v = vocab_overlap(&corpus(&["x x x y"]), &corpus(&["x"]), Side::Transcript, 1).unwrap();
        assert_abs_diff_eq!(v.tail_mass_a, 0.25);
        assert_abs_diff_eq!(v.tail_mass_b, 1.0);
    }

    #[test]
    fn vocab_symmetry_and_empty() {
        let a = corpus(&["one two two three", "four"]);
        let b = corpus(&["two four five five five"]);
        let ab = vocab_overlap(&a, &b, Side::Transcript, 2).unwrap();
        let ba = vocab_overlap(&b, &a, Side::Transcript, 2).unwrap();
        assert_eq!(ab, ba.swapped());
        assert!(vocab_overlap(&corpus(&["..."]), &b, Side::Transcript, 2).is_err());
    }

    #[test]
    fn profile_identical_and_shifted() {
        let a = durations((0..200).map(|i| 2.0 + (i % 20) as f64 * 0.1));
        let p = length_profile(&a, &a, LengthField::Duration, 128).unwrap();
        assert_eq!(p.density_a, p.density_b);
        assert_abs_diff_eq!(trapezoid(&p.grid, &p.density_a), 1.0, epsilon = 1e-2);

        let b = durations((0..200).map(|i| 7.0 + (i % 20) as f64 * 0.1));
        let p = length_profile(&a, &b, LengthField::Duration, 512).unwrap();
        assert!(p.mode_b() - p.mode_a() >= 4.0, "{} {}", p.mode_a(), p.mode_b());
        assert!(p.density_a.iter().chain(&p.density_b).all(|&y| y >= 0.0));
        assert_abs_diff_eq!(trapezoid(&p.grid, &p.density_b), 1.0, epsilon = 1e-2);

        let p = length_profile(&a, &b, LengthField::TranscriptWords, 2).unwrap();
        assert_eq!(p.grid.len(), 2);
        assert!(p.density_a.iter().all(|&y| y > 0.0));
        assert!(length_profile(&a, &b, LengthField::Duration, 1).is_err());
    }

    #[test]
    fn scatter_matches_filter_scores() {
        let c = corpus(&["a", "a b", "a b c", "a b c d e f g h i j"]);
        let rows = ratio_scatter_export(&c).unwrap();
        assert_eq!(rows.len(), 4);
        let ids: Vec<_> = rows.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["s0", "s1", "s2", "s3"]);
        let (_, report) = filter_ratio_kde(
            &c.with_samples(
                c.samples
                    .iter()
                    .map(|s| Sample {
                        transcript: s.gold_transcript.clone(),
                        ..s.clone()
                    })
                    .collect(),
            ),
            0.5,
        )
        .unwrap();
        for r in &rows {
            assert_eq!(report.scores[&r.id], r.pdf);
        }
        assert!(ratio_scatter_export(&c.with_samples(vec![])).is_err());
    }

    #[test]
    fn writes_three_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = corpus(&["a b", "c d e"]);
        write_diagnostics(&a, &a, &DiagnoseOptions::default(), dir.path()).unwrap();
        for f in ["vocab.json", "length_profile.tsv", "ratio_scatter.tsv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let tsv = std::fs::read_to_string(dir.path().join("length_profile.tsv")).unwrap();
        assert_eq!(tsv.lines().count(), DEFAULT_GRID + 1);
    }
}
