//! C ABI over the pseudolabel toolkit.
//!
//! Every fallible function returns a [`PlStatus`]; on failure the message is
//! available from [`pl_last_error_message`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Strings returned
//! through `char **` out-parameters are released with [`pl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pseudolabel::corpus::{load_manifest, save_manifest, Corpus};
use pseudolabel::density::{keep_top_fraction, KdeModel};
use pseudolabel::filters::{
    cosine_similarity, detect_looping, filter_embedding_similarity, filter_ratio_kde,
    filter_ratio_to_gold,
};
use pseudolabel::text::{
    corpus_bleu, evaluate, normalize_text, wer, BleuConfig, BleuTokenizer, EvalConfig,
    NormalizationConfig,
};
use pseudolabel::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    MissingField = 6,
    DimensionMismatch = 7,
    Empty = 8,
    Invariant = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlFilterMethod {
    RatioKde = 0,
    RatioToGold = 1,
    EmbeddingSimilarity = 2,
}

/// Corpus-level scores of predicted labels against gold.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PlEvalScores {
    pub transcript_wer: f64,
    pub transcript_bleu: f64,
    pub translation_wer: f64,
    pub translation_bleu: f64,
}

/// Opaque corpus handle.
pub struct PlCorpus {
    inner: Corpus,
}

/// Opaque KDE handle.
pub struct PlKdeModel {
    inner: KdeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> PlStatus {
    match err {
        Error::Io { .. } | Error::MissingCheckpoint(_) | Error::Locked(_) | Error::External { .. } => PlStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Config(_) => PlStatus::Parse,
        Error::MissingField { .. } => PlStatus::MissingField,
        Error::DimensionMismatch { .. } | Error::LengthMismatch { .. } => PlStatus::DimensionMismatch,
        Error::Empty(_) => PlStatus::Empty,
        Error::Invariant { .. } | Error::DuplicateId { .. } | Error::ZeroNorm { .. } => PlStatus::Invariant,
        _ => PlStatus::InvalidArgument,
    }
}

struct Fail(PlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(PlStatus::NullArgument, format!("{name} is null"))
}

/// Runs `f`, records any error or panic, and converts it to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PlStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            PlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PlStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn str_array<'a>(p: *const *const c_char, n: usize, name: &str) -> Result<Vec<&'a str>, Fail> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null(name));
    }
    std::slice::from_raw_parts(p, n)
        .iter()
        .map(|&s| str_arg(s, name))
        .collect()
}

unsafe fn f64_slice<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

/// Toolkit version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Lowercases, strips diacritics and punctuation, and collapses whitespace.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_normalize_text(text: *const c_char, out: *mut *mut c_char) -> PlStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let s = normalize_text(text, &NormalizationConfig::default());
        let s = CString::new(s).map_err(|e| Fail(PlStatus::InvalidArgument, e.to_string()))?;
        write_out(out, s.into_raw(), "out")
    })
}

/// Corpus WER (fraction) over `n` normalized sentence pairs.
///
/// # Safety
/// `refs` and `hyps` must point to `n` NUL-terminated strings each.
#[no_mangle]
pub unsafe extern "C" fn pl_wer(
    refs: *const *const c_char,
    hyps: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> PlStatus {
    guard(|| {
        let refs = str_array(refs, n, "refs")?;
        let hyps = str_array(hyps, n, "hyps")?;
        let v = wer(&refs, &hyps, &NormalizationConfig::default())?;
        write_out(out, v, "out")
    })
}

/// Corpus BLEU (0 to 100) over `n` normalized sentence pairs. `lang`
/// selects the tokenizer; NULL means the 13a tokenizer.
///
/// # Safety
/// `refs` and `hyps` must point to `n` NUL-terminated strings each; `lang`
/// must be NULL or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pl_corpus_bleu(
    refs: *const *const c_char,
    hyps: *const *const c_char,
    n: usize,
    lang: *const c_char,
    out: *mut f64,
) -> PlStatus {
    guard(|| {
        let refs = str_array(refs, n, "refs")?;
        let hyps = str_array(hyps, n, "hyps")?;
        let tokenizer = if lang.is_null() {
            BleuTokenizer::Tok13a
        } else {
            BleuTokenizer::for_language(str_arg(lang, "lang")?)
        };
        let cfg = BleuConfig {
            tokenizer,
            ..BleuConfig::default()
        };
        let v = corpus_bleu(&refs, &hyps, &cfg, &NormalizationConfig::default())?;
        write_out(out, v, "out")
    })
}

/// # Safety
/// `u` and `v` must point to `dim` doubles each.
#[no_mangle]
pub unsafe extern "C" fn pl_cosine_similarity(u: *const f64, v: *const f64, dim: usize, out: *mut f64) -> PlStatus {
    guard(|| {
        let u = f64_slice(u, dim, "u")?;
        let v = f64_slice(v, dim, "v")?;
        write_out(out, cosine_similarity(u, v)?, "out")
    })
}

/// Fits a Gaussian KDE with Scott's-rule bandwidths to `n` row-major points
/// of dimension `dim`.
///
/// # Safety
/// `points` must point to `n * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_kde_fit(points: *const f64, n: usize, dim: usize, out: *mut *mut PlKdeModel) -> PlStatus {
    guard(|| {
        if dim == 0 {
            return Err(Fail(PlStatus::InvalidArgument, "dim must be positive".into()));
        }
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| Fail(PlStatus::InvalidArgument, "n * dim overflows".into()))?;
        let flat = f64_slice(points, len, "points")?;
        let rows: Vec<&[f64]> = flat.chunks(dim).collect();
        let model = KdeModel::fit(&rows, None)?;
        write_out(out, Box::into_raw(Box::new(PlKdeModel { inner: model })), "out")
    })
}

/// # Safety
/// `model` must be a live handle; `x` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn pl_kde_pdf(model: *const PlKdeModel, x: *const f64, dim: usize, out: *mut f64) -> PlStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let x = f64_slice(x, dim, "x")?;
        write_out(out, model.inner.pdf(x)?, "out")
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`pl_kde_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pl_kde_free(model: *mut PlKdeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Marks the `ceil(fraction * n)` highest scores (ties by position) with 1
/// in `keep_mask` and writes that count to `kept`.
///
/// # Safety
/// `scores` must point to `n` doubles and `keep_mask` to `n` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pl_keep_top_fraction(
    scores: *const f64,
    n: usize,
    fraction: f64,
    keep_mask: *mut u8,
    kept: *mut usize,
) -> PlStatus {
    guard(|| {
        let scores = f64_slice(scores, n, "scores")?;
        if n > 0 && keep_mask.is_null() {
            return Err(null("keep_mask"));
        }
        let idx: Vec<usize> = (0..n).collect();
        let top = keep_top_fraction(scores, &idx, fraction)?;
        if n > 0 {
            let mask = std::slice::from_raw_parts_mut(keep_mask, n);
            mask.fill(0);
            for &i in &top.kept {
                mask[i] = 1;
            }
        }
        write_out(kept, top.kept.len(), "kept")
    })
}

/// # Safety
/// `text` must be NUL-terminated; `flagged` and `repeats` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_detect_looping(
    text: *const c_char,
    max_n: usize,
    min_repeats: usize,
    flagged: *mut bool,
    repeats: *mut usize,
) -> PlStatus {
    guard(|| {
        let finding = detect_looping(str_arg(text, "text")?, max_n, min_repeats)?;
        write_out(flagged, finding.flagged, "flagged")?;
        write_out(repeats, finding.repeats, "repeats")
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_corpus_load(path: *const c_char, out: *mut *mut PlCorpus) -> PlStatus {
    guard(|| {
        let corpus = load_manifest(Path::new(str_arg(path, "path")?))?;
        write_out(out, Box::into_raw(Box::new(PlCorpus { inner: corpus })), "out")
    })
}

/// # Safety
/// `corpus` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pl_corpus_save(corpus: *const PlCorpus, path: *const c_char) -> PlStatus {
    guard(|| {
        let corpus = corpus.as_ref().ok_or_else(|| null("corpus"))?;
        save_manifest(&corpus.inner, Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Number of samples; 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pl_corpus_len(corpus: *const PlCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.inner.len())
}

/// # Safety
/// `corpus` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pl_corpus_free(corpus: *mut PlCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Filters pseudo-labels into a new corpus handle. `a` is the keep fraction
/// for the fraction filters and the lower ratio bound for `RatioToGold`,
/// whose upper bound is `b`. `b` is ignored otherwise.
///
/// # Safety
/// `corpus` must be a live handle; `kept` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_corpus_filter(
    corpus: *const PlCorpus,
    method: PlFilterMethod,
    a: f64,
    b: f64,
    kept: *mut *mut PlCorpus,
) -> PlStatus {
    guard(|| {
        let corpus = &corpus.as_ref().ok_or_else(|| null("corpus"))?.inner;
        let (k, _) = match method {
            PlFilterMethod::RatioKde => filter_ratio_kde(corpus, a)?,
            PlFilterMethod::RatioToGold => filter_ratio_to_gold(corpus, a, b)?,
            PlFilterMethod::EmbeddingSimilarity => filter_embedding_similarity(corpus, a)?,
        };
        write_out(kept, Box::into_raw(Box::new(PlCorpus { inner: k })), "kept")
    })
}

/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_corpus_evaluate(corpus: *const PlCorpus, out: *mut PlEvalScores) -> PlStatus {
    guard(|| {
        let corpus = &corpus.as_ref().ok_or_else(|| null("corpus"))?.inner;
        let r = evaluate(corpus, &EvalConfig::default())?;
        let scores = PlEvalScores {
            transcript_wer: r.transcript.wer,
            transcript_bleu: r.transcript.bleu,
            translation_wer: r.translation.wer,
            translation_bleu: r.translation.bleu,
        };
        write_out(out, scores, "out")
    })
}
