use std::ffi::{c_char, CStr, CString};
use std::ptr;

use pseudolabel_ffi::*;

fn last_error() -> String {
    let p = pl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstrings(v: &[&str]) -> (Vec<CString>, Vec<*const c_char>) {
    let owned: Vec<CString> = v.iter().map(|s| CString::new(*s).unwrap()).collect();
    let ptrs = owned.iter().map(|s| s.as_ptr()).collect();
    (owned, ptrs)
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(pl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn normalize_round_trip() {
    let text = CString::new("Héllo, World!").unwrap();
    let mut out: *mut c_char = ptr::null_mut();
    assert_eq!(unsafe { pl_normalize_text(text.as_ptr(), &mut out) }, PlStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(out) }.to_str().unwrap(), "hello world");
    unsafe { pl_string_free(out) };

    assert_eq!(unsafe { pl_normalize_text(ptr::null(), &mut out) }, PlStatus::NullArgument);
    assert!(last_error().contains("text"));
    let bad = [0xffu8, 0];
    assert_eq!(
        unsafe { pl_normalize_text(bad.as_ptr().cast(), &mut out) },
        PlStatus::InvalidUtf8
    );
}

#[test]
fn metrics() {
    let (_r, refs) = cstrings(&["the cat sat on the mat"]);
    let (_h, hyps) = cstrings(&["the cat sat on a mat"]);
    let mut v = 0.0;
    assert_eq!(unsafe { pl_wer(refs.as_ptr(), hyps.as_ptr(), 1, &mut v) }, PlStatus::Ok);
    assert!((v - 1.0 / 6.0).abs() < 1e-12);
    assert_eq!(
        unsafe { pl_corpus_bleu(refs.as_ptr(), refs.as_ptr(), 1, ptr::null(), &mut v) },
        PlStatus::Ok
    );
    assert!((v - 100.0).abs() < 1e-9);
    assert_eq!(unsafe { pl_wer(refs.as_ptr(), hyps.as_ptr(), 0, &mut v) }, PlStatus::Empty);

    let u = [1.0, 2.0];
    let w = [3.0, 4.0];
    assert_eq!(unsafe { pl_cosine_similarity(u.as_ptr(), w.as_ptr(), 2, &mut v) }, PlStatus::Ok);
    assert!((v - 11.0 / (5f64.sqrt() * 5.0)).abs() < 1e-12);
    let z = [0.0, 0.0];
    assert_eq!(
        unsafe { pl_cosine_similarity(u.as_ptr(), z.as_ptr(), 2, &mut v) },
        PlStatus::Invariant
    );
}

#[test]
fn kde_handle() {
    let pts = [1.5, -2.0];
    let mut model: *mut PlKdeModel = ptr::null_mut();
    assert_eq!(unsafe { pl_kde_fit(pts.as_ptr(), 1, 2, &mut model) }, PlStatus::Ok);
    let mut v = 0.0;
    assert_eq!(unsafe { pl_kde_pdf(model, pts.as_ptr(), 2, &mut v) }, PlStatus::Ok);
    assert!(v > 0.0);
    assert_eq!(
        unsafe { pl_kde_pdf(model, pts.as_ptr(), 1, &mut v) },
        PlStatus::DimensionMismatch
    );
    unsafe { pl_kde_free(model) };
    unsafe { pl_kde_free(ptr::null_mut()) };
    assert_eq!(unsafe { pl_kde_fit(pts.as_ptr(), 0, 2, &mut model) }, PlStatus::Empty);
}

#[test]
fn top_fraction_and_loops() {
    let scores = [0.5, 0.9, 0.1, 0.7];
    let mut mask = [9u8; 4];
    let mut kept = 0usize;
    assert_eq!(
        unsafe { pl_keep_top_fraction(scores.as_ptr(), 4, 0.5, mask.as_mut_ptr(), &mut kept) },
        PlStatus::Ok
    );
    assert_eq!((kept, mask), (2, [0, 1, 0, 1]));
    assert_eq!(
        unsafe { pl_keep_top_fraction(scores.as_ptr(), 4, 1.5, mask.as_mut_ptr(), &mut kept) },
        PlStatus::InvalidArgument
    );

    let text = CString::new("the cat the cat the cat sat").unwrap();
    let (mut flagged, mut repeats) = (false, 0usize);
    assert_eq!(
        unsafe { pl_detect_looping(text.as_ptr(), 4, 3, &mut flagged, &mut repeats) },
        PlStatus::Ok
    );
    assert!(flagged);
    assert_eq!(repeats, 3);
}

#[test]
fn corpus_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    let mut lines = String::new();
    for i in 0..10 {
        let extra = if i == 9 { " w w w w w w w w w w w w w w w w w w w w" } else { "" };
        lines.push_str(&format!(
            "{{\"id\":\"s{i}\",\"duration_s\":{},\"transcript\":\"a b c{extra}\",\"translation\":\"x y\",\"gold_transcript\":\"a b c\",\"gold_translation\":\"x y\"}}\n",
            1.0 + i as f64 * 0.01
        ));
    }
    std::fs::write(&path, lines).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut corpus: *mut PlCorpus = ptr::null_mut();
    assert_eq!(unsafe { pl_corpus_load(cpath.as_ptr(), &mut corpus) }, PlStatus::Ok);
    assert_eq!(unsafe { pl_corpus_len(corpus) }, 10);

    let mut kept: *mut PlCorpus = ptr::null_mut();
    assert_eq!(
        unsafe { pl_corpus_filter(corpus, PlFilterMethod::RatioToGold, 0.9, 1.1, &mut kept) },
        PlStatus::Ok
    );
    assert_eq!(unsafe { pl_corpus_len(kept) }, 9);

    let mut scores = PlEvalScores::default();
    assert_eq!(unsafe { pl_corpus_evaluate(kept, &mut scores) }, PlStatus::Ok);
    assert_eq!(scores.transcript_wer, 0.0);
    assert_eq!(scores.translation_wer, 0.0);

    let out = CString::new(dir.path().join("kept.jsonl").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pl_corpus_save(kept, out.as_ptr()) }, PlStatus::Ok);
    assert_eq!(
        unsafe { pl_corpus_filter(corpus, PlFilterMethod::EmbeddingSimilarity, 0.9, 0.0, &mut kept) },
        PlStatus::MissingField
    );
    unsafe {
        pl_corpus_free(kept);
        pl_corpus_free(corpus);
    }

    let missing = CString::new(dir.path().join("none.jsonl").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pl_corpus_load(missing.as_ptr(), &mut corpus) }, PlStatus::Io);
    assert!(last_error().contains("none.jsonl"));
    assert_eq!(unsafe { pl_corpus_len(ptr::null()) }, 0);
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/pseudolabel.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["pl_corpus_load", "pl_kde_fit", "PL_STATUS_OK", "typedef struct PlCorpus PlCorpus"] {
        assert!(text.contains(sym), "{sym}");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = std::process::Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, header])
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(_) => eprintln!("{compiler} not available; skipped"),
        }
    }
}
