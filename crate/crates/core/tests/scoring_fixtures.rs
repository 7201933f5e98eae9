//! Tokenizers and corpus BLEU against reference-implementation fixtures.

use std::path::Path;

use serde_json::Value;

use pseudolabel::text::{
    bleu_stats, tokenize_13a, tokenize_zh, BleuConfig, BleuTokenizer, NormalizationConfig,
    Smoothing,
};

fn fixture(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn strings(v: &Value) -> Vec<String> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().to_string())
        .collect()
}

#[test]
fn tokenizers_match_reference() {
    let fx = fixture("tokenize.json");
    for (name, tokenize) in [
        ("13a", tokenize_13a as fn(&str) -> Vec<String>),
        ("zh", tokenize_zh),
    ] {
        let cases = fx["cases"][name].as_array().unwrap();
        assert!(!cases.is_empty());
        for c in cases {
            let input = c["input"].as_str().unwrap();
            assert_eq!(tokenize(input), strings(&c["expected"]), "{name}: {input:?}");
        }
    }
}

#[test]
fn corpus_bleu_matches_reference() {
    let fx = fixture("bleu.json");
    for c in fx["cases"].as_array().unwrap() {
        let smoothing = match c["smooth_method"].as_str().unwrap() {
            "floor" => Smoothing::Floor(c["smooth_value"].as_f64().unwrap()),
            "add-k" => Smoothing::AddK(c["smooth_value"].as_f64().unwrap()),
            "none" => Smoothing::None,
            other => panic!("unknown smoothing {other}"),
        };
        let cfg = BleuConfig {
            smoothing,
            tokenizer: BleuTokenizer::for_language(c["tokenize"].as_str().unwrap()),
            ..BleuConfig::default()
        };
        let refs = strings(&c["refs"]);
        let hyps = strings(&c["hyps"]);
        let stats = bleu_stats(&refs, &hyps, &cfg, &NormalizationConfig::default()).unwrap();
        let score = stats.score(smoothing);
        let want = c["score"].as_f64().unwrap();
        assert!((score - want).abs() < 1e-6, "{c}: {score} vs {want}");
        assert_eq!(stats.hyp_len, c["sys_len"].as_u64().unwrap());
        assert_eq!(stats.ref_len, c["ref_len"].as_u64().unwrap());
        if !matches!(smoothing, Smoothing::AddK(_)) {
            let counts: Vec<u64> = c["counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
            let totals: Vec<u64> = c["totals"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
            assert_eq!(stats.matches, counts);
            assert_eq!(stats.totals, totals);
        }
    }
}
