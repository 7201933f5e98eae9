use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::backend::Backend;
use super::{FilterChoice, LabelScope, RoundConfig, RoundRecord, UpdateMode};
use crate::augment::{apply_plan, make_plan};
use crate::corpus::{
    load_manifest, merge_corpora, preprocess_filter, save_manifest, Corpus, CorpusRole,
    Provenance,
};
use crate::error::{Error, Result};
use crate::filters::{
    filter_embedding_similarity, filter_ratio_kde, filter_ratio_to_gold, FilterReport,
};
use crate::text::{evaluate, EvalConfig, EvalPair};

/// Input corpora of an experiment.
#[derive(Debug, Clone)]
pub struct Corpora {
    pub supervised: Corpus,
    pub unsupervised: Corpus,
    /// Defaults to the supervised set.
    pub supervised_eval: Option<Corpus>,
    /// Defaults to the unsupervised set; only used with `analysis_eval`.
    pub unsupervised_eval: Option<Corpus>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct State {
    config_hash: String,
    records: Vec<RoundRecord>,
}

struct DirLock(PathBuf);

impl DirLock {
    fn acquire(path: PathBuf) -> Result<Self> {
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    write_json(&tmp, value)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// One experiment directory with its round history.
///
/// Each round is built in `rounds/<k>.tmp` and renamed to `rounds/<k>` only
/// once every stage succeeded, so a failed round leaves earlier rounds and
/// `state.json` untouched.
pub struct Experiment<'a> {
    dir: PathBuf,
    backend: &'a dyn Backend,
    cfg: RoundConfig,
    corpora: Corpora,
    preprocess_report: Option<FilterReport>,
    augmented: Option<Corpus>,
    records: Vec<RoundRecord>,
    hash: String,
    _lock: DirLock,
}

impl<'a> Experiment<'a> {
    pub fn open(
        dir: impl Into<PathBuf>,
        backend: &'a dyn Backend,
        cfg: RoundConfig,
        mut corpora: Corpora,
    ) -> Result<Self> {
        cfg.validate()?;
        let dir = dir.into();
        fs::create_dir_all(dir.join("rounds")).map_err(|e| Error::io(&dir, e))?;
        let lock = DirLock::acquire(dir.join("experiment.lock"))?;
        let hash = cfg.hash();

        let state_path = dir.join("state.json");
        let records = if state_path.exists() {
            let bytes = fs::read(&state_path).map_err(|e| Error::io(&state_path, e))?;
            let state: State = serde_json::from_slice(&bytes)?;
            if state.config_hash != hash {
                return Err(Error::Config(format!(
                    "{} was created with config {}, current config is {}",
                    dir.display(),
                    state.config_hash,
                    hash
                )));
            }
            state.records
        } else {
            write_json(&dir.join("config.json"), &cfg)?;
            Vec::new()
        };
        remove_stale_rounds(&dir.join("rounds"), records.len())?;

        corpora.supervised = corpora.supervised.with_role(CorpusRole::Supervised)?;
        if corpora.unsupervised.is_empty() {
            return Err(Error::Empty("unsupervised corpus"));
        }
        let preprocess_report = if cfg.preprocess {
            let (kept, report) = preprocess_filter(&corpora.supervised);
            corpora.supervised = kept;
            Some(report)
        } else {
            None
        };
        if corpora.supervised.is_empty() {
            return Err(Error::Empty("supervised corpus after preprocessing"));
        }
        let augmented = if cfg.augment_k > 0 && !records.is_empty() {
            Some(load_manifest(dir.join("rounds/0/augmented.manifest"))?)
        } else {
            None
        };
        Ok(Experiment {
            dir,
            backend,
            cfg,
            corpora,
            preprocess_report,
            augmented,
            records,
            hash,
            _lock: lock,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn config(&self) -> &RoundConfig {
        &self.cfg
    }

    pub fn round_dir(&self, round: usize) -> PathBuf {
        self.dir.join("rounds").join(round.to_string())
    }

    /// Trains the base model on the supervised set (round 0).
    pub fn run_base(&mut self) -> Result<RoundRecord> {
        if !self.records.is_empty() {
            return Err(Error::invalid("base model already exists"));
        }
        self.staged(0, |exp, stage| exp.base_stages(stage))
    }

    /// Labels, filters, and updates the model once.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        if self.records.is_empty() {
            return Err(Error::invalid("run the base model before any round"));
        }
        let round = self.records.len();
        self.staged(round, |exp, stage| exp.round_stages(round, stage))
    }

    fn staged(
        &mut self,
        round: usize,
        body: impl FnOnce(&mut Self, &Path) -> Result<(RoundRecord, Option<Corpus>)>,
    ) -> Result<RoundRecord> {
        let stage = self.dir.join("rounds").join(format!("{round}.tmp"));
        if stage.exists() {
            fs::remove_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
        }
        fs::create_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
        let outcome = body(self, &stage).and_then(|(record, augmented)| {
            write_json(&stage.join("record.json"), &record)?;
            let dest = self.round_dir(round);
            fs::rename(&stage, &dest).map_err(|e| Error::io(&dest, e))?;
            let mut records = self.records.clone();
            records.push(record.clone());
            let state = State {
                config_hash: self.hash.clone(),
                records,
            };
            if let Err(e) = write_json_atomic(&self.dir.join("state.json"), &state) {
                let _ = fs::remove_dir_all(&dest);
                return Err(e);
            }
            self.records = state.records;
            if augmented.is_some() {
                self.augmented = augmented;
            }
            Ok(record)
        });
        if outcome.is_err() && stage.exists() {
            let _ = fs::remove_dir_all(&stage);
        }
        outcome
    }

    fn relative_checkpoint(round: usize) -> String {
        format!("rounds/{round}/checkpoint.ckpt")
    }

    fn base_stages(&mut self, stage: &Path) -> Result<(RoundRecord, Option<Corpus>)> {
        if let Some(report) = &self.preprocess_report {
            write_json(&stage.join("preprocess_report.json"), report)?;
        }
        let supervised = &self.corpora.supervised;
        let checkpoint = stage.join("checkpoint.ckpt");
        let (n_train, augmented) = if self.cfg.augment_k > 0 {
            let base_manifest = stage.join("base.manifest");
            save_manifest(supervised, &base_manifest)?;
            let base_ckpt = stage.join("base.ckpt");
            self.backend.train(&base_manifest, None, &base_ckpt)?;

            let plan = make_plan(supervised, self.cfg.augment_k, self.cfg.seed)?;
            write_json(&stage.join("augment_plan.json"), &plan)?;
            let augmented = apply_plan(supervised, &plan)?;
            save_manifest(&augmented, stage.join("augmented.manifest"))?;
            let train = merge_corpora(supervised, &augmented, 1.0)?;
            let train_manifest = stage.join("train.manifest");
            save_manifest(&train, &train_manifest)?;
            self.backend.train(&train_manifest, Some(&base_ckpt), &checkpoint)?;
            (train.len(), Some(augmented))
        } else {
            let train_manifest = stage.join("train.manifest");
            save_manifest(supervised, &train_manifest)?;
            self.backend.train(&train_manifest, None, &checkpoint)?;
            (supervised.len(), None)
        };
        let (eval_supervised, eval_unsupervised) = self.evaluate_checkpoint(&checkpoint, stage)?;
        let record = RoundRecord {
            round: 0,
            n_supervised: supervised.len(),
            n_pseudo_kept: 0,
            n_pseudo_dropped: 0,
            n_augmented: augmented.as_ref().map_or(0, Corpus::len),
            n_train,
            eval_supervised,
            eval_unsupervised,
            checkpoint: Self::relative_checkpoint(0),
            config_hash: self.hash.clone(),
        };
        Ok((record, augmented))
    }

    fn label(&self, checkpoint: &Path, input: &Corpus, stage: &Path, name: &str) -> Result<Corpus> {
        let in_path = stage.join(format!("{name}.in.manifest"));
        let out_path = stage.join(format!("{name}.manifest"));
        save_manifest(input, &in_path)?;
        self.backend.label(checkpoint, &in_path, &out_path)?;
        fs::remove_file(&in_path).map_err(|e| Error::io(&in_path, e))?;
        let labeled = load_manifest(&out_path)?;
        check_labels(input, labeled, &out_path)
    }

    fn evaluate_checkpoint(&self, checkpoint: &Path, stage: &Path) -> Result<(EvalPair, Option<EvalPair>)> {
        let eval_cfg = EvalConfig::default();
        let sup = self
            .corpora
            .supervised_eval
            .as_ref()
            .unwrap_or(&self.corpora.supervised);
        let sup = evaluate(&self.label(checkpoint, sup, stage, "eval_supervised")?, &eval_cfg)?;
        let unsup = if self.cfg.analysis_eval {
            let u = self
                .corpora
                .unsupervised_eval
                .as_ref()
                .unwrap_or(&self.corpora.unsupervised);
            Some(evaluate(&self.label(checkpoint, u, stage, "eval_unsupervised")?, &eval_cfg)?)
        } else {
            None
        };
        Ok((sup, unsup))
    }

    fn round_stages(&mut self, round: usize, stage: &Path) -> Result<(RoundRecord, Option<Corpus>)> {
        let current = self
            .dir
            .join(&self.records.last().expect("base exists").checkpoint);
        let pseudo = self.label(&current, &self.corpora.unsupervised, stage, "pseudo")?;

        let supervised_part = match self.cfg.label_scope {
            LabelScope::UnsupervisedOnly => self.corpora.supervised.clone(),
            LabelScope::All => self.label(&current, &self.corpora.supervised, stage, "pseudo_supervised")?,
        };

        let (kept, report) = match self.cfg.filter_method {
            FilterChoice::None => (pseudo.clone(), None),
            FilterChoice::RatioKde => {
                let (k, r) = filter_ratio_kde(&pseudo, self.cfg.keep_fraction)?;
                (k, Some(r))
            }
            FilterChoice::RatioToGold => {
                let (k, r) = filter_ratio_to_gold(&pseudo, self.cfg.ratio_low, self.cfg.ratio_high)?;
                (k, Some(r))
            }
            FilterChoice::EmbeddingSimilarity => {
                let pseudo_path = stage.join("pseudo.manifest");
                let embedded_path = stage.join("embedded.manifest");
                self.backend.embed(&current, &pseudo_path, &embedded_path)?;
                let embedded = check_labels(&pseudo, load_manifest(&embedded_path)?, &embedded_path)?;
                let (k, r) = filter_embedding_similarity(&embedded, self.cfg.keep_fraction)?;
                (k, Some(r))
            }
        };
        if let Some(report) = &report {
            write_json(&stage.join("filter_report.json"), report)?;
        }
        save_manifest(&kept, stage.join("kept.manifest"))?;

        let mut train = merge_corpora(&supervised_part, &kept, self.cfg.unsup_weight)?;
        let n_augmented = match &self.augmented {
            Some(a) => {
                train = merge_corpora(&train, a, 1.0)?;
                a.len()
            }
            None => 0,
        };
        train.name = format!("train-r{round}");
        let expected = supervised_part.len()
            + self.cfg.unsup_weight.round() as usize * kept.len()
            + n_augmented;
        if train.len() != expected {
            return Err(Error::Invariant {
                id: train.name.clone(),
                message: format!("training set has {} records, expected {expected}", train.len()),
            });
        }
        let train_manifest = stage.join("train.manifest");
        save_manifest(&train, &train_manifest)?;

        let checkpoint = stage.join("checkpoint.ckpt");
        let init = match self.cfg.update_mode {
            UpdateMode::Finetune => Some(current.as_path()),
            UpdateMode::FromScratch => None,
        };
        self.backend.train(&train_manifest, init, &checkpoint)?;
        let (eval_supervised, eval_unsupervised) = self.evaluate_checkpoint(&checkpoint, stage)?;
        let record = RoundRecord {
            round,
            n_supervised: supervised_part.len(),
            n_pseudo_kept: kept.len(),
            n_pseudo_dropped: pseudo.len() - kept.len(),
            n_augmented,
            n_train: train.len(),
            eval_supervised,
            eval_unsupervised,
            checkpoint: Self::relative_checkpoint(round),
            config_hash: self.hash.clone(),
        };
        Ok((record, None))
    }
}

/// Removes staging directories and rounds that `state.json` does not know about.
fn remove_stale_rounds(rounds: &Path, known: usize) -> Result<()> {
    let entries = fs::read_dir(rounds).map_err(|e| Error::io(rounds, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(rounds, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let stale = match name.parse::<usize>() {
            Ok(k) => k >= known,
            Err(_) => name.ends_with(".tmp"),
        };
        if stale {
            log::warn!("removing incomplete round {}", entry.path().display());
            fs::remove_dir_all(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        }
    }
    Ok(())
}

/// The labeler must return the same samples in the same order with both
/// predictions present. Provenance is forced to pseudo.
fn check_labels(input: &Corpus, labeled: Corpus, path: &Path) -> Result<Corpus> {
    if labeled.len() != input.len() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("labeler returned {} samples for {} inputs", labeled.len(), input.len()),
        });
    }
    let mut samples = labeled.samples;
    for (i, (s, orig)) in samples.iter_mut().zip(&input.samples).enumerate() {
        if s.id != orig.id {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: format!("expected sample {:?}, found {:?}", orig.id, s.id),
            });
        }
        s.require("transcript", &s.transcript)?;
        s.require("translation", &s.translation)?;
        s.provenance = Provenance::Pseudo;
    }
    Ok(input.with_samples(samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxRounds,
    NoImprovement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopOutcome {
    pub base: RoundRecord,
    pub rounds: Vec<RoundRecord>,
    pub stop: StopReason,
}

/// Runs (or resumes) the base model and rounds until `max_rounds` or until
/// the stop metric fails to improve for `patience` consecutive rounds.
pub fn run_loop(
    dir: impl Into<PathBuf>,
    backend: &dyn Backend,
    corpora: Corpora,
    cfg: RoundConfig,
) -> Result<LoopOutcome> {
    let mut exp = Experiment::open(dir, backend, cfg.clone(), corpora)?;
    if exp.records().is_empty() {
        exp.run_base()?;
    }
    let metric = cfg.stop_metric;
    let mut best = metric.value(&exp.records()[0].eval_supervised);
    let mut stale = 0;
    let mut stop = StopReason::MaxRounds;
    let mut step = |rec: &RoundRecord| {
        let v = metric.value(&rec.eval_supervised);
        if metric.improves(v, best) {
            best = v;
            stale = 0;
        } else {
            stale += 1;
        }
        cfg.patience > 0 && stale >= cfg.patience
    };
    let mut done = false;
    for rec in &exp.records()[1..] {
        done = step(rec);
    }
    while !done && exp.records().len() <= cfg.max_rounds {
        let rec = exp.run_round()?;
        log::info!(
            "round {}: kept {} dropped {} wer {:.4} bleu {:.2}",
            rec.round,
            rec.n_pseudo_kept,
            rec.n_pseudo_dropped,
            rec.eval_supervised.transcript.wer,
            rec.eval_supervised.translation.bleu
        );
        done = step(&rec);
    }
    if done {
        stop = StopReason::NoImprovement;
    }
    let records = exp.records();
    Ok(LoopOutcome {
        base: records[0].clone(),
        rounds: records[1..].to_vec(),
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sample;
    use crate::selftrain::{NoiseModel, SimulatedBackend};

    fn corpus(prefix: &str, n: usize, role: CorpusRole) -> Corpus {
        Corpus::new(
            prefix,
            role,
            "en",
            "de",
            (0..n)
                .map(|i| {
                    Sample::gold(
                        format!("{prefix}{i}"),
                        1.0 + (i % 10) as f64,
                        format!("a{} b{} c{} d{} e{}", i % 4, i % 6, i % 9, i, i % 2),
                        format!("x{} y{} z{}", i % 5, i, i % 3),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn corpora() -> Corpora {
        Corpora {
            supervised: corpus("l", 100, CorpusRole::Supervised),
            unsupervised: corpus("u", 50, CorpusRole::Unsupervised),
            supervised_eval: None,
            unsupervised_eval: None,
        }
    }

    fn backend() -> SimulatedBackend {
        SimulatedBackend::new(
            NoiseModel {
                word_sub_rate: 0.3,
                loop_rate_slope: 0.05,
                ..NoiseModel::default()
            },
            1,
        )
    }

    #[test]
    fn base_and_round_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let b = backend();
        let cfg = RoundConfig {
            filter_method: FilterChoice::RatioKde,
            ..RoundConfig::default()
        };
        let mut exp = Experiment::open(dir.path(), &b, cfg, corpora()).unwrap();
        let base = exp.run_base().unwrap();
        assert_eq!((base.n_supervised, base.n_pseudo_kept, base.n_train), (100, 0, 100));
        let r1 = exp.run_round().unwrap();
        assert_eq!((r1.n_pseudo_kept, r1.n_pseudo_dropped, r1.n_train), (45, 5, 145));
        assert!(dir.path().join("rounds/1/filter_report.json").exists());
        assert!(dir.path().join("rounds/1/checkpoint.ckpt").exists());
        assert!(Experiment::open(dir.path(), &b, RoundConfig::default(), corpora()).is_err());
    }

    #[test]
    fn no_filter_weights_and_augmentation() {
        let dir = tempfile::tempdir().unwrap();
        let b = backend();
        let cfg = RoundConfig {
            augment_k: 10,
            unsup_weight: 2.0,
            ..RoundConfig::default()
        };
        let mut exp = Experiment::open(dir.path(), &b, cfg, corpora()).unwrap();
        let base = exp.run_base().unwrap();
        assert_eq!((base.n_augmented, base.n_train), (10, 110));
        let r1 = exp.run_round().unwrap();
        assert_eq!(r1.n_train, 100 + 2 * 50 + 10);
        assert!(!dir.path().join("rounds/1/filter_report.json").exists());
    }

    #[test]
    fn label_scope_all_replaces_gold() {
        let dir = tempfile::tempdir().unwrap();
        let b = backend();
        let cfg = RoundConfig {
            label_scope: LabelScope::All,
            ..RoundConfig::default()
        };
        let mut exp = Experiment::open(dir.path(), &b, cfg, corpora()).unwrap();
        exp.run_base().unwrap();
        exp.run_round().unwrap();
        let train = load_manifest(dir.path().join("rounds/1/train.manifest")).unwrap();
        assert_eq!(train.len(), 150);
        assert!(train.samples.iter().all(|s| s.provenance == Provenance::Pseudo));
    }

    #[test]
    fn lock_and_round_order() {
        let dir = tempfile::tempdir().unwrap();
        let b = backend();
        let mut exp = Experiment::open(dir.path(), &b, RoundConfig::default(), corpora()).unwrap();
        assert!(matches!(
            Experiment::open(dir.path(), &b, RoundConfig::default(), corpora()),
            Err(Error::Locked(_))
        ));
        assert!(exp.run_round().is_err());
        exp.run_base().unwrap();
        assert!(exp.run_base().is_err());
        drop(exp);
        let exp = Experiment::open(dir.path(), &b, RoundConfig::default(), corpora()).unwrap();
        assert_eq!(exp.records().len(), 1);
    }

    #[test]
    fn loop_stops_on_plateau() {
        let dir = tempfile::tempdir().unwrap();
        let b = SimulatedBackend {
            plateau_after: Some(1),
            ..backend()
        };
        let cfg = RoundConfig {
            max_rounds: 5,
            patience: 1,
            ..RoundConfig::default()
        };
        let out = run_loop(dir.path(), &b, corpora(), cfg).unwrap();
        assert_eq!(out.rounds.len(), 2);
        assert_eq!(out.stop, StopReason::NoImprovement);
    }
}
