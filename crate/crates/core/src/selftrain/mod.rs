//! Self-training orchestration: base model, then rounds of labeling the
//! unsupervised set, filtering the pseudo-labels and updating the model on
//! the union with the supervised set. Models are opaque checkpoint files
//! produced by a [`Backend`].

mod backend;
mod config;
mod experiment;
mod sim;

pub use backend::{Backend, ExternalBackend, TrainerContract};
pub use config::{BackendKind, BackendSpec, ExperimentConfig};
pub use experiment::{run_loop, Corpora, Experiment, LoopOutcome, StopReason};
pub use sim::{mock_label, mock_label_traced, NoiseModel, SimCheckpoint, SimulatedBackend};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text::EvalPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    #[default]
    Finetune,
    FromScratch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScope {
    #[default]
    UnsupervisedOnly,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterChoice {
    #[default]
    None,
    RatioKde,
    RatioToGold,
    EmbeddingSimilarity,
}

/// Metric watched by the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    /// Translation BLEU on the supervised eval split, higher is better.
    #[default]
    Bleu,
    /// Transcript WER on the supervised eval split, lower is better.
    Wer,
}

impl StopMetric {
    pub fn value(self, eval: &EvalPair) -> f64 {
        match self {
            StopMetric::Bleu => eval.translation.bleu,
            StopMetric::Wer => eval.transcript.wer,
        }
    }

    pub fn improves(self, new: f64, best: f64) -> bool {
        match self {
            StopMetric::Bleu => new > best,
            StopMetric::Wer => new < best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundConfig {
    pub update_mode: UpdateMode,
    pub label_scope: LabelScope,
    pub filter_method: FilterChoice,
    pub keep_fraction: f64,
    pub ratio_low: f64,
    pub ratio_high: f64,
    /// Number of concatenated samples; 0 disables augmentation.
    pub augment_k: usize,
    /// Replication factor of the kept pseudo-labels, rounded to an integer.
    pub unsup_weight: f64,
    pub max_rounds: usize,
    /// Rounds without improvement before stopping; 0 never stops early.
    pub patience: usize,
    pub stop_metric: StopMetric,
    pub seed: u64,
    /// Run the supervised filter on the supervised set before the base model.
    pub preprocess: bool,
    /// Score pseudo-labels against the unsupervised gold labels each round.
    pub analysis_eval: bool,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            update_mode: UpdateMode::default(),
            label_scope: LabelScope::default(),
            filter_method: FilterChoice::default(),
            keep_fraction: 0.9,
            ratio_low: 0.9,
            ratio_high: 1.1,
            augment_k: 0,
            unsup_weight: 1.0,
            max_rounds: 3,
            patience: 1,
            stop_metric: StopMetric::default(),
            seed: 0,
            preprocess: true,
            analysis_eval: false,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "keep_fraction must be in (0, 1], got {}",
                self.keep_fraction
            )));
        }
        if self.max_rounds < 1 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        if !self.unsup_weight.is_finite() || self.unsup_weight.round() < 1.0 {
            return Err(Error::Config(format!(
                "unsup_weight must round to a positive integer, got {}",
                self.unsup_weight
            )));
        }
        if !(0.0 <= self.ratio_low && self.ratio_low <= self.ratio_high) {
            return Err(Error::Config(format!(
                "ratio bounds must satisfy 0 <= low <= high, got [{}, {}]",
                self.ratio_low, self.ratio_high
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Outcome of the base model (round 0) or one self-training round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub n_supervised: usize,
    pub n_pseudo_kept: usize,
    pub n_pseudo_dropped: usize,
    pub n_augmented: usize,
    /// Records in the training manifest of this round.
    pub n_train: usize,
    pub eval_supervised: EvalPair,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_unsupervised: Option<EvalPair>,
    /// Checkpoint path relative to the experiment directory.
    pub checkpoint: String,
    pub config_hash: String,
}
