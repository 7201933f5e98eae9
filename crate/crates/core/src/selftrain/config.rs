use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::backend::{Backend, ExternalBackend, TrainerContract};
use super::experiment::Corpora;
use super::sim::{NoiseModel, SimulatedBackend};
use super::RoundConfig;
use crate::corpus::{load_manifest, Corpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    External,
    Simulated,
}

/// Keys of the config file that are not round settings.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Setup {
    experiment_dir: PathBuf,
    supervised: PathBuf,
    unsupervised: PathBuf,
    supervised_eval: Option<PathBuf>,
    unsupervised_eval: Option<PathBuf>,
    source_lang: Option<String>,
    target_lang: Option<String>,
    #[serde(default)]
    backend: BackendKind,
    train_command: Option<String>,
    label_command: Option<String>,
    embed_command: Option<String>,
    workdir: Option<PathBuf>,
    sim_word_sub_rate: Option<f64>,
    sim_loop_rate_slope: Option<f64>,
    sim_loop_ngram_n: Option<usize>,
    sim_loop_repeats: Option<usize>,
    sim_eta: Option<f64>,
    sim_plateau_after: Option<usize>,
}

const SETUP_KEYS: &[&str] = &[
    "experiment_dir",
    "supervised",
    "unsupervised",
    "supervised_eval",
    "unsupervised_eval",
    "source_lang",
    "target_lang",
    "backend",
    "train_command",
    "label_command",
    "embed_command",
    "workdir",
    "sim_word_sub_rate",
    "sim_loop_rate_slope",
    "sim_loop_ngram_n",
    "sim_loop_repeats",
    "sim_eta",
    "sim_plateau_after",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    External(TrainerContract),
    Simulated(SimulatedBackend),
}

/// Fully resolved `selftrain run` configuration. Relative paths in the file
/// are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_dir: PathBuf,
    pub supervised: PathBuf,
    pub unsupervised: PathBuf,
    pub supervised_eval: Option<PathBuf>,
    pub unsupervised_eval: Option<PathBuf>,
    pub source_lang: Option<String>,
    pub target_lang: Option<String>,
    pub backend: BackendSpec,
    pub round: RoundConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut setup_table = toml::Table::new();
        for key in SETUP_KEYS {
            if let Some(v) = table.remove(*key) {
                setup_table.insert(key.to_string(), v);
            }
        }
        let setup: Setup = setup_table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let round: RoundConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        round.validate()?;

        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        let backend = match setup.backend {
            BackendKind::External => {
                let need = |v: &Option<String>, key: &str| {
                    v.clone()
                        .ok_or_else(|| Error::Config(format!("external backend needs {key}")))
                };
                let contract = TrainerContract {
                    train_command: need(&setup.train_command, "train_command")?,
                    label_command: need(&setup.label_command, "label_command")?,
                    embed_command: setup.embed_command.clone(),
                    workdir: resolve(setup.workdir.as_deref().unwrap_or(Path::new("."))),
                };
                contract.validate()?;
                BackendSpec::External(contract)
            }
            BackendKind::Simulated => {
                let d = NoiseModel::default();
                let noise = NoiseModel {
                    word_sub_rate: setup.sim_word_sub_rate.unwrap_or(d.word_sub_rate),
                    loop_rate_slope: setup.sim_loop_rate_slope.unwrap_or(d.loop_rate_slope),
                    loop_ngram_n: setup.sim_loop_ngram_n.unwrap_or(d.loop_ngram_n),
                    loop_repeats: setup.sim_loop_repeats.unwrap_or(d.loop_repeats),
                };
                noise.validate().map_err(|e| Error::Config(e.to_string()))?;
                let mut sim = SimulatedBackend::new(noise, round.seed);
                if let Some(eta) = setup.sim_eta {
                    if !(0.0..=1.0).contains(&eta) {
                        return Err(Error::Config(format!("sim_eta {eta} outside [0, 1]")));
                    }
                    sim.eta = eta;
                }
                sim.plateau_after = setup.sim_plateau_after;
                BackendSpec::Simulated(sim)
            }
        };
        Ok(ExperimentConfig {
            experiment_dir: resolve(&setup.experiment_dir),
            supervised: resolve(&setup.supervised),
            unsupervised: resolve(&setup.unsupervised),
            supervised_eval: setup.supervised_eval.as_deref().map(resolve),
            unsupervised_eval: setup.unsupervised_eval.as_deref().map(resolve),
            source_lang: setup.source_lang,
            target_lang: setup.target_lang,
            backend,
            round,
        })
    }

    pub fn build_backend(&self) -> Result<Box<dyn Backend>> {
        Ok(match &self.backend {
            BackendSpec::External(c) => Box::new(ExternalBackend::new(c.clone())?),
            BackendSpec::Simulated(s) => Box::new(s.clone()),
        })
    }

    /// Loads every corpus. Language codes come from the config when given,
    /// otherwise undeclared (`und`) codes are taken from the supervised set.
    pub fn load_corpora(&self) -> Result<Corpora> {
        let mut supervised = load_manifest(&self.supervised)?;
        if let Some(l) = &self.source_lang {
            supervised.source_lang = l.clone();
        }
        if let Some(l) = &self.target_lang {
            supervised.target_lang = l.clone();
        }
        let align = |mut c: Corpus| -> Corpus {
            if self.source_lang.is_some() || c.source_lang == "und" {
                c.source_lang = supervised.source_lang.clone();
            }
            if self.target_lang.is_some() || c.target_lang == "und" {
                c.target_lang = supervised.target_lang.clone();
            }
            c
        };
        let unsupervised = align(load_manifest(&self.unsupervised)?);
        let supervised_eval = self
            .supervised_eval
            .as_ref()
            .map(|p| load_manifest(p).map(&align))
            .transpose()?;
        let unsupervised_eval = self
            .unsupervised_eval
            .as_ref()
            .map(|p| load_manifest(p).map(&align))
            .transpose()?;
        Ok(Corpora {
            supervised,
            unsupervised,
            supervised_eval,
            unsupervised_eval,
        })
    }
}
