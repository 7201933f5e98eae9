use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trains, labels and embeds through opaque checkpoint files.
pub trait Backend {
    /// Trains on `train_manifest`, starting from `init` or from scratch, and
    /// writes the resulting checkpoint to `out_checkpoint`.
    fn train(&self, train_manifest: &Path, init: Option<&Path>, out_checkpoint: &Path) -> Result<()>;

    /// Writes `in_manifest` with `transcript`/`translation` predicted by the model.
    fn label(&self, checkpoint: &Path, in_manifest: &Path, out_manifest: &Path) -> Result<()>;

    /// Writes `in_manifest` with `emb_tc`/`emb_tl` filled in.
    fn embed(&self, checkpoint: &Path, in_manifest: &Path, out_manifest: &Path) -> Result<()>;
}

/// Shell command templates for an external trainer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainerContract {
    /// Uses `{train_manifest}`, `{init_checkpoint}` and `{out_checkpoint}`.
    pub train_command: String,
    /// Uses `{checkpoint}`, `{in_manifest}` and `{out_manifest}`.
    pub label_command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_command: Option<String>,
    pub workdir: PathBuf,
}

const TRAIN_KEYS: [&str; 3] = ["{train_manifest}", "{init_checkpoint}", "{out_checkpoint}"];
const LABEL_KEYS: [&str; 3] = ["{checkpoint}", "{in_manifest}", "{out_manifest}"];

fn check_template(name: &str, template: &str, keys: &[&str]) -> Result<()> {
    for key in keys {
        if !template.contains(key) {
            return Err(Error::Config(format!("{name} lacks placeholder {key}")));
        }
    }
    Ok(())
}

impl TrainerContract {
    pub fn validate(&self) -> Result<()> {
        check_template("train_command", &self.train_command, &TRAIN_KEYS)?;
        check_template("label_command", &self.label_command, &LABEL_KEYS)?;
        if let Some(embed) = &self.embed_command {
            check_template("embed_command", embed, &LABEL_KEYS)?;
        }
        Ok(())
    }
}

/// Single-quotes a value for `sh`.
fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn absolute(p: &Path) -> Result<String> {
    let abs = std::path::absolute(p).map_err(|e| Error::io(p, e))?;
    Ok(abs.to_string_lossy().into_owned())
}

fn render(template: &str, values: &[(&str, Option<&Path>)]) -> Result<String> {
    let mut out = template.to_string();
    for (key, path) in values {
        let quoted = match path {
            Some(p) => shell_quote(&absolute(p)?),
            None => "''".to_string(),
        };
        out = out.replace(key, &quoted);
    }
    Ok(out)
}

const DIAGNOSTIC_TAIL: usize = 4000;

#[derive(Debug, Clone)]
pub struct ExternalBackend {
    contract: TrainerContract,
}

impl ExternalBackend {
    pub fn new(contract: TrainerContract) -> Result<Self> {
        contract.validate()?;
        Ok(ExternalBackend { contract })
    }

    pub fn contract(&self) -> &TrainerContract {
        &self.contract
    }

    fn run(&self, stage: &str, command: &str) -> Result<()> {
        log::info!("{stage}: {command}");
        let output = Command::new("sh")
            .arg("-c")
            .arg(command)
            .current_dir(&self.contract.workdir)
            .output()
            .map_err(|e| Error::io(&self.contract.workdir, e))?;
        if output.status.success() {
            return Ok(());
        }
        let stderr = String::from_utf8_lossy(&output.stderr);
        let stderr = stderr.trim_end();
        let start = stderr
            .char_indices()
            .map(|(i, _)| i)
            .find(|&i| stderr.len() - i <= DIAGNOSTIC_TAIL)
            .unwrap_or(stderr.len());
        Err(Error::External {
            stage: stage.to_string(),
            status: output.status.to_string(),
            diagnostic: stderr[start..].to_string(),
        })
    }
}

impl Backend for ExternalBackend {
    fn train(&self, train_manifest: &Path, init: Option<&Path>, out_checkpoint: &Path) -> Result<()> {
        let cmd = render(
            &self.contract.train_command,
            &[
                ("{train_manifest}", Some(train_manifest)),
                ("{init_checkpoint}", init),
                ("{out_checkpoint}", Some(out_checkpoint)),
            ],
        )?;
        self.run("train", &cmd)?;
        if !out_checkpoint.exists() {
            return Err(Error::MissingCheckpoint(out_checkpoint.to_path_buf()));
        }
        Ok(())
    }

    fn label(&self, checkpoint: &Path, in_manifest: &Path, out_manifest: &Path) -> Result<()> {
        let cmd = render(
            &self.contract.label_command,
            &[
                ("{checkpoint}", Some(checkpoint)),
                ("{in_manifest}", Some(in_manifest)),
                ("{out_manifest}", Some(out_manifest)),
            ],
        )?;
        self.run("label", &cmd)
    }

    fn embed(&self, checkpoint: &Path, in_manifest: &Path, out_manifest: &Path) -> Result<()> {
        let template = self
            .contract
            .embed_command
            .as_deref()
            .ok_or_else(|| Error::Config("embedding filter needs embed_command".into()))?;
        let cmd = render(
            template,
            &[
                ("{checkpoint}", Some(checkpoint)),
                ("{in_manifest}", Some(in_manifest)),
                ("{out_manifest}", Some(out_manifest)),
            ],
        )?;
        self.run("embed", &cmd)
    }
}
