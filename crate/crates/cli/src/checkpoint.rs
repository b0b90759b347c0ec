//! Versioned training checkpoints and atomic artifact writes.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fama_core::copula::AttentionalCopula;
use fama_core::marginal::MarginalFlowBank;
use fama_core::train::TrainState;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Marginals,
    Copula,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub stage: Stage,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub marginals: MarginalFlowBank,
    pub marginal_state: TrainState,
    pub copula: Option<AttentionalCopula>,
    pub copula_state: Option<TrainState>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        let raw: serde_json::Value = serde_json::from_slice(&bytes)
            .with_context(|| format!("parsing checkpoint {}", path.display()))?;
        let version = raw
            .get("format_version")
            .and_then(|v| v.as_u64())
            .context("checkpoint has no format_version")?;
        if version > CHECKPOINT_VERSION as u64 {
            bail!(
                "checkpoint {} has format version {version}, newer than supported version {CHECKPOINT_VERSION}",
                path.display()
            );
        }
        serde_path_to_error::deserialize(raw)
            .map_err(|e| anyhow::anyhow!("checkpoint field `{}`: {}", e.path(), e.inner()))
    }

    /// Refuse to mix artifacts from different configurations or seeds.
    pub fn check_compatible(&self, cfg: &RunConfig) -> Result<()> {
        if self.config_hash != cfg.hash() {
            bail!(
                "checkpoint config hash {} does not match the current config hash {}",
                self.config_hash,
                cfg.hash()
            );
        }
        if self.seed != cfg.seed {
            bail!("checkpoint seed {} does not match the current seed {}", self.seed, cfg.seed);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec(self)?)
    }
}

/// Write via a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
