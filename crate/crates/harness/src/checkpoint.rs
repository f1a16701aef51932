//! Resumable snapshots of an acquisition run.

use std::fs;
use std::path::Path;

use acq_core::acquisition::Acquisition;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub benchmark: Option<String>,
    pub acquisition: Acquisition,
}

impl Checkpoint {
    pub fn new(benchmark: Option<String>, acquisition: Acquisition) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            benchmark,
            acquisition,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)
            .with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_slice(
            &fs::read(path).with_context(|| format!("reading {}", path.display()))?,
        )?;
        if cp.version != CHECKPOINT_VERSION {
            bail!("checkpoint version {} not supported", cp.version);
        }
        Ok(cp)
    }
}
