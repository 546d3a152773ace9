//! `manifest.json`, written once per output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ddsr::trainer::TrainConfig;
use ddsr::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::args::DataPlan;
use crate::CliError;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: u64,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub data: Option<DataPlan>,
    /// Command-specific settings such as regime, policy or sweep values.
    pub settings: BTreeMap<String, serde_json::Value>,
    /// Role → path of every checkpoint read or written.
    pub checkpoints: BTreeMap<String, PathBuf>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], seed: u64) -> Self {
        Self {
            command: command.into(),
            argv: argv.to_vec(),
            version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
            seed,
            ..Self::default()
        }
    }

    pub fn setting(&mut self, key: &str, value: impl Serialize) -> Result<(), CliError> {
        self.settings.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn time(&mut self, phase: &str, since: Instant) {
        self.timings.insert(phase.into(), since.elapsed().as_secs_f64());
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::write(dir.join(FILE_NAME), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(dir.join(FILE_NAME))?;
        Ok(serde_json::from_str(&text)?)
    }
}
