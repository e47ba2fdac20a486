use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const TOOL: &str = "twophase";

/// Every JSON artifact carries the tool version, the configuration digest
/// and the seed next to its payload.
#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub result: T,
}

/// Provenance shared by all outputs of one run.
#[derive(Debug, Clone)]
pub struct Stamp {
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub dir: PathBuf,
}

impl Stamp {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, result: &T) -> Result<PathBuf> {
        let env = Envelope {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            config_sha256: self.config_sha256.clone(),
            seed: self.seed,
            result,
        };
        let mut text = serde_json::to_string_pretty(&env)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// CSV text prefixed with `#` provenance lines.
    pub fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf> {
        let text = format!(
            "# {TOOL} {} {}\n# config_sha256 {}\n# seed {}\n{body}",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.config_sha256,
            self.seed
        );
        self.write(name, &text)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let path = self.path(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

/// Reads the payload of an artifact written by [`Stamp::write_json`].
pub fn read_artifact<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let env: Envelope<T> =
        serde_json::from_str(&text).map_err(|e| twophase::Error::Schema(format!("{}: {e}", path.display())))?;
    Ok(env.result)
}
