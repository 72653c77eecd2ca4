//! Run manifests: what was run, with which seed, and what it wrote.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub master_seed: u64,
    pub code_version: String,
    /// Unix seconds; `None` inside reports so that they stay byte-deterministic.
    pub started: Option<u64>,
    pub finished: Option<u64>,
    pub status: String,
    pub outputs: Vec<PathBuf>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, master_seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            master_seed,
            code_version: CODE_VERSION.to_string(),
            started: None,
            finished: None,
            status: "running".into(),
            outputs: Vec::new(),
        }
    }

    /// Copy without timestamps, for embedding in deterministic outputs.
    pub fn timeless(&self) -> Self {
        Self { started: None, finished: None, ..self.clone() }
    }

    pub fn begin(&mut self, path: &Path) -> Result<()> {
        self.started = Some(now());
        self.write(path)
    }

    pub fn finish(&mut self, path: &Path, status: &str) -> Result<()> {
        self.finished = Some(now());
        self.status = status.to_string();
        self.write(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn begin_and_finish_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let mut m = RunManifest::new("sample", None, 7);
        m.outputs.push("a.lfp".into());
        m.begin(&p).unwrap();
        assert_eq!(RunManifest::read(&p).unwrap().status, "running");
        m.finish(&p, "ok").unwrap();
        let back = RunManifest::read(&p).unwrap();
        assert_eq!(back, m);
        assert!(back.timeless().started.is_none());
    }
}
