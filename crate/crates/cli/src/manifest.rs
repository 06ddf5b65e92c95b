use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::scenario::ScenarioFile;

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    /// Scenario with command-line overrides applied; also written as `scenario.toml`.
    pub scenario: ScenarioFile,
    /// Fully resolved in-memory configuration.
    pub resolved: String,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
}

pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
    started: Instant,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        self.written.push(PathBuf::from(name));
        Ok(())
    }

    pub fn finish(mut self, command: &str, args: &[String], seed: Option<u64>, scenario: &ScenarioFile, resolved: String) -> Result<()> {
        self.write("scenario.toml", toml::to_string(scenario)?)?;
        let mut outputs = self.written.clone();
        outputs.push(PathBuf::from("manifest.json"));
        let m = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            args: args.to_vec(),
            seed,
            scenario: scenario.clone(),
            resolved,
            outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        self.write("manifest.json", serde_json::to_string_pretty(&m)?)
    }
}
