use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliResult;

pub const BUILD_ID: &str = env!("STEP_BUILD_ID");

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration (defaults and flag overrides applied).
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub build_id: String,
    pub wall_time_secs: f64,
    pub summary: Value,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_owned(),
            config: Value::Null,
            seed: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            build_id: BUILD_ID.to_owned(),
            wall_time_secs: 0.0,
            summary: Value::Null,
        }
    }

    pub fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_owned(), path.to_path_buf());
        self
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.outputs.insert(name.to_owned(), path.to_path_buf());
    }

    pub fn finish(&mut self, started: Instant, summary: Value) {
        self.wall_time_secs = started.elapsed().as_secs_f64();
        self.summary = summary;
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
    }
}

/// `out.csv` -> `out.csv.manifest.json`.
pub fn manifest_path_for(file: &Path) -> PathBuf {
    let mut s = file.as_os_str().to_owned();
    s.push(".manifest.json");
    s.into()
}
