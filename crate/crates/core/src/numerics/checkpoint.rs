//! Checkpoint persistence.
//!
//! A checkpoint is two files sharing a stem: `<stem>.json`, the manifest, and
//! `<stem>.bin`, little-endian `f64` values concatenated in manifest order
//! (all parameters, then Adam first moments, then second moments).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, ParameterSet, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub path: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: String,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
    /// Adam hyperparameters and step; absent for inference-only checkpoints.
    pub optimizer: Option<OptimizerEntry>,
    /// Resolved configuration echo.
    pub config: serde_json::Value,
    /// Free-form training state (step counters, early stopping, ...).
    pub state: serde_json::Value,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: ParameterSet,
    pub adam: Option<AdamState>,
}

/// `foo`, `foo.json` and `foo.bin` all name the checkpoint with stem `foo`.
fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    let base = match stem.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let mut json = base.clone().into_os_string();
    json.push(".json");
    let mut bin = base.into_os_string();
    bin.push(".bin");
    (json.into(), bin.into())
}

pub fn save_checkpoint(
    stem: &Path,
    params: &ParameterSet,
    adam: Option<&AdamState>,
    seed: u64,
    config: serde_json::Value,
    state: serde_json::Value,
) -> Result<PathBuf> {
    let (json_path, bin_path) = paths(stem);
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        dtype: "f64".into(),
        seed,
        params: params
            .ids()
            .map(|id| ParamEntry {
                path: params.name(id).to_owned(),
                shape: params.tensor(id).shape().to_vec(),
            })
            .collect(),
        optimizer: adam.map(|a| OptimizerEntry { config: a.config, step: a.step }),
        config,
        state,
        payload: bin_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let mut bin = BufWriter::new(File::create(&bin_path)?);
    let mut put = |vals: &[f64]| -> Result<()> {
        for v in vals {
            bin.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    for id in params.ids() {
        put(params.value(id))?;
    }
    if let Some(a) = adam {
        for m in &a.m {
            put(m)?;
        }
        for v in &a.v {
            put(v)?;
        }
    }
    bin.flush()?;
    let mut json = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut json, &manifest)?;
    json.flush()?;
    Ok(json_path)
}

pub fn load_checkpoint(stem: &Path) -> Result<Checkpoint> {
    let (json_path, _) = paths(stem);
    let manifest: CheckpointManifest = serde_json::from_reader(BufReader::new(File::open(&json_path)?))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    if manifest.dtype != "f64" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", manifest.dtype)));
    }
    let bin_path = json_path.with_file_name(&manifest.payload);
    let mut bytes = Vec::new();
    BufReader::new(File::open(&bin_path)?).read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("payload length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();

    let sizes: Vec<usize> = manifest.params.iter().map(|p| p.shape.iter().product()).collect();
    let n_params: usize = sizes.iter().sum();
    let expected = if manifest.optimizer.is_some() { 3 * n_params } else { n_params };
    if values.len() != expected {
        return Err(Error::Checkpoint(format!(
            "payload holds {} values, manifest implies {expected}",
            values.len()
        )));
    }
    let mut cursor = 0;
    let mut take = |n: usize| {
        let s = values[cursor..cursor + n].to_vec();
        cursor += n;
        s
    };
    let mut params = ParameterSet::new();
    for (entry, &n) in manifest.params.iter().zip(&sizes) {
        params.add(&entry.path, Tensor::new(entry.shape.clone(), take(n))?)?;
    }
    let adam = manifest.optimizer.as_ref().map(|opt| {
        let m = sizes.iter().map(|&n| take(n)).collect();
        let v = sizes.iter().map(|&n| take(n)).collect();
        AdamState { config: opt.config, step: opt.step, m, v }
    });
    Ok(Checkpoint { manifest, params, adam })
}
