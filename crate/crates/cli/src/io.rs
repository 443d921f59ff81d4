//! File helpers shared by the commands.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::de::DeserializeOwned;
use step_core::pruner::PruneDecision;
use step_core::store::{ingest_events, read_events, NodeMap};
use step_core::{EventId, TemporalGraph};

use crate::error::{CliError, CliResult};

/// Reads a JSON or (by extension) TOML configuration file. Any problem with
/// it is a usage error.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    let is_toml = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let parsed = if is_toml {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
}

/// Loads an event file. Event ids are record ordinals in the file.
pub fn load_graph(path: &Path) -> CliResult<(TemporalGraph, NodeMap)> {
    let (records, d) = read_events(path).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(ingest_events(records, d).map_err(|e| CliError::from(e).context(path.display()))?)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let f = std::io::BufReader::new(File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?);
    serde_json::from_reader(f).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Writes a decision log: `event_id,score,keep,threshold`, one row per event.
pub fn write_decisions<'a, W: std::io::Write>(w: W, decisions: impl IntoIterator<Item = &'a PruneDecision>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["event_id", "score", "keep", "threshold"])?;
    for d in decisions {
        w.write_record([
            d.event_id.to_string(),
            d.score.to_string(),
            u8::from(d.keep).to_string(),
            d.threshold.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_decisions_file(path: &Path, decisions: &[PruneDecision]) -> CliResult<()> {
    let mut sorted: Vec<&PruneDecision> = decisions.iter().collect();
    sorted.sort_by_key(|d| d.event_id);
    write_decisions(BufWriter::new(File::create(path)?), sorted)
}

pub fn read_decisions(path: &Path) -> CliResult<Vec<PruneDecision>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != ["event_id", "score", "keep", "threshold"] {
        return Err(CliError::data(format!("{}: expected header event_id,score,keep,threshold", path.display())));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |what: &str| CliError::data(format!("{} row {}: bad {what}", path.display(), i + 1));
        let event_id: EventId = row[0].parse().map_err(|_| bad("event_id"))?;
        let score: f64 = row[1].parse().map_err(|_| bad("score"))?;
        let keep = match &row[2] {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(bad("keep")),
        };
        let threshold: f64 = row[3].parse().map_err(|_| bad("threshold"))?;
        out.push(PruneDecision { event_id, score, keep, threshold });
    }
    Ok(out)
}
