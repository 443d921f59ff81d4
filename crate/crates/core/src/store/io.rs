//! Event file formats.
//!
//! - CSV with header `src,dst,timestamp,f0,...,f{d-1}` and an optional
//!   trailing `label` column (`0`/`1`).
//! - JSON lines with fields `src`, `dst`, `ts`, `feat` and optional `label`.
//!
//! Node ids are arbitrary strings; [`NodeMap`] maps them to dense ids and is
//! persisted as JSON next to every output.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NodeId, RawEvent, TemporalGraph};
use crate::{Error, Result};

/// Bidirectional map between string node ids and dense ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeMap {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, NodeId>,
}

impl NodeMap {
    pub fn from_names(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as NodeId))
            .collect();
        Self { names, index }
    }

    /// Dense ids `0..n` named by their decimal form.
    pub fn numeric(n: usize) -> Self {
        Self::from_names((0..n).map(|i| i.to_string()).collect())
    }

    pub fn intern(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as NodeId;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<NodeId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: NodeId) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw: NodeMap = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Ok(Self::from_names(raw.names))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    JsonLines,
}

impl EventFormat {
    /// Picks the format from the file extension; anything but `.csv` is JSON lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::JsonLines,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum NodeName {
    Text(String),
    Int(i64),
}

impl NodeName {
    fn into_string(self) -> String {
        match self {
            NodeName::Text(s) => s,
            NodeName::Int(i) => i.to_string(),
        }
    }
}

/// One JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonEvent {
    src: NodeName,
    dst: NodeName,
    pub ts: f64,
    #[serde(default)]
    pub feat: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
}

impl JsonEvent {
    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(line).map_err(|e| e.to_string())
    }

    pub fn into_raw(self) -> RawEvent {
        RawEvent {
            src: self.src.into_string(),
            dst: self.dst.into_string(),
            timestamp: self.ts,
            features: self.feat,
            label: self.label,
        }
    }

    pub fn from_raw(ev: &RawEvent) -> Self {
        Self {
            src: NodeName::Text(ev.src.clone()),
            dst: NodeName::Text(ev.dst.clone()),
            ts: ev.timestamp,
            feat: ev.features.clone(),
            label: ev.label,
        }
    }
}

/// Reads every record of an event file. Returns the records in file order
/// and the feature dimension.
pub fn read_events(path: &Path) -> Result<(Vec<RawEvent>, usize)> {
    match EventFormat::from_path(path) {
        EventFormat::Csv => read_csv(path),
        EventFormat::JsonLines => read_jsonl(path),
    }
}

fn read_csv(path: &Path) -> Result<(Vec<RawEvent>, usize)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 3 || cols[0] != "src" || cols[1] != "dst" || cols[2] != "timestamp" {
        return Err(Error::invalid(format!(
            "{}: CSV header must start with src,dst,timestamp",
            path.display()
        )));
    }
    let has_label = cols.last() == Some(&"label");
    let d = cols.len() - 3 - usize::from(has_label);
    for (i, c) in cols[3..3 + d].iter().enumerate() {
        if *c != format!("f{i}") {
            return Err(Error::invalid(format!("unexpected CSV column `{c}`, wanted f{i}")));
        }
    }
    let mut out = Vec::new();
    for (index, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::MalformedRecord { index, reason: e.to_string() })?;
        let bad = |reason: String| Error::MalformedRecord { index, reason };
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .ok_or_else(|| bad(format!("missing column {i}")))?
                .parse::<f64>()
                .map_err(|e| bad(format!("column {i}: {e}")))
        };
        let timestamp = num(2)?;
        let features = (3..3 + d).map(num).collect::<Result<Vec<_>>>()?;
        let label = if has_label {
            match row.get(3 + d).unwrap_or("") {
                "" => None,
                "0" | "false" => Some(false),
                "1" | "true" => Some(true),
                other => return Err(bad(format!("label `{other}` is not 0/1"))),
            }
        } else {
            None
        };
        out.push(RawEvent {
            src: row[0].to_owned(),
            dst: row[1].to_owned(),
            timestamp,
            features,
            label,
        });
    }
    Ok((out, d))
}

fn read_jsonl(path: &Path) -> Result<(Vec<RawEvent>, usize)> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut d = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let index = out.len();
        let ev = JsonEvent::parse(&line)
            .map_err(|reason| Error::MalformedRecord { index, reason })?
            .into_raw();
        match d {
            None => d = Some(ev.features.len()),
            Some(d) if d != ev.features.len() => {
                return Err(Error::MalformedRecord {
                    index,
                    reason: format!("expected {d} feature values, found {}", ev.features.len()),
                })
            }
            _ => {}
        }
        out.push(ev);
    }
    Ok((out, d.unwrap_or(0)))
}

/// Writes the graph's events in `(timestamp, id)` order.
pub fn write_events(path: &Path, g: &TemporalGraph, names: &NodeMap) -> Result<()> {
    match EventFormat::from_path(path) {
        EventFormat::Csv => write_events_csv(path, g, names),
        EventFormat::JsonLines => write_events_jsonl(path, g, names),
    }
}

fn node_name(names: &NodeMap, id: NodeId) -> String {
    names.name(id).map(str::to_owned).unwrap_or_else(|| id.to_string())
}

pub fn write_events_csv(path: &Path, g: &TemporalGraph, names: &NodeMap) -> Result<()> {
    let has_label = g.events().iter().any(|e| e.label.is_some());
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["src".to_string(), "dst".into(), "timestamp".into()];
    header.extend((0..g.feature_dim()).map(|i| format!("f{i}")));
    if has_label {
        header.push("label".into());
    }
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for e in g.events() {
        row.clear();
        row.push(node_name(names, e.src));
        row.push(node_name(names, e.dst));
        row.push(e.timestamp.to_string());
        row.extend(e.features.iter().map(f64::to_string));
        if has_label {
            row.push(match e.label {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => String::new(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_jsonl(path: &Path, g: &TemporalGraph, names: &NodeMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in g.events() {
        let rec = JsonEvent {
            src: NodeName::Text(node_name(names, e.src)),
            dst: NodeName::Text(node_name(names, e.dst)),
            ts: e.timestamp,
            feat: e.features.clone(),
            label: e.label,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
