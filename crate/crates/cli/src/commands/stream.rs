use std::cell::RefCell;
use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde_json::json;
use step_core::pruner::{stream_prune, DtPolicy, StreamEvent, StreamOptions, StreamSummary, Threshold};
use step_core::store::JsonEvent;

use super::prune::{load_pruner, ThresholdFile};
use crate::error::{CliError, CliResult};
use crate::io::write_json;
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Args)]
#[command(group(clap::ArgGroup::new("cut").required(true).args(["threshold", "calibration"])))]
pub struct StreamArgs {
    /// Checkpoint stem of a trained model.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Keep events scoring strictly above this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// `threshold.json` written by `prune`; reuses its threshold and policy.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Time gap fed to the pruner: zero or ref-time:<t>.
    #[arg(long)]
    pub dt_policy: Option<DtPolicy>,
    /// Scoring threads.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 4096)]
    pub chunk_size: usize,
    /// Side file receiving the ids of dropped events, one per line.
    #[arg(long)]
    pub dropped: Option<PathBuf>,
    /// Decision log (CSV) for every scored event.
    #[arg(long)]
    pub decisions: Option<PathBuf>,
    /// Writes the summary as JSON here as well as to stderr.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

impl StreamArgs {
    pub fn with_threshold(checkpoint: PathBuf, threshold: f64) -> Self {
        Self {
            checkpoint,
            threshold: Some(threshold),
            calibration: None,
            dt_policy: None,
            workers: 1,
            chunk_size: 4096,
            dropped: None,
            decisions: None,
            summary: None,
            manifest: None,
        }
    }

    fn resolve(&self) -> CliResult<(Threshold, DtPolicy)> {
        let (threshold, file_policy) = match (&self.threshold, &self.calibration) {
            (Some(t), None) => (Threshold::new(*t), None),
            (None, Some(path)) => {
                let tf = ThresholdFile::read(path)?;
                (tf.threshold, Some(tf.policy))
            }
            _ => return Err(CliError::usage("give exactly one of --threshold and --calibration")),
        };
        let policy = self.dt_policy.or(file_policy).unwrap_or_default();
        if policy == DtPolicy::RefMax {
            return Err(CliError::usage("a stream has no last timestamp; use --dt-policy ref-time:<t>"));
        }
        if self.workers == 0 {
            return Err(CliError::usage("--workers must be >= 1"));
        }
        Ok((threshold, policy))
    }
}

/// Filters JSON-lines events from `input`, copying kept lines verbatim to
/// `output`. Event ids are the ordinals of the non-blank lines, matching the
/// ids `prune` assigns when reading the same file.
pub fn cmd_stream<R: BufRead, W: Write>(args: &StreamArgs, input: R, output: W) -> CliResult<(StreamSummary, RunManifest)> {
    let started = Instant::now();
    let (threshold, policy) = args.resolve()?;
    let pruner = load_pruner(&args.checkpoint)?;
    let opts = StreamOptions { threshold, policy, workers: args.workers, chunk_size: args.chunk_size };

    let read_error: RefCell<Option<std::io::Error>> = RefCell::new(None);
    let mut ordinal = 0u64;
    let source = input
        .lines()
        .map_while(|line| match line {
            Ok(l) => Some(l),
            Err(e) => {
                *read_error.borrow_mut() = Some(e);
                None
            }
        })
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let id = ordinal;
            ordinal += 1;
            JsonEvent::parse(&line)
                .map(|ev| StreamEvent { id, timestamp: ev.ts, features: ev.feat, payload: line })
                .map_err(|e| format!("record {id}: {e}"))
        });

    let mut out = BufWriter::new(output);
    let mut dropped = args.dropped.as_ref().map(|p| File::create(p).map(BufWriter::new)).transpose()?;
    let mut log = args.decisions.as_ref().map(|p| File::create(p).map(|f| csv::Writer::from_writer(BufWriter::new(f)))).transpose()?;
    if let Some(w) = log.as_mut() {
        w.write_record(["event_id", "score", "keep", "threshold"])?;
    }
    let log = RefCell::new(log);
    let record = |d: &step_core::pruner::PruneDecision| -> step_core::Result<()> {
        if let Some(w) = log.borrow_mut().as_mut() {
            w.write_record([d.event_id.to_string(), d.score.to_string(), u8::from(d.keep).to_string(), d.threshold.to_string()])?;
        }
        Ok(())
    };
    let summary = stream_prune(
        source,
        &pruner,
        &opts,
        |ev, d| {
            out.write_all(ev.payload.as_bytes())?;
            out.write_all(b"\n")?;
            record(&d)
        },
        |ev, d| {
            if let Some(w) = dropped.as_mut() {
                writeln!(w, "{}", ev.id)?;
            }
            record(&d)
        },
    )?;
    if let Some(e) = read_error.into_inner() {
        return Err(CliError::data(format!("reading input: {e}")));
    }
    out.flush()?;
    if let Some(w) = dropped.as_mut() {
        w.flush()?;
    }
    if let Some(w) = log.into_inner().as_mut() {
        w.flush()?;
    }

    let mut m = RunManifest::new("stream").input("checkpoint", &args.checkpoint);
    if let Some(c) = &args.calibration {
        m.inputs.insert("calibration".into(), c.clone());
    }
    m.config = json!({
        "threshold": threshold,
        "dt_policy": policy.label(),
        "workers": args.workers,
        "chunk_size": args.chunk_size,
    });
    for (name, path) in [("dropped", &args.dropped), ("decisions", &args.decisions), ("summary", &args.summary)] {
        if let Some(p) = path {
            m.output(name, p);
        }
    }
    m.finish(started, serde_json::to_value(summary)?);
    if let Some(p) = &args.summary {
        write_json(p, &summary)?;
    }
    if let Some(p) = &args.manifest {
        m.write(p)?;
    }
    Ok((summary, m))
}
