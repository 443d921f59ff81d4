use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;
use step_core::pruner::{prune_offline, DtPolicy, Pruner, PruneTarget, Threshold, ThresholdCalibration};
use step_core::store::{write_events, EventFormat};
use step_core::trainer::Model;

use crate::error::{CliError, CliResult};
use crate::io::{load_graph, read_json, write_decisions_file, write_json};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Args)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["ratio", "threshold"])))]
pub struct PruneArgs {
    #[arg(long)]
    pub events: PathBuf,
    /// Checkpoint stem of a trained model.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Fraction of events to drop.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Keep events scoring strictly above this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Time gap fed to the pruner: zero, ref-max or ref-time:<t>.
    #[arg(long, default_value = "ref-max")]
    pub dt_policy: DtPolicy,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Threshold, its provenance and the time-gap policy it was chosen under
/// (with `ref-max` resolved to a fixed reference time); `stream
/// --calibration` reads this back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFile {
    pub threshold: Threshold,
    pub policy: DtPolicy,
    pub calibration: Option<ThresholdCalibration>,
}

impl ThresholdFile {
    pub fn read(path: &Path) -> CliResult<Self> {
        read_json(path)
    }
}

pub fn load_pruner(checkpoint: &Path) -> CliResult<Pruner> {
    let (model, _) = Model::load(checkpoint).map_err(|e| CliError::from(e).context(checkpoint.display()))?;
    Ok(model.pruner())
}

pub fn cmd_prune(args: &PruneArgs) -> CliResult<RunManifest> {
    let started = Instant::now();
    let target = match (args.ratio, args.threshold) {
        (Some(p), None) => PruneTarget::Ratio(p),
        (None, Some(t)) => PruneTarget::Threshold(Threshold::new(t)),
        _ => return Err(CliError::usage("give exactly one of --ratio and --threshold")),
    };
    let (g, names) = load_graph(&args.events)?;
    let pruner = load_pruner(&args.checkpoint)?;
    if pruner.feature_dim != g.feature_dim() {
        return Err(CliError::data(format!(
            "model expects {} edge features, {} has {}",
            pruner.feature_dim,
            args.events.display(),
            g.feature_dim()
        )));
    }
    let out = prune_offline(&g, &pruner, target, args.dt_policy)?;

    std::fs::create_dir_all(&args.out)?;
    let ext = match EventFormat::from_path(&args.events) {
        EventFormat::Csv => "csv",
        EventFormat::JsonLines => "jsonl",
    };
    let pruned_path = args.out.join(format!("pruned.{ext}"));
    write_events(&pruned_path, &out.graph, &names)?;
    let decisions_path = args.out.join("decisions.csv");
    write_decisions_file(&decisions_path, &out.decisions)?;
    let threshold_path = args.out.join("threshold.json");
    // Pin ref-max to the dataset's last timestamp so a stream replaying
    // this threshold scores events identically.
    let policy = match out.policy {
        DtPolicy::RefMax => DtPolicy::RefTime(g.time_range().map_or(0.0, |r| r.1)),
        p => p,
    };
    let tf = ThresholdFile { threshold: out.threshold, policy, calibration: out.calibration };
    write_json(&threshold_path, &tf)?;

    let n_kept = out.graph.n_events();
    let n = g.n_events();
    let mut m = RunManifest::new("prune").input("events", &args.events).input("checkpoint", &args.checkpoint);
    m.config = json!({
        "ratio": args.ratio,
        "threshold": args.threshold,
        "dt_policy": args.dt_policy.label(),
    });
    m.output("pruned", &pruned_path);
    m.output("decisions", &decisions_path);
    m.output("threshold", &threshold_path);
    m.finish(
        started,
        json!({
            "n_events": n,
            "n_kept": n_kept,
            "n_dropped": n - n_kept,
            "achieved_ratio": if n > 0 { (n - n_kept) as f64 / n as f64 } else { 0.0 },
            "threshold": tf.threshold,
            "dt_policy": args.dt_policy.label(),
        }),
    );
    m.write(&args.out.join("manifest.json"))?;
    Ok(m)
}
