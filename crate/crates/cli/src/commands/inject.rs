use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde_json::json;
use step_core::rng::seeded;
use step_core::store::{inject_noise, write_events, NoiseMask};

use crate::error::CliResult;
use crate::io::{load_graph, write_json};
use crate::manifest::{manifest_path_for, RunManifest};

#[derive(Debug, Clone, Args)]
pub struct InjectArgs {
    #[arg(long)]
    pub events: PathBuf,
    /// Injected events per original event.
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noisy event file.
    #[arg(long)]
    pub out: PathBuf,
    /// Noise mask (JSON) listing the injected records of `out`.
    #[arg(long)]
    pub mask: PathBuf,
}

pub fn cmd_inject(args: &InjectArgs) -> CliResult<RunManifest> {
    let started = Instant::now();
    let (g, names) = load_graph(&args.events)?;
    let (noisy, mask) = inject_noise(&g, args.ratio, &mut seeded(args.seed))?;
    write_events(&args.out, &noisy, &names)?;
    // The file is written in graph order, so a record's ordinal there is its
    // position in the noisy graph.
    let positions: BTreeSet<u64> = mask
        .injected_event_ids
        .iter()
        .map(|id| noisy.position_of(*id).expect("injected event is in the graph") as u64)
        .collect();
    let file_mask = NoiseMask { ratio: mask.ratio, injected_event_ids: positions };
    write_json(&args.mask, &file_mask)?;

    let mut m = RunManifest::new("inject").input("events", &args.events);
    m.config = json!({ "ratio": args.ratio });
    m.seed = Some(args.seed);
    m.output("events", &args.out);
    m.output("mask", &args.mask);
    m.finish(started, json!({ "n_original": g.n_events(), "n_injected": file_mask.len(), "n_events": noisy.n_events() }));
    m.write(&manifest_path_for(&args.out))?;
    Ok(m)
}
