use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde_json::json;
use step_core::store::{generate_synthetic, write_events, NodeMap, SyntheticSpec};

use crate::error::CliResult;
use crate::io::load_config;
use crate::manifest::{manifest_path_for, RunManifest};

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Generator spec (JSON or TOML).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output event file; `.csv` or JSON lines.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn cmd_generate(args: &GenerateArgs) -> CliResult<RunManifest> {
    let started = Instant::now();
    let mut spec: SyntheticSpec = load_config(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let syn = generate_synthetic(&spec)?;
    write_events(&args.out, &syn.graph, &NodeMap::numeric(syn.graph.n_nodes()))?;

    let mut m = RunManifest::new("generate").input("spec", &args.spec);
    m.config = serde_json::to_value(&spec)?;
    m.seed = Some(spec.seed);
    m.output("events", &args.out);
    m.finish(
        started,
        json!({
            "n_events": syn.graph.n_events(),
            "n_nodes": syn.graph.n_nodes(),
            "intra_fraction": syn.intra_fraction(),
        }),
    );
    m.write(&manifest_path_for(&args.out))?;
    Ok(m)
}
