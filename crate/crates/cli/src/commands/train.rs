use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde_json::json;
use step_core::sampler::Ablation;
use step_core::trainer::{NegativePolicy, Regularizer, TrainConfig, TrainReport, Trainer};

use crate::error::{CliError, CliResult};
use crate::io::{load_config, load_graph, write_json};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub events: PathBuf,
    /// Training configuration (JSON or TOML); defaults apply to absent fields.
    #[arg(long, conflicts_with = "resume")]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoints, loss logs and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, conflicts_with = "resume")]
    pub seed: Option<u64>,
    /// Negative sampling policy: in-batch or random-drop.
    #[arg(long, conflicts_with = "resume")]
    pub neg_policy: Option<NegativePolicy>,
    /// Edge-distribution regulariser: bernoulli or l1.
    #[arg(long, conflicts_with = "resume")]
    pub regularizer: Option<Regularizer>,
    /// Remove score inputs from the importance logit: red, rel or red-rel.
    #[arg(long, conflicts_with = "resume")]
    pub ablate: Option<Ablation>,
    #[arg(long, conflicts_with = "resume")]
    pub max_steps: Option<u64>,
    #[arg(long, conflicts_with = "resume")]
    pub epochs: Option<usize>,
    /// Continue from a checkpoint stem written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

impl TrainArgs {
    pub fn resolve_config(&self) -> CliResult<TrainConfig> {
        let mut cfg: TrainConfig = match &self.config {
            Some(path) => load_config(path)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.neg_policy {
            cfg.negatives = n;
        }
        if let Some(r) = self.regularizer {
            cfg.regularizer = r;
        }
        if let Some(a) = self.ablate {
            cfg.ablation = a;
        }
        if let Some(m) = self.max_steps {
            cfg.max_steps = Some(m);
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn write_losses(path: &std::path::Path, report: &TrainReport) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["step", "epoch", "contrastive", "distill", "regularizer", "total", "tau", "n_edges"])?;
    for s in &report.steps {
        w.write_record([
            s.step.to_string(),
            s.epoch.to_string(),
            s.contrastive.to_string(),
            s.distill.to_string(),
            s.regularizer.to_string(),
            s.total.to_string(),
            s.tau.to_string(),
            s.n_edges.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_evals(path: &std::path::Path, report: &TrainReport) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["step", "holdout_loss"])?;
    for e in &report.evals {
        w.write_record([e.step.to_string(), e.holdout_loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<RunManifest> {
    let started = Instant::now();
    let (g, _) = load_graph(&args.events)?;
    let mut trainer = match &args.resume {
        Some(stem) => Trainer::resume_from(&g, stem)?,
        None => Trainer::new(&g, args.resolve_config()?)?,
    };
    std::fs::create_dir_all(&args.out)?;
    trainer.run(Some(&args.out))?;

    let report = trainer.report();
    let cfg = trainer.config().clone();
    let dir = &args.out;
    write_losses(&dir.join("losses.csv"), report)?;
    write_evals(&dir.join("evals.csv"), report)?;
    write_json(&dir.join("config.json"), &cfg)?;

    let mut m = RunManifest::new("train").input("events", &args.events);
    if let Some(c) = &args.config {
        m.inputs.insert("config".into(), c.clone());
    }
    if let Some(r) = &args.resume {
        m.inputs.insert("resume".into(), r.clone());
    }
    m.config = serde_json::to_value(&cfg)?;
    m.seed = Some(cfg.seed);
    m.output("checkpoint", &dir.join("final"));
    m.output("losses", &dir.join("losses.csv"));
    m.output("evals", &dir.join("evals.csv"));
    m.output("config", &dir.join("config.json"));
    let last = report.steps.last();
    m.finish(
        started,
        json!({
            "steps_run": report.steps.len(),
            "total_steps": trainer.state().step,
            "stopped_early": report.stopped_early,
            "final_total_loss": last.map(|s| s.total),
            "final_contrastive_loss": last.map(|s| s.contrastive),
            "final_distill_loss": last.map(|s| s.distill),
            "final_regularizer_loss": last.map(|s| s.regularizer),
            "last_holdout_loss": report.evals.last().map(|e| e.holdout_loss),
        }),
    );
    m.write(&dir.join("manifest.json"))?;
    Ok(m)
}
