use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::step::{batch_loss, Root};
use super::{Model, ModelMeta, TrainConfig};
use crate::numerics::{load_checkpoint, save_checkpoint, AdamState, Checkpoint};
use crate::rng::rng_for;
use crate::store::TemporalGraph;
use crate::{Error, Result};

const HOLDOUT_STREAM: u64 = 0x401d;
const EPOCH_STREAM: u64 = 0xe90c;
const STEP_STREAM: u64 = 0x57e9;
const EVAL_STREAM: u64 = 0xe7a1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: u64,
    pub contrastive: f64,
    pub distill: f64,
    pub regularizer: f64,
    pub total: f64,
    pub tau: f64,
    pub n_edges: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalLog {
    pub step: u64,
    pub holdout_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    pub evals: Vec<EvalLog>,
    pub stopped_early: bool,
    pub wall_time_secs: f64,
}

/// Progress persisted alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Optimiser steps taken so far.
    pub step: u64,
    pub best_holdout: Option<f64>,
    pub evals_without_improvement: usize,
    pub stopped: bool,
    pub model: ModelMeta,
}

/// One root per event endpoint, queried just after the event so that the
/// event itself is part of the root's history.
pub fn roots_for(g: &TemporalGraph) -> Vec<Root> {
    g.events()
        .iter()
        .flat_map(|e| {
            let t = e.timestamp.next_up();
            [Root { node: e.src, time: t }, Root { node: e.dst, time: t }]
        })
        .collect()
}

pub struct Trainer<'g> {
    graph: &'g TemporalGraph,
    config: TrainConfig,
    model: Model,
    adam: AdamState,
    state: TrainState,
    train_roots: Vec<Root>,
    holdout_roots: Vec<Root>,
    report: TrainReport,
}

impl<'g> Trainer<'g> {
    pub fn new(graph: &'g TemporalGraph, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let meta = ModelMeta {
            dims: config.dims(graph.feature_dim()),
            time_scale: config.time_scale(graph),
            tau: config.tau,
            q: config.q,
        };
        let model = Model::init(meta, config.seed)?;
        let adam = AdamState::new(&model.params, config.adam);
        let state = TrainState { step: 0, best_holdout: None, evals_without_improvement: 0, stopped: false, model: meta };
        Self::assemble(graph, config, model, adam, state)
    }

    /// Continues a run from a checkpoint written by [`Trainer::save`].
    pub fn resume(graph: &'g TemporalGraph, ck: Checkpoint) -> Result<Self> {
        let config: TrainConfig = serde_json::from_value(ck.manifest.config.clone())
            .map_err(|e| Error::Checkpoint(format!("bad training config: {e}")))?;
        config.validate()?;
        let state: TrainState = serde_json::from_value(ck.manifest.state.clone())
            .map_err(|e| Error::Checkpoint(format!("bad training state: {e}")))?;
        if state.model.dims.feature_dim != graph.feature_dim() {
            return Err(Error::shape(format!(
                "checkpoint expects {} edge features, graph has {}",
                state.model.dims.feature_dim,
                graph.feature_dim()
            )));
        }
        let model = Model::from_parts(ck.params, state.model)?;
        let adam = ck
            .adam
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimiser state".into()))?;
        Self::assemble(graph, config, model, adam, state)
    }

    pub fn resume_from(graph: &'g TemporalGraph, stem: &Path) -> Result<Self> {
        Self::resume(graph, load_checkpoint(stem)?)
    }

    fn assemble(graph: &'g TemporalGraph, config: TrainConfig, model: Model, adam: AdamState, state: TrainState) -> Result<Self> {
        let mut roots = roots_for(graph);
        let mut order: Vec<usize> = (0..roots.len()).collect();
        order.shuffle(&mut rng_for(config.seed, &[HOLDOUT_STREAM]));
        let n_hold = if roots.len() >= 4 { (config.holdout_fraction * roots.len() as f64).ceil() as usize } else { 0 };
        let mut is_hold = vec![false; roots.len()];
        for &i in &order[..n_hold] {
            is_hold[i] = true;
        }
        let holdout_roots: Vec<Root> = order[..n_hold].iter().map(|&i| roots[i]).collect();
        let mut k = 0;
        roots.retain(|_| {
            k += 1;
            !is_hold[k - 1]
        });
        Ok(Self { graph, config, model, adam, state, train_roots: roots, holdout_roots, report: TrainReport::default() })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn holdout_roots(&self) -> &[Root] {
        &self.holdout_roots
    }

    pub fn train_roots(&self) -> &[Root] {
        &self.train_roots
    }

    pub fn batches_per_epoch(&self) -> u64 {
        let n = self.train_roots.len();
        let b = self.config.batch_size;
        if n == 0 {
            return 0;
        }
        let full = n / b;
        let rest = n % b;
        // A trailing batch of one root has no in-batch negatives.
        (full + usize::from(rest >= 2 || (full == 0 && rest > 0))) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let planned = self.batches_per_epoch() * self.config.epochs as u64;
        self.config.max_steps.map_or(planned, |m| m.min(planned))
    }

    fn tau_at(&self, step: u64) -> f64 {
        if !self.config.tau_anneal {
            return self.config.tau;
        }
        let total = self.total_steps().max(2) - 1;
        let frac = (step as f64 / total as f64).min(1.0);
        1.0 + (0.1 - 1.0) * frac
    }

    fn batch_for(&self, step: u64) -> Vec<Root> {
        let bpe = self.batches_per_epoch();
        let (epoch, idx) = (step / bpe, (step % bpe) as usize);
        let mut order: Vec<usize> = (0..self.train_roots.len()).collect();
        order.shuffle(&mut rng_for(self.config.seed, &[EPOCH_STREAM, epoch]));
        let b = self.config.batch_size;
        let end = ((idx + 1) * b).min(order.len());
        order[idx * b..end].iter().map(|&i| self.train_roots[i]).collect()
    }

    pub fn is_finished(&self) -> bool {
        self.state.stopped || self.state.step >= self.total_steps()
    }

    /// Runs one optimiser step.
    pub fn step(&mut self) -> Result<StepLog> {
        let step = self.state.step;
        let batch = self.batch_for(step);
        let tau = self.tau_at(step);
        let out = batch_loss(
            &self.model.params,
            &self.model.handles,
            self.graph,
            &self.config,
            &batch,
            &[STEP_STREAM, step],
            tau,
            step,
            true,
        )?;
        let grads = out.grads.expect("gradients requested");
        self.model.params.zero_grads();
        self.model.params.accumulate(&grads);
        self.adam.step(&mut self.model.params)?;
        self.state.step += 1;
        let l = out.loss;
        let log = StepLog {
            step,
            epoch: step / self.batches_per_epoch().max(1),
            contrastive: l.contrastive,
            distill: l.distill,
            regularizer: l.regularizer,
            total: l.total,
            tau,
            n_edges: l.n_edges,
        };
        self.report.steps.push(log);
        Ok(log)
    }

    /// Mean self-supervised loss over (a prefix of) the held-out roots.
    pub fn holdout_loss(&self) -> Result<Option<f64>> {
        let n = self.holdout_roots.len().min(self.config.eval_roots);
        if n < 2 {
            return Ok(None);
        }
        let roots = &self.holdout_roots[..n];
        let b = self.config.batch_size.max(2);
        let tau = self.tau_at(self.state.step);
        let (mut sum, mut count) = (0.0, 0usize);
        for (c, chunk) in roots.chunks(b).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let out = batch_loss(
                &self.model.params,
                &self.model.handles,
                self.graph,
                &self.config,
                chunk,
                &[EVAL_STREAM, c as u64],
                tau,
                self.state.step,
                false,
            )?;
            sum += out.loss.total * chunk.len() as f64;
            count += chunk.len();
        }
        Ok((count > 0).then(|| sum / count as f64))
    }

    fn maybe_evaluate(&mut self) -> Result<()> {
        let every = self.config.eval_every;
        if !self.config.early_stopping || every == 0 || self.state.step % every != 0 {
            return Ok(());
        }
        let Some(loss) = self.holdout_loss()? else {
            return Ok(());
        };
        self.report.evals.push(EvalLog { step: self.state.step, holdout_loss: loss });
        match self.state.best_holdout {
            Some(best) if loss >= best => {
                self.state.evals_without_improvement += 1;
                if self.state.evals_without_improvement >= self.config.patience {
                    self.state.stopped = true;
                    self.report.stopped_early = true;
                }
            }
            _ => {
                self.state.best_holdout = Some(loss);
                self.state.evals_without_improvement = 0;
            }
        }
        Ok(())
    }

    /// Trains until the step budget is spent or early stopping triggers.
    /// With `checkpoint_dir`, writes `step-<n>` checkpoints every
    /// `checkpoint_every` steps and a `final` one at the end.
    pub fn run(&mut self, checkpoint_dir: Option<&Path>) -> Result<&TrainReport> {
        let start = Instant::now();
        while !self.is_finished() {
            self.step()?;
            self.maybe_evaluate()?;
            if let (Some(dir), Some(every)) = (checkpoint_dir, self.config.checkpoint_every) {
                if every > 0 && self.state.step % every == 0 {
                    self.save(&dir.join(format!("step-{}", self.state.step)))?;
                }
            }
        }
        if let Some(dir) = checkpoint_dir {
            self.save(&dir.join("final"))?;
        }
        self.report.wall_time_secs += start.elapsed().as_secs_f64();
        Ok(&self.report)
    }

    pub fn save(&self, stem: &Path) -> Result<PathBuf> {
        let config = serde_json::to_value(&self.config)?;
        let state = serde_json::to_value(&self.state)?;
        save_checkpoint(stem, &self.model.params, Some(&self.adam), self.config.seed, config, state)
    }
}

/// Trains a fresh model on `g` for the configured budget.
pub fn train(g: &TemporalGraph, config: TrainConfig) -> Result<(Model, TrainReport)> {
    let mut t = Trainer::new(g, config)?;
    t.run(None)?;
    let report = t.report.clone();
    Ok((t.into_model(), report))
}
