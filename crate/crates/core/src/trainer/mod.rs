//! Self-supervised training of the encoder, sampler and pruner.

mod losses;
mod metrics;
mod step;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use losses::{loss_bernoulli, loss_contrastive, loss_distill, loss_l1, ContrastiveGrad, P_CLAMP};
pub use metrics::{edge_score_pairs, spearman, EdgeScores};
pub use step::{batch_loss, batch_loss_detached, BatchLoss, LossBreakdown, Root};
pub use train::{roots_for, train, EvalLog, StepLog, TrainReport, TrainState, Trainer};

use crate::encoder::{Encoder, EncoderParams, ModelDims, PoolMode};
use crate::numerics::{AdamConfig, Checkpoint, ParameterSet};
use crate::pruner::{Pruner, PrunerParams};
use crate::rng::rng_for;
use crate::sampler::{Ablation, SamplerParams};
use crate::store::{NodeId, SamplingStrategy, SubgraphSpec, TemporalGraph};
use crate::{Error, Result};

/// Source of negatives for the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativePolicy {
    /// The unmasked representations of the other roots in the batch.
    #[default]
    InBatch,
    /// Views of the root's own subgraph with a fraction of edges removed.
    RandomDrop,
}

impl std::str::FromStr for NegativePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-batch" | "in_batch" => Ok(Self::InBatch),
            "random-drop" | "random_drop" => Ok(Self::RandomDrop),
            other => Err(Error::invalid(format!("unknown negative policy `{other}`"))),
        }
    }
}

/// Regulariser applied to the edge-keep distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    /// Match mean and variance of the relaxed samples to Bernoulli(q).
    #[default]
    Bernoulli,
    /// Mean absolute importance logit.
    L1,
}

impl std::str::FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(Self::Bernoulli),
            "l1" => Ok(Self::L1),
            other => Err(Error::invalid(format!("unknown regularizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub time_dim: usize,
    pub hidden_dim: usize,
    /// Encoder depth, also the number of sampled hops.
    pub layers: usize,
    /// Neighbours sampled per node and hop.
    pub fanout: usize,
    pub sampling: SamplingStrategy,
    pub pool: PoolMode,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optional cap on the number of optimiser steps.
    pub max_steps: Option<u64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub q: f64,
    pub tau: f64,
    /// Anneal τ linearly from 1.0 to 0.1 over the planned steps.
    pub tau_anneal: bool,
    pub negatives: NegativePolicy,
    /// Fraction of edges removed per random-drop negative.
    pub drop_fraction: f64,
    /// Number of random-drop negatives per root.
    pub drop_views: usize,
    pub regularizer: Regularizer,
    /// Apply moment matching to the logits instead of the relaxed samples.
    pub moments_on_logits: bool,
    /// Leave the positive pair out of the contrastive denominator.
    pub literal_infonce: bool,
    pub ablation: Ablation,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Divide time gaps by the dataset's time span before encoding.
    pub rescale_time: bool,
    pub holdout_fraction: f64,
    pub early_stopping: bool,
    pub eval_every: u64,
    /// Held-out roots used per evaluation.
    pub eval_roots: usize,
    pub patience: usize,
    pub checkpoint_every: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            time_dim: 32,
            hidden_dim: 128,
            layers: 2,
            fanout: 20,
            sampling: SamplingStrategy::MostRecent,
            pool: PoolMode::Central,
            batch_size: 128,
            epochs: 1,
            max_steps: None,
            lambda1: 0.01,
            lambda2: 0.01,
            q: 0.5,
            tau: 0.5,
            tau_anneal: false,
            negatives: NegativePolicy::InBatch,
            drop_fraction: 0.5,
            drop_views: 1,
            regularizer: Regularizer::Bernoulli,
            moments_on_logits: false,
            literal_infonce: false,
            ablation: Ablation::None,
            adam: AdamConfig::default(),
            seed: 0,
            rescale_time: true,
            holdout_fraction: 0.1,
            early_stopping: true,
            eval_every: 50,
            eval_roots: 256,
            patience: 5,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.embed_dim == 0 || self.time_dim == 0 || self.hidden_dim == 0 {
            return bad("embed_dim, time_dim and hidden_dim must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.negatives == NegativePolicy::InBatch && self.batch_size < 2 {
            return bad("in-batch negatives need batch_size >= 2".into());
        }
        if self.negatives == NegativePolicy::RandomDrop && self.drop_views == 0 {
            return bad("random-drop negatives need drop_views >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.drop_fraction) {
            return bad(format!("drop_fraction {} outside [0, 1]", self.drop_fraction));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be >= 0".into());
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q = {} outside (0, 1)", self.q));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau = {} must be positive", self.tau));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!("holdout_fraction {} outside [0, 1)", self.holdout_fraction));
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive".into());
        }
        Ok(())
    }

    pub fn dims(&self, feature_dim: usize) -> ModelDims {
        ModelDims {
            feature_dim,
            embed_dim: self.embed_dim,
            time_dim: self.time_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
        }
    }

    pub fn subgraph_spec(&self) -> SubgraphSpec {
        SubgraphSpec { hops: self.layers, fanout: self.fanout, strategy: self.sampling }
    }

    pub fn time_scale(&self, g: &TemporalGraph) -> f64 {
        match g.time_range() {
            Some((lo, hi)) if self.rescale_time && hi > lo => 1.0 / (hi - lo),
            _ => 1.0,
        }
    }
}

/// Everything needed to rebuild parameter handles from a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub dims: ModelDims,
    pub time_scale: f64,
    pub tau: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelHandles {
    pub dims: ModelDims,
    pub encoder: EncoderParams,
    pub sampler: SamplerParams,
    pub pruner: PrunerParams,
}

/// Learnable parameters of encoder, sampler and pruner.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ParameterSet,
    pub handles: ModelHandles,
    pub meta: ModelMeta,
}

const INIT_STREAM: u64 = 0x1417;

impl Model {
    pub fn init(meta: ModelMeta, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, &[INIT_STREAM]);
        Self::init_with(meta, &mut rng)
    }

    pub fn init_with<R: Rng + ?Sized>(meta: ModelMeta, rng: &mut R) -> Result<Self> {
        let mut params = ParameterSet::new();
        let encoder = EncoderParams::init(&mut params, meta.dims, meta.time_scale, rng)?;
        let sampler = SamplerParams::init(&mut params, meta.dims, meta.tau, meta.q, rng)?;
        let pruner = PrunerParams::init(&mut params, meta.dims, rng)?;
        Ok(Self { params, handles: ModelHandles { dims: meta.dims, encoder, sampler, pruner }, meta })
    }

    /// Model and training configuration stored in a checkpoint written by
    /// [`Trainer::save`].
    pub fn from_checkpoint(ck: Checkpoint) -> Result<(Self, TrainConfig)> {
        let config: TrainConfig = serde_json::from_value(ck.manifest.config.clone())
            .map_err(|e| Error::Checkpoint(format!("bad training config: {e}")))?;
        let state: TrainState = serde_json::from_value(ck.manifest.state.clone())
            .map_err(|e| Error::Checkpoint(format!("bad training state: {e}")))?;
        Ok((Self::from_parts(ck.params, state.model)?, config))
    }

    pub fn load(stem: &std::path::Path) -> Result<(Self, TrainConfig)> {
        Self::from_checkpoint(crate::numerics::load_checkpoint(stem)?)
    }

    /// Rebinds a loaded parameter set.
    pub fn from_parts(params: ParameterSet, meta: ModelMeta) -> Result<Self> {
        let encoder = EncoderParams::bind(&params, meta.dims, meta.time_scale)?;
        let sampler = SamplerParams::bind(&params, meta.dims, meta.tau, meta.q)?;
        let pruner = PrunerParams::bind(&params, meta.dims)?;
        Ok(Self { params, handles: ModelHandles { dims: meta.dims, encoder, sampler, pruner }, meta })
    }

    pub fn encoder(&self) -> Encoder<'_> {
        Encoder::new(&self.params, &self.handles.encoder)
    }

    /// Inference copy of the graph-less pruner.
    pub fn pruner(&self) -> Pruner {
        Pruner::from_params(&self.params, &self.handles.encoder, &self.handles.pruner)
    }

    /// Pooled representation of the temporal subgraph rooted at `(node, t)`.
    pub fn embed_root(&self, g: &TemporalGraph, spec: &SubgraphSpec, pool: PoolMode, node: NodeId, t: f64, seed: u64) -> Result<Vec<f64>> {
        let mut rng = rng_for(seed, &[u64::from(node), t.to_bits()]);
        let sub = g.sample_subgraph(spec, node, t, &mut rng)?;
        Ok(self.encoder().node_embed(&sub, None)?.graph_repr(pool))
    }
}
