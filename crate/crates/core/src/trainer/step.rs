//! Loss and gradient of one mini-batch of roots.
//!
//! Per root: sample the temporal subgraph, embed it, score its edges, draw
//! relaxed keep samples `y`, re-embed with `y` as edge weights, and score the
//! same edges with the graph-less pruner. The batch-level terms (contrastive
//! negatives, pooled distillation and moment matching) couple the roots, so
//! the work is split into a parallel forward, a sequential loss phase and a
//! parallel backward whose gradients are summed in root order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{loss_bernoulli, loss_contrastive, loss_distill, loss_l1};
use super::{ModelHandles, NegativePolicy, Regularizer, TrainConfig};
use crate::encoder::{EdgePass, Encoder, EncoderPass, PoolMode, TimeEncoding};
use crate::numerics::{Grads, ParameterSet};
use crate::pruner::{pruner_backward, pruner_forward, PrunerPass};
use crate::rng::rng_for;
use crate::sampler::{concrete_grad, Sampler, SamplerPass};
use crate::store::sampling::drop_selection;
use crate::store::{NodeId, TemporalGraph, TemporalSubgraph};
use crate::{Error, Result};

/// A subgraph root: a node queried at a time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub node: NodeId,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub distill: f64,
    pub regularizer: f64,
    pub total: f64,
    /// Sampled edges pooled over the batch.
    pub n_edges: usize,
}

pub struct BatchLoss {
    pub loss: LossBreakdown,
    /// Present when gradients were requested.
    pub grads: Option<Grads>,
}

pub(crate) struct RootForward {
    pub sub: TemporalSubgraph,
    te: TimeEncoding,
    plain: EncoderPass,
    edges: EdgePass,
    pub z_g: Vec<f64>,
    pub sampler: SamplerPass,
    masked: EncoderPass,
    z_tilde: Vec<f64>,
    pub pruner: PrunerPass,
    negatives: Vec<(EncoderPass, Vec<f64>)>,
    /// Distillation targets; the relaxed samples unless evaluated detached.
    target: Vec<f64>,
}

fn pool(z: &[f64], dim: usize, mode: PoolMode) -> Vec<f64> {
    let n = z.len() / dim;
    match mode {
        PoolMode::Central => z[..dim].to_vec(),
        PoolMode::Sum | PoolMode::Mean => {
            let mut out = vec![0.0; dim];
            for row in z.chunks(dim) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            if mode == PoolMode::Mean {
                out.iter_mut().for_each(|o| *o /= n as f64);
            }
            out
        }
    }
}

fn pool_backward(g: &[f64], n: usize, mode: PoolMode) -> Vec<f64> {
    let dim = g.len();
    let mut out = vec![0.0; n * dim];
    match mode {
        PoolMode::Central => out[..dim].copy_from_slice(g),
        PoolMode::Sum | PoolMode::Mean => {
            let s = if mode == PoolMode::Mean { 1.0 / n as f64 } else { 1.0 };
            for row in out.chunks_mut(dim) {
                for (o, v) in row.iter_mut().zip(g) {
                    *o = s * v;
                }
            }
        }
    }
    out
}

pub(crate) fn forward_root(
    ps: &ParameterSet,
    h: &ModelHandles,
    g: &TemporalGraph,
    cfg: &TrainConfig,
    root: Root,
    tau: f64,
    rng_key: &[u64],
    frozen: Option<&ParameterSet>,
) -> Result<RootForward> {
    let mut rng = rng_for(cfg.seed, rng_key);
    let sub = g.sample_subgraph(&cfg.subgraph_spec(), root.node, root.time, &mut rng)?;
    let enc = Encoder::new(ps, &h.encoder);
    let dim = h.dims.embed_dim;
    let te = enc.time_encode(&sub);
    let plain = enc.forward(&sub, &te.phi, None)?;
    let edges = enc.edge_embeddings(&sub, &plain.z, &te.phi);
    let z_g = pool(&plain.z, dim, cfg.pool);
    let sampler = Sampler::new(ps, &h.sampler).forward(&edges.m, &z_g, cfg.ablation, tau, &mut rng)?;
    let masked = enc.forward(&sub, &te.phi, Some(&sampler.scores.y))?;
    let z_tilde = pool(&masked.z, dim, cfg.pool);
    let (pruner, target) = match frozen {
        None => (pruner_forward(ps, &h.pruner, &h.dims, &sub.features, &te.phi), sampler.scores.y.clone()),
        Some(fp) => {
            // Replays the same random stream, so only parameter values differ.
            let mut rng = rng_for(cfg.seed, rng_key);
            let sub_f = g.sample_subgraph(&cfg.subgraph_spec(), root.node, root.time, &mut rng)?;
            let enc_f = Encoder::new(fp, &h.encoder);
            let te_f = enc_f.time_encode(&sub_f);
            let plain_f = enc_f.forward(&sub_f, &te_f.phi, None)?;
            let edges_f = enc_f.edge_embeddings(&sub_f, &plain_f.z, &te_f.phi);
            let z_g_f = pool(&plain_f.z, dim, cfg.pool);
            let s_f = Sampler::new(fp, &h.sampler).forward(&edges_f.m, &z_g_f, cfg.ablation, tau, &mut rng)?;
            (pruner_forward(ps, &h.pruner, &h.dims, &sub.features, &te_f.phi), s_f.scores.y)
        }
    };
    let mut negatives = Vec::new();
    if cfg.negatives == NegativePolicy::RandomDrop {
        for _ in 0..cfg.drop_views {
            let dropped = drop_selection(sub.n_edges(), cfg.drop_fraction, &mut rng)?;
            let mask: Vec<f64> = dropped.iter().map(|&d| if d { 0.0 } else { 1.0 }).collect();
            let pass = enc.forward(&sub, &te.phi, Some(&mask))?;
            let z = pool(&pass.z, dim, cfg.pool);
            negatives.push((pass, z));
        }
    }
    Ok(RootForward { sub, te, plain, edges, z_g, sampler, masked, z_tilde, pruner, negatives, target })
}

/// Upstream gradients for one root, produced by the loss phase.
struct RootUpstream {
    g_z_tilde: Vec<f64>,
    g_z_g: Vec<f64>,
    g_negatives: Vec<Vec<f64>>,
    /// Regulariser gradient w.r.t. `y` (per edge).
    g_y: Vec<f64>,
    /// Direct gradient w.r.t. `ρ` (per edge).
    g_rho: Vec<f64>,
    /// Gradient w.r.t. the pruner logits (per edge).
    g_logit: Vec<f64>,
}

fn backward_root(ps: &ParameterSet, h: &ModelHandles, cfg: &TrainConfig, tau: f64, f: &RootForward, up: &RootUpstream) -> Grads {
    let enc = Encoder::new(ps, &h.encoder);
    let (n, ne) = (f.sub.n_nodes(), f.sub.n_edges());
    let (dim, td) = (h.dims.embed_dim, h.dims.time_dim);
    let mut grads = Grads::zeros_like(ps);
    let mut g_phi = vec![0.0; ne * td];

    let mut g_w = vec![0.0; ne];
    let g_zm = pool_backward(&up.g_z_tilde, n, cfg.pool);
    enc.backward(&f.sub, &f.masked, &g_zm, &mut grads, &mut g_phi, Some(&mut g_w));
    for ((pass, _), g) in f.negatives.iter().zip(&up.g_negatives) {
        enc.backward(&f.sub, pass, &pool_backward(g, n, cfg.pool), &mut grads, &mut g_phi, None);
    }

    let y = &f.sampler.scores.y;
    let g_rho: Vec<f64> = (0..ne)
        .map(|e| (g_w[e] + up.g_y[e]) * concrete_grad(y[e], tau) + up.g_rho[e])
        .collect();
    let mut g_m = vec![0.0; ne * dim];
    let mut g_zg = up.g_z_g.clone();
    Sampler::new(ps, &h.sampler).backward(&f.sampler, &f.edges.m, &f.z_g, &g_rho, &mut grads, &mut g_m, &mut g_zg);

    let mut g_z = pool_backward(&g_zg, n, cfg.pool);
    enc.edge_backward(&f.sub, &f.edges, &g_m, &mut grads, &mut g_z, &mut g_phi);
    enc.backward(&f.sub, &f.plain, &g_z, &mut grads, &mut g_phi, None);
    enc.time_backward(&f.te, &g_phi, &mut grads);

    pruner_backward(ps, &h.pruner, &h.dims, &f.pruner, &up.g_logit, &mut grads);
    grads
}

fn check_finite(component: &'static str, step: u64, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { component, step, value })
    }
}

/// Roots handled per parallel wave; bounds the number of live gradient
/// buffers without affecting the (ordered) summation.
const WAVE: usize = 16;

/// Loss of a batch of roots, plus gradients when `with_grads` is set.
///
/// Root `i` draws its randomness from the stream keyed by `key ++ [i]`.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    ps: &ParameterSet,
    h: &ModelHandles,
    g: &TemporalGraph,
    cfg: &TrainConfig,
    roots: &[Root],
    key: &[u64],
    tau: f64,
    step: u64,
    with_grads: bool,
) -> Result<BatchLoss> {
    batch_loss_impl(ps, None, h, g, cfg, roots, key, tau, step, with_grads)
}

/// [`batch_loss`] with every stop-gradient input (distillation targets and
/// the time encoding fed to the pruner) computed from `frozen` instead of
/// `ps`. Identical to [`batch_loss`] when both sets hold the same values,
/// and its returned gradients are the exact derivative of its value, which
/// makes it the function to check by finite differences.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss_detached(
    ps: &ParameterSet,
    frozen: &ParameterSet,
    h: &ModelHandles,
    g: &TemporalGraph,
    cfg: &TrainConfig,
    roots: &[Root],
    key: &[u64],
    tau: f64,
    step: u64,
    with_grads: bool,
) -> Result<BatchLoss> {
    batch_loss_impl(ps, Some(frozen), h, g, cfg, roots, key, tau, step, with_grads)
}

#[allow(clippy::too_many_arguments)]
fn batch_loss_impl(
    ps: &ParameterSet,
    frozen: Option<&ParameterSet>,
    h: &ModelHandles,
    g: &TemporalGraph,
    cfg: &TrainConfig,
    roots: &[Root],
    key: &[u64],
    tau: f64,
    step: u64,
    with_grads: bool,
) -> Result<BatchLoss> {
    if roots.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if cfg.negatives == NegativePolicy::InBatch && roots.len() < 2 {
        return Err(Error::invalid("in-batch negatives need at least two roots"));
    }
    let keyed = |i: usize| {
        let mut k = key.to_vec();
        k.push(i as u64);
        k
    };
    let forwards: Vec<RootForward> = roots
        .par_iter()
        .enumerate()
        .map(|(i, &r)| forward_root(ps, h, g, cfg, r, tau, &keyed(i), frozen))
        .collect::<Result<_>>()?;

    let b = roots.len();
    let dim = h.dims.embed_dim;
    let inv_b = 1.0 / b as f64;
    let mut ups: Vec<RootUpstream> = forwards
        .iter()
        .map(|f| {
            let ne = f.sub.n_edges();
            RootUpstream {
                g_z_tilde: vec![0.0; dim],
                g_z_g: vec![0.0; dim],
                g_negatives: vec![vec![0.0; dim]; f.negatives.len()],
                g_y: vec![0.0; ne],
                g_rho: vec![0.0; ne],
                g_logit: vec![0.0; ne],
            }
        })
        .collect();

    // Contrastive term, averaged over roots.
    let mut l_c = 0.0;
    for i in 0..b {
        let f = &forwards[i];
        let negs: Vec<&[f64]> = match cfg.negatives {
            NegativePolicy::InBatch => (0..b).filter(|&j| j != i).map(|j| forwards[j].z_g.as_slice()).collect(),
            NegativePolicy::RandomDrop => f.negatives.iter().map(|(_, z)| z.as_slice()).collect(),
        };
        let c = loss_contrastive(&f.z_tilde, &f.z_g, &negs, !cfg.literal_infonce)?;
        l_c += c.loss * inv_b;
        for (a, g) in ups[i].g_z_tilde.iter_mut().zip(&c.g_anchor) {
            *a += g * inv_b;
        }
        for (a, g) in ups[i].g_z_g.iter_mut().zip(&c.g_positive) {
            *a += g * inv_b;
        }
        match cfg.negatives {
            NegativePolicy::InBatch => {
                let others = (0..b).filter(|&j| j != i);
                for (j, gn) in others.zip(&c.g_negatives) {
                    for (a, g) in ups[j].g_z_g.iter_mut().zip(gn) {
                        *a += g * inv_b;
                    }
                }
            }
            NegativePolicy::RandomDrop => {
                for (slot, gn) in ups[i].g_negatives.iter_mut().zip(&c.g_negatives) {
                    for (a, g) in slot.iter_mut().zip(gn) {
                        *a += g * inv_b;
                    }
                }
            }
        }
    }
    let l_c = check_finite("contrastive", step, l_c)?;

    // Pooled edge-level terms.
    let ys: Vec<f64> = forwards.iter().flat_map(|f| f.sampler.scores.y.iter().copied()).collect();
    let targets: Vec<f64> = forwards.iter().flat_map(|f| f.target.iter().copied()).collect();
    let rhos: Vec<f64> = forwards.iter().flat_map(|f| f.sampler.scores.rho.iter().copied()).collect();
    let ps_: Vec<f64> = forwards.iter().flat_map(|f| f.pruner.p.iter().copied()).collect();
    let n_edges = ys.len();
    let (l_s, g_p) = loss_distill(&ps_, &targets)?;
    let l_s = check_finite("distill", step, l_s)?;
    let (l_b, g_y, g_rho) = if n_edges == 0 {
        (0.0, Vec::new(), Vec::new())
    } else {
        match (cfg.regularizer, cfg.moments_on_logits) {
            (Regularizer::Bernoulli, false) => {
                let (l, g) = loss_bernoulli(&ys, cfg.q)?;
                (l, g, vec![0.0; n_edges])
            }
            (Regularizer::Bernoulli, true) => {
                let (l, g) = loss_bernoulli(&rhos, cfg.q)?;
                (l, vec![0.0; n_edges], g)
            }
            (Regularizer::L1, _) => {
                let (l, g) = loss_l1(&rhos);
                (l, vec![0.0; n_edges], g)
            }
        }
    };
    let l_b = check_finite("regularizer", step, l_b)?;
    let total = check_finite("total", step, l_c + cfg.lambda1 * l_s + cfg.lambda2 * l_b)?;
    let loss = LossBreakdown { contrastive: l_c, distill: l_s, regularizer: l_b, total, n_edges };
    if !with_grads {
        return Ok(BatchLoss { loss, grads: None });
    }

    let mut offset = 0;
    for (f, up) in forwards.iter().zip(ups.iter_mut()) {
        for e in 0..f.sub.n_edges() {
            let k = offset + e;
            let p = f.pruner.p[e];
            up.g_logit[e] = cfg.lambda1 * g_p[k] * p * (1.0 - p);
            up.g_y[e] = cfg.lambda2 * g_y[k];
            up.g_rho[e] = cfg.lambda2 * g_rho[k];
        }
        offset += f.sub.n_edges();
    }

    let mut total_grads = Grads::zeros_like(ps);
    for (fs, us) in forwards.chunks(WAVE).zip(ups.chunks(WAVE)) {
        let wave: Vec<Grads> = fs
            .par_iter()
            .zip(us.par_iter())
            .map(|(f, u)| backward_root(ps, h, cfg, tau, f, u))
            .collect();
        for gr in &wave {
            total_grads.add_assign(gr);
        }
    }
    Ok(BatchLoss { loss, grads: Some(total_grads) })
}
