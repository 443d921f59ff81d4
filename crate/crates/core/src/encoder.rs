//! Temporal graph embedding network.
//!
//! - Relative time encoding `Φ(Δt) = cos(W_t Δt + b_t)`.
//! - `K` GraphSAGE-style layers over a sampled subgraph: every sampled edge
//!   sends the message `W_msg [h_nbr ‖ x ‖ Φ(Δt)] + b_msg` to its parent,
//!   messages are averaged (optionally weighted by an edge mask) and combined
//!   as `ReLU(W_c [h_self ‖ agg] + b_c)`; the last layer has no ReLU.
//! - Edge decoder `m = W_e [z_src ‖ z_dst ‖ x ‖ Φ(Δt)] + b_e`.
//!
//! Initial node states are zero; all signal enters through edge features and
//! time encodings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::ops::{affine_rows, affine_rows_backward, dot};
use crate::numerics::{Grads, ParamId, ParameterSet};
use crate::store::TemporalSubgraph;
use crate::{Error, Result};

/// Added to the weighted-mean denominator.
pub const AGG_EPS: f64 = 1e-8;

/// Widths shared by encoder, sampler and pruner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Raw edge feature dimension `d`.
    pub feature_dim: usize,
    /// Node and edge embedding width `D`.
    pub embed_dim: usize,
    /// Time encoding width `D_t`.
    pub time_dim: usize,
    /// Pruner hidden width `H`.
    pub hidden_dim: usize,
    /// Encoder depth `K`.
    pub layers: usize,
}

impl ModelDims {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            embed_dim: 128,
            time_dim: 32,
            hidden_dim: 128,
            layers: 2,
        }
    }

    fn msg_in(&self) -> usize {
        self.embed_dim + self.feature_dim + self.time_dim
    }

    fn edge_in(&self) -> usize {
        2 * self.embed_dim + self.feature_dim + self.time_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub msg_w: ParamId,
    pub msg_b: ParamId,
    pub comb_w: ParamId,
    pub comb_b: ParamId,
}

/// Handles to the encoder tensors inside a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dims: ModelDims,
    /// Multiplier applied to every Δt before encoding.
    pub time_scale: f64,
    pub time_w: ParamId,
    pub time_b: ParamId,
    pub layers: Vec<LayerParams>,
    pub edge_w: ParamId,
    pub edge_b: ParamId,
}

fn expect_shape(ps: &ParameterSet, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = ps
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
    if ps.tensor(id).shape() != shape {
        return Err(Error::shape(format!(
            "`{name}` has shape {:?}, expected {shape:?}",
            ps.tensor(id).shape()
        )));
    }
    Ok(id)
}

impl EncoderParams {
    /// Registers freshly initialised encoder tensors.
    pub fn init<R: Rng + ?Sized>(ps: &mut ParameterSet, dims: ModelDims, time_scale: f64, rng: &mut R) -> Result<Self> {
        let (d, dt) = (dims.embed_dim, dims.time_dim);
        let time_w = ps.add_glorot("encoder.time.weight", dt, 1, rng)?;
        let time_b = ps.add_zeros("encoder.time.bias", &[dt])?;
        let mut layers = Vec::with_capacity(dims.layers);
        for k in 0..dims.layers {
            layers.push(LayerParams {
                msg_w: ps.add_glorot(&format!("encoder.layer{k}.message.weight"), d, dims.msg_in(), rng)?,
                msg_b: ps.add_zeros(&format!("encoder.layer{k}.message.bias"), &[d])?,
                comb_w: ps.add_glorot(&format!("encoder.layer{k}.combine.weight"), d, 2 * d, rng)?,
                comb_b: ps.add_zeros(&format!("encoder.layer{k}.combine.bias"), &[d])?,
            });
        }
        let edge_w = ps.add_glorot("encoder.edge.weight", d, dims.edge_in(), rng)?;
        let edge_b = ps.add_zeros("encoder.edge.bias", &[d])?;
        Ok(Self { dims, time_scale, time_w, time_b, layers, edge_w, edge_b })
    }

    /// Looks the encoder tensors up by path, checking shapes.
    pub fn bind(ps: &ParameterSet, dims: ModelDims, time_scale: f64) -> Result<Self> {
        let (d, dt) = (dims.embed_dim, dims.time_dim);
        let layers = (0..dims.layers)
            .map(|k| {
                Ok(LayerParams {
                    msg_w: expect_shape(ps, &format!("encoder.layer{k}.message.weight"), &[d, dims.msg_in()])?,
                    msg_b: expect_shape(ps, &format!("encoder.layer{k}.message.bias"), &[d])?,
                    comb_w: expect_shape(ps, &format!("encoder.layer{k}.combine.weight"), &[d, 2 * d])?,
                    comb_b: expect_shape(ps, &format!("encoder.layer{k}.combine.bias"), &[d])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dims,
            time_scale,
            time_w: expect_shape(ps, "encoder.time.weight", &[dt, 1])?,
            time_b: expect_shape(ps, "encoder.time.bias", &[dt])?,
            layers,
            edge_w: expect_shape(ps, "encoder.edge.weight", &[d, dims.edge_in()])?,
            edge_b: expect_shape(ps, "encoder.edge.bias", &[d])?,
        })
    }
}

/// Graph-level pooling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// The root (central node) embedding.
    #[default]
    Central,
    Mean,
    Sum,
}

/// Node embeddings of one subgraph, row-major `n x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbedding {
    pub dim: usize,
    pub ref_time: f64,
    pub values: Vec<f64>,
}

impl NodeEmbedding {
    pub fn n_nodes(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Pooled graph representation; `Central` uses local node 0.
    pub fn graph_repr(&self, mode: PoolMode) -> Vec<f64> {
        match mode {
            PoolMode::Central => self.row(0).to_vec(),
            PoolMode::Sum | PoolMode::Mean => {
                let mut out = vec![0.0; self.dim];
                for i in 0..self.n_nodes() {
                    for (o, v) in out.iter_mut().zip(self.row(i)) {
                        *o += v;
                    }
                }
                if mode == PoolMode::Mean {
                    let n = self.n_nodes() as f64;
                    out.iter_mut().for_each(|o| *o /= n);
                }
                out
            }
        }
    }
}

/// Time encodings of every edge of a subgraph, with pre-activations.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEncoding {
    pub scaled_dt: Vec<f64>,
    pub pre: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Forward state of one message-passing run, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderPass {
    weights: Vec<f64>,
    weight_sums: Vec<f64>,
    layers: Vec<LayerCache>,
    /// Final node embeddings, `n_nodes x D`.
    pub z: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    msg_in: Vec<f64>,
    msg: Vec<f64>,
    comb_in: Vec<f64>,
    pre: Vec<f64>,
}

/// Edge decoder output for every edge of a subgraph.
#[derive(Debug, Clone)]
pub struct EdgePass {
    input: Vec<f64>,
    /// `n_edges x D`.
    pub m: Vec<f64>,
}

/// Read-only view used for forward and backward computations.
#[derive(Clone, Copy)]
pub struct Encoder<'a> {
    pub ps: &'a ParameterSet,
    pub p: &'a EncoderParams,
}

impl<'a> Encoder<'a> {
    pub fn new(ps: &'a ParameterSet, p: &'a EncoderParams) -> Self {
        Self { ps, p }
    }

    fn dims(&self) -> ModelDims {
        self.p.dims
    }

    /// `Φ(Δt) = cos(W_t Δt + b_t)`.
    pub fn rte(&self, dt: f64) -> Vec<f64> {
        let x = dt * self.p.time_scale;
        let w = self.ps.value(self.p.time_w);
        let b = self.ps.value(self.p.time_b);
        w.iter().zip(b).map(|(w, b)| (w * x + b).cos()).collect()
    }

    pub fn time_encode(&self, sub: &TemporalSubgraph) -> TimeEncoding {
        let dt_dim = self.dims().time_dim;
        let w = self.ps.value(self.p.time_w);
        let b = self.ps.value(self.p.time_b);
        let scaled_dt: Vec<f64> = sub.edges.iter().map(|e| e.delta_t * self.p.time_scale).collect();
        let mut pre = Vec::with_capacity(scaled_dt.len() * dt_dim);
        for &x in &scaled_dt {
            pre.extend(w.iter().zip(b).map(|(w, b)| w * x + b));
        }
        let phi = pre.iter().map(|v| v.cos()).collect();
        TimeEncoding { scaled_dt, pre, phi }
    }

    /// Node embeddings of `sub`, optionally with per-edge weights in `[0, 1]`.
    pub fn node_embed(&self, sub: &TemporalSubgraph, edge_mask: Option<&[f64]>) -> Result<NodeEmbedding> {
        self.check_sub(sub)?;
        let te = self.time_encode(sub);
        let pass = self.forward(sub, &te.phi, edge_mask)?;
        Ok(NodeEmbedding { dim: self.dims().embed_dim, ref_time: sub.ref_time, values: pass.z })
    }

    fn check_sub(&self, sub: &TemporalSubgraph) -> Result<()> {
        if sub.feature_dim != self.dims().feature_dim {
            return Err(Error::shape(format!(
                "subgraph has {} edge features, encoder expects {}",
                sub.feature_dim,
                self.dims().feature_dim
            )));
        }
        Ok(())
    }

    /// Runs the `K` message-passing layers.
    pub fn forward(&self, sub: &TemporalSubgraph, phi: &[f64], edge_mask: Option<&[f64]>) -> Result<EncoderPass> {
        let dims = self.dims();
        let (dm, fd, td) = (dims.embed_dim, dims.feature_dim, dims.time_dim);
        let (n, ne) = (sub.n_nodes(), sub.n_edges());
        let weights = match edge_mask {
            Some(m) if m.len() != ne => {
                return Err(Error::shape(format!("edge mask has {} entries for {ne} edges", m.len())))
            }
            Some(m) => m.to_vec(),
            None => vec![1.0; ne],
        };
        let mut weight_sums = vec![0.0; n];
        for (e, edge) in sub.edges.iter().enumerate() {
            weight_sums[edge.parent] += weights[e];
        }
        let msg_in_dim = dims.msg_in();
        let mut h = vec![0.0; n * dm];
        let mut layers = Vec::with_capacity(dims.layers);
        for (k, lp) in self.p.layers.iter().enumerate() {
            let mut msg_in = vec![0.0; ne * msg_in_dim];
            for (e, edge) in sub.edges.iter().enumerate() {
                let row = &mut msg_in[e * msg_in_dim..(e + 1) * msg_in_dim];
                row[..dm].copy_from_slice(&h[edge.neighbor * dm..(edge.neighbor + 1) * dm]);
                row[dm..dm + fd].copy_from_slice(sub.edge_features(e));
                row[dm + fd..].copy_from_slice(&phi[e * td..(e + 1) * td]);
            }
            let mut msg = vec![0.0; ne * dm];
            affine_rows(&msg_in, msg_in_dim, self.ps.value(lp.msg_w), dm, Some(self.ps.value(lp.msg_b)), &mut msg);

            let mut comb_in = vec![0.0; n * 2 * dm];
            for i in 0..n {
                comb_in[i * 2 * dm..i * 2 * dm + dm].copy_from_slice(&h[i * dm..(i + 1) * dm]);
            }
            for (e, edge) in sub.edges.iter().enumerate() {
                let w = weights[e];
                if w == 0.0 {
                    continue;
                }
                let agg = &mut comb_in[edge.parent * 2 * dm + dm..(edge.parent + 1) * 2 * dm];
                for (a, m) in agg.iter_mut().zip(&msg[e * dm..(e + 1) * dm]) {
                    *a += w * m;
                }
            }
            for i in 0..n {
                let denom = weight_sums[i] + AGG_EPS;
                comb_in[i * 2 * dm + dm..(i + 1) * 2 * dm].iter_mut().for_each(|a| *a /= denom);
            }
            let mut pre = vec![0.0; n * dm];
            affine_rows(&comb_in, 2 * dm, self.ps.value(lp.comb_w), dm, Some(self.ps.value(lp.comb_b)), &mut pre);
            let last = k + 1 == dims.layers;
            h = if last { pre.clone() } else { pre.iter().map(|v| v.max(0.0)).collect() };
            layers.push(LayerCache { msg_in, msg, comb_in, pre });
        }
        Ok(EncoderPass { weights, weight_sums, layers, z: h })
    }

    /// Backpropagates `g_z` (`n_nodes x D`) through a forward pass.
    ///
    /// Parameter gradients go to `grads`, time-encoding gradients are added to
    /// `g_phi`, and mask-weight gradients to `g_weights` when given.
    pub fn backward(
        &self,
        sub: &TemporalSubgraph,
        pass: &EncoderPass,
        g_z: &[f64],
        grads: &mut Grads,
        g_phi: &mut [f64],
        mut g_weights: Option<&mut [f64]>,
    ) {
        let dims = self.dims();
        let (dm, fd, td) = (dims.embed_dim, dims.feature_dim, dims.time_dim);
        let (n, ne) = (sub.n_nodes(), sub.n_edges());
        let msg_in_dim = dims.msg_in();
        let mut g_h = g_z.to_vec();
        for (k, (lp, cache)) in self.p.layers.iter().zip(&pass.layers).enumerate().rev() {
            let last = k + 1 == dims.layers;
            let g_pre: Vec<f64> = if last {
                g_h
            } else {
                g_h.iter().zip(&cache.pre).map(|(g, p)| if *p > 0.0 { *g } else { 0.0 }).collect()
            };
            let mut g_comb_in = vec![0.0; n * 2 * dm];
            let (gw, gb) = grads.pair_mut(lp.comb_w, lp.comb_b);
            affine_rows_backward(
                &cache.comb_in,
                2 * dm,
                self.ps.value(lp.comb_w),
                dm,
                &g_pre,
                Some(&mut g_comb_in),
                gw,
                Some(gb),
            );
            let mut g_h_prev = vec![0.0; n * dm];
            for i in 0..n {
                g_h_prev[i * dm..(i + 1) * dm].copy_from_slice(&g_comb_in[i * 2 * dm..i * 2 * dm + dm]);
            }
            let mut g_msg = vec![0.0; ne * dm];
            for (e, edge) in sub.edges.iter().enumerate() {
                let i = edge.parent;
                let denom = pass.weight_sums[i] + AGG_EPS;
                let g_agg = &g_comb_in[i * 2 * dm + dm..(i + 1) * 2 * dm];
                let w = pass.weights[e];
                for (gm, ga) in g_msg[e * dm..(e + 1) * dm].iter_mut().zip(g_agg) {
                    *gm = ga * w / denom;
                }
                if let Some(gw) = g_weights.as_deref_mut() {
                    // d agg / d w_e = (msg_e - agg) / denom
                    let agg = &cache.comb_in[i * 2 * dm + dm..(i + 1) * 2 * dm];
                    let msg = &cache.msg[e * dm..(e + 1) * dm];
                    let mut s = 0.0;
                    for j in 0..dm {
                        s += g_agg[j] * (msg[j] - agg[j]);
                    }
                    gw[e] += s / denom;
                }
            }
            let mut g_msg_in = vec![0.0; ne * msg_in_dim];
            let (gw, gb) = grads.pair_mut(lp.msg_w, lp.msg_b);
            affine_rows_backward(
                &cache.msg_in,
                msg_in_dim,
                self.ps.value(lp.msg_w),
                dm,
                &g_msg,
                Some(&mut g_msg_in),
                gw,
                Some(gb),
            );
            for (e, edge) in sub.edges.iter().enumerate() {
                let row = &g_msg_in[e * msg_in_dim..(e + 1) * msg_in_dim];
                for (g, r) in g_h_prev[edge.neighbor * dm..(edge.neighbor + 1) * dm].iter_mut().zip(&row[..dm]) {
                    *g += r;
                }
                for (g, r) in g_phi[e * td..(e + 1) * td].iter_mut().zip(&row[dm + fd..]) {
                    *g += r;
                }
            }
            g_h = g_h_prev;
        }
    }

    /// `m = W_e [z_i ‖ z_j ‖ x ‖ Φ(Δt)] + b_e` for a single edge.
    pub fn edge_embed(&self, z_i: &[f64], z_j: &[f64], x: &[f64], dt: f64) -> Result<Vec<f64>> {
        let dims = self.dims();
        if z_i.len() != dims.embed_dim || z_j.len() != dims.embed_dim || x.len() != dims.feature_dim {
            return Err(Error::shape(format!(
                "edge_embed inputs ({}, {}, {}) vs dims ({}, {}, {})",
                z_i.len(),
                z_j.len(),
                x.len(),
                dims.embed_dim,
                dims.embed_dim,
                dims.feature_dim
            )));
        }
        let mut input = Vec::with_capacity(dims.edge_in());
        input.extend_from_slice(z_i);
        input.extend_from_slice(z_j);
        input.extend_from_slice(x);
        input.extend(self.rte(dt));
        let mut m = vec![0.0; dims.embed_dim];
        affine_rows(&input, dims.edge_in(), self.ps.value(self.p.edge_w), dims.embed_dim, Some(self.ps.value(self.p.edge_b)), &mut m);
        Ok(m)
    }

    /// Edge embeddings of every edge in `sub` from node embeddings `z`.
    pub fn edge_embeddings(&self, sub: &TemporalSubgraph, z: &[f64], phi: &[f64]) -> EdgePass {
        let dims = self.dims();
        let (dm, fd, td) = (dims.embed_dim, dims.feature_dim, dims.time_dim);
        let in_dim = dims.edge_in();
        let ne = sub.n_edges();
        let mut input = vec![0.0; ne * in_dim];
        for (e, edge) in sub.edges.iter().enumerate() {
            let row = &mut input[e * in_dim..(e + 1) * in_dim];
            row[..dm].copy_from_slice(&z[edge.src * dm..(edge.src + 1) * dm]);
            row[dm..2 * dm].copy_from_slice(&z[edge.dst * dm..(edge.dst + 1) * dm]);
            row[2 * dm..2 * dm + fd].copy_from_slice(sub.edge_features(e));
            row[2 * dm + fd..].copy_from_slice(&phi[e * td..(e + 1) * td]);
        }
        let mut m = vec![0.0; ne * dm];
        affine_rows(&input, in_dim, self.ps.value(self.p.edge_w), dm, Some(self.ps.value(self.p.edge_b)), &mut m);
        EdgePass { input, m }
    }

    pub fn edge_backward(
        &self,
        sub: &TemporalSubgraph,
        pass: &EdgePass,
        g_m: &[f64],
        grads: &mut Grads,
        g_z: &mut [f64],
        g_phi: &mut [f64],
    ) {
        let dims = self.dims();
        let (dm, fd, td) = (dims.embed_dim, dims.feature_dim, dims.time_dim);
        let in_dim = dims.edge_in();
        let mut g_in = vec![0.0; sub.n_edges() * in_dim];
        let (gw, gb) = grads.pair_mut(self.p.edge_w, self.p.edge_b);
        affine_rows_backward(
            &pass.input,
            in_dim,
            self.ps.value(self.p.edge_w),
            dm,
            g_m,
            Some(&mut g_in),
            gw,
            Some(gb),
        );
        for (e, edge) in sub.edges.iter().enumerate() {
            let row = &g_in[e * in_dim..(e + 1) * in_dim];
            for j in 0..dm {
                g_z[edge.src * dm + j] += row[j];
                g_z[edge.dst * dm + j] += row[dm + j];
            }
            for (g, r) in g_phi[e * td..(e + 1) * td].iter_mut().zip(&row[2 * dm + fd..]) {
                *g += r;
            }
        }
    }

    /// Backpropagates time-encoding gradients into `W_t`, `b_t`.
    pub fn time_backward(&self, te: &TimeEncoding, g_phi: &[f64], grads: &mut Grads) {
        let td = self.dims().time_dim;
        let mut gw = vec![0.0; td];
        let mut gb = vec![0.0; td];
        for (e, &x) in te.scaled_dt.iter().enumerate() {
            for j in 0..td {
                let g = -te.pre[e * td + j].sin() * g_phi[e * td + j];
                gw[j] += g * x;
                gb[j] += g;
            }
        }
        for (a, b) in grads.get_mut(self.p.time_w).iter_mut().zip(&gw) {
            *a += b;
        }
        for (a, b) in grads.get_mut(self.p.time_b).iter_mut().zip(&gb) {
            *a += b;
        }
    }
}

/// Cosine similarity, defined as 0 when either vector is (numerically) zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, GradCheckOptions};
    use crate::rng::seeded;
    use crate::store::{Event, SubgraphSpec, TemporalGraph};
    use std::f64::consts::PI;

    fn dims(feature_dim: usize, embed: usize, time: usize, layers: usize) -> ModelDims {
        ModelDims { feature_dim, embed_dim: embed, time_dim: time, hidden_dim: 4, layers }
    }

    fn setup(d: ModelDims, seed: u64) -> (ParameterSet, EncoderParams) {
        let mut ps = ParameterSet::new();
        let p = EncoderParams::init(&mut ps, d, 1.0, &mut seeded(seed)).unwrap();
        (ps, p)
    }

    fn random_graph(n: u32, m: usize, fd: usize, seed: u64) -> TemporalGraph {
        let mut rng = seeded(seed);
        let events = (0..m)
            .map(|i| {
                let s = rng.random_range(0..n);
                let mut t = rng.random_range(0..n - 1);
                if t >= s {
                    t += 1;
                }
                Event {
                    id: i as u64,
                    src: s,
                    dst: t,
                    timestamp: rng.random_range(0.0..10.0),
                    features: (0..fd).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    label: None,
                }
            })
            .collect();
        TemporalGraph::from_events(n as usize, fd, events).unwrap()
    }

    fn set(ps: &mut ParameterSet, id: ParamId, v: &[f64]) {
        ps.value_mut(id).copy_from_slice(v);
    }

    #[test]
    fn rte_closed_forms() {
        let (mut ps, p) = setup(dims(0, 2, 1, 1), 0);
        set(&mut ps, p.time_w, &[0.0]);
        assert_eq!(Encoder::new(&ps, &p).rte(123.0), vec![1.0]);
        set(&mut ps, p.time_b, &[0.3]);
        assert_eq!(Encoder::new(&ps, &p).rte(0.0), vec![0.3f64.cos()]);
        set(&mut ps, p.time_w, &[PI]);
        set(&mut ps, p.time_b, &[0.0]);
        assert!((Encoder::new(&ps, &p).rte(1.0)[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn rte_is_periodic() {
        let (mut ps, p) = setup(dims(0, 2, 1, 1), 0);
        set(&mut ps, p.time_w, &[0.7]);
        set(&mut ps, p.time_b, &[0.1]);
        let enc = Encoder::new(&ps, &p);
        let period = 2.0 * PI / 0.7;
        for dt in [0.0, 0.4, 3.3] {
            assert!((enc.rte(dt)[0] - enc.rte(dt + period)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_depth_embeds_to_zero() {
        let (ps, p) = setup(dims(2, 3, 2, 0), 0);
        let g = random_graph(6, 20, 2, 1);
        let sub = g.sample_subgraph(&SubgraphSpec { hops: 1, fanout: 5, ..Default::default() }, 0, 11.0, &mut seeded(0)).unwrap();
        let z = Encoder::new(&ps, &p).node_embed(&sub, None).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        assert_eq!(z.n_nodes(), sub.n_nodes());
    }

    #[test]
    fn all_ones_mask_equals_unmasked() {
        let (ps, p) = setup(dims(3, 4, 2, 2), 3);
        let g = random_graph(10, 60, 3, 2);
        let sub = g.sample_subgraph(&SubgraphSpec { hops: 2, fanout: 4, ..Default::default() }, 0, 11.0, &mut seeded(0)).unwrap();
        let enc = Encoder::new(&ps, &p);
        let a = enc.node_embed(&sub, None).unwrap();
        let b = enc.node_embed(&sub, Some(&vec![1.0; sub.n_edges()])).unwrap();
        assert_eq!(a, b);
        assert!(enc.node_embed(&sub, Some(&[1.0])).is_err());
    }

    #[test]
    fn path_matches_hand_computation() {
        // root 0 -- 1 at t=2, 1 -- 2 at t=1; queried at t=3.
        let events = vec![
            Event { id: 0, src: 0, dst: 1, timestamp: 2.0, features: vec![], label: None },
            Event { id: 1, src: 1, dst: 2, timestamp: 1.0, features: vec![], label: None },
        ];
        let g = TemporalGraph::from_events(3, 0, events).unwrap();
        let sub = g.sample_subgraph(&SubgraphSpec::default(), 0, 3.0, &mut seeded(0)).unwrap();
        assert_eq!(sub.n_edges(), 2);

        let (mut ps, p) = setup(dims(0, 1, 1, 2), 0);
        // Φ ≡ 1.
        set(&mut ps, p.time_w, &[0.0]);
        set(&mut ps, p.time_b, &[0.0]);
        let (a1h, a1t, b1, g1h, g1a, c1) = (0.7, 0.5, -0.2, 0.3, 1.5, 0.1);
        let (a2h, a2t, b2, g2h, g2a, c2) = (-1.2, 0.4, 0.05, 0.8, -0.6, 0.25);
        set(&mut ps, p.layers[0].msg_w, &[a1h, a1t]);
        set(&mut ps, p.layers[0].msg_b, &[b1]);
        set(&mut ps, p.layers[0].comb_w, &[g1h, g1a]);
        set(&mut ps, p.layers[0].comb_b, &[c1]);
        set(&mut ps, p.layers[1].msg_w, &[a2h, a2t]);
        set(&mut ps, p.layers[1].msg_b, &[b2]);
        set(&mut ps, p.layers[1].comb_w, &[g2h, g2a]);
        set(&mut ps, p.layers[1].comb_b, &[c2]);

        let z = Encoder::new(&ps, &p).node_embed(&sub, None).unwrap();
        let den = 1.0 + AGG_EPS;
        let relu = |x: f64| x.max(0.0);
        // Layer 1 from zero states: each edge carries a1t + b1.
        let m1 = a1t + b1;
        let h1_root = relu(g1a * m1 / den + c1);
        let h1_mid = relu(g1a * m1 / den + c1);
        // Layer 2: the root hears from the middle node.
        let m2 = a2h * h1_mid + a2t + b2;
        let z_root = g2h * h1_root + g2a * m2 / den + c2;
        assert!((z.row(0)[0] - z_root).abs() < 1e-14, "{} vs {z_root}", z.row(0)[0]);
        // The leaf has no sampled children.
        let leaf = sub.node_index[&2];
        let h1_leaf = relu(c1);
        assert!((z.row(leaf)[0] - (g2h * h1_leaf + c2)).abs() < 1e-14);
    }

    #[test]
    fn edge_embed_closed_forms_and_oracle() {
        let (mut ps, p) = setup(dims(0, 3, 2, 1), 4);
        let zero_w = vec![0.0; ps.value(p.edge_w).len()];
        set(&mut ps, p.edge_w, &zero_w);
        set(&mut ps, p.edge_b, &[1.0, 2.0, 3.0]);
        let m = Encoder::new(&ps, &p).edge_embed(&[1.0; 3], &[2.0; 3], &[], 0.5).unwrap();
        assert_eq!(m, vec![1.0, 2.0, 3.0]);
        assert!(Encoder::new(&ps, &p).edge_embed(&[1.0; 2], &[2.0; 3], &[], 0.5).is_err());

        // Independent matrix-product oracle with features present.
        let (ps, p) = setup(dims(2, 3, 2, 1), 5);
        let enc = Encoder::new(&ps, &p);
        let (zi, zj, x, dt) = ([0.1, -0.4, 0.9], [1.0, 0.2, -0.3], [0.5, -2.0], 0.75);
        let m = enc.edge_embed(&zi, &zj, &x, dt).unwrap();
        let phi: Vec<f64> = ps.value(p.time_w).iter().zip(ps.value(p.time_b)).map(|(w, b)| (w * dt + b).cos()).collect();
        let input: Vec<f64> = zi.iter().chain(&zj).chain(&x).chain(&phi).copied().collect();
        let w = ps.value(p.edge_w);
        for o in 0..3 {
            let mut s = ps.value(p.edge_b)[o];
            for (i, v) in input.iter().enumerate() {
                s += w[o * input.len() + i] * v;
            }
            assert!((m[o] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_repr_modes() {
        let one = NodeEmbedding { dim: 2, ref_time: 0.0, values: vec![0.3, -0.7] };
        for mode in [PoolMode::Central, PoolMode::Mean, PoolMode::Sum] {
            assert_eq!(one.graph_repr(mode), vec![0.3, -0.7]);
        }
        let two = NodeEmbedding { dim: 2, ref_time: 0.0, values: vec![1.0, 0.0, 0.0, 1.0] };
        assert_eq!(two.graph_repr(PoolMode::Mean), vec![0.5, 0.5]);
        assert_eq!(two.graph_repr(PoolMode::Sum), vec![1.0, 1.0]);
        assert_eq!(two.graph_repr(PoolMode::Central), vec![1.0, 0.0]);

        let mut rng = seeded(9);
        let ten = NodeEmbedding { dim: 3, ref_time: 0.0, values: (0..30).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let mean = ten.graph_repr(PoolMode::Mean);
        let sum = ten.graph_repr(PoolMode::Sum);
        for (m, s) in mean.iter().zip(&sum) {
            assert!((m * 10.0 - s).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]

        #[test]
        fn embeddings_are_invariant_to_edge_order(seed in 0u64..1000, root in 0u32..12) {
            let (ps, p) = setup(dims(3, 5, 3, 2), seed);
            let g = random_graph(12, 80, 3, seed + 1);
            let sub = g.sample_subgraph(&SubgraphSpec { hops: 2, fanout: 5, ..Default::default() }, root, 11.0, &mut seeded(seed)).unwrap();
            let enc = Encoder::new(&ps, &p);
            let base = enc.node_embed(&sub, None).unwrap();
            let mut order: Vec<usize> = (0..sub.n_edges()).collect();
            use rand::seq::SliceRandom;
            order.shuffle(&mut seeded(seed + 2));
            let shuffled = enc.node_embed(&sub.with_edges(&order), None).unwrap();
            for (a, b) in base.values.iter().zip(&shuffled.values) {
                proptest::prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn zero_mask_equals_edge_deletion(seed in 0u64..1000, root in 0u32..10, pick in 0.0f64..1.0) {
            let (ps, p) = setup(dims(2, 4, 2, 2), seed);
            let g = random_graph(10, 70, 2, seed + 1);
            let sub = g.sample_subgraph(&SubgraphSpec { hops: 2, fanout: 4, ..Default::default() }, root, 11.0, &mut seeded(seed)).unwrap();
            proptest::prop_assume!(sub.n_edges() > 0);
            let enc = Encoder::new(&ps, &p);
            let drop = ((pick * sub.n_edges() as f64) as usize).min(sub.n_edges() - 1);
            let mut mask = vec![1.0; sub.n_edges()];
            mask[drop] = 0.0;
            let soft = enc.node_embed(&sub, Some(&mask)).unwrap();
            let keep: Vec<usize> = (0..sub.n_edges()).filter(|&e| e != drop).collect();
            let hard = enc.node_embed(&sub.with_edges(&keep), None).unwrap();
            for (a, b) in soft.values.iter().zip(&hard.values) {
                proptest::prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn encoder_gradients_pass_check() {
        let d = dims(2, 3, 2, 2);
        let (mut ps, p) = setup(d, 8);
        // Zero biases put leaf pre-activations exactly on the ReLU kink.
        let mut rng = seeded(11);
        for id in ps.ids().collect::<Vec<_>>() {
            if ps.name(id).ends_with(".bias") {
                ps.value_mut(id).iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
        }
        let g = random_graph(10, 50, 2, 5);
        let sub = g.sample_subgraph(&SubgraphSpec { hops: 2, fanout: 4, ..Default::default() }, 0, 11.0, &mut seeded(0)).unwrap();
        let mut rng = seeded(3);
        let mask: Vec<f64> = (0..sub.n_edges()).map(|_| rng.random_range(0.1..1.0)).collect();
        let gz: Vec<f64> = (0..sub.n_nodes() * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gm: Vec<f64> = (0..sub.n_edges() * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        // loss = <gz, z(mask)> + <gm, m(z)>
        let loss = |ps: &mut ParameterSet| {
            let enc = Encoder::new(ps, &p);
            let te = enc.time_encode(&sub);
            let pass = enc.forward(&sub, &te.phi, Some(&mask)).unwrap();
            let ep = enc.edge_embeddings(&sub, &pass.z, &te.phi);
            let l = dot(&pass.z, &gz) + dot(&ep.m, &gm);
            let mut grads = Grads::zeros_like(ps);
            let mut g_phi = vec![0.0; te.phi.len()];
            let mut g_z = gz.clone();
            enc.edge_backward(&sub, &ep, &gm, &mut grads, &mut g_z, &mut g_phi);
            enc.backward(&sub, &pass, &g_z, &mut grads, &mut g_phi, None);
            enc.time_backward(&te, &g_phi, &mut grads);
            ps.zero_grads();
            ps.accumulate(&grads);
            l
        };
        let report = grad_check(&mut ps, loss, GradCheckOptions::default());
        assert!(report.passes(1e-4), "{:?}", report.worst());
    }

    #[test]
    fn mask_weight_gradients_match_finite_differences() {
        let d = dims(2, 3, 2, 2);
        let (ps, p) = setup(d, 10);
        let g = random_graph(10, 50, 2, 6);
        let sub = g.sample_subgraph(&SubgraphSpec { hops: 2, fanout: 4, ..Default::default() }, 0, 11.0, &mut seeded(0)).unwrap();
        let enc = Encoder::new(&ps, &p);
        let te = enc.time_encode(&sub);
        let mut rng = seeded(4);
        let mask: Vec<f64> = (0..sub.n_edges()).map(|_| rng.random_range(0.1..1.0)).collect();
        let gz: Vec<f64> = (0..sub.n_nodes() * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |m: &[f64]| dot(&enc.forward(&sub, &te.phi, Some(m)).unwrap().z, &gz);
        let pass = enc.forward(&sub, &te.phi, Some(&mask)).unwrap();
        let mut grads = Grads::zeros_like(&ps);
        let mut g_phi = vec![0.0; te.phi.len()];
        let mut g_w = vec![0.0; sub.n_edges()];
        enc.backward(&sub, &pass, &gz, &mut grads, &mut g_phi, Some(&mut g_w));
        for e in 0..sub.n_edges() {
            let h = 1e-6;
            let mut mp = mask.clone();
            mp[e] += h;
            let mut mm = mask.clone();
            mm[e] -= h;
            let fd = (f(&mp) - f(&mm)) / (2.0 * h);
            let err = (fd - g_w[e]).abs() / fd.abs().max(g_w[e].abs()).max(1e-6);
            assert!(err < 1e-5, "edge {e}: {} vs {fd}", g_w[e]);
        }
    }
}
