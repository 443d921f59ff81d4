//! Edge sampling network.
//!
//! For every edge of a subgraph with embedding `m_e`:
//!
//! - redundancy `s_rd = 1 - a_ee`, where `a_e` is the softmax of `m_e · m_f`
//!   over all edges `f` of the same subgraph, self included;
//! - relevance `s_rl = cos(W_rl m_e, z_G)`, zero when either side vanishes;
//! - importance logit `ρ = w_s · [s_rd ‖ s_rl ‖ m_e]`;
//! - relaxed keep sample `y = σ((log ε - log(1 - ε) + ρ) / τ)`, `ε ~ U(0, 1)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::ModelDims;
use crate::numerics::ops::{dot, sigmoid, softmax_row};
use crate::numerics::{Grads, ParamId, ParameterSet};
use crate::{Error, Result};

/// Bounds on the uniform draw feeding the logistic noise.
pub const EPS_CLAMP: f64 = 1e-10;
const NORM_FLOOR: f64 = 1e-12;

/// Which score inputs of the importance logit are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Without the redundancy score.
    Red,
    /// Without the relevance score.
    Rel,
    RedRel,
}

impl Ablation {
    pub fn uses_redundancy(self) -> bool {
        matches!(self, Ablation::None | Ablation::Rel)
    }

    pub fn uses_relevance(self) -> bool {
        matches!(self, Ablation::None | Ablation::Red)
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "red" => Ok(Self::Red),
            "rel" => Ok(Self::Rel),
            "red-rel" | "red_rel" => Ok(Self::RedRel),
            other => Err(Error::invalid(format!("unknown ablation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerParams {
    /// `D x D` relevance projection.
    pub relevance_w: ParamId,
    /// `1 x (2 + D)` importance weights.
    pub importance_w: ParamId,
    pub tau: f64,
    pub q: f64,
}

fn check_hyper(tau: f64, q: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("prior q must lie in (0, 1), got {q}")));
    }
    Ok(())
}

impl SamplerParams {
    pub fn init<R: Rng + ?Sized>(ps: &mut ParameterSet, dims: ModelDims, tau: f64, q: f64, rng: &mut R) -> Result<Self> {
        check_hyper(tau, q)?;
        let d = dims.embed_dim;
        Ok(Self {
            relevance_w: ps.add_glorot("sampler.relevance.weight", d, d, rng)?,
            importance_w: ps.add_zeros("sampler.importance.weight", &[1, 2 + d])?,
            tau,
            q,
        })
    }

    pub fn bind(ps: &ParameterSet, dims: ModelDims, tau: f64, q: f64) -> Result<Self> {
        check_hyper(tau, q)?;
        let d = dims.embed_dim;
        let find = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = ps
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if ps.tensor(id).shape() != shape {
                return Err(Error::shape(format!("`{name}` has shape {:?}, expected {shape:?}", ps.tensor(id).shape())));
            }
            Ok(id)
        };
        Ok(Self {
            relevance_w: find("sampler.relevance.weight", &[d, d])?,
            importance_w: find("sampler.importance.weight", &[1, 2 + d])?,
            tau,
            q,
        })
    }
}

/// Per-edge sampler outputs for one subgraph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeScoreBatch {
    pub s_rd: Vec<f64>,
    pub s_rl: Vec<f64>,
    pub rho: Vec<f64>,
    pub y: Vec<f64>,
    pub eps: Vec<f64>,
}

impl EdgeScoreBatch {
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }
}

/// Attention rows of `M Mᵀ` (row-major `n x n`).
fn attention(m: &[f64], n: usize, dim: usize) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for e in 0..n {
        let me = &m[e * dim..(e + 1) * dim];
        for f in e..n {
            let s = dot(me, &m[f * dim..(f + 1) * dim]);
            a[e * n + f] = s;
            a[f * n + e] = s;
        }
    }
    let mut out = vec![0.0; n * n];
    for (row, o) in a.chunks(n.max(1)).zip(out.chunks_mut(n.max(1))) {
        softmax_row(row, o);
    }
    out
}

/// Redundancy score of every edge given the `n x dim` embedding matrix.
pub fn redundancy_scores(m: &[f64], dim: usize) -> Result<Vec<f64>> {
    let n = rows(m, dim)?;
    let a = attention(m, n, dim);
    Ok((0..n).map(|e| 1.0 - a[e * n + e]).collect())
}

fn rows(m: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || m.len() % dim != 0 {
        return Err(Error::shape(format!("{} values do not form rows of width {dim}", m.len())));
    }
    Ok(m.len() / dim)
}

fn matvec(w: &[f64], x: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = x.len();
    (0..out_dim).map(|o| dot(&w[o * in_dim..(o + 1) * in_dim], x)).collect()
}

/// Cosine similarity of the projected edge embeddings with `z_g`.
pub fn relevance_scores(m: &[f64], z_g: &[f64], w_rl: &[f64]) -> Result<Vec<f64>> {
    let dim = z_g.len();
    let n = rows(m, dim)?;
    if w_rl.len() != dim * dim {
        return Err(Error::shape("relevance projection must be D x D"));
    }
    Ok((0..n)
        .map(|e| crate::encoder::cosine(&matvec(w_rl, &m[e * dim..(e + 1) * dim], dim), z_g))
        .collect())
}

/// `ρ = w_s · [s_rd ‖ s_rl ‖ m_e]`.
pub fn importance(s_rd: f64, s_rl: f64, m_e: &[f64], w_s: &[f64]) -> Result<f64> {
    if w_s.len() != 2 + m_e.len() {
        return Err(Error::shape(format!("importance weights have {} entries for {} inputs", w_s.len(), 2 + m_e.len())));
    }
    Ok(w_s[0] * s_rd + w_s[1] * s_rl + dot(&w_s[2..], m_e))
}

/// Clamps a uniform draw away from 0 and 1.
pub fn clamp_eps(eps: f64) -> f64 {
    eps.clamp(EPS_CLAMP, 1.0 - EPS_CLAMP)
}

/// Relaxed sample for a given uniform draw.
pub fn concrete(rho: f64, tau: f64, eps: f64) -> f64 {
    let eps = clamp_eps(eps);
    sigmoid((eps.ln() - (1.0 - eps).ln() + rho) / tau)
}

/// Draws `ε` and returns `(y, ε)`.
pub fn concrete_sample<R: Rng + ?Sized>(rho: f64, tau: f64, rng: &mut R) -> (f64, f64) {
    let eps = clamp_eps(rng.random::<f64>());
    (concrete(rho, tau, eps), eps)
}

/// `dy/dρ` at a sample `y`.
pub fn concrete_grad(y: f64, tau: f64) -> f64 {
    y * (1.0 - y) / tau
}

/// Forward state of the sampler over one subgraph.
#[derive(Debug, Clone)]
pub struct SamplerPass {
    n: usize,
    attn: Vec<f64>,
    proj: Vec<f64>,
    ablation: Ablation,
    pub scores: EdgeScoreBatch,
}

#[derive(Clone, Copy)]
pub struct Sampler<'a> {
    pub ps: &'a ParameterSet,
    pub p: &'a SamplerParams,
}

impl<'a> Sampler<'a> {
    pub fn new(ps: &'a ParameterSet, p: &'a SamplerParams) -> Self {
        Self { ps, p }
    }

    /// Scores every edge of `m` (`n x D`) against `z_g`, drawing one `ε` per
    /// edge from `rng` in edge order.
    pub fn forward<R: Rng + ?Sized>(&self, m: &[f64], z_g: &[f64], ablation: Ablation, tau: f64, rng: &mut R) -> Result<SamplerPass> {
        let n = rows(m, z_g.len())?;
        let eps: Vec<f64> = (0..n).map(|_| clamp_eps(rng.random::<f64>())).collect();
        self.forward_with_eps(m, z_g, ablation, tau, eps)
    }

    pub fn forward_with_eps(&self, m: &[f64], z_g: &[f64], ablation: Ablation, tau: f64, eps: Vec<f64>) -> Result<SamplerPass> {
        let dim = z_g.len();
        let n = rows(m, dim)?;
        if eps.len() != n {
            return Err(Error::shape("one uniform draw per edge required"));
        }
        let attn = attention(m, n, dim);
        let s_rd: Vec<f64> = (0..n).map(|e| 1.0 - attn[e * n + e]).collect();
        let w_rl = self.ps.value(self.p.relevance_w);
        let mut proj = Vec::with_capacity(n * dim);
        for e in 0..n {
            proj.extend(matvec(w_rl, &m[e * dim..(e + 1) * dim], dim));
        }
        let s_rl: Vec<f64> = (0..n)
            .map(|e| crate::encoder::cosine(&proj[e * dim..(e + 1) * dim], z_g))
            .collect();
        let w_s = self.ps.value(self.p.importance_w);
        let mut rho = Vec::with_capacity(n);
        for e in 0..n {
            let rd = if ablation.uses_redundancy() { s_rd[e] } else { 0.0 };
            let rl = if ablation.uses_relevance() { s_rl[e] } else { 0.0 };
            rho.push(importance(rd, rl, &m[e * dim..(e + 1) * dim], w_s)?);
        }
        let y = rho.iter().zip(&eps).map(|(&r, &u)| concrete(r, tau, u)).collect();
        Ok(SamplerPass { n, attn, proj, ablation, scores: EdgeScoreBatch { s_rd, s_rl, rho, y, eps } })
    }

    /// Backpropagates `g_rho` into the sampler weights, the edge embeddings
    /// (`g_m`) and the graph representation (`g_zg`).
    pub fn backward(&self, pass: &SamplerPass, m: &[f64], z_g: &[f64], g_rho: &[f64], grads: &mut Grads, g_m: &mut [f64], g_zg: &mut [f64]) {
        let dim = z_g.len();
        let n = pass.n;
        let sc = &pass.scores;
        let w_s = self.ps.value(self.p.importance_w);
        let mut g_rd = vec![0.0; n];
        let mut g_rl = vec![0.0; n];
        {
            let gws = grads.get_mut(self.p.importance_w);
            for e in 0..n {
                let g = g_rho[e];
                if g == 0.0 {
                    continue;
                }
                let rd = if pass.ablation.uses_redundancy() { sc.s_rd[e] } else { 0.0 };
                let rl = if pass.ablation.uses_relevance() { sc.s_rl[e] } else { 0.0 };
                gws[0] += g * rd;
                gws[1] += g * rl;
                let me = &m[e * dim..(e + 1) * dim];
                for j in 0..dim {
                    gws[2 + j] += g * me[j];
                    g_m[e * dim + j] += g * w_s[2 + j];
                }
                if pass.ablation.uses_redundancy() {
                    g_rd[e] = g * w_s[0];
                }
                if pass.ablation.uses_relevance() {
                    g_rl[e] = g * w_s[1];
                }
            }
        }

        // s_rd(e) = 1 - a_ee with a_e = softmax_f(m_e · m_f):
        // d s_rd(e) / d S_ef = -a_ee (δ_ef - a_ef), and S = M Mᵀ.
        if g_rd.iter().any(|&g| g != 0.0) {
            let a = &pass.attn;
            let mut g_s = vec![0.0; n * n];
            for e in 0..n {
                let g = g_rd[e];
                if g == 0.0 {
                    continue;
                }
                let aee = a[e * n + e];
                for f in 0..n {
                    let delta = if e == f { 1.0 } else { 0.0 };
                    g_s[e * n + f] = -g * aee * (delta - a[e * n + f]);
                }
            }
            for e in 0..n {
                for f in 0..n {
                    let g = g_s[e * n + f] + g_s[f * n + e];
                    if g == 0.0 {
                        continue;
                    }
                    for j in 0..dim {
                        g_m[e * dim + j] += g * m[f * dim + j];
                    }
                }
            }
        }

        if g_rl.iter().any(|&g| g != 0.0) {
            let w_rl = self.ps.value(self.p.relevance_w);
            let nz = dot(z_g, z_g).sqrt();
            let mut g_wrl = vec![0.0; dim * dim];
            for e in 0..n {
                let g = g_rl[e];
                if g == 0.0 {
                    continue;
                }
                let r = &pass.proj[e * dim..(e + 1) * dim];
                let nr = dot(r, r).sqrt();
                if nr < NORM_FLOOR || nz < NORM_FLOOR {
                    continue;
                }
                let c = sc.s_rl[e];
                // ∂cos/∂r = z/(|r||z|) - cos r/|r|², and symmetrically for z.
                let mut g_r = vec![0.0; dim];
                for j in 0..dim {
                    g_r[j] = g * (z_g[j] / (nr * nz) - c * r[j] / (nr * nr));
                    g_zg[j] += g * (r[j] / (nr * nz) - c * z_g[j] / (nz * nz));
                }
                let me = &m[e * dim..(e + 1) * dim];
                for o in 0..dim {
                    let go = g_r[o];
                    let row = &w_rl[o * dim..(o + 1) * dim];
                    for j in 0..dim {
                        g_wrl[o * dim + j] += go * me[j];
                        g_m[e * dim + j] += go * row[j];
                    }
                }
            }
            for (a, b) in grads.get_mut(self.p.relevance_w).iter_mut().zip(&g_wrl) {
                *a += b;
            }
        }
    }
}
