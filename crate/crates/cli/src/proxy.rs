//! Tiny downstream probe: a logistic head on frozen node embeddings.
//!
//! Deliberately small and not comparable to full temporal GNN backbones; it
//! only shows whether pruning the input graph helps or hurts a fixed encoder.

use serde::{Deserialize, Serialize};
use step_core::encoder::PoolMode;
use step_core::trainer::{Model, TrainConfig};
use step_core::{Result, TemporalGraph};

pub const PROXY_NOTE: &str = "logistic head on frozen encoder embeddings; not comparable to TGAT/TGN results";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyReport {
    pub auc_unpruned: f64,
    pub auc_pruned: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// L2 strength picked on the validation split of the unpruned graph.
    pub l2: f64,
    pub note: String,
}

/// A labelled query: node `node` at time `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub node: u32,
    pub time: f64,
    pub label: bool,
}

/// Area under the ROC curve with average ranks for ties. `None` unless both
/// classes occur.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

struct Logistic {
    w: Vec<f64>,
    b: f64,
}

impl Logistic {
    /// Full-batch gradient descent from zero; deterministic.
    fn fit(x: &[Vec<f64>], y: &[bool], l2: f64) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let mut m = Logistic { w: vec![0.0; d], b: 0.0 };
        let n = x.len() as f64;
        let lr = 0.5;
        for _ in 0..300 {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (xi, &yi) in x.iter().zip(y) {
                let err = sigmoid(m.score(xi)) - f64::from(u8::from(yi));
                for (g, v) in gw.iter_mut().zip(xi) {
                    *g += err * v;
                }
                gb += err;
            }
            for (w, g) in m.w.iter_mut().zip(&gw) {
                *w -= lr * (g / n + l2 * *w);
            }
            m.b -= lr * gb / n;
        }
        m
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.b + self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn embed(model: &Model, cfg: &TrainConfig, g: &TemporalGraph, qs: &[Query], seed: u64) -> Result<Vec<Vec<f64>>> {
    let spec = cfg.subgraph_spec();
    qs.iter()
        .map(|q| {
            if (q.node as usize) < g.n_nodes() {
                model.embed_root(g, &spec, PoolMode::Central, q.node, q.time, seed)
            } else {
                Ok(vec![0.0; model.meta.dims.embed_dim])
            }
        })
        .collect()
}

/// Standardises columns with statistics of `train`.
fn standardise(train: &[Vec<f64>], sets: &mut [&mut Vec<Vec<f64>>]) {
    let d = train.first().map_or(0, Vec::len);
    let n = train.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for r in train {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for r in train {
        for ((s, v), m) in sd.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for set in sets.iter_mut() {
        for r in set.iter_mut() {
            for ((v, m), s) in r.iter_mut().zip(&mean).zip(&sd) {
                *v = (*v - m) / s.sqrt().max(1e-12);
            }
        }
    }
}

const L2_GRID: [f64; 3] = [1e-4, 1e-2, 1.0];

/// Fits the probe on the first 70% of `queries` (chronological) embedded in
/// each graph, picks the L2 strength on the next 15% and reports test AUC on
/// the last 15%. `None` when some split lacks one of the classes.
pub fn proxy_auc(model: &Model, cfg: &TrainConfig, unpruned: &TemporalGraph, pruned: &TemporalGraph, queries: &[Query], seed: u64) -> Result<Option<ProxyReport>> {
    let n = queries.len();
    let (a, b) = ((n as f64 * 0.70).round() as usize, (n as f64 * 0.85).round() as usize);
    let labels: Vec<bool> = queries.iter().map(|q| q.label).collect();
    let (ytr, yva, yte) = (&labels[..a], &labels[a..b], &labels[b..]);
    let both = |y: &[bool]| y.iter().any(|&l| l) && y.iter().any(|&l| !l);
    if !(both(ytr) && both(yva) && both(yte)) {
        return Ok(None);
    }
    let prepare = |g: &TemporalGraph| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let z = embed(model, cfg, g, queries, seed)?;
        let (mut tr, mut va, mut te) = (z[..a].to_vec(), z[a..b].to_vec(), z[b..].to_vec());
        let stats = tr.clone();
        standardise(&stats, &mut [&mut tr, &mut va, &mut te]);
        Ok((tr, va, te))
    };
    let scores = |m: &Logistic, x: &[Vec<f64>]| x.iter().map(|r| m.score(r)).collect::<Vec<_>>();

    let (tr, va, te) = prepare(unpruned)?;
    let mut best = (f64::NEG_INFINITY, L2_GRID[0]);
    for &l2 in &L2_GRID {
        let m = Logistic::fit(&tr, ytr, l2);
        let v = auc(&scores(&m, &va), yva).unwrap_or(0.5);
        if v > best.0 {
            best = (v, l2);
        }
    }
    let l2 = best.1;
    let auc_unpruned = auc(&scores(&Logistic::fit(&tr, ytr, l2), &te), yte).unwrap_or(0.5);
    let (tr, _, te) = prepare(pruned)?;
    let auc_pruned = auc(&scores(&Logistic::fit(&tr, ytr, l2), &te), yte).unwrap_or(0.5);
    Ok(Some(ProxyReport { auc_unpruned, auc_pruned, n_train: a, n_val: b - a, n_test: n - b, l2, note: PROXY_NOTE.into() }))
}
