use rayon::prelude::*;

use super::step::{forward_root, Root};
use super::{Model, TrainConfig};
use crate::numerics::ops::sigmoid;
use crate::store::{EventId, TemporalGraph};
use crate::Result;

const FIDELITY_STREAM: u64 = 0xf1de;

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs paired samples");
    if a.len() < 2 {
        return 0.0;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Paired scores of every edge sampled in a set of root subgraphs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeScores {
    pub event_ids: Vec<EventId>,
    /// Time gap of the edge within its subgraph.
    pub delta_t: Vec<f64>,
    /// Pruner score `P`.
    pub pruner: Vec<f64>,
    /// Sampler keep probability `σ(ρ)`.
    pub sampler: Vec<f64>,
    pub redundancy: Vec<f64>,
    pub relevance: Vec<f64>,
}

/// Pruner score and sampler probability for every sampled edge of the
/// subgraphs rooted at `roots`, both computed with the subgraph's Δt.
pub fn edge_score_pairs(model: &Model, g: &TemporalGraph, cfg: &TrainConfig, roots: &[Root]) -> Result<EdgeScores> {
    let per_root: Vec<EdgeScores> = roots
        .par_iter()
        .enumerate()
        .map(|(i, &r)| {
            let f = forward_root(&model.params, &model.handles, g, cfg, r, cfg.tau, &[FIDELITY_STREAM, i as u64], None)?;
            Ok(EdgeScores {
                event_ids: f.sub.edges.iter().map(|e| e.event).collect(),
                delta_t: f.sub.edges.iter().map(|e| e.delta_t).collect(),
                pruner: f.pruner.p.clone(),
                sampler: f.sampler.scores.rho.iter().map(|&x| sigmoid(x)).collect(),
                redundancy: f.sampler.scores.s_rd.clone(),
                relevance: f.sampler.scores.s_rl.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let mut out = EdgeScores::default();
    for r in per_root {
        out.event_ids.extend(r.event_ids);
        out.delta_t.extend(r.delta_t);
        out.pruner.extend(r.pruner);
        out.sampler.extend(r.sampler);
        out.redundancy.extend(r.redundancy);
        out.relevance.extend(r.relevance);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // Monotone but nonlinear.
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 8.0, 27.0, 64.0]) - 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[0.0, 5.0]), 0.0);
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_matches_textbook_formula_without_ties() {
        // 1 - 6 Σd² / (n(n² - 1)) holds when all ranks are distinct.
        let a = [0.3, 1.2, -0.5, 2.2, 0.9, 1.7];
        let b = [1.0, 0.4, -1.0, 3.0, 0.2, 2.0];
        let (ra, rb) = (ranks(&a), ranks(&b));
        let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
        let n = 6.0;
        let expect = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
        assert!((spearman(&a, &b) - expect).abs() < 1e-12);
    }
}
