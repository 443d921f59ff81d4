//! Self-supervised objectives, each returning its value and gradient.

use crate::numerics::ops::{dot, log_sum_exp};
use crate::{Error, Result};

/// Probability clamp used by the distillation loss.
pub const P_CLAMP: f64 = 1e-7;

/// InfoNCE value and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrad {
    pub loss: f64,
    pub g_anchor: Vec<f64>,
    pub g_positive: Vec<f64>,
    pub g_negatives: Vec<Vec<f64>>,
}

/// `-log exp(a·p) / (exp(a·p) + Σ exp(a·n))`.
///
/// With `include_positive = false` the positive is left out of the
/// denominator, which makes the loss unbounded below.
pub fn loss_contrastive(anchor: &[f64], positive: &[f64], negatives: &[&[f64]], include_positive: bool) -> Result<ContrastiveGrad> {
    if negatives.is_empty() {
        return Err(Error::invalid("contrastive loss needs at least one negative"));
    }
    if positive.len() != anchor.len() || negatives.iter().any(|n| n.len() != anchor.len()) {
        return Err(Error::shape("contrastive loss vectors differ in length"));
    }
    let s_pos = dot(anchor, positive);
    let mut logits: Vec<f64> = Vec::with_capacity(negatives.len() + 1);
    if include_positive {
        logits.push(s_pos);
    }
    logits.extend(negatives.iter().map(|n| dot(anchor, n)));
    let lse = log_sum_exp(&logits);
    let loss = lse - s_pos;
    let weights: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    let (w_pos, w_neg) = if include_positive { (weights[0], &weights[1..]) } else { (0.0, &weights[..]) };

    let d = anchor.len();
    let c_pos = w_pos - 1.0;
    let mut g_anchor: Vec<f64> = positive.iter().map(|p| c_pos * p).collect();
    for (n, &w) in negatives.iter().zip(w_neg) {
        for j in 0..d {
            g_anchor[j] += w * n[j];
        }
    }
    let g_positive = anchor.iter().map(|a| c_pos * a).collect();
    let g_negatives = w_neg.iter().map(|&w| anchor.iter().map(|a| w * a).collect()).collect();
    Ok(ContrastiveGrad { loss, g_anchor, g_positive, g_negatives })
}

/// Mean binary cross-entropy of `p` against constant targets `y`, and the
/// gradient w.r.t. each `p`.
pub fn loss_distill(p: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p.len() != y.len() {
        return Err(Error::shape(format!("{} scores for {} targets", p.len(), y.len())));
    }
    if p.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.iter().zip(y) {
        let pc = pi.clamp(P_CLAMP, 1.0 - P_CLAMP);
        loss -= yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln();
        let inside = pi > P_CLAMP && pi < 1.0 - P_CLAMP;
        grad.push(if inside { (pc - yi) / (pc * (1.0 - pc)) / n } else { 0.0 });
    }
    Ok((loss / n, grad))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `|mean - q| + |var - q(1-q)|` with population moments, and its
/// (sub)gradient.
pub fn loss_bernoulli(y: &[f64], q: f64) -> Result<(f64, Vec<f64>)> {
    if y.is_empty() {
        return Err(Error::invalid("moment matching needs at least one sample"));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let second = y.iter().map(|v| v * v).sum::<f64>() / n;
    let var = second - mean * mean;
    let target_var = q * (1.0 - q);
    let loss = (mean - q).abs() + (var - target_var).abs();
    let (sm, sv) = (sign(mean - q), sign(var - target_var));
    let grad = y.iter().map(|&v| sm / n + sv * 2.0 * (v - mean) / n).collect();
    Ok((loss, grad))
}

/// Mean absolute value and its subgradient.
pub fn loss_l1(v: &[f64]) -> (f64, Vec<f64>) {
    if v.is_empty() {
        return (0.0, Vec::new());
    }
    let n = v.len() as f64;
    (v.iter().map(|x| x.abs()).sum::<f64>() / n, v.iter().map(|&x| sign(x) / n).collect())
}
