//! Graph-less pruning network and its deployment paths.
//!
//! `P = σ(w_2 · ReLU(W_1 [x ‖ Φ(Δt)] + b_1) + b_2)` scores a single event from
//! its raw features and a time gap, without touching the graph. Scores are
//! turned into keep/drop decisions by a threshold, either given directly or
//! calibrated to drop an exact fraction of events.

use std::cmp::Ordering;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, ModelDims};
use crate::numerics::ops::{affine_rows, affine_rows_backward, dot, sigmoid};
use crate::numerics::{Grads, ParamId, ParameterSet};
use crate::store::{Event, EventId, TemporalGraph};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PrunerParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

fn in_dim(dims: &ModelDims) -> usize {
    dims.feature_dim + dims.time_dim
}

impl PrunerParams {
    pub fn init<R: Rng + ?Sized>(ps: &mut ParameterSet, dims: ModelDims, rng: &mut R) -> Result<Self> {
        if dims.hidden_dim == 0 {
            return Err(Error::invalid("pruner hidden width must be >= 1"));
        }
        Ok(Self {
            w1: ps.add_glorot("pruner.hidden.weight", dims.hidden_dim, in_dim(&dims), rng)?,
            b1: ps.add_zeros("pruner.hidden.bias", &[dims.hidden_dim])?,
            w2: ps.add_glorot("pruner.output.weight", 1, dims.hidden_dim, rng)?,
            b2: ps.add_zeros("pruner.output.bias", &[1])?,
        })
    }

    pub fn bind(ps: &ParameterSet, dims: ModelDims) -> Result<Self> {
        let h = dims.hidden_dim;
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
            w1: find("pruner.hidden.weight", &[h, in_dim(&dims)])?,
            b1: find("pruner.hidden.bias", &[h])?,
            w2: find("pruner.output.weight", &[1, h])?,
            b2: find("pruner.output.bias", &[1])?,
        })
    }
}

/// Cached batch forward for training.
#[derive(Debug, Clone)]
pub struct PrunerPass {
    input: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    /// Scores in `(0, 1)`, one per row.
    pub p: Vec<f64>,
}

/// Training-time view: rows of `x` (`n x d`) with matching time encodings.
pub fn pruner_forward(ps: &ParameterSet, pp: &PrunerParams, dims: &ModelDims, x: &[f64], phi: &[f64]) -> PrunerPass {
    let (fd, td, h) = (dims.feature_dim, dims.time_dim, dims.hidden_dim);
    let n = phi.len() / td.max(1);
    let n = if td == 0 { x.len() / fd.max(1) } else { n };
    let k = in_dim(dims);
    let mut input = vec![0.0; n * k];
    for e in 0..n {
        input[e * k..e * k + fd].copy_from_slice(&x[e * fd..(e + 1) * fd]);
        input[e * k + fd..(e + 1) * k].copy_from_slice(&phi[e * td..(e + 1) * td]);
    }
    let mut hidden_pre = vec![0.0; n * h];
    affine_rows(&input, k, ps.value(pp.w1), h, Some(ps.value(pp.b1)), &mut hidden_pre);
    let hidden: Vec<f64> = hidden_pre.iter().map(|v| v.max(0.0)).collect();
    let mut logit = vec![0.0; n];
    affine_rows(&hidden, h, ps.value(pp.w2), 1, Some(ps.value(pp.b2)), &mut logit);
    let p = logit.into_iter().map(sigmoid).collect();
    PrunerPass { input, hidden_pre, hidden, p }
}

/// Backpropagates gradients w.r.t. the pre-sigmoid logits into the pruner
/// weights. Time encodings are treated as constants.
pub fn pruner_backward(ps: &ParameterSet, pp: &PrunerParams, dims: &ModelDims, pass: &PrunerPass, g_logit: &[f64], grads: &mut Grads) {
    let h = dims.hidden_dim;
    let k = in_dim(dims);
    let mut g_hidden = vec![0.0; g_logit.len() * h];
    {
        let (gw, gb) = grads.pair_mut(pp.w2, pp.b2);
        affine_rows_backward(&pass.hidden, h, ps.value(pp.w2), 1, g_logit, Some(&mut g_hidden), gw, Some(gb));
    }
    for (g, pre) in g_hidden.iter_mut().zip(&pass.hidden_pre) {
        if *pre <= 0.0 {
            *g = 0.0;
        }
    }
    let (gw, gb) = grads.pair_mut(pp.w1, pp.b1);
    affine_rows_backward(&pass.input, k, ps.value(pp.w1), h, &g_hidden, None, gw, Some(gb));
}

/// Self-contained inference copy of the pruner and the time encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pruner {
    pub feature_dim: usize,
    pub time_dim: usize,
    pub hidden_dim: usize,
    pub time_scale: f64,
    time_w: Vec<f64>,
    time_b: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

/// Reusable buffers so per-event scoring does not allocate.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    input: Vec<f64>,
}

impl Pruner {
    pub fn from_params(ps: &ParameterSet, enc: &EncoderParams, pp: &PrunerParams) -> Self {
        let dims = enc.dims;
        Self {
            feature_dim: dims.feature_dim,
            time_dim: dims.time_dim,
            hidden_dim: dims.hidden_dim,
            time_scale: enc.time_scale,
            time_w: ps.value(enc.time_w).to_vec(),
            time_b: ps.value(enc.time_b).to_vec(),
            w1: ps.value(pp.w1).to_vec(),
            b1: ps.value(pp.b1).to_vec(),
            w2: ps.value(pp.w2).to_vec(),
            b2: ps.value(pp.b2)[0],
        }
    }

    /// All-zero network, useful as a reference point: every score is 0.5.
    pub fn zeros(feature_dim: usize, time_dim: usize, hidden_dim: usize) -> Self {
        let k = feature_dim + time_dim;
        Self {
            feature_dim,
            time_dim,
            hidden_dim,
            time_scale: 1.0,
            time_w: vec![0.0; time_dim],
            time_b: vec![0.0; time_dim],
            w1: vec![0.0; hidden_dim * k],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim],
            b2: 0.0,
        }
    }

    /// Draws every weight uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(feature_dim: usize, time_dim: usize, hidden_dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(feature_dim, time_dim, hidden_dim);
        let mut draw = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = rng.random_range(-scale..=scale));
        draw(&mut p.time_w);
        draw(&mut p.time_b);
        draw(&mut p.w1);
        draw(&mut p.b1);
        draw(&mut p.w2);
        p.b2 = rng.random_range(-scale..=scale);
        p
    }

    pub fn score_event(&self, x: &[f64], dt: f64) -> Result<f64> {
        self.score_with(x, dt, &mut Scratch::default())
    }

    pub fn score_with(&self, x: &[f64], dt: f64, scratch: &mut Scratch) -> Result<f64> {
        if x.len() != self.feature_dim {
            return Err(Error::shape(format!("event has {} features, pruner expects {}", x.len(), self.feature_dim)));
        }
        if !dt.is_finite() {
            return Err(Error::invalid(format!("non-finite time gap {dt}")));
        }
        let k = self.feature_dim + self.time_dim;
        let input = &mut scratch.input;
        input.clear();
        input.extend_from_slice(x);
        let s = dt * self.time_scale;
        input.extend(self.time_w.iter().zip(&self.time_b).map(|(w, b)| (w * s + b).cos()));
        let mut logit = self.b2;
        for j in 0..self.hidden_dim {
            let a = self.b1[j] + dot(&self.w1[j * k..(j + 1) * k], input);
            if a > 0.0 {
                logit += self.w2[j] * a;
            }
        }
        Ok(sigmoid(logit))
    }
}

/// Keep rule: an event survives iff `(score, event_id) > (score, tie_event_id)`
/// in lexicographic order. Without a tie id this is simply `P > score`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    #[serde(with = "extended_f64")]
    pub score: f64,
    /// Events scoring exactly `score` are kept only if their id is larger.
    #[serde(default)]
    pub tie_event_id: Option<EventId>,
}

impl Threshold {
    pub fn new(score: f64) -> Self {
        Self { score, tie_event_id: None }
    }

    /// Keeps nothing: no probability exceeds 1.
    pub fn drop_all() -> Self {
        Self::new(1.0)
    }

    pub fn keep_all() -> Self {
        Self::new(f64::NEG_INFINITY)
    }

    pub fn keeps(&self, score: f64, id: EventId) -> bool {
        match score.partial_cmp(&self.score) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Equal) => self.tie_event_id.is_some_and(|t| id > t),
            _ => false,
        }
    }
}

/// JSON has no infinities; they travel as the strings `"inf"` / `"-inf"`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub threshold: Threshold,
    pub target_ratio: f64,
    pub achieved_ratio: f64,
    pub n: usize,
    pub n_dropped: usize,
}

/// Chooses a threshold dropping exactly `round(p n)` of `(event_id, score)`
/// pairs: the lowest scores, ties broken by ascending event id.
pub fn calibrate_threshold(scores: &[(EventId, f64)], p: f64) -> Result<ThresholdCalibration> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot calibrate a threshold on zero scores"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("pruning ratio {p} outside [0, 1]")));
    }
    if let Some((id, _)) = scores.iter().find(|(_, s)| s.is_nan()) {
        return Err(Error::invalid(format!("score of event {id} is NaN")));
    }
    let n = scores.len();
    let k = (p * n as f64).round() as usize;
    let threshold = if k == 0 {
        Threshold::keep_all()
    } else {
        let mut sorted = scores.to_vec();
        sorted.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let (id, s) = sorted[k - 1];
        Threshold { score: s, tie_event_id: Some(id) }
    };
    Ok(ThresholdCalibration { threshold, target_ratio: p, achieved_ratio: k as f64 / n as f64, n, n_dropped: k })
}

/// How the time gap fed to the pruner is chosen for a single event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "policy", content = "t_ref")]
pub enum DtPolicy {
    /// Scored on arrival: `Δt = 0`.
    #[default]
    Zero,
    /// `Δt = t_max - t` with `t_max` the latest timestamp of the dataset.
    RefMax,
    /// `Δt = t_ref - t` for a fixed reference time.
    RefTime(f64),
}

impl DtPolicy {
    pub fn label(&self) -> String {
        match self {
            DtPolicy::Zero => "zero".into(),
            DtPolicy::RefMax => "ref-max".into(),
            DtPolicy::RefTime(t) => format!("ref-time:{t}"),
        }
    }

    /// Resolves to a fixed reference time (if any) for graph `g`.
    fn reference(&self, g: Option<&TemporalGraph>) -> Result<Option<f64>> {
        match *self {
            DtPolicy::Zero => Ok(None),
            DtPolicy::RefTime(t) => Ok(Some(t)),
            DtPolicy::RefMax => match g {
                Some(g) => Ok(Some(g.time_range().map_or(0.0, |r| r.1))),
                None => Err(Error::invalid("the ref-max time-gap policy needs the whole dataset")),
            },
        }
    }
}

impl std::str::FromStr for DtPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "ref-max" | "ref_max" => Ok(Self::RefMax),
            other => match other.strip_prefix("ref-time:").map(str::parse::<f64>) {
                Some(Ok(t)) if t.is_finite() => Ok(Self::RefTime(t)),
                _ => Err(Error::invalid(format!("unknown time-gap policy `{other}`"))),
            },
        }
    }
}

fn gap(reference: Option<f64>, t: f64) -> f64 {
    reference.map_or(0.0, |r| r - t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneDecision {
    pub event_id: EventId,
    pub score: f64,
    pub keep: bool,
    pub threshold: f64,
}

/// Either a target ratio (calibrated on all scores) or a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneTarget {
    Ratio(f64),
    Threshold(Threshold),
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub graph: TemporalGraph,
    /// One decision per input event, in graph order.
    pub decisions: Vec<PruneDecision>,
    pub threshold: Threshold,
    pub calibration: Option<ThresholdCalibration>,
    pub policy: DtPolicy,
}

/// Scores every event of `g` (in graph order) in parallel.
pub fn score_graph(g: &TemporalGraph, pruner: &Pruner, policy: DtPolicy) -> Result<Vec<f64>> {
    let reference = policy.reference(Some(g))?;
    g.events()
        .par_iter()
        .map_init(Scratch::default, |s, e| pruner.score_with(&e.features, gap(reference, e.timestamp), s))
        .collect()
}

pub fn prune_offline(g: &TemporalGraph, pruner: &Pruner, target: PruneTarget, policy: DtPolicy) -> Result<PruneOutcome> {
    let scores = score_graph(g, pruner, policy)?;
    let (threshold, calibration) = match target {
        PruneTarget::Threshold(t) => (t, None),
        PruneTarget::Ratio(p) => {
            if g.n_events() == 0 {
                (Threshold::keep_all(), None)
            } else {
                let pairs: Vec<(EventId, f64)> = g.events().iter().map(|e| e.id).zip(scores.iter().copied()).collect();
                let cal = calibrate_threshold(&pairs, p)?;
                (cal.threshold, Some(cal))
            }
        }
    };
    let decisions: Vec<PruneDecision> = g
        .events()
        .iter()
        .zip(&scores)
        .map(|(e, &score)| PruneDecision { event_id: e.id, score, keep: threshold.keeps(score, e.id), threshold: threshold.score })
        .collect();
    let graph = g.filter_events(|e| threshold.keeps(scores[g.position_of(e.id).expect("own event")], e.id));
    Ok(PruneOutcome { graph, decisions, threshold, calibration, policy })
}

/// One record of an event stream; `payload` travels to the sinks untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEvent<T> {
    pub id: EventId,
    pub timestamp: f64,
    pub features: Vec<f64>,
    pub payload: T,
}

impl StreamEvent<()> {
    pub fn from_event(e: &Event) -> Self {
        Self { id: e.id, timestamp: e.timestamp, features: e.features.clone(), payload: () }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamOptions {
    pub threshold: Threshold,
    pub policy: DtPolicy,
    /// Scoring threads; `1` scores inline on the calling thread.
    pub workers: usize,
    /// Events scored together before being routed.
    pub chunk_size: usize,
}

impl StreamOptions {
    pub fn new(threshold: Threshold) -> Self {
        Self { threshold, policy: DtPolicy::Zero, workers: 1, chunk_size: 4096 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub n_in: u64,
    pub n_kept: u64,
    pub n_dropped: u64,
    pub n_errors: u64,
    pub elapsed_secs: f64,
    /// Events per second, malformed ones included.
    pub throughput: f64,
}

/// Filters an ordered event stream, routing each event to `keep` or `drop`
/// in input order. `Err` items (malformed records) only bump the error
/// counter. Decisions do not depend on `workers` or `chunk_size`.
pub fn stream_prune<T, I, K, D>(source: I, pruner: &Pruner, opts: &StreamOptions, mut keep: K, mut drop: D) -> Result<StreamSummary>
where
    T: Send + Sync,
    I: IntoIterator<Item = std::result::Result<StreamEvent<T>, String>>,
    K: FnMut(StreamEvent<T>, PruneDecision) -> Result<()>,
    D: FnMut(StreamEvent<T>, PruneDecision) -> Result<()>,
{
    let reference = opts.policy.reference(None)?;
    let pool = if opts.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.workers)
                .build()
                .map_err(|e| Error::invalid(format!("cannot start scoring workers: {e}")))?,
        )
    } else {
        None
    };
    let chunk_size = opts.chunk_size.max(1);
    let start = Instant::now();
    let (mut n_in, mut n_kept, mut n_dropped, mut n_errors) = (0u64, 0u64, 0u64, 0u64);
    let mut scratch = Scratch::default();
    let mut chunk: Vec<std::result::Result<StreamEvent<T>, String>> = Vec::with_capacity(chunk_size);
    let mut source = source.into_iter();
    loop {
        chunk.clear();
        chunk.extend(source.by_ref().take(chunk_size));
        if chunk.is_empty() {
            break;
        }
        let score = |item: &std::result::Result<StreamEvent<T>, String>, s: &mut Scratch| match item {
            Ok(ev) => pruner.score_with(&ev.features, gap(reference, ev.timestamp), s).ok(),
            Err(_) => None,
        };
        let scores: Vec<Option<f64>> = match &pool {
            Some(pool) => pool.install(|| chunk.par_iter().map_init(Scratch::default, |s, it| score(it, s)).collect()),
            None => chunk.iter().map(|it| score(it, &mut scratch)).collect(),
        };
        for (item, score) in chunk.drain(..).zip(scores) {
            n_in += 1;
            match (item, score) {
                (Ok(ev), Some(score)) => {
                    let decision = PruneDecision {
                        event_id: ev.id,
                        score,
                        keep: opts.threshold.keeps(score, ev.id),
                        threshold: opts.threshold.score,
                    };
                    if decision.keep {
                        n_kept += 1;
                        keep(ev, decision)?;
                    } else {
                        n_dropped += 1;
                        drop(ev, decision)?;
                    }
                }
                _ => n_errors += 1,
            }
        }
    }
    let elapsed_secs = start.elapsed().as_secs_f64();
    let throughput = if elapsed_secs > 0.0 { n_in as f64 / elapsed_secs } else { 0.0 };
    Ok(StreamSummary { n_in, n_kept, n_dropped, n_errors, elapsed_secs, throughput })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn thresholds_round_trip_through_json() {
        for t in [Threshold::keep_all(), Threshold::drop_all(), Threshold { score: 0.25, tie_event_id: Some(7) }] {
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(serde_json::from_str::<Threshold>(&json).unwrap(), t);
        }
    }

    fn graph(m: usize, d: usize, seed: u64) -> TemporalGraph {
        let mut rng = seeded(seed);
        let events = (0..m)
            .map(|i| Event {
                id: i as u64,
                src: rng.random_range(0..50),
                dst: rng.random_range(0..50),
                timestamp: rng.random_range(0.0..100.0),
                features: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                label: None,
            })
            .collect();
        TemporalGraph::from_events(50, d, events).unwrap()
    }

    #[test]
    fn zero_network_scores_one_half() {
        let p = Pruner::zeros(3, 2, 4);
        assert_eq!(p.score_event(&[1.0, -5.0, 2.0], 7.0).unwrap(), 0.5);
        assert!(p.score_event(&[1.0], 0.0).is_err());
    }

    #[test]
    fn score_matches_two_layer_oracle() {
        let mut rng = seeded(1);
        let (d, t, h) = (3, 2, 5);
        let p = Pruner::random(d, t, h, 1.0, &mut rng);
        let x = [0.3, -1.2, 0.8];
        let dt = 4.5;
        let phi: Vec<f64> = (0..t).map(|j| (p.time_w[j] * dt + p.time_b[j]).cos()).collect();
        let input: Vec<f64> = x.iter().chain(&phi).copied().collect();
        let mut logit = p.b2;
        for j in 0..h {
            let mut a = p.b1[j];
            for (i, v) in input.iter().enumerate() {
                a += p.w1[j * (d + t) + i] * v;
            }
            logit += p.w2[j] * a.max(0.0);
        }
        let expect = 1.0 / (1.0 + (-logit).exp());
        assert!((p.score_event(&x, dt).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn training_view_matches_inference_copy() {
        let dims = ModelDims { feature_dim: 3, embed_dim: 4, time_dim: 2, hidden_dim: 6, layers: 1 };
        let mut ps = ParameterSet::new();
        let mut rng = seeded(2);
        let enc = EncoderParams::init(&mut ps, dims, 0.5, &mut rng).unwrap();
        let pp = PrunerParams::init(&mut ps, dims, &mut rng).unwrap();
        ps.value_mut(pp.b1).iter_mut().for_each(|b| *b = 0.1);
        let pruner = Pruner::from_params(&ps, &enc, &pp);
        let x = [0.5, -0.5, 1.0, 0.2, 0.1, -0.3];
        let dts = [1.0, 3.0];
        let phi: Vec<f64> = dts.iter().flat_map(|&dt| pruner.time_w.iter().zip(&pruner.time_b).map(move |(w, b)| (w * dt * 0.5 + b).cos())).collect();
        let pass = pruner_forward(&ps, &pp, &dims, &x, &phi);
        for e in 0..2 {
            let direct = pruner.score_event(&x[e * 3..(e + 1) * 3], dts[e]).unwrap();
            assert!((pass.p[e] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn pruner_gradients_pass_check() {
        use crate::numerics::{grad_check, GradCheckOptions};
        let dims = ModelDims { feature_dim: 3, embed_dim: 2, time_dim: 2, hidden_dim: 5, layers: 1 };
        let mut ps = ParameterSet::new();
        let mut rng = seeded(3);
        let pp = PrunerParams::init(&mut ps, dims, &mut rng).unwrap();
        for id in [pp.b1, pp.b2] {
            ps.value_mut(id).iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let phi: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = [0.2, 0.9, 0.5, 0.0];
        let loss = |ps: &mut ParameterSet| {
            let pass = pruner_forward(ps, &pp, &dims, &x, &phi);
            let l: f64 = pass.p.iter().zip(&y).map(|(p, y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())).sum();
            let g: Vec<f64> = pass.p.iter().zip(&y).map(|(p, y)| p - y).collect();
            let mut grads = Grads::zeros_like(ps);
            pruner_backward(ps, &pp, &dims, &pass, &g, &mut grads);
            ps.zero_grads();
            ps.accumulate(&grads);
            l
        };
        let report = grad_check(&mut ps, loss, GradCheckOptions::default());
        assert!(report.passes(1e-4), "{:?}", report.worst());
    }

    #[test]
    fn calibration_examples() {
        let mut rng = seeded(4);
        let scores: Vec<(u64, f64)> = (0..100).map(|i| (i, rng.random::<f64>())).collect();
        let none = calibrate_threshold(&scores, 0.0).unwrap();
        assert!(scores.iter().all(|&(id, s)| none.threshold.keeps(s, id)));
        let all = calibrate_threshold(&scores, 1.0).unwrap();
        assert!(scores.iter().all(|&(id, s)| !all.threshold.keeps(s, id)));

        let cal = calibrate_threshold(&scores, 0.3).unwrap();
        let mut sorted: Vec<f64> = scores.iter().map(|s| s.1).collect();
        sorted.sort_by(f64::total_cmp);
        let dropped: Vec<f64> = scores.iter().filter(|&&(id, s)| !cal.threshold.keeps(s, id)).map(|s| s.1).collect();
        assert_eq!(dropped.len(), 30);
        assert!(dropped.iter().all(|s| *s <= sorted[29]));
        assert_eq!(cal.achieved_ratio, 0.3);
        assert!(calibrate_threshold(&[], 0.5).is_err());
        assert!(calibrate_threshold(&scores, 1.5).is_err());
    }

    #[test]
    fn calibration_with_ties_drops_exact_count_in_id_order() {
        let scores: Vec<(u64, f64)> = (0..10).map(|i| (i, if i < 8 { 0.5 } else { 0.9 })).collect();
        let cal = calibrate_threshold(&scores, 0.3).unwrap();
        let dropped: Vec<u64> = scores.iter().filter(|&&(id, s)| !cal.threshold.keeps(s, id)).map(|s| s.0).collect();
        assert_eq!(dropped, vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn calibration_drops_round_pn(seed in 0u64..200, n in 1usize..300, p in 0.0f64..=1.0) {
            let mut rng = seeded(seed);
            // Coarse scores force plenty of ties.
            let scores: Vec<(u64, f64)> = (0..n as u64).map(|i| (i * 3 + 1, (rng.random_range(0..20) as f64) / 20.0)).collect();
            let cal = calibrate_threshold(&scores, p).unwrap();
            let k = (p * n as f64).round() as usize;
            let mut order = scores.clone();
            order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let expected: std::collections::BTreeSet<u64> = order[..k].iter().map(|s| s.0).collect();
            let dropped: std::collections::BTreeSet<u64> = scores.iter().filter(|&&(id, s)| !cal.threshold.keeps(s, id)).map(|s| s.0).collect();
            prop_assert!(dropped == expected);
            prop_assert!(cal.achieved_ratio == k as f64 / n as f64);
        }

        #[test]
        fn higher_threshold_keeps_a_subset(seed in 0u64..200, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let mut rng = seeded(seed);
            for i in 0..50u64 {
                let s: f64 = rng.random();
                if Threshold::new(hi).keeps(s, i) {
                    prop_assert!(Threshold::new(lo).keeps(s, i));
                }
            }
        }

        #[test]
        fn scores_are_probabilities(seed in 0u64..100, dt in -1e6f64..1e6) {
            let mut rng = seeded(seed);
            let p = Pruner::random(4, 3, 8, 3.0, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-100.0..100.0)).collect();
            let s = p.score_event(&x, dt).unwrap();
            prop_assert!(s > 0.0 && s < 1.0 || s == 0.0 || s == 1.0);
            prop_assert!(s.to_bits() == p.score_event(&x, dt).unwrap().to_bits());
        }
    }

    #[test]
    fn offline_pruning_examples() {
        let g = graph(1000, 3, 5);
        let p = Pruner::random(3, 2, 8, 1.0, &mut seeded(6));
        let zero = prune_offline(&g, &p, PruneTarget::Ratio(0.0), DtPolicy::RefMax).unwrap();
        assert_eq!(zero.graph.events(), g.events());
        let half = prune_offline(&g, &p, PruneTarget::Ratio(0.5), DtPolicy::RefMax).unwrap();
        assert_eq!(half.graph.n_events(), 500);
        assert_eq!(half.decisions.len(), 1000);
        assert_eq!(half.decisions.iter().filter(|d| d.keep).count(), 500);

        // Same θ on the pruned graph removes nothing more (fixed reference time).
        let t_ref = g.time_range().unwrap().1;
        let first = prune_offline(&g, &p, PruneTarget::Ratio(0.4), DtPolicy::RefTime(t_ref)).unwrap();
        let again = prune_offline(&first.graph, &p, PruneTarget::Threshold(first.threshold), DtPolicy::RefTime(t_ref)).unwrap();
        assert_eq!(again.graph.events(), first.graph.events());
        let z1 = prune_offline(&g, &p, PruneTarget::Ratio(0.4), DtPolicy::Zero).unwrap();
        let z2 = prune_offline(&z1.graph, &p, PruneTarget::Threshold(z1.threshold), DtPolicy::Zero).unwrap();
        assert_eq!(z1.graph.events(), z2.graph.events());
    }

    fn run_stream(g: &TemporalGraph, p: &Pruner, opts: &StreamOptions) -> (Vec<u64>, Vec<u64>, StreamSummary) {
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        let src = g.events().iter().map(|e| Ok(StreamEvent::from_event(e)));
        let summary = stream_prune(
            src,
            p,
            opts,
            |e, _| {
                kept.push(e.id);
                Ok(())
            },
            |e, _| {
                dropped.push(e.id);
                Ok(())
            },
        )
        .unwrap();
        (kept, dropped, summary)
    }

    #[test]
    fn stream_matches_offline_for_any_worker_count() {
        let g = graph(5000, 4, 7);
        let p = Pruner::random(4, 3, 8, 1.0, &mut seeded(8));
        let off = prune_offline(&g, &p, PruneTarget::Ratio(0.3), DtPolicy::Zero).unwrap();
        let offline_keep: Vec<u64> = off.graph.events().iter().map(|e| e.id).collect();
        for (workers, chunk) in [(1, 4096), (3, 7), (2, 1000)] {
            let opts = StreamOptions { threshold: off.threshold, policy: DtPolicy::Zero, workers, chunk_size: chunk };
            let (kept, dropped, summary) = run_stream(&g, &p, &opts);
            assert_eq!(kept, offline_keep);
            assert_eq!(summary.n_in, 5000);
            assert_eq!(summary.n_kept + summary.n_dropped, 5000);
            assert_eq!(dropped.len(), 1500);
        }
    }

    #[test]
    fn stream_edge_cases() {
        let g = graph(200, 2, 9);
        let p = Pruner::random(2, 2, 4, 1.0, &mut seeded(1));
        let (kept, _, s) = run_stream(&g, &p, &StreamOptions::new(Threshold::drop_all()));
        assert!(kept.is_empty());
        assert_eq!(s.n_kept, 0);
        let empty = TemporalGraph::empty(2);
        let (_, _, s) = run_stream(&empty, &p, &StreamOptions::new(Threshold::keep_all()));
        assert_eq!(s.n_in, 0);

        // Malformed items are counted and skipped.
        let items: Vec<std::result::Result<StreamEvent<()>, String>> = vec![
            Ok(StreamEvent { id: 0, timestamp: 0.0, features: vec![0.1, 0.2], payload: () }),
            Err("bad line".into()),
            Ok(StreamEvent { id: 2, timestamp: 1.0, features: vec![0.1], payload: () }),
            Ok(StreamEvent { id: 3, timestamp: 2.0, features: vec![0.3, 0.2], payload: () }),
        ];
        let s = stream_prune(items, &p, &StreamOptions::new(Threshold::keep_all()), |_, _| Ok(()), |_, _| Ok(())).unwrap();
        assert_eq!((s.n_in, s.n_kept, s.n_errors), (4, 2, 2));

        let ref_max = StreamOptions { policy: DtPolicy::RefMax, ..StreamOptions::new(Threshold::keep_all()) };
        assert!(stream_prune(Vec::<std::result::Result<StreamEvent<()>, String>>::new(), &p, &ref_max, |_, _| Ok(()), |_, _| Ok(())).is_err());
    }

    #[test]
    fn dt_policy_parses() {
        assert_eq!("zero".parse::<DtPolicy>().unwrap(), DtPolicy::Zero);
        assert_eq!("ref-max".parse::<DtPolicy>().unwrap(), DtPolicy::RefMax);
        assert_eq!("ref-time:5".parse::<DtPolicy>().unwrap(), DtPolicy::RefTime(5.0));
        assert!("later".parse::<DtPolicy>().is_err());
    }
}
