//! Planted-community event generator.
//!
//! Nodes are split round-robin into `n_communities` blocks, each with a
//! Gaussian feature centroid. With probability `intra_prob` an event joins two
//! members of one block and carries that block's centroid plus isotropic
//! jitter; otherwise it joins two blocks and carries standard normal features,
//! uncorrelated with either endpoint.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Event, NodeId, TemporalGraph};
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    pub n_events: usize,
    pub n_communities: usize,
    pub intra_prob: f64,
    pub feature_dim: usize,
    pub time_span: f64,
    pub seed: u64,
    /// Norm scale of community centroids.
    #[serde(default = "default_centroid_scale")]
    pub centroid_scale: f64,
    /// Standard deviation of the jitter around a centroid.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Attach a binary label (`community of src` is odd) to every event.
    #[serde(default)]
    pub with_labels: bool,
}

fn default_centroid_scale() -> f64 {
    1.5
}

fn default_jitter() -> f64 {
    0.5
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_nodes: 2000,
            n_events: 20_000,
            n_communities: 10,
            intra_prob: 0.9,
            feature_dim: 16,
            time_span: 10_000.0,
            seed: 0,
            centroid_scale: default_centroid_scale(),
            jitter: default_jitter(),
            with_labels: false,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 || self.n_events == 0 || self.n_communities == 0 {
            return Err(Error::invalid("n_nodes, n_events and n_communities must be >= 1"));
        }
        if self.n_communities > self.n_nodes {
            return Err(Error::invalid("more communities than nodes"));
        }
        if !(0.0..=1.0).contains(&self.intra_prob) {
            return Err(Error::invalid(format!("intra_prob {} outside [0, 1]", self.intra_prob)));
        }
        if !(self.time_span.is_finite() && self.time_span > 0.0) {
            return Err(Error::invalid("time_span must be positive"));
        }
        if !(self.centroid_scale.is_finite() && self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::invalid("centroid_scale and jitter must be finite, jitter >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticGraph {
    pub graph: TemporalGraph,
    /// Community of every node.
    pub communities: Vec<usize>,
    /// Row-major `n_communities x feature_dim`.
    pub centroids: Vec<f64>,
}

impl SyntheticGraph {
    pub fn is_intra(&self, e: &Event) -> bool {
        self.communities[e.src as usize] == self.communities[e.dst as usize]
    }

    pub fn intra_fraction(&self) -> f64 {
        let g = &self.graph;
        let intra = g.events().iter().filter(|e| self.is_intra(e)).count();
        intra as f64 / g.n_events().max(1) as f64
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticGraph> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let (n, c, d) = (spec.n_nodes, spec.n_communities, spec.feature_dim);
    let communities: Vec<usize> = (0..n).map(|i| i % c).collect();
    let members: Vec<Vec<NodeId>> = (0..c)
        .map(|k| (k..n).step_by(c).map(|i| i as NodeId).collect())
        .collect();
    let normal = StandardNormal;
    let centroids: Vec<f64> = (0..c * d)
        .map(|_| spec.centroid_scale * Distribution::<f64>::sample(&normal, &mut rng))
        .collect();

    let pick_other = |rng: &mut rand_chacha::ChaCha8Rng, pool: &[NodeId], not: NodeId| -> NodeId {
        if pool.len() == 1 {
            return pool[0];
        }
        loop {
            let v = pool[rng.random_range(0..pool.len())];
            if v != not {
                return v;
            }
        }
    };

    let mut events = Vec::with_capacity(spec.n_events);
    for id in 0..spec.n_events {
        let src = rng.random_range(0..n) as NodeId;
        let home = communities[src as usize];
        let intra = c == 1 || rng.random_bool(spec.intra_prob);
        let (dst, features) = if intra {
            let dst = pick_other(&mut rng, &members[home], src);
            let f = (0..d)
                .map(|j| centroids[home * d + j] + spec.jitter * Distribution::<f64>::sample(&normal, &mut rng))
                .collect();
            (dst, f)
        } else {
            let shift = rng.random_range(1..c);
            let other = (home + shift) % c;
            let dst = members[other][rng.random_range(0..members[other].len())];
            let f = (0..d).map(|_| Distribution::<f64>::sample(&normal, &mut rng)).collect();
            (dst, f)
        };
        let timestamp = rng.random_range(0.0..spec.time_span);
        let label = spec.with_labels.then_some(home % 2 == 1);
        events.push(Event { id: id as u64, src, dst, timestamp, features, label });
    }
    let graph = TemporalGraph::from_events(n, d, events)?;
    Ok(SyntheticGraph { graph, communities, centroids })
}
