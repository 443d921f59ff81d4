//! Temporal neighbour queries and recursive subgraph sampling.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EventId, NodeId, TemporalGraph};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// The `S` latest prior events. Deterministic.
    #[default]
    MostRecent,
    /// `S` prior events drawn uniformly without replacement.
    Uniform,
}

/// A prior interaction of a queried node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub node: NodeId,
    /// Position of the event in [`TemporalGraph::events`].
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgraphSpec {
    /// Depth `K`.
    pub hops: usize,
    /// Per-parent fanout `S`.
    pub fanout: usize,
    pub strategy: SamplingStrategy,
}

impl Default for SubgraphSpec {
    fn default() -> Self {
        Self {
            hops: 2,
            fanout: 20,
            strategy: SamplingStrategy::MostRecent,
        }
    }
}

/// One sampled occurrence of an event inside a subgraph.
///
/// Messages flow from `neighbor` to `parent`. `src`/`dst` are the local
/// indices of the event's own endpoints (one of them is `parent`).
#[derive(Debug, Clone, PartialEq)]
pub struct SubEdge {
    pub parent: usize,
    pub neighbor: usize,
    pub src: usize,
    pub dst: usize,
    pub event: EventId,
    pub timestamp: f64,
    /// Query time of `parent` minus the event time; always positive.
    pub delta_t: f64,
    /// 1-based hop at which the edge was sampled.
    pub hop: usize,
}

/// K-hop computation graph rooted at `(root, ref_time)`.
///
/// Nodes are deduplicated by id: a node is expanded once, at the query time of
/// the event that first introduced it. The same event can appear twice when
/// both endpoints are expanded, once per parent.
#[derive(Debug, Clone)]
pub struct TemporalSubgraph {
    pub root: NodeId,
    pub ref_time: f64,
    pub feature_dim: usize,
    /// Local index -> global node id. The root is local 0.
    pub nodes: Vec<NodeId>,
    /// Query time used when expanding each local node.
    pub query_times: Vec<f64>,
    pub edges: Vec<SubEdge>,
    /// Row-major `edges.len() x feature_dim` edge features.
    pub features: Vec<f64>,
    /// Edge indices per hop, `layers[k]` holding hop `k + 1`.
    pub layers: Vec<Vec<usize>>,
    pub node_index: HashMap<NodeId, usize>,
    pub edge_index: HashMap<(EventId, usize), usize>,
}

impl TemporalSubgraph {
    fn new(root: NodeId, ref_time: f64, feature_dim: usize, hops: usize) -> Self {
        let mut node_index = HashMap::new();
        node_index.insert(root, 0);
        Self {
            root,
            ref_time,
            feature_dim,
            nodes: vec![root],
            query_times: vec![ref_time],
            edges: Vec::new(),
            features: Vec::new(),
            layers: vec![Vec::new(); hops],
            node_index,
            edge_index: HashMap::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_features(&self, e: usize) -> &[f64] {
        let d = self.feature_dim;
        &self.features[e * d..(e + 1) * d]
    }

    /// Same nodes, edges re-listed in `order` (a permutation or a subset of
    /// edge indices).
    pub fn with_edges(&self, order: &[usize]) -> Self {
        let d = self.feature_dim;
        let mut out = Self {
            root: self.root,
            ref_time: self.ref_time,
            feature_dim: d,
            nodes: self.nodes.clone(),
            query_times: self.query_times.clone(),
            edges: Vec::with_capacity(order.len()),
            features: Vec::with_capacity(order.len() * d),
            layers: vec![Vec::new(); self.layers.len()],
            node_index: self.node_index.clone(),
            edge_index: HashMap::with_capacity(order.len()),
        };
        for &e in order {
            let edge = self.edges[e].clone();
            out.push_edge(edge, self.edge_features(e));
        }
        out
    }

    /// Removes `round(drop_fraction * n_edges)` uniformly chosen edges; nodes
    /// are untouched.
    pub fn negative_view<R: Rng + ?Sized>(&self, drop_fraction: f64, rng: &mut R) -> Result<Self> {
        let dropped = drop_selection(self.n_edges(), drop_fraction, rng)?;
        let keep: Vec<usize> = (0..self.n_edges()).filter(|&e| !dropped[e]).collect();
        Ok(self.with_edges(&keep))
    }

    fn push_edge(&mut self, edge: SubEdge, features: &[f64]) {
        let idx = self.edges.len();
        self.edge_index.insert((edge.event, edge.parent), idx);
        if let Some(layer) = self.layers.get_mut(edge.hop - 1) {
            layer.push(idx);
        }
        self.features.extend_from_slice(features);
        self.edges.push(edge);
    }

    fn intern(&mut self, node: NodeId, query_time: f64) -> (usize, bool) {
        if let Some(&i) = self.node_index.get(&node) {
            return (i, false);
        }
        let i = self.nodes.len();
        self.nodes.push(node);
        self.query_times.push(query_time);
        self.node_index.insert(node, i);
        (i, true)
    }
}

/// Boolean mask with exactly `round(fraction * n)` entries set.
pub(crate) fn drop_selection<R: Rng + ?Sized>(n: usize, fraction: f64, rng: &mut R) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("drop fraction {fraction} outside [0, 1]")));
    }
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut mask = vec![false; n];
    for i in rand::seq::index::sample(rng, n, k) {
        mask[i] = true;
    }
    Ok(mask)
}

impl TemporalGraph {
    /// Up to `limit` events of `v` with timestamp strictly below `t`.
    ///
    /// Results are ordered newest first. `MostRecent` ignores `rng`.
    pub fn temporal_neighbors<R: Rng + ?Sized>(
        &self,
        v: NodeId,
        t: f64,
        limit: usize,
        strategy: SamplingStrategy,
        rng: &mut R,
    ) -> Result<Vec<Neighbor>> {
        if limit == 0 {
            return Err(Error::invalid("neighbour limit must be at least 1"));
        }
        let adj = self.adjacency(v)?;
        let prior = adj.partition_point(|&p| self.events[p as usize].timestamp < t);
        let to_neighbor = |p: u32| Neighbor {
            node: self.events[p as usize].other(v),
            position: p as usize,
        };
        let picked: Vec<Neighbor> = if prior <= limit {
            adj[..prior].iter().rev().map(|&p| to_neighbor(p)).collect()
        } else {
            match strategy {
                SamplingStrategy::MostRecent => adj[prior - limit..prior]
                    .iter()
                    .rev()
                    .map(|&p| to_neighbor(p))
                    .collect(),
                SamplingStrategy::Uniform => {
                    let mut idx = rand::seq::index::sample(rng, prior, limit).into_vec();
                    idx.sort_unstable_by(|a, b| b.cmp(a));
                    idx.into_iter().map(|i| to_neighbor(adj[i])).collect()
                }
            }
        };
        Ok(picked)
    }

    /// Breadth-wise recursive expansion around `(root, t0)`.
    ///
    /// Hop-`k` nodes are queried at the timestamp of the event that introduced
    /// them, so every sampled event precedes its parent's query time.
    pub fn sample_subgraph<R: Rng + ?Sized>(
        &self,
        spec: &SubgraphSpec,
        root: NodeId,
        t0: f64,
        rng: &mut R,
    ) -> Result<TemporalSubgraph> {
        if root as usize >= self.n_nodes {
            return Err(Error::UnknownNode(root));
        }
        let mut sub = TemporalSubgraph::new(root, t0, self.feature_dim, spec.hops);
        let mut frontier = vec![0usize];
        for hop in 1..=spec.hops {
            let mut next = Vec::new();
            for &parent in &frontier {
                let (pnode, pt) = (sub.nodes[parent], sub.query_times[parent]);
                for nb in self.temporal_neighbors(pnode, pt, spec.fanout, spec.strategy, rng)? {
                    let ev = &self.events[nb.position];
                    let (child, fresh) = sub.intern(nb.node, ev.timestamp);
                    if fresh {
                        next.push(child);
                    }
                    let (src, dst) = if ev.src == pnode { (parent, child) } else { (child, parent) };
                    let edge = SubEdge {
                        parent,
                        neighbor: child,
                        src,
                        dst,
                        event: ev.id,
                        timestamp: ev.timestamp,
                        delta_t: pt - ev.timestamp,
                        hop,
                    };
                    sub.push_edge(edge, &ev.features);
                }
            }
            frontier = next;
        }
        Ok(sub)
    }
}
