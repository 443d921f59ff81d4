//! Continuous-time dynamic graph storage.
//!
//! A [`TemporalGraph`] is an immutable, chronologically ordered multigraph
//! built once from an event stream. Each node keeps the positions of its
//! incident events in time order, so "events of `v` strictly before `t`" is a
//! binary search away.

mod io;
mod noise;
pub(crate) mod sampling;
mod synthetic;

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{
    read_events, write_events, write_events_csv, write_events_jsonl, EventFormat, JsonEvent,
    NodeMap,
};
pub use noise::{inject_noise, NoiseMask};
pub use sampling::{
    Neighbor, SamplingStrategy, SubEdge, SubgraphSpec, TemporalSubgraph,
};
pub use synthetic::{generate_synthetic, SyntheticGraph, SyntheticSpec};

/// Dense node identifier.
pub type NodeId = u32;
/// Event ordinal assigned at ingestion.
pub type EventId = u64;

/// One timestamped interaction `src -> dst` with an edge feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: EventId,
    pub src: NodeId,
    pub dst: NodeId,
    pub timestamp: f64,
    pub features: Vec<f64>,
    /// Optional dynamic label of `src` at `timestamp`, used only by the proxy
    /// classifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
}

impl Event {
    /// The endpoint opposite to `v`. Self-loops return `v`.
    pub fn other(&self, v: NodeId) -> NodeId {
        if self.src == v {
            self.dst
        } else {
            self.src
        }
    }
}

/// An event as read from a file, with node ids still in their string form.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEvent {
    pub src: String,
    pub dst: String,
    pub timestamp: f64,
    pub features: Vec<f64>,
    pub label: Option<bool>,
}

/// Immutable, time-indexed multigraph.
#[derive(Debug, Clone)]
pub struct TemporalGraph {
    n_nodes: usize,
    feature_dim: usize,
    events: Vec<Event>,
    // Per node: positions into `events`, ascending. Because `events` is sorted
    // by (timestamp, id) this is also time order with id tie-break.
    adjacency: Vec<Vec<u32>>,
    positions: HashMap<EventId, u32>,
}

impl TemporalGraph {
    /// Builds a graph over nodes `0..n_nodes` from events in any order.
    ///
    /// Rejects events with the wrong feature arity, non-finite values,
    /// duplicate ids or endpoints outside the node range. Errors carry the
    /// index of the offending event in the input vector.
    pub fn from_events(n_nodes: usize, feature_dim: usize, mut events: Vec<Event>) -> Result<Self> {
        if events.len() > u32::MAX as usize {
            return Err(Error::invalid("more than 2^32 events"));
        }
        let mut positions = HashMap::with_capacity(events.len());
        for (index, ev) in events.iter().enumerate() {
            validate_event(ev, feature_dim).map_err(|reason| Error::MalformedRecord { index, reason })?;
            if ev.src as usize >= n_nodes || ev.dst as usize >= n_nodes {
                return Err(Error::MalformedRecord {
                    index,
                    reason: format!("endpoint outside node range 0..{n_nodes}"),
                });
            }
            if positions.insert(ev.id, 0).is_some() {
                return Err(Error::MalformedRecord {
                    index,
                    reason: format!("duplicate event id {}", ev.id),
                });
            }
        }
        events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.id.cmp(&b.id)));

        let mut adjacency = vec![Vec::new(); n_nodes];
        for (pos, ev) in events.iter().enumerate() {
            let pos = pos as u32;
            positions.insert(ev.id, pos);
            adjacency[ev.src as usize].push(pos);
            if ev.dst != ev.src {
                adjacency[ev.dst as usize].push(pos);
            }
        }
        Ok(Self {
            n_nodes,
            feature_dim,
            events,
            adjacency,
            positions,
        })
    }

    pub fn empty(feature_dim: usize) -> Self {
        Self {
            n_nodes: 0,
            feature_dim,
            events: Vec::new(),
            adjacency: Vec::new(),
            positions: HashMap::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn nodes(&self) -> Range<NodeId> {
        0..self.n_nodes as NodeId
    }

    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Events ordered by `(timestamp, id)`.
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event_at(&self, position: usize) -> &Event {
        &self.events[position]
    }

    pub fn position_of(&self, id: EventId) -> Option<usize> {
        self.positions.get(&id).map(|&p| p as usize)
    }

    pub fn event(&self, id: EventId) -> Option<&Event> {
        self.position_of(id).map(|p| &self.events[p])
    }

    /// Time-sorted positions of the events incident to `v`.
    pub fn adjacency(&self, v: NodeId) -> Result<&[u32]> {
        self.adjacency
            .get(v as usize)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownNode(v))
    }

    /// `(t_min, t_max)` over all events, `None` for an empty graph.
    pub fn time_range(&self) -> Option<(f64, f64)> {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => Some((a.timestamp, b.timestamp)),
            _ => None,
        }
    }

    pub fn max_event_id(&self) -> Option<EventId> {
        self.events.iter().map(|e| e.id).max()
    }

    /// Keeps the events for which `keep` returns true. The node set is unchanged.
    pub fn filter_events(&self, mut keep: impl FnMut(&Event) -> bool) -> Self {
        let kept: Vec<Event> = self.events.iter().filter(|e| keep(e)).cloned().collect();
        // Already validated and sorted; rebuilding only re-derives the indexes.
        Self::from_events(self.n_nodes, self.feature_dim, kept)
            .expect("subset of a valid graph is valid")
    }

    /// Removes `round(drop_fraction * m)` uniformly chosen events.
    pub fn negative_view<R: rand::Rng + ?Sized>(&self, drop_fraction: f64, rng: &mut R) -> Result<Self> {
        let dropped = sampling::drop_selection(self.n_events(), drop_fraction, rng)?;
        let mut i = 0;
        Ok(self.filter_events(|_| {
            let keep = !dropped[i];
            i += 1;
            keep
        }))
    }
}

fn validate_event(ev: &Event, feature_dim: usize) -> std::result::Result<(), String> {
    if ev.features.len() != feature_dim {
        return Err(format!(
            "expected {feature_dim} feature values, found {}",
            ev.features.len()
        ));
    }
    if !ev.timestamp.is_finite() {
        return Err(format!("non-finite timestamp {}", ev.timestamp));
    }
    if let Some(i) = ev.features.iter().position(|x| !x.is_finite()) {
        return Err(format!("non-finite feature f{i}"));
    }
    Ok(())
}

/// Builds a graph from records with string node ids.
///
/// Node ids are assigned densely in order of first appearance; event ids are
/// the record ordinals. Records need not be sorted.
pub fn ingest_events<I>(records: I, feature_dim: usize) -> Result<(TemporalGraph, NodeMap)>
where
    I: IntoIterator<Item = RawEvent>,
{
    let mut nodes = NodeMap::default();
    let mut events = Vec::new();
    for (index, rec) in records.into_iter().enumerate() {
        let ev = Event {
            id: index as EventId,
            src: nodes.intern(&rec.src),
            dst: nodes.intern(&rec.dst),
            timestamp: rec.timestamp,
            features: rec.features,
            label: rec.label,
        };
        validate_event(&ev, feature_dim).map_err(|reason| Error::MalformedRecord { index, reason })?;
        events.push(ev);
    }
    let graph = TemporalGraph::from_events(nodes.len(), feature_dim, events)?;
    Ok((graph, nodes))
}
