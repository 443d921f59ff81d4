use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Event, EventId, TemporalGraph};
use crate::{Error, Result};

/// Ids of the events added by [`inject_noise`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseMask {
    pub ratio: f64,
    pub injected_event_ids: BTreeSet<EventId>,
}

impl NoiseMask {
    pub fn contains(&self, id: EventId) -> bool {
        self.injected_event_ids.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.injected_event_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.injected_event_ids.is_empty()
    }
}

/// Adds `round(r * m)` random events to `g`.
///
/// Endpoints are drawn uniformly from the node set (distinct when there is
/// more than one node), features i.i.d. standard normal and timestamps
/// uniform in `[t_min, t_max]`. New ids continue after the largest existing id.
pub fn inject_noise<R: Rng + ?Sized>(g: &TemporalGraph, r: f64, rng: &mut R) -> Result<(TemporalGraph, NoiseMask)> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!("noise ratio must be >= 0, got {r}")));
    }
    let count = (r * g.n_events() as f64).round() as usize;
    let mut mask = NoiseMask { ratio: r, injected_event_ids: BTreeSet::new() };
    if count == 0 {
        return Ok((g.clone(), mask));
    }
    let n = g.n_nodes() as u32;
    let (t_min, t_max) = g.time_range().expect("count > 0 implies events");
    let mut next_id = g.max_event_id().map_or(0, |m| m + 1);
    let mut events = g.events().to_vec();
    for _ in 0..count {
        let src = rng.random_range(0..n);
        let dst = if n > 1 {
            // Uniform over the other n - 1 nodes.
            let d = rng.random_range(0..n - 1);
            if d >= src {
                d + 1
            } else {
                d
            }
        } else {
            src
        };
        let timestamp = if t_max > t_min { rng.random_range(t_min..=t_max) } else { t_min };
        let features = (0..g.feature_dim()).map(|_| rng.sample(StandardNormal)).collect();
        events.push(Event { id: next_id, src, dst, timestamp, features, label: None });
        mask.injected_event_ids.insert(next_id);
        next_id += 1;
    }
    let noisy = TemporalGraph::from_events(g.n_nodes(), g.feature_dim(), events)?;
    Ok((noisy, mask))
}
