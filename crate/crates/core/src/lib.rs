//! Unsupervised pruning of continuous-time dynamic graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`store`]: event storage, temporal neighbour sampling, noise injection
//!   and synthetic graph generation.
//! - [`numerics`]: dense tensors, layer primitives with hand-written
//!   gradients, Adam, finite-difference gradient checks and checkpoints.
//! - [`encoder`]: temporal node/edge embeddings and the relative time encoder.
//! - [`sampler`]: edge redundancy/relevance scores, importance logits and the
//!   binary-concrete relaxation.
//! - [`pruner`]: the graph-less pruning network, threshold calibration,
//!   offline pruning and streaming filtering.
//! - [`trainer`]: the self-supervised losses and the mini-batch training loop.

pub mod encoder;
pub mod error;
pub mod numerics;
pub mod pruner;
pub mod rng;
pub mod sampler;
pub mod store;
pub mod trainer;

pub use error::{Error, Result};
pub use store::{Event, EventId, NodeId, TemporalGraph, TemporalSubgraph};
