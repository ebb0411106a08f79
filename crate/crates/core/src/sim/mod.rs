//! Queue-based grid traffic simulator.
//!
//! A design is evaluated by decoding it into per-intersection signal plans and
//! running a fixed one-second step loop over a rows × cols grid. Vehicles enter
//! from boundary nodes, follow a Manhattan route and wait in per-movement FIFO
//! queues; green movements discharge at the saturation headway. The congestion
//! measure is the negated mean number of queued vehicles, sampled once per
//! sample interval.

mod engine;
mod network;
mod pattern;
mod phase;

pub use engine::{congestion_measure, simulate, simulate_plans, SimConfig, SimResult, SignalTiming};
pub use network::{BoundaryNode, Direction, Hop, Movement, TrafficNetwork};
pub use pattern::{
    sample_pattern, shuffle_pattern, TrafficPattern, Vehicle, MAX_RATE, MIN_RATE, TOTAL_RATE,
};
pub use phase::{CanonicalPhase, CombinationId, Phase, PhaseCombination};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("grid dimensions must be positive, got {rows}x{cols}")]
    EmptyGrid { rows: usize, cols: usize },
    #[error("invalid network timing: {0}")]
    Timing(String),
    #[error("invalid phase: {0}")]
    Phase(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("invalid traffic pattern: {0}")]
    Pattern(String),
    #[error("unknown boundary node {0}")]
    UnknownNode(usize),
    #[error("no route from boundary node {origin} to {destination}")]
    NoRoute { origin: usize, destination: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Design(#[from] crate::design::DesignError),
    #[error("pattern file: {0}")]
    Json(#[from] serde_json::Error),
}
