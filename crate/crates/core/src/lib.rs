//! Offline meta black-box optimization of traffic-light designs.
//!
//! The crate is organised around the three stages of the pipeline:
//!
//! - [`sim`] and [`design`] define the black-box objective: a design vector is
//!   decoded into signal plans and evaluated on a queue-based grid simulator
//!   under a randomly generated traffic pattern.
//! - [`dataset`] collects an offline meta dataset over many traffic patterns and
//!   samples context/target splits from it.
//! - [`anp`] meta-trains an attentive neural process on that dataset, and
//!   [`bo`] uses it as the surrogate of a Bayesian optimization loop on an
//!   unseen pattern, next to random-search and GP-UCB baselines.
//!
//! Data-parallel loops (collection, batch gradients, candidate scoring) go
//! through [`par`], which uses rayon when the `parallel` feature is enabled and
//! plain iterators otherwise. Results never depend on the degree of
//! parallelism.

pub mod anp;
pub mod bo;
pub mod dataset;
pub mod design;
pub mod io;
pub mod objective;
pub mod par;
pub mod seed;
pub mod sim;

pub use anp::{AnpModel, AnpParams, Architecture, GaussianDiag, ModelSpec, TrainConfig};
pub use bo::{AcquisitionConfig, AcquisitionKind, BoConfig, BoTrace, Surrogate};
pub use dataset::{ContextTargetSplit, MetaDataset, Points, TaskRecord};
pub use design::{DecodedSchedule, Design, DesignKind, DesignSpace};
pub use objective::{TrafficTask, TrafficTasks};
pub use sim::{SimConfig, SimResult, TrafficNetwork, TrafficPattern};
