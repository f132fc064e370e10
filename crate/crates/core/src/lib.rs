//! Deterministic simulator of information-copy dissemination over ad hoc
//! networks.
//!
//! A fixed number of copies of one content item migrate among the nodes of
//! a unit-disk network, either by random walk (RWD) or by random direction
//! moves with greedy geographic forwarding (RDD). Nodes query for the item
//! with TTL-bounded flooding. Optionally, providers replicate or drop their
//! copy depending on the load they served.

pub mod adaptation;
pub mod analytics;
pub mod config;
pub mod dissemination;
pub mod engine;
pub mod geometry;
pub mod netgraph;
pub mod output;
pub mod presets;
pub mod queryapp;
pub mod rng;
pub mod world;

pub use config::{validate_scenario, ConfigError, Scenario};
pub use engine::{run, run_batch, BatchOutput, RunOutput, SimError, Simulation};
pub use geometry::{NodeId, Position};
pub use presets::{builtin_presets, find_preset, Preset};
