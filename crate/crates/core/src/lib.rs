//! Deterministic simulator for decentralized federated learning.
//!
//! Nodes of an undirected graph take turns acting as aggregators according to
//! a period-2 schedule. Each round, every scheduled aggregator collects
//! locally trained models from a set of neighboring clients, averages them
//! (optionally together with previously stored global models) and sends the
//! result back.

pub mod aggregation;
pub mod dataio;
pub mod engine;
pub mod learner;
pub mod metrics;
pub mod schedule;
pub mod seed;
pub mod topology;

pub use aggregation::{AggregationMode, Contribution};
pub use engine::{init_run, run, Engine, EngineError, RoundSemantics, SimConfig};
pub use learner::{Dataset, Hyperparams, ModelSpec, ParamVector};
pub use metrics::{MetricsRecord, MetricsTable};
pub use schedule::{Schedule, SchedulerName};
pub use topology::{Graph, NodeId};
