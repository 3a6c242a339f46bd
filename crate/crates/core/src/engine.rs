//! Round-by-round simulation of scheduled decentralized federated averaging.
//!
//! Each round takes the plan for its parity and processes the assignments in
//! queue order. For one assignment `{clients} -> aggregator`:
//!
//! 1. every participant (clients and the aggregator) starts from its stored
//!    global model if it has one, otherwise from its current local parameters;
//! 2. every participant trains locally on its own shard;
//! 3. contributions are collected per [`AggregationMode`] and averaged into the
//!    aggregator's new global model;
//! 4. the aggregator and all its clients store that model;
//! 5. the model is evaluated on the shared evaluation set.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{
    collect_contributions, weighted_average, AggregationError, AggregationMode, Origin, ParticipantView,
};
use crate::learner::{evaluate, init_params, local_train, Dataset, Hyperparams, LearnerError, ModelSpec, ParamVector};
use crate::metrics::{MetricsRecord, MetricsTable};
use crate::schedule::{validate, Assignment, Schedule, ScheduleError};
use crate::seed;
use crate::topology::{Graph, NodeId};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error("node {0} is not part of the simulation")]
    UnknownNode(NodeId),
}

/// Whether assignments later in a round see the effects of earlier ones.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundSemantics {
    #[default]
    Sequential,
    /// Every assignment reads the state as it was before the round.
    Snapshot,
}

impl fmt::Display for RoundSemantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoundSemantics::Sequential => "sequential",
            RoundSemantics::Snapshot => "snapshot",
        })
    }
}

impl FromStr for RoundSemantics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(RoundSemantics::Sequential),
            "snapshot" => Ok(RoundSemantics::Snapshot),
            other => Err(format!("unknown round semantics `{other}` (expected sequential or snapshot)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub graph: Graph,
    pub schedule: Schedule,
    pub rounds: u32,
    pub model: ModelSpec,
    /// `hyper.seed` is ignored; each node and round gets a seed derived from
    /// `master_seed`.
    pub hyper: Hyperparams,
    pub mode: AggregationMode,
    pub semantics: RoundSemantics,
    /// One shard per node, indexed by `NodeId::index`.
    pub node_data: Vec<Arc<Dataset>>,
    pub eval_data: Arc<Dataset>,
    pub master_seed: u64,
    /// All nodes start from the same initial parameters.
    pub shared_init: bool,
}

impl SimConfig {
    pub fn check(&self) -> Result<(), EngineError> {
        let report = validate(&self.schedule, &self.graph);
        if !report.is_valid() {
            let msgs: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
            return Err(EngineError::Config(format!("schedule does not fit graph: {}", msgs.join("; "))));
        }
        if self.rounds == 0 {
            return Err(EngineError::Config("rounds must be >= 1".into()));
        }
        if self.node_data.len() != self.graph.node_count() {
            return Err(EngineError::Config(format!(
                "{} data shards for {} nodes",
                self.node_data.len(),
                self.graph.node_count()
            )));
        }
        for (i, d) in self.node_data.iter().chain(std::iter::once(&self.eval_data)).enumerate() {
            let what = if i < self.node_data.len() { format!("shard of node {}", i + 1) } else { "evaluation set".into() };
            if d.is_empty() {
                return Err(EngineError::Config(format!("{what} is empty")));
            }
            if d.dims() != self.model.input_dim() {
                return Err(EngineError::Config(format!(
                    "{what} has {} features but the model expects {}",
                    d.dims(),
                    self.model.input_dim()
                )));
            }
            if d.classes() > self.model.classes() {
                return Err(EngineError::Config(format!(
                    "{what} has {} classes but the model outputs {}",
                    d.classes(),
                    self.model.classes()
                )));
            }
        }
        if self.hyper.batch_size == 0 {
            return Err(EngineError::Config("batch_size must be >= 1".into()));
        }
        if !(self.hyper.learning_rate >= 0.0 && self.hyper.learning_rate.is_finite()) {
            return Err(EngineError::Config("learning_rate must be a finite value >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub local_params: Option<ParamVector>,
    /// Most recent global model this node produced or received.
    pub stored_global: Option<ParamVector>,
    pub last_global_round: Option<u32>,
    pub dataset: Arc<Dataset>,
}

impl ParticipantView for NodeState {
    fn sample_count(&self) -> usize {
        self.dataset.len()
    }

    fn stored_global(&self) -> Option<&ParamVector> {
        self.stored_global.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTrace {
    pub has_stored_global: bool,
    pub last_global_round: Option<u32>,
}

struct Aggregated {
    round: u32,
    aggregator: NodeId,
    participants: Vec<NodeId>,
    fresh: BTreeMap<NodeId, ParamVector>,
    origins: Vec<Origin>,
    global: ParamVector,
    messages: u64,
}

#[derive(Debug, Clone)]
pub struct Engine {
    cfg: SimConfig,
    nodes: BTreeMap<NodeId, NodeState>,
    /// Contribution origins per aggregator in the last round that ran, sorted.
    last_origins: BTreeMap<NodeId, Vec<Origin>>,
}

/// Builds the initial engine state: every node holds its initial parameters
/// and no stored global model.
pub fn init_run(cfg: SimConfig) -> Result<Engine, EngineError> {
    cfg.check()?;
    let shared = init_params(&cfg.model, seed::init_seed(cfg.master_seed));
    let nodes = cfg
        .graph
        .nodes()
        .map(|id| {
            let local = if cfg.shared_init {
                shared.clone()
            } else {
                init_params(&cfg.model, seed::node_init_seed(cfg.master_seed, id.get()))
            };
            let state = NodeState {
                id,
                local_params: Some(local),
                stored_global: None,
                last_global_round: None,
                dataset: Arc::clone(&cfg.node_data[id.index()]),
            };
            (id, state)
        })
        .collect();
    Ok(Engine { cfg, nodes, last_origins: BTreeMap::new() })
}

impl Engine {
    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, NodeState> {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeState> {
        self.nodes.get(&id)
    }

    /// Origins of the contributions `aggregator` averaged in the last round.
    pub fn last_contributions(&self, aggregator: NodeId) -> Option<&[Origin]> {
        self.last_origins.get(&aggregator).map(Vec::as_slice)
    }

    pub fn trace_models(&self) -> BTreeMap<NodeId, ModelTrace> {
        self.nodes
            .iter()
            .map(|(&id, s)| {
                (id, ModelTrace { has_stored_global: s.stored_global.is_some(), last_global_round: s.last_global_round })
            })
            .collect()
    }

    pub fn run_round(&mut self, t: u32) -> Result<Vec<MetricsRecord>, EngineError> {
        let plan = self.cfg.schedule.plan_for_round(t)?.clone();
        let snapshot = match self.cfg.semantics {
            RoundSemantics::Snapshot => Some(self.nodes.clone()),
            RoundSemantics::Sequential => None,
        };
        self.last_origins.clear();
        let mut records = Vec::with_capacity(plan.assignments().len());
        let mut pending = Vec::new();
        for assignment in plan.assignments() {
            let view = snapshot.as_ref().unwrap_or(&self.nodes);
            let done = aggregate(&self.cfg, view, assignment, t)?;
            let eval = evaluate(&done.global, &self.cfg.eval_data)?;
            records.push(MetricsRecord {
                round: t,
                aggregator: done.aggregator,
                loss: eval.loss,
                accuracy: eval.accuracy,
                messages: done.messages,
                participants: done.participants.clone(),
            });
            match self.cfg.semantics {
                RoundSemantics::Sequential => self.apply(done)?,
                RoundSemantics::Snapshot => pending.push(done),
            }
        }
        for done in pending {
            self.apply(done)?;
        }
        Ok(records)
    }

    fn apply(&mut self, done: Aggregated) -> Result<(), EngineError> {
        let Aggregated { round, aggregator, participants, mut fresh, origins, global, .. } = done;
        for id in participants {
            let node = self.nodes.get_mut(&id).ok_or(EngineError::UnknownNode(id))?;
            node.local_params = fresh.remove(&id);
            node.stored_global = Some(global.clone());
            node.last_global_round = Some(round);
        }
        self.last_origins.insert(aggregator, origins);
        Ok(())
    }
}

fn aggregate(
    cfg: &SimConfig,
    nodes: &BTreeMap<NodeId, NodeState>,
    assignment: &Assignment,
    t: u32,
) -> Result<Aggregated, EngineError> {
    let participants: Vec<NodeId> = assignment.participants().collect();
    let mut fresh = BTreeMap::new();
    for &id in &participants {
        let node = nodes.get(&id).ok_or(EngineError::UnknownNode(id))?;
        let start = node
            .stored_global
            .as_ref()
            .or(node.local_params.as_ref())
            .ok_or_else(|| EngineError::Config(format!("node {id} has no parameters")))?;
        let h = Hyperparams { seed: seed::training_seed(cfg.master_seed, id.get(), t), ..cfg.hyper };
        fresh.insert(id, local_train(start, &node.dataset, &h)?);
    }
    let contributions = collect_contributions(nodes, assignment, &fresh, cfg.mode)?;
    let global = weighted_average(&contributions)?;
    Ok(Aggregated {
        round: t,
        aggregator: assignment.aggregator(),
        participants,
        fresh,
        origins: {
            let mut o: Vec<Origin> = contributions.iter().map(|c| c.origin).collect();
            o.sort();
            o
        },
        global,
        messages: 2 * assignment.clients().len() as u64,
    })
}

/// Runs rounds `1..=cfg.rounds` and returns every record in order.
pub fn run(cfg: SimConfig) -> Result<MetricsTable, EngineError> {
    run_with(cfg, |_, _| {})
}

/// Like [`run`], calling `on_round` after each round with its records.
pub fn run_with<F>(cfg: SimConfig, mut on_round: F) -> Result<MetricsTable, EngineError>
where
    F: FnMut(u32, &[MetricsRecord]),
{
    let rounds = cfg.rounds;
    let mut engine = init_run(cfg)?;
    let mut table = MetricsTable::default();
    for t in 1..=rounds {
        let records = engine.run_round(t)?;
        on_round(t, &records);
        table.records.extend(records);
    }
    Ok(table)
}
