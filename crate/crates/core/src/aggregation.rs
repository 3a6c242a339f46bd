//! Combining parameter contributions into a new global model.
//!
//! Two rules are supported:
//!
//! * [`AggregationMode::Fedavg`]: every participant contributes its freshly
//!   trained parameters, weighted by its local sample count.
//! * [`AggregationMode::Memory`]: every participant contributes its fresh
//!   parameters and, if it holds one, the global model it stored in an earlier
//!   round. All models count equally.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::ParamVector;
use crate::schedule::Assignment;
use crate::topology::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("no contributions to average")]
    Empty,
    #[error("contributions belong to different model specs")]
    ShapeMismatch,
    #[error("contribution from node {0} has non-positive weight {1}")]
    BadWeight(NodeId, f64),
    #[error("participant {0} has no fresh parameters for this round")]
    MissingFresh(NodeId),
    #[error("participant {0} has no node state")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    #[default]
    Memory,
    Fedavg,
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationMode::Memory => "memory",
            AggregationMode::Fedavg => "fedavg",
        })
    }
}

impl FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "memory" => Ok(AggregationMode::Memory),
            "fedavg" => Ok(AggregationMode::Fedavg),
            other => Err(format!("unknown aggregation mode `{other}` (expected memory or fedavg)")),
        }
    }
}

/// Fresh parameters sort before stored globals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginKind {
    Fresh,
    StoredGlobal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub kind: OriginKind,
    pub source: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub params: ParamVector,
    pub weight: f64,
    pub origin: Origin,
}

impl Contribution {
    pub fn fresh(source: NodeId, params: ParamVector, weight: f64) -> Self {
        Contribution { params, weight, origin: Origin { kind: OriginKind::Fresh, source } }
    }

    pub fn stored_global(source: NodeId, params: ParamVector) -> Self {
        Contribution { params, weight: 1.0, origin: Origin { kind: OriginKind::StoredGlobal, source } }
    }
}

/// Canonical reduction order: origin, then weight, then parameter values.
/// The trailing keys only matter when two contributions share an origin.
fn canonical_order(a: &Contribution, b: &Contribution) -> Ordering {
    a.origin
        .cmp(&b.origin)
        .then_with(|| a.weight.total_cmp(&b.weight))
        .then_with(|| {
            a.params
                .values()
                .iter()
                .zip(b.params.values())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// `Σ (w_i / Σ w) · p_i`, reduced in canonical order so the result does not
/// depend on the order of `contribs`.
///
/// The sum is accumulated as a running weighted mean, `m += (w_k / W_k)(p_k - m)`,
/// which reproduces a vector exactly when every input equals it.
pub fn weighted_average(contribs: &[Contribution]) -> Result<ParamVector, AggregationError> {
    let first = contribs.first().ok_or(AggregationError::Empty)?;
    let spec = first.params.spec();
    for c in contribs {
        if c.params.spec() != spec {
            return Err(AggregationError::ShapeMismatch);
        }
        if !(c.weight > 0.0 && c.weight.is_finite()) {
            return Err(AggregationError::BadWeight(c.origin.source, c.weight));
        }
    }
    let mut ordered: Vec<&Contribution> = contribs.iter().collect();
    ordered.sort_by(|a, b| canonical_order(a, b));

    let mut mean = ordered[0].params.values().to_vec();
    let mut total = ordered[0].weight;
    for c in &ordered[1..] {
        total += c.weight;
        let frac = c.weight / total;
        for (m, &p) in mean.iter_mut().zip(c.params.values()) {
            *m += frac * (p - *m);
        }
    }
    Ok(ParamVector::new(spec.clone(), mean).expect("convex combination of finite vectors"))
}

/// What [`collect_contributions`] needs to know about a participant.
pub trait ParticipantView {
    /// Local sample count `d_i`.
    fn sample_count(&self) -> usize;
    /// Global model stored from an earlier aggregation, if any.
    fn stored_global(&self) -> Option<&ParamVector>;
}

/// Gathers the contributions for one assignment. Participants are the
/// assignment's clients plus its aggregator; `fresh` holds the parameters each
/// of them trained this round.
pub fn collect_contributions<S: ParticipantView>(
    states: &BTreeMap<NodeId, S>,
    assignment: &Assignment,
    fresh: &BTreeMap<NodeId, ParamVector>,
    mode: AggregationMode,
) -> Result<Vec<Contribution>, AggregationError> {
    let mut out = Vec::new();
    for id in assignment.participants() {
        let state = states.get(&id).ok_or(AggregationError::UnknownNode(id))?;
        let params = fresh.get(&id).ok_or(AggregationError::MissingFresh(id))?.clone();
        match mode {
            AggregationMode::Fedavg => out.push(Contribution::fresh(id, params, state.sample_count() as f64)),
            AggregationMode::Memory => {
                out.push(Contribution::fresh(id, params, 1.0));
                if let Some(global) = state.stored_global() {
                    out.push(Contribution::stored_global(id, global.clone()));
                }
            }
        }
    }
    Ok(out)
}
