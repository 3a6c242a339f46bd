//! Round-parity scheduling policies: which clients report to which
//! aggregator on odd and even rounds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Graph, NodeId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("assignment to aggregator {0} has no clients")]
    NoClients(NodeId),
    #[error("aggregator {0} is listed among its own clients")]
    AggregatorIsClient(NodeId),
    #[error("client {client} listed twice for aggregator {aggregator}")]
    DuplicateClient { client: NodeId, aggregator: NodeId },
    #[error("{0} plan must be non-empty")]
    EmptyPlan(Parity),
    #[error("round index must be >= 1")]
    RoundZero,
    #[error("unknown scheduler `{0}` (expected A, B or C)")]
    UnknownScheduler(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Odd,
    Even,
}

impl Parity {
    pub fn of_round(t: u32) -> Self {
        if t % 2 == 1 {
            Parity::Odd
        } else {
            Parity::Even
        }
    }
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parity::Odd => "odd",
            Parity::Even => "even",
        })
    }
}

/// `{clients} -> aggregator`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    aggregator: NodeId,
    clients: Vec<NodeId>,
}

impl Assignment {
    pub fn new(aggregator: NodeId, clients: Vec<NodeId>) -> Result<Self, ScheduleError> {
        if clients.is_empty() {
            return Err(ScheduleError::NoClients(aggregator));
        }
        let mut seen = BTreeSet::new();
        for &c in &clients {
            if c == aggregator {
                return Err(ScheduleError::AggregatorIsClient(aggregator));
            }
            if !seen.insert(c) {
                return Err(ScheduleError::DuplicateClient { client: c, aggregator });
            }
        }
        Ok(Assignment { aggregator, clients })
    }

    pub fn aggregator(&self) -> NodeId {
        self.aggregator
    }

    pub fn clients(&self) -> &[NodeId] {
        &self.clients
    }

    /// Clients followed by the aggregator, which also trains and contributes.
    pub fn participants(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.clients.iter().copied().chain(std::iter::once(self.aggregator))
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let clients: Vec<String> = self.clients.iter().map(ToString::to_string).collect();
        write!(f, "{} -> {}", clients.join(","), self.aggregator)
    }
}

/// Assignments for one round, in queue (processing) order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RoundPlan {
    assignments: Vec<Assignment>,
}

impl RoundPlan {
    /// Role uniqueness across assignments is not enforced here; see
    /// [`validate`] and [`RoundPlan::role_conflicts`].
    pub fn new(assignments: Vec<Assignment>) -> Self {
        RoundPlan { assignments }
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn aggregators(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.assignments.iter().map(Assignment::aggregator)
    }

    pub fn client_count(&self) -> usize {
        self.assignments.iter().map(|a| a.clients.len()).sum()
    }

    /// Nodes appearing more than once in any role, ascending.
    pub fn role_conflicts(&self) -> Vec<NodeId> {
        let mut count: BTreeMap<NodeId, usize> = BTreeMap::new();
        for a in &self.assignments {
            for p in a.participants() {
                *count.entry(p).or_default() += 1;
            }
        }
        count.into_iter().filter(|&(_, c)| c > 1).map(|(id, _)| id).collect()
    }
}

/// Period-2 schedule: one plan for odd rounds, one for even rounds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Schedule {
    odd: RoundPlan,
    even: RoundPlan,
}

impl Schedule {
    pub fn new(odd: RoundPlan, even: RoundPlan) -> Result<Self, ScheduleError> {
        if odd.is_empty() {
            return Err(ScheduleError::EmptyPlan(Parity::Odd));
        }
        if even.is_empty() {
            return Err(ScheduleError::EmptyPlan(Parity::Even));
        }
        Ok(Schedule { odd, even })
    }

    pub fn builtin(name: SchedulerName) -> Self {
        use SchedulerName::*;
        let plan = |rows: &[(&[u32], u32)]| {
            RoundPlan::new(
                rows.iter()
                    .map(|(clients, agg)| {
                        Assignment::new(NodeId(*agg), clients.iter().copied().map(NodeId).collect())
                            .expect("builtin assignment is well formed")
                    })
                    .collect(),
            )
        };
        let (odd, even) = match name {
            A => (
                plan(&[(&[2, 3], 4), (&[6, 7], 5), (&[8, 10], 9)]),
                plan(&[(&[4, 9], 5), (&[1], 2)]),
            ),
            B => (
                plan(&[(&[2, 3], 4), (&[6], 5), (&[7, 8, 10], 9)]),
                plan(&[(&[4, 9], 5), (&[1], 2)]),
            ),
            C => (
                plan(&[(&[2, 3], 4), (&[8, 10], 9)]),
                plan(&[(&[4, 6, 7, 9], 5), (&[1], 2)]),
            ),
        };
        Schedule { odd, even }
    }

    pub fn odd_plan(&self) -> &RoundPlan {
        &self.odd
    }

    pub fn even_plan(&self) -> &RoundPlan {
        &self.even
    }

    pub fn plan(&self, parity: Parity) -> &RoundPlan {
        match parity {
            Parity::Odd => &self.odd,
            Parity::Even => &self.even,
        }
    }

    pub fn plan_for_round(&self, t: u32) -> Result<&RoundPlan, ScheduleError> {
        if t == 0 {
            return Err(ScheduleError::RoundZero);
        }
        Ok(self.plan(Parity::of_round(t)))
    }

    /// Uplink messages (one per client), plus as many downlinks when
    /// `include_downlink` is set.
    pub fn message_count(&self, t: u32, include_downlink: bool) -> Result<usize, ScheduleError> {
        let up = self.plan_for_round(t)?.client_count();
        Ok(if include_downlink { 2 * up } else { up })
    }

    /// All nodes named anywhere in the schedule.
    pub fn nodes(&self) -> BTreeSet<NodeId> {
        [&self.odd, &self.even]
            .into_iter()
            .flat_map(|p| p.assignments.iter())
            .flat_map(Assignment::participants)
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, ScheduleError> {
        let mut odd = Vec::new();
        let mut even = Vec::new();
        let mut section: Option<Parity> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |msg: String| ScheduleError::Parse { line: line_no, msg };
            let mut line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some((head, rest)) = line.split_once(':') {
                section = Some(match head.trim() {
                    "odd" => Parity::Odd,
                    "even" => Parity::Even,
                    other => return Err(err(format!("unknown section `{other}`"))),
                });
                line = rest.trim();
                if line.is_empty() {
                    continue;
                }
            }
            let Some(parity) = section else {
                return Err(err("assignment before any `odd:` or `even:` section".into()));
            };
            let assignment = parse_assignment(line).map_err(err)?;
            match parity {
                Parity::Odd => odd.push(assignment),
                Parity::Even => even.push(assignment),
            }
        }
        let schedule = Schedule::new(RoundPlan::new(odd), RoundPlan::new(even))?;
        for parity in [Parity::Odd, Parity::Even] {
            if let Some(&id) = schedule.plan(parity).role_conflicts().first() {
                return Err(ScheduleError::Parse {
                    line: 0,
                    msg: format!("node {id} has two roles in {parity} round plan"),
                });
            }
        }
        Ok(schedule)
    }
}

fn parse_assignment(line: &str) -> Result<Assignment, String> {
    let (lhs, rhs) = line
        .split_once("->")
        .ok_or_else(|| format!("expected `<clients> -> <aggregator>`, found `{line}`"))?;
    let id = |s: &str| {
        s.trim()
            .parse::<NodeId>()
            .map_err(|_| format!("invalid node id `{}`", s.trim()))
    };
    let aggregator = id(rhs)?;
    let clients = lhs
        .trim()
        .trim_start_matches('{')
        .trim_end_matches('}')
        .split(',')
        .map(id)
        .collect::<Result<Vec<_>, _>>()?;
    Assignment::new(aggregator, clients).map_err(|e| e.to_string())
}

impl fmt::Display for Schedule {
    /// Serializes to the format accepted by [`Schedule::parse`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for parity in [Parity::Odd, Parity::Even] {
            writeln!(f, "{parity}:")?;
            for a in self.plan(parity).assignments() {
                writeln!(f, "{a}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for Schedule {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Schedule::parse(s)
    }
}

/// The three built-in policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchedulerName {
    A,
    B,
    C,
}

impl SchedulerName {
    pub const ALL: [SchedulerName; 3] = [SchedulerName::A, SchedulerName::B, SchedulerName::C];
}

impl FromStr for SchedulerName {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(SchedulerName::A),
            "B" | "b" => Ok(SchedulerName::B),
            "C" | "c" => Ok(SchedulerName::C),
            other => Err(ScheduleError::UnknownScheduler(other.to_string())),
        }
    }
}

impl fmt::Display for SchedulerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    OutOfRange { node: NodeId, n: usize },
    NotAdjacent { client: NodeId, aggregator: NodeId, parity: Parity },
    TwoRoles { node: NodeId, parity: Parity },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfRange { node, n } => write!(f, "node {node} out of range 1..={n}"),
            Violation::NotAdjacent { client, aggregator, parity } => {
                write!(f, "client {client} not adjacent to aggregator {aggregator} ({parity} rounds)")
            }
            Violation::TwoRoles { node, parity } => {
                write!(f, "node {node} has two roles in round plan ({parity} rounds)")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a schedule against a graph. Violations are collected, not raised.
pub fn validate(schedule: &Schedule, graph: &Graph) -> ValidationReport {
    let mut violations = Vec::new();
    let out_of_range: BTreeSet<NodeId> =
        schedule.nodes().into_iter().filter(|&id| !graph.contains(id)).collect();
    violations.extend(
        out_of_range
            .iter()
            .map(|&node| Violation::OutOfRange { node, n: graph.node_count() }),
    );
    for parity in [Parity::Odd, Parity::Even] {
        let plan = schedule.plan(parity);
        for a in plan.assignments() {
            for &client in a.clients() {
                if out_of_range.contains(&client) || out_of_range.contains(&a.aggregator()) {
                    continue;
                }
                if !graph.are_adjacent(client, a.aggregator()) {
                    violations.push(Violation::NotAdjacent { client, aggregator: a.aggregator(), parity });
                }
            }
        }
        violations.extend(plan.role_conflicts().into_iter().map(|node| Violation::TwoRoles { node, parity }));
    }
    ValidationReport { violations }
}

/// True iff the client-aggregator links used over one odd+even pair of
/// rounds form a connected graph spanning every node of `graph`.
pub fn pair_connectivity(schedule: &Schedule, graph: &Graph) -> bool {
    let links = [schedule.odd_plan(), schedule.even_plan()]
        .into_iter()
        .flat_map(|p| p.assignments().iter())
        .flat_map(|a| a.clients().iter().map(move |c| (c.get(), a.aggregator().get())));
    match Graph::new(graph.node_count(), links) {
        Ok(g) => g.is_connected(),
        Err(_) => false,
    }
}
