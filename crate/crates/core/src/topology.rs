//! Undirected communication graph between learning nodes.
//!
//! Node ids are 1-based everywhere they cross the public API, so graphs and
//! schedules read exactly like the node labels used in experiment tables.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 1-based node label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn get(self) -> u32 {
        self.0
    }

    /// Zero-based index for internal storage.
    pub fn index(self) -> usize {
        (self.0 as usize).wrapping_sub(1)
    }

    pub fn from_index(index: usize) -> Self {
        NodeId(index as u32 + 1)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for NodeId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim().parse().map(NodeId)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge ({0}, {1}): endpoint out of range 1..={2}")]
    EndpointOutOfRange(u32, u32, usize),
    #[error("edge ({0}, {0}): self-loop")]
    SelfLoop(u32),
    #[error("node {0} out of range 1..={1}")]
    NodeOutOfRange(NodeId, usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Undirected simple graph over nodes `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(NodeId, NodeId)>,
    adjacency: Vec<BTreeSet<NodeId>>,
}

impl Graph {
    /// Builds a graph, deduplicating edges and storing each as `(min, max)`.
    pub fn new<I>(n: usize, edges: I) -> Result<Self, TopologyError>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        let mut set = BTreeSet::new();
        let mut adjacency = vec![BTreeSet::new(); n];
        for (i, j) in edges {
            let in_range = |v: u32| v >= 1 && (v as usize) <= n;
            if !in_range(i) || !in_range(j) {
                return Err(TopologyError::EndpointOutOfRange(i, j, n));
            }
            if i == j {
                return Err(TopologyError::SelfLoop(i));
            }
            let (a, b) = (NodeId(i.min(j)), NodeId(i.max(j)));
            if set.insert((a, b)) {
                adjacency[a.index()].insert(b);
                adjacency[b.index()].insert(a);
            }
        }
        Ok(Graph { n, edges: set, adjacency })
    }

    /// The ten-node topology used in the reference experiments.
    ///
    /// Only edges exercised by at least one of the built-in schedulers are
    /// known, so this is the minimal edge set those schedulers require.
    pub fn reference() -> Self {
        Graph::new(
            10,
            [(1, 2), (2, 4), (3, 4), (4, 5), (5, 6), (5, 7), (5, 9), (7, 9), (8, 9), (9, 10)],
        )
        .expect("reference graph is well formed")
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (1..=self.n as u32).map(NodeId)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 >= 1 && id.index() < self.n
    }

    pub fn neighbors(&self, id: NodeId) -> Result<&BTreeSet<NodeId>, TopologyError> {
        if !self.contains(id) {
            return Err(TopologyError::NodeOutOfRange(id, self.n));
        }
        Ok(&self.adjacency[id.index()])
    }

    pub fn are_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.contains(a) && self.adjacency[a.index()].contains(&b)
    }

    /// True iff every node is reachable from node 1.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for v in &self.adjacency[u] {
                let v = v.index();
                if !seen[v] {
                    seen[v] = true;
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        reached == self.n
    }

    /// Parses the plain-text graph format:
    ///
    /// ```text
    /// # comment
    /// n 10
    /// e 1 2
    /// ```
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut n = None;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |msg: String| TopologyError::Parse { line: line_no, msg };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let number = |s: &str| {
                s.parse::<u32>()
                    .map_err(|_| err(format!("expected a non-negative integer, found `{s}`")))
            };
            match fields.as_slice() {
                ["n", count] => {
                    if n.is_some() {
                        return Err(err("duplicate node count line".into()));
                    }
                    n = Some(number(count)? as usize);
                }
                ["e", i, j] => {
                    let Some(count) = n else {
                        return Err(err("edge before `n <count>` line".into()));
                    };
                    let (i, j) = (number(i)?, number(j)?);
                    // Validate eagerly so the diagnostic carries the line number.
                    Graph::new(count, [(i, j)]).map_err(|e| err(e.to_string()))?;
                    edges.push((i, j));
                }
                _ => return Err(err(format!("malformed line `{line}`"))),
            }
        }
        let n = n.ok_or(TopologyError::Parse {
            line: text.lines().count().max(1),
            msg: "missing `n <count>` line".into(),
        })?;
        Graph::new(n, edges)
    }
}

impl fmt::Display for Graph {
    /// Serializes to the format accepted by [`Graph::parse`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n {}", self.n)?;
        for (a, b) in &self.edges {
            writeln!(f, "e {a} {b}")?;
        }
        Ok(())
    }
}

impl FromStr for Graph {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Graph::parse(s)
    }
}
