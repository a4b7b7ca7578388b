//! Static communication graphs.
//!
//! A [`Topology`] is an undirected connected graph over dense process ids
//! `0..n`. All-pairs hop distances and the diameter are computed once at
//! construction by BFS from every vertex.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense process identifier.
pub type ProcessId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("graph has no edges")]
    Empty,
    #[error("self-loop on process {0}")]
    SelfLoop(ProcessId),
    #[error("duplicate edge {0}-{1}")]
    DuplicateEdge(ProcessId, ProcessId),
    #[error("graph is disconnected ({0} unreachable from process 0)")]
    Disconnected(ProcessId),
    #[error("process {0} out of range (n = {1})")]
    ProcessOutOfRange(ProcessId, usize),
    #[error("radius {0} exceeds diameter {1}")]
    RadiusOutOfRange(u32, u32),
    #[error("invalid generator parameters: {0}")]
    Generator(String),
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "EdgeList", into = "EdgeList")]
pub struct Topology {
    n: usize,
    edges: Vec<(ProcessId, ProcessId)>,
    neighbors: Vec<Vec<ProcessId>>,
    /// `reverse_slot[p][i]` is the position of `p` in the neighbor list of
    /// `neighbors[p][i]`.
    reverse_slot: Vec<Vec<usize>>,
    dist: Vec<Vec<u32>>,
    diameter: u32,
}

/// Serialized form of a topology: just the edge set.
#[derive(Clone, Serialize, Deserialize)]
struct EdgeList {
    edges: Vec<(ProcessId, ProcessId)>,
}

impl TryFrom<EdgeList> for Topology {
    type Error = TopologyError;

    fn try_from(list: EdgeList) -> Result<Self, Self::Error> {
        Topology::from_edges(list.edges)
    }
}

impl From<Topology> for EdgeList {
    fn from(t: Topology) -> Self {
        EdgeList { edges: t.edges }
    }
}

impl fmt::Debug for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Topology")
            .field("n", &self.n)
            .field("edges", &self.edges)
            .field("diameter", &self.diameter)
            .finish()
    }
}

impl Topology {
    /// Builds a topology from an edge list. Ids must cover `0..n` where
    /// `n - 1` is the largest id mentioned.
    pub fn from_edges<I>(edges: I) -> Result<Self, TopologyError>
    where
        I: IntoIterator<Item = (ProcessId, ProcessId)>,
    {
        let mut seen = BTreeSet::new();
        let mut list = Vec::new();
        let mut n = 0;
        for (u, v) in edges {
            if u == v {
                return Err(TopologyError::SelfLoop(u));
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(TopologyError::DuplicateEdge(key.0, key.1));
            }
            n = n.max(u + 1).max(v + 1);
            list.push(key);
        }
        if list.is_empty() {
            return Err(TopologyError::Empty);
        }

        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &list {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for adj in &mut neighbors {
            adj.sort_unstable();
        }

        let mut dist = Vec::with_capacity(n);
        for src in 0..n {
            let row = bfs(&neighbors, src);
            if let Some(q) = row.iter().position(|d| d.is_none()) {
                return Err(TopologyError::Disconnected(q));
            }
            dist.push(row.into_iter().map(|d| d.unwrap()).collect::<Vec<_>>());
        }
        let diameter = dist.iter().flatten().copied().max().unwrap_or(0);

        let reverse_slot = (0..n)
            .map(|p| {
                neighbors[p]
                    .iter()
                    .map(|&q| neighbors[q].binary_search(&p).expect("symmetric adjacency"))
                    .collect()
            })
            .collect();

        Ok(Topology {
            n,
            edges: list,
            neighbors,
            reverse_slot,
            dist,
            diameter,
        })
    }

    /// Parses the edge-list text format: one `u v` pair per line, blank
    /// lines and `#` comments ignored.
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |reason: &str| TopologyError::Parse {
                line: idx + 1,
                reason: reason.to_string(),
            };
            let mut fields = line.split_whitespace();
            let u = fields.next().ok_or_else(|| parse_err("missing endpoint"))?;
            let v = fields.next().ok_or_else(|| parse_err("expected two endpoints"))?;
            if fields.next().is_some() {
                return Err(parse_err("trailing tokens"));
            }
            let u: ProcessId = u.parse().map_err(|_| parse_err("endpoint is not a non-negative integer"))?;
            let v: ProcessId = v.parse().map_err(|_| parse_err("endpoint is not a non-negative integer"))?;
            edges.push((u, v));
        }
        Self::from_edges(edges)
    }

    /// Renders the topology in the edge-list text format.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for &(u, v) in &self.edges {
            out.push_str(&format!("{u} {v}\n"));
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(ProcessId, ProcessId)] {
        &self.edges
    }

    pub fn neighbors(&self, p: ProcessId) -> &[ProcessId] {
        &self.neighbors[p]
    }

    pub fn degree(&self, p: ProcessId) -> usize {
        self.neighbors[p].len()
    }

    /// Slot of `q` in `p`'s neighbor list, if they are adjacent.
    pub fn slot_of(&self, p: ProcessId, q: ProcessId) -> Option<usize> {
        self.neighbors[p].binary_search(&q).ok()
    }

    /// Position of `p` in the neighbor list of its `slot`-th neighbor.
    pub fn reverse_slot(&self, p: ProcessId, slot: usize) -> usize {
        self.reverse_slot[p][slot]
    }

    pub fn is_edge(&self, p: ProcessId, q: ProcessId) -> bool {
        self.slot_of(p, q).is_some()
    }

    pub fn dist(&self, p: ProcessId, q: ProcessId) -> u32 {
        self.dist[p][q]
    }

    pub fn diameter(&self) -> u32 {
        self.diameter
    }

    /// `{q | dist(p, q) <= d}` in ascending id order.
    pub fn ball(&self, p: ProcessId, d: u32) -> Result<Vec<ProcessId>, TopologyError> {
        if p >= self.n {
            return Err(TopologyError::ProcessOutOfRange(p, self.n));
        }
        if d > self.diameter {
            return Err(TopologyError::RadiusOutOfRange(d, self.diameter));
        }
        Ok((0..self.n).filter(|&q| self.dist[p][q] <= d).collect())
    }

    /// Whether the subgraph induced by `members` is connected. The empty
    /// set is not.
    pub fn induces_connected(&self, members: &[bool]) -> bool {
        let Some(start) = members.iter().position(|&m| m) else {
            return false;
        };
        let mut seen = vec![false; self.n];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            for &q in &self.neighbors[p] {
                if members[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        members.iter().zip(&seen).all(|(&m, &s)| !m || s)
    }

    /// Hop distance between `p` and `q` using only vertices in `members`.
    pub fn restricted_dist(&self, p: ProcessId, q: ProcessId, members: &[bool]) -> Option<u32> {
        if !members[p] || !members[q] {
            return None;
        }
        let mut dist = vec![u32::MAX; self.n];
        dist[p] = 0;
        let mut queue = VecDeque::from([p]);
        while let Some(u) = queue.pop_front() {
            if u == q {
                return Some(dist[u]);
            }
            for &v in &self.neighbors[u] {
                if members[v] && dist[v] == u32::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        None
    }

    pub fn path(n: usize) -> Result<Self, TopologyError> {
        if n < 2 {
            return Err(TopologyError::Generator("path needs n >= 2".into()));
        }
        Self::from_edges((0..n - 1).map(|i| (i, i + 1)))
    }

    pub fn ring(n: usize) -> Result<Self, TopologyError> {
        if n < 3 {
            return Err(TopologyError::Generator("ring needs n >= 3".into()));
        }
        Self::from_edges((0..n).map(|i| (i, (i + 1) % n)))
    }

    pub fn star(n: usize) -> Result<Self, TopologyError> {
        if n < 2 {
            return Err(TopologyError::Generator("star needs n >= 2".into()));
        }
        Self::from_edges((1..n).map(|i| (0, i)))
    }

    pub fn grid(rows: usize, cols: usize) -> Result<Self, TopologyError> {
        if rows * cols < 2 {
            return Err(TopologyError::Generator("grid needs at least two cells".into()));
        }
        let id = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((id(r, c), id(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((id(r, c), id(r + 1, c)));
                }
            }
        }
        Self::from_edges(edges)
    }

    /// Seeded random connected graph: a random spanning tree plus uniformly
    /// chosen extra edges up to `m` edges total.
    pub fn random_connected(n: usize, m: usize, seed: u64) -> Result<Self, TopologyError> {
        if n < 2 {
            return Err(TopologyError::Generator("random graph needs n >= 2".into()));
        }
        let max_edges = n * (n - 1) / 2;
        if m < n - 1 || m > max_edges {
            return Err(TopologyError::Generator(format!(
                "edge count {m} outside [{}, {max_edges}]",
                n - 1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<ProcessId> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut edges = BTreeSet::new();
        for i in 1..n {
            let parent = order[rng.random_range(0..i)];
            let child = order[i];
            edges.insert((parent.min(child), parent.max(child)));
        }
        let mut rest: Vec<(ProcessId, ProcessId)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|e| !edges.contains(e))
            .collect();
        rest.shuffle(&mut rng);
        edges.extend(rest.into_iter().take(m - (n - 1)));
        Self::from_edges(edges)
    }
}

fn bfs(neighbors: &[Vec<ProcessId>], src: ProcessId) -> Vec<Option<u32>> {
    let mut dist = vec![None; neighbors.len()];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &v in &neighbors[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}
