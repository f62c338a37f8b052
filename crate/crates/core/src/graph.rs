//! Directed road network with unit travel time per edge.
//!
//! Nodes carry an external [`NodeId`] (the label used in documents) and a
//! dense [`NodeIdx`] used everywhere inside the simulator. Nodes are stored
//! sorted by id, so index order and id order agree and "lowest node id"
//! tie-breaks can be evaluated on indices directly.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// External node label as it appears in graph, trace and demand documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for NodeId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim().parse().map(NodeId)
    }
}

/// Dense position of a node inside a [`RoadGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeIdx(pub u32);

impl NodeIdx {
    #[inline]
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph has no nodes")]
    Empty,
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("edge {index} ({from} -> {to}) references unknown node {missing}")]
    UnknownEdgeEndpoint {
        index: usize,
        from: NodeId,
        to: NodeId,
        missing: NodeId,
    },
    #[error(
        "edge {index} ({from} -> {to}) has travel time {time}; only unit-time edges are supported"
    )]
    WeightedEdge {
        index: usize,
        from: NodeId,
        to: NodeId,
        time: f64,
    },
    #[error("node {0} has a non-finite coordinate")]
    BadCoordinate(NodeId),
    #[error("graph is not strongly connected: node {to} is unreachable from node {from}")]
    NotStronglyConnected { from: NodeId, to: NodeId },
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("grid side must be at least 2, got {0}")]
    GridTooSmall(usize),
    #[error("failed to read graph document: {0}")]
    Io(String),
    #[error("malformed graph document: {0}")]
    Parse(String),
}

/// On-disk graph description: a node table and a directed edge table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub from: NodeId,
    pub to: NodeId,
    /// Optional travel time; present only to reject weighted inputs explicitly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

impl GraphDocument {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph document serializes")
    }

    /// `k x k` grid with unit spacing and bidirectional 4-neighbour edges.
    /// Node `(row, col)` gets id `row * k + col` and coordinates `(col, row)`.
    pub fn grid(k: usize) -> Result<Self, GraphError> {
        if k < 2 {
            return Err(GraphError::GridTooSmall(k));
        }
        let id = |r: usize, c: usize| NodeId((r * k + c) as u32);
        let mut nodes = Vec::with_capacity(k * k);
        let mut edges = Vec::with_capacity(4 * k * (k - 1));
        for r in 0..k {
            for c in 0..k {
                nodes.push(NodeRecord {
                    id: id(r, c),
                    x: c as f64,
                    y: r as f64,
                });
                let mut link = |r2: usize, c2: usize| {
                    edges.push(EdgeRecord {
                        from: id(r, c),
                        to: id(r2, c2),
                        time: None,
                    })
                };
                if r > 0 {
                    link(r - 1, c);
                }
                if c > 0 {
                    link(r, c - 1);
                }
                if c + 1 < k {
                    link(r, c + 1);
                }
                if r + 1 < k {
                    link(r + 1, c);
                }
            }
        }
        Ok(Self { nodes, edges })
    }
}

/// Validated, immutable road graph with all-pairs hop distances.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    ids: Vec<NodeId>,
    coords: Vec<(f64, f64)>,
    index: HashMap<NodeId, NodeIdx>,
    adjacency: Vec<Vec<NodeIdx>>,
    edge_count: usize,
    dist: Vec<u32>,
}

impl RoadGraph {
    /// Validates the document and precomputes distances with one BFS per source.
    pub fn from_document(doc: &GraphDocument) -> Result<Self, GraphError> {
        if doc.nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut records: Vec<&NodeRecord> = doc.nodes.iter().collect();
        records.sort_by_key(|n| n.id);
        for pair in records.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(GraphError::DuplicateNode(pair[0].id));
            }
        }
        let mut ids = Vec::with_capacity(records.len());
        let mut coords = Vec::with_capacity(records.len());
        let mut index = HashMap::with_capacity(records.len());
        for (i, n) in records.iter().enumerate() {
            if !n.x.is_finite() || !n.y.is_finite() {
                return Err(GraphError::BadCoordinate(n.id));
            }
            ids.push(n.id);
            coords.push((n.x, n.y));
            index.insert(n.id, NodeIdx(i as u32));
        }

        let mut adjacency = vec![Vec::new(); ids.len()];
        for (k, e) in doc.edges.iter().enumerate() {
            let lookup = |id: NodeId| {
                index
                    .get(&id)
                    .copied()
                    .ok_or(GraphError::UnknownEdgeEndpoint {
                        index: k,
                        from: e.from,
                        to: e.to,
                        missing: id,
                    })
            };
            let from = lookup(e.from)?;
            let to = lookup(e.to)?;
            if let Some(time) = e.time {
                if time != 1.0 {
                    return Err(GraphError::WeightedEdge {
                        index: k,
                        from: e.from,
                        to: e.to,
                        time,
                    });
                }
            }
            adjacency[from.get()].push(to);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        let edge_count = adjacency.iter().map(Vec::len).sum();

        let n = ids.len();
        let mut dist = vec![UNREACHABLE; n * n];
        let mut queue = VecDeque::with_capacity(n);
        for source in 0..n {
            let row = &mut dist[source * n..(source + 1) * n];
            row[source] = 0;
            queue.clear();
            queue.push_back(source);
            while let Some(u) = queue.pop_front() {
                let du = row[u];
                for &v in &adjacency[u] {
                    if row[v.get()] == UNREACHABLE {
                        row[v.get()] = du + 1;
                        queue.push_back(v.get());
                    }
                }
            }
            if let Some(target) = row.iter().position(|&d| d == UNREACHABLE) {
                return Err(GraphError::NotStronglyConnected {
                    from: ids[source],
                    to: ids[target],
                });
            }
        }

        Ok(Self {
            ids,
            coords,
            index,
            adjacency,
            edge_count,
            dist,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
        Self::from_document(&GraphDocument::from_json(&text)?)
    }

    pub fn grid(k: usize) -> Result<Self, GraphError> {
        Self::from_document(&GraphDocument::grid(k)?)
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn node_ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn indices(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        (0..self.ids.len() as u32).map(NodeIdx)
    }

    pub fn index_of(&self, id: NodeId) -> Result<NodeIdx, GraphError> {
        self.index
            .get(&id)
            .copied()
            .ok_or(GraphError::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    #[inline]
    pub fn id_of(&self, idx: NodeIdx) -> NodeId {
        self.ids[idx.get()]
    }

    #[inline]
    pub fn coords(&self, idx: NodeIdx) -> (f64, f64) {
        self.coords[idx.get()]
    }

    /// Out-neighbours of `idx`, sorted by node id.
    #[inline]
    pub fn neighbors(&self, idx: NodeIdx) -> &[NodeIdx] {
        &self.adjacency[idx.get()]
    }

    pub fn has_edge(&self, from: NodeIdx, to: NodeIdx) -> bool {
        self.adjacency[from.get()].binary_search(&to).is_ok()
    }

    /// Hop count of a shortest directed path.
    #[inline]
    pub fn dist(&self, from: NodeIdx, to: NodeIdx) -> u32 {
        self.dist[from.get() * self.ids.len() + to.get()]
    }

    pub fn shortest_distance(&self, from: NodeId, to: NodeId) -> Result<u32, GraphError> {
        Ok(self.dist(self.index_of(from)?, self.index_of(to)?))
    }

    pub fn euclidean(&self, a: NodeIdx, b: NodeIdx) -> f64 {
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        (ax - bx).hypot(ay - by)
    }

    /// Neighbour one hop closer to `target`, lowest id first among ties.
    /// Returns `current` when already at the target.
    pub fn next_hop_idx(&self, current: NodeIdx, target: NodeIdx) -> NodeIdx {
        let d = self.dist(current, target);
        if d == 0 {
            return current;
        }
        *self.adjacency[current.get()]
            .iter()
            .find(|&&h| self.dist(h, target) == d - 1)
            .expect("strongly connected graph always has a descending neighbour")
    }

    pub fn next_hop(&self, current: NodeId, target: NodeId) -> Result<NodeId, GraphError> {
        let hop = self.next_hop_idx(self.index_of(current)?, self.index_of(target)?);
        Ok(self.id_of(hop))
    }

    pub fn shortest_path(&self, origin: NodeIdx, target: NodeIdx) -> Itinerary {
        let mut nodes = Vec::with_capacity(self.dist(origin, target) as usize + 1);
        let mut cur = origin;
        nodes.push(cur);
        while cur != target {
            cur = self.next_hop_idx(cur, target);
            nodes.push(cur);
        }
        Itinerary { nodes, cursor: 1 }
    }

    pub fn to_document(&self) -> GraphDocument {
        let nodes = self
            .indices()
            .map(|i| NodeRecord {
                id: self.id_of(i),
                x: self.coords(i).0,
                y: self.coords(i).1,
            })
            .collect();
        let edges = self
            .indices()
            .flat_map(|i| {
                self.neighbors(i).iter().map(move |&j| EdgeRecord {
                    from: self.id_of(i),
                    to: self.id_of(j),
                    time: None,
                })
            })
            .collect();
        GraphDocument { nodes, edges }
    }
}

/// Node sequence from an origin to a target, consumed one hop at a time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Itinerary {
    nodes: Vec<NodeIdx>,
    cursor: usize,
}

impl Itinerary {
    pub fn origin(&self) -> NodeIdx {
        self.nodes[0]
    }

    pub fn target(&self) -> NodeIdx {
        *self.nodes.last().expect("itinerary is never empty")
    }

    pub fn nodes(&self) -> &[NodeIdx] {
        &self.nodes
    }

    /// Number of hops in the full itinerary.
    pub fn len(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn remaining(&self) -> usize {
        self.nodes.len() - self.cursor
    }

    /// Returns the next node and advances the cursor.
    pub fn advance(&mut self) -> Option<NodeIdx> {
        let next = self.nodes.get(self.cursor).copied()?;
        self.cursor += 1;
        Some(next)
    }
}
