//! Snapshot sequences over time-ordered training edges and per-level
//! adjacency structures.
//!
//! The encoder works on a joint node space: users occupy rows
//! `0..n_users` and items occupy rows `n_users..n_users + n_items`. Message
//! lists for rating level `r` map every node to its level-`r` neighbors in
//! that space, weighted by `1 / c` where `c` is the receiver-side
//! normalization constant.

use alloc::collections::BTreeSet;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Rating;
use crate::error::{Error, Result};
use crate::tape::NeighborLists;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub user: usize,
    pub item: usize,
    pub level: usize,
}

impl From<&Rating> for Edge {
    fn from(r: &Rating) -> Self {
        Edge {
            user: r.user,
            item: r.item,
            level: r.level,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceMode {
    /// Non-overlapping consecutive windows of roughly equal edge count.
    Disjoint,
    /// Prefix unions of the windows: step `t` holds every edge up to window `t`.
    Incremental,
    /// One step holding every training edge.
    Static,
}

/// Splits time-ordered edges into `steps` contiguous chunks. When the count
/// does not divide evenly the first `len % steps` chunks get one extra edge.
pub fn chunk_edges(edges: &[Edge], steps: usize) -> Result<Vec<Vec<Edge>>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("step count must be positive".into()));
    }
    if edges.len() < steps {
        return Err(Error::TooFewEdges {
            edges: edges.len(),
            steps,
        });
    }
    let base = edges.len() / steps;
    let extra = edges.len() % steps;
    let mut out = Vec::with_capacity(steps);
    let mut start = 0;
    for t in 0..steps {
        let size = base + usize::from(t < extra);
        out.push(edges[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixSequence {
    steps: Vec<Vec<Edge>>,
    mode: SequenceMode,
}

impl MatrixSequence {
    pub fn steps(&self) -> &[Vec<Edge>] {
        &self.steps
    }

    pub fn mode(&self) -> SequenceMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step_sizes(&self) -> Vec<usize> {
        self.steps.iter().map(Vec::len).collect()
    }
}

pub fn build_sequence(chunks: Vec<Vec<Edge>>, mode: SequenceMode) -> Result<MatrixSequence> {
    if chunks.is_empty() {
        return Err(Error::Empty("edge chunks"));
    }
    let steps = match mode {
        SequenceMode::Disjoint => chunks,
        SequenceMode::Static => {
            if chunks.len() != 1 {
                return Err(Error::InvalidArgument("a static sequence has exactly one step".into()));
            }
            chunks
        }
        SequenceMode::Incremental => {
            let mut acc: Vec<Edge> = Vec::new();
            let mut steps = Vec::with_capacity(chunks.len());
            for chunk in chunks {
                acc.extend(chunk);
                steps.push(acc.clone());
            }
            steps
        }
    };
    Ok(MatrixSequence { steps, mode })
}

/// Chunks time-ordered training edges and assembles the sequence for `mode`.
/// `Static` ignores `steps` and produces a single step.
pub fn sequence_from_edges(edges: &[Edge], mode: SequenceMode, steps: usize) -> Result<MatrixSequence> {
    let chunks = match mode {
        SequenceMode::Static => chunk_edges(edges, 1)?,
        _ => chunk_edges(edges, steps)?,
    };
    build_sequence(chunks, mode)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormScheme {
    /// `c = deg(receiver)`.
    Left,
    /// `c = sqrt(deg(user) * deg(item))`.
    Symmetric,
}

/// An edge with the constant applied to messages in each direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizedEdge {
    pub edge: Edge,
    /// Constant for the item-to-user message.
    pub at_user: f64,
    /// Constant for the user-to-item message.
    pub at_item: f64,
}

#[derive(Clone, Debug)]
pub struct AdjacencyStructure {
    n_users: usize,
    n_items: usize,
    n_levels: usize,
    scheme: NormScheme,
    user_degree: Vec<usize>,
    item_degree: Vec<usize>,
    edges: Vec<NormalizedEdge>,
    messages: Vec<Arc<NeighborLists>>,
}

impl AdjacencyStructure {
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn scheme(&self) -> NormScheme {
        self.scheme
    }

    /// Degrees across all rating levels.
    pub fn user_degree(&self) -> &[usize] {
        &self.user_degree
    }

    pub fn item_degree(&self) -> &[usize] {
        &self.item_degree
    }

    pub fn edges(&self) -> &[NormalizedEdge] {
        &self.edges
    }

    /// Weighted message lists for `level` over the joint node space.
    pub fn messages(&self, level: usize) -> &Arc<NeighborLists> {
        &self.messages[level]
    }

    /// `(item, c)` pairs for the level-`level` neighbors of `user`.
    pub fn user_neighbors(&self, level: usize, user: usize) -> Vec<(usize, f64)> {
        self.messages[level]
            .row(user)
            .map(|(node, w)| (node - self.n_users, 1.0 / w))
            .collect()
    }

    /// `(user, c)` pairs for the level-`level` neighbors of `item`.
    pub fn item_neighbors(&self, level: usize, item: usize) -> Vec<(usize, f64)> {
        self.messages[level]
            .row(self.n_users + item)
            .map(|(node, w)| (node, 1.0 / w))
            .collect()
    }

    /// Rebuilds the edge set from the user-side neighbor lists.
    pub fn edge_set(&self) -> BTreeSet<Edge> {
        let mut out = BTreeSet::new();
        for level in 0..self.n_levels {
            for user in 0..self.n_users {
                for (item, _) in self.user_neighbors(level, user) {
                    out.insert(Edge { user, item, level });
                }
            }
        }
        out
    }
}

pub fn build_adjacency(
    edges: &[Edge],
    n_users: usize,
    n_items: usize,
    n_levels: usize,
    scheme: NormScheme,
) -> Result<AdjacencyStructure> {
    let mut seen = BTreeSet::new();
    let mut user_degree = vec![0usize; n_users];
    let mut item_degree = vec![0usize; n_items];
    for e in edges {
        for (index, len) in [(e.user, n_users), (e.item, n_items), (e.level, n_levels)] {
            if index >= len {
                return Err(Error::IndexOutOfRange {
                    op: "build_adjacency",
                    index,
                    len,
                });
            }
        }
        if !seen.insert((e.user, e.item)) {
            return Err(Error::DuplicateEdge {
                user: e.user,
                item: e.item,
            });
        }
        user_degree[e.user] += 1;
        item_degree[e.item] += 1;
    }

    let normalized: Vec<NormalizedEdge> = edges
        .iter()
        .map(|&edge| {
            let du = user_degree[edge.user] as f64;
            let di = item_degree[edge.item] as f64;
            let (at_user, at_item) = match scheme {
                NormScheme::Left => (du, di),
                NormScheme::Symmetric => {
                    let c = libm::sqrt(du * di);
                    (c, c)
                }
            };
            NormalizedEdge { edge, at_user, at_item }
        })
        .collect();

    let n_nodes = n_users + n_items;
    let mut messages = Vec::with_capacity(n_levels);
    for level in 0..n_levels {
        let mut lists: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_nodes];
        for ne in normalized.iter().filter(|ne| ne.edge.level == level) {
            let e = ne.edge;
            lists[e.user].push((n_users + e.item, 1.0 / ne.at_user));
            lists[n_users + e.item].push((e.user, 1.0 / ne.at_item));
        }
        messages.push(Arc::new(NeighborLists::from_lists(&lists)?));
    }

    Ok(AdjacencyStructure {
        n_users,
        n_items,
        n_levels,
        scheme,
        user_degree,
        item_degree,
        edges: normalized,
        messages,
    })
}
