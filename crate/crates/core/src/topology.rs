//! Directed connection graphs between microgrids.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Zero-based microgrid index.
pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("a topology needs at least one microgrid")]
    Empty,
    #[error("node {node} out of range for {m} microgrids")]
    NodeOutOfRange { node: NodeId, m: usize },
    #[error("adjacency must be square: row {row} has {len} entries, expected {m}")]
    NotSquare { row: usize, len: usize, m: usize },
    #[error("adjacency entry [{0}][{0}] must be 0: a microgrid cannot trade with itself (a_ii = 0)")]
    SelfLoop(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Full,
    Ring,
    Line,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Full => "full",
            TopologyKind::Ring => "ring",
            TopologyKind::Line => "line",
        })
    }
}

/// `adj[i][j]` is true iff energy may flow from `i` to `j`. Not necessarily
/// symmetric; the diagonal is always false.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adj: Vec<Vec<bool>>,
}

impl Topology {
    pub fn build(kind: TopologyKind, m: usize) -> Result<Self, TopologyError> {
        if m == 0 {
            return Err(TopologyError::Empty);
        }
        let mut adj = vec![vec![false; m]; m];
        match kind {
            TopologyKind::Full => {
                for (i, row) in adj.iter_mut().enumerate() {
                    for (j, a) in row.iter_mut().enumerate() {
                        *a = i != j;
                    }
                }
            }
            TopologyKind::Ring | TopologyKind::Line => {
                for i in 0..m.saturating_sub(1) {
                    adj[i][i + 1] = true;
                    adj[i + 1][i] = true;
                }
                if kind == TopologyKind::Ring && m > 2 {
                    adj[m - 1][0] = true;
                    adj[0][m - 1] = true;
                }
            }
        }
        Ok(Topology { adj })
    }

    /// Accepts any square boolean matrix with a false diagonal.
    pub fn from_adjacency(adj: Vec<Vec<bool>>) -> Result<Self, TopologyError> {
        let m = adj.len();
        if m == 0 {
            return Err(TopologyError::Empty);
        }
        for (i, row) in adj.iter().enumerate() {
            if row.len() != m {
                return Err(TopologyError::NotSquare { row: i, len: row.len(), m });
            }
            if row[i] {
                return Err(TopologyError::SelfLoop(i));
            }
        }
        Ok(Topology { adj })
    }

    pub fn m(&self) -> usize {
        self.adj.len()
    }

    pub fn connected(&self, from: NodeId, to: NodeId) -> bool {
        self.adj
            .get(from)
            .and_then(|r| r.get(to))
            .copied()
            .unwrap_or(false)
    }

    pub fn adjacency(&self) -> &[Vec<bool>] {
        &self.adj
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().flatten().filter(|&&a| a).count()
    }

    /// Directed edges `(from, to)` in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adj.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &a)| a)
                .map(move |(j, _)| (i, j))
        })
    }

    fn check(&self, i: NodeId) -> Result<(), TopologyError> {
        if i < self.m() {
            Ok(())
        } else {
            Err(TopologyError::NodeOutOfRange { node: i, m: self.m() })
        }
    }

    /// Nodes that can sell to `i`, in increasing order.
    pub fn in_sellers(&self, i: NodeId) -> Result<Vec<NodeId>, TopologyError> {
        self.check(i)?;
        Ok((0..self.m()).filter(|&j| self.adj[j][i]).collect())
    }

    /// Nodes that can buy from `i`, in increasing order.
    pub fn out_buyers(&self, i: NodeId) -> Result<Vec<NodeId>, TopologyError> {
        self.check(i)?;
        Ok((0..self.m()).filter(|&j| self.adj[i][j]).collect())
    }

    /// Nodes linked to `i` in either direction.
    pub fn neighbors(&self, i: NodeId) -> Result<Vec<NodeId>, TopologyError> {
        self.check(i)?;
        Ok((0..self.m())
            .filter(|&j| self.adj[i][j] || self.adj[j][i])
            .collect())
    }

    pub fn is_symmetric(&self) -> bool {
        let m = self.m();
        (0..m).all(|i| (0..m).all(|j| self.adj[i][j] == self.adj[j][i]))
    }
}
