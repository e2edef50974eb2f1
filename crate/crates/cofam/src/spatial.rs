//! Neighborhood graphs and Markov random field precision matrices.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::basis::PenaltyMatrix;
use crate::real::{real, Real};

/// Relative tie tolerance for the Gabriel disc test: a point whose squared
/// distances satisfy the blocking inequality within this factor of the edge
/// length squared blocks the edge. Boundary ties block, matching the
/// non-strict inequality of the disc definition.
pub const GABRIEL_TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("duplicate points at indices {0} and {1}")]
    DuplicatePoints(usize, usize),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("unknown region label '{0}'")]
    UnknownLabel(String),
    #[error("malformed adjacency line {line}: '{content}'")]
    MalformedLine { line: usize, content: String },
    #[error("node index {0} out of range for {1} nodes")]
    NodeOutOfRange(usize, usize),
}

/// Undirected graph over labelled regions; no self-loops or duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    labels: Vec<String>,
    edges: BTreeSet<(usize, usize)>,
}

impl SpatialGraph {
    pub fn new(
        labels: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, SpatialError> {
        let m = labels.len();
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= m {
                return Err(SpatialError::NodeOutOfRange(a, m));
            }
            if b >= m {
                return Err(SpatialError::NodeOutOfRange(b, m));
            }
            if a == b {
                continue;
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self { labels, edges: set })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Adjacency list serialization: one edge per line, label pairs sorted
    /// lexicographically within and across lines.
    pub fn to_adjacency_text(&self) -> String {
        let mut lines: Vec<String> = self
            .edges
            .iter()
            .map(|&(a, b)| {
                let (la, lb) = (&self.labels[a], &self.labels[b]);
                if la <= lb {
                    format!("{la} {lb}")
                } else {
                    format!("{lb} {la}")
                }
            })
            .collect();
        lines.sort();
        let mut out = lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }
}

/// Gabriel graph: `(s, s')` is an edge iff the closed disc with diameter
/// `s s'` contains no third point. A point exactly on the disc boundary
/// (within [`GABRIEL_TIE_RTOL`] relative on squared distances) blocks.
pub fn gabriel_graph<T: Real>(
    coords: &[[T; 2]],
    labels: Vec<String>,
) -> Result<SpatialGraph, SpatialError> {
    let m = coords.len();
    if m < 2 {
        return Err(SpatialError::TooFewPoints(m));
    }
    for i in 0..m {
        for j in i + 1..m {
            if coords[i] == coords[j] {
                return Err(SpatialError::DuplicatePoints(i, j));
            }
        }
    }
    let d2 = |a: [T; 2], b: [T; 2]| {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        dx * dx + dy * dy
    };
    let tie = real::<T>(GABRIEL_TIE_RTOL);
    let mut edges = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            let dij = d2(coords[i], coords[j]);
            let blocked = (0..m).any(|z| {
                z != i && z != j && d2(coords[i], coords[z]) + d2(coords[j], coords[z]) <= dij * (T::one() + tie)
            });
            if !blocked {
                edges.push((i, j));
            }
        }
    }
    SpatialGraph::new(labels, edges)
}

/// Intrinsic MRF precision: degree matrix minus adjacency matrix. Null space
/// is one constant vector per connected component.
pub fn mrf_precision<T: Real>(graph: &SpatialGraph) -> PenaltyMatrix<T> {
    let m = graph.num_nodes();
    let mut q = DMatrix::zeros(m, m);
    for (a, b) in graph.edges() {
        q[(a, a)] += T::one();
        q[(b, b)] += T::one();
        q[(a, b)] -= T::one();
        q[(b, a)] -= T::one();
    }
    PenaltyMatrix::new(q, connected_components(graph))
}

fn connected_components(graph: &SpatialGraph) -> usize {
    let m = graph.num_nodes();
    let mut seen = vec![false; m];
    let mut components = 0;
    for start in 0..m {
        if seen[start] {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(node) = stack.pop() {
            for (a, b) in graph.edges() {
                let next = if a == node {
                    b
                } else if b == node {
                    a
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
    }
    components
}

/// Parse an adjacency list: one edge per line, "labelA labelB". Blank lines
/// and `#` comments are ignored; edges are deduplicated.
pub fn read_adjacency(text: &str, labels: &[String]) -> Result<SpatialGraph, SpatialError> {
    let index = |name: &str| {
        labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| SpatialError::UnknownLabel(name.to_string()))
    };
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(SpatialError::MalformedLine {
                    line: lineno + 1,
                    content: raw.to_string(),
                })
            }
        };
        edges.push((index(a)?, index(b)?));
    }
    SpatialGraph::new(labels.to_vec(), edges)
}
