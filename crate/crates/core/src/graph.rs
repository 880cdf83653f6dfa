//! Directed weighted graphs, feasible paths and shortest-path distances.
//!
//! Nodes are 1-based in documents and in [`NodeId`]; everything internal
//! (matrices, [`Path`] storage) is 0-based.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on the number of paths any enumeration may produce.
pub const DEFAULT_PATH_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph document parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge #{edge}: node {node} out of range 1..={n}")]
    NodeOutOfRange { edge: usize, node: i64, n: usize },
    #[error("edge #{edge} ({from}->{to}): length {length} is negative or not finite")]
    InvalidLength {
        edge: usize,
        from: usize,
        to: usize,
        length: f64,
    },
    #[error("edge #{edge}: duplicate edge {from}->{to}")]
    DuplicateEdge { edge: usize, from: usize, to: usize },
    #[error("node {node} out of range 1..={n}")]
    InvalidNode { node: usize, n: usize },
    #[error("path enumeration exceeded the cap of {cap} paths")]
    PathCapExceeded { cap: usize },
}

/// A 1-based node label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    /// Zero-based index into matrices and vectors.
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn from_index(index: usize) -> Self {
        NodeId(index + 1)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A node sequence `(x_0, ..., x_N)`. Ordering is lexicographic on the
/// node sequence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path(Vec<usize>);

impl Path {
    /// Builds a path from 0-based indices.
    pub fn from_indices(nodes: Vec<usize>) -> Self {
        Path(nodes)
    }

    /// Builds a path from 1-based labels, as written in documents.
    pub fn from_labels(labels: &[usize]) -> Self {
        Path(labels.iter().map(|&l| l - 1).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn labels(&self) -> Vec<usize> {
        self.0.iter().map(|&i| i + 1).collect()
    }

    /// Number of steps, i.e. one less than the number of nodes.
    pub fn steps(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn first(&self) -> Option<usize> {
        self.0.first().copied()
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }

    /// Joins `self` with `other`, which must start where `self` ends.
    pub fn concat(&self, other: &Path) -> Option<Path> {
        if self.last()? != other.first()? {
            return None;
        }
        let mut nodes = self.0.clone();
        nodes.extend_from_slice(&other.0[1..]);
        Some(Path(nodes))
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.labels().iter().map(|l| l.to_string()).collect();
        f.write_str(&labels.join("-"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: i64,
    pub to: i64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub n: usize,
    pub edges: Vec<EdgeSpec>,
}

/// A directed graph with nonnegative edge lengths. Absent edges have
/// length `+inf`; that value is computed, never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    n: usize,
    // adjacency rows keyed by target, sorted
    out: Vec<BTreeMap<usize, f64>>,
}

impl DirectedGraph {
    pub fn new(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        Ok(Self {
            n,
            out: vec![BTreeMap::new(); n],
        })
    }

    /// Builds a graph from 1-based `(from, to, length)` triples.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let doc = GraphDocument {
            n,
            edges: edges
                .iter()
                .map(|&(from, to, length)| EdgeSpec {
                    from: from as i64,
                    to: to as i64,
                    length,
                })
                .collect(),
        };
        Self::from_document(&doc)
    }

    pub fn from_document(doc: &GraphDocument) -> Result<Self, GraphError> {
        let mut g = Self::new(doc.n)?;
        for (k, e) in doc.edges.iter().enumerate() {
            let edge = k + 1;
            for node in [e.from, e.to] {
                if node < 1 || node as usize > doc.n {
                    return Err(GraphError::NodeOutOfRange {
                        edge,
                        node,
                        n: doc.n,
                    });
                }
            }
            let (from, to) = (e.from as usize, e.to as usize);
            if !(e.length.is_finite() && e.length >= 0.0) {
                return Err(GraphError::InvalidLength {
                    edge,
                    from,
                    to,
                    length: e.length,
                });
            }
            if g.out[from - 1].insert(to - 1, e.length).is_some() {
                return Err(GraphError::DuplicateEdge { edge, from, to });
            }
        }
        Ok(g)
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            n: self.n,
            edges: self
                .edges()
                .map(|(i, j, length)| EdgeSpec {
                    from: i as i64 + 1,
                    to: j as i64 + 1,
                    length,
                })
                .collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(BTreeMap::len).sum()
    }

    /// Edges as 0-based `(from, to, length)`, ordered by source then target.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |(&j, &l)| (i, j, l)))
    }

    pub fn successors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.out[i].iter().map(|(&j, &l)| (j, l))
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.out[i].contains_key(&j)
    }

    /// Length of edge `i -> j` (0-based), `+inf` if absent.
    pub fn length(&self, i: usize, j: usize) -> f64 {
        self.out[i].get(&j).copied().unwrap_or(f64::INFINITY)
    }

    /// Returns a copy with the length of an existing or new edge set.
    pub fn with_length(&self, from: NodeId, to: NodeId, length: f64) -> Result<Self, GraphError> {
        self.check_node(from)?;
        self.check_node(to)?;
        if !(length.is_finite() && length >= 0.0) {
            return Err(GraphError::InvalidLength {
                edge: 0,
                from: from.0,
                to: to.0,
                length,
            });
        }
        let mut g = self.clone();
        g.out[from.index()].insert(to.index(), length);
        Ok(g)
    }

    pub fn check_node(&self, node: NodeId) -> Result<(), GraphError> {
        if node.0 == 0 || node.0 > self.n {
            Err(GraphError::InvalidNode {
                node: node.0,
                n: self.n,
            })
        } else {
            Ok(())
        }
    }

    /// Smallest strictly positive edge length, if any.
    pub fn min_positive_length(&self) -> Option<f64> {
        self.edges()
            .map(|(_, _, l)| l)
            .filter(|&l| l > 0.0)
            .min_by(f64::total_cmp)
    }

    /// Sum of edge lengths along `p`; `+inf` if some step is not an edge.
    pub fn path_length(&self, p: &Path) -> f64 {
        p.indices()
            .windows(2)
            .map(|w| self.length(w[0], w[1]))
            .sum()
    }

    pub fn is_feasible(&self, p: &Path) -> bool {
        p.indices().iter().all(|&i| i < self.n)
            && p.indices().windows(2).all(|w| self.has_edge(w[0], w[1]))
    }

    /// All feasible paths with `steps` steps and the given endpoints, in
    /// lexicographic order.
    pub fn enumerate_paths(
        &self,
        steps: usize,
        from: Option<NodeId>,
        to: Option<NodeId>,
    ) -> Result<Vec<Path>, GraphError> {
        self.enumerate_paths_capped(steps, from, to, DEFAULT_PATH_CAP)
    }

    pub fn enumerate_paths_capped(
        &self,
        steps: usize,
        from: Option<NodeId>,
        to: Option<NodeId>,
        cap: usize,
    ) -> Result<Vec<Path>, GraphError> {
        if let Some(f) = from {
            self.check_node(f)?;
        }
        if let Some(t) = to {
            self.check_node(t)?;
        }
        let sources: Vec<usize> = match from {
            Some(f) => vec![f.index()],
            None => (0..self.n).collect(),
        };
        let mut targets = vec![to.is_none(); self.n];
        if let Some(t) = to {
            targets[t.index()] = true;
        }
        enumerate_layered(
            self.n,
            steps,
            &sources,
            &targets,
            |_, i| self.out[i].keys().copied().collect(),
            cap,
        )
    }

    /// All-pairs shortest path lengths `d_ij` (0-based indices). `d_ii = 0`
    /// and unreachable pairs are `+inf`.
    pub fn shortest_path_matrix(&self) -> Array2<f64> {
        let n = self.n;
        let mut d = Array2::from_elem((n, n), f64::INFINITY);
        for (i, j, l) in self.edges() {
            if l < d[[i, j]] {
                d[[i, j]] = l;
            }
        }
        for i in 0..n {
            d[[i, i]] = 0.0;
        }
        for k in 0..n {
            for i in 0..n {
                let dik = d[[i, k]];
                if dik.is_infinite() {
                    continue;
                }
                for j in 0..n {
                    let via = dik + d[[k, j]];
                    if via < d[[i, j]] {
                        d[[i, j]] = via;
                    }
                }
            }
        }
        d
    }
}

/// Parses a graph document (`{"n": .., "edges": [{"from","to","length"}]}`).
pub fn load_graph(text: &str) -> Result<DirectedGraph, GraphError> {
    let doc: GraphDocument = serde_json::from_str(text).map_err(|e| GraphError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    DirectedGraph::from_document(&doc)
}

/// Depth-first enumeration of layered paths with `steps` transitions.
///
/// `successors(t, i)` lists the nodes reachable from `i` in step `t`.
/// Branches that cannot reach a target within the remaining steps are pruned
/// using backward reachability tables.
pub(crate) fn enumerate_layered<F>(
    n: usize,
    steps: usize,
    sources: &[usize],
    targets: &[bool],
    successors: F,
    cap: usize,
) -> Result<Vec<Path>, GraphError>
where
    F: Fn(usize, usize) -> Vec<usize>,
{
    let succ: Vec<Vec<Vec<usize>>> = (0..steps)
        .map(|t| (0..n).map(|i| successors(t, i)).collect())
        .collect();
    // alive[t][i]: some target is reachable from i at time t
    let mut alive = vec![vec![false; n]; steps + 1];
    alive[steps].copy_from_slice(targets);
    for t in (0..steps).rev() {
        for i in 0..n {
            alive[t][i] = succ[t][i].iter().any(|&j| alive[t + 1][j]);
        }
    }

    let mut out = Vec::new();
    let mut stack: Vec<usize> = Vec::with_capacity(steps + 1);
    let mut sorted_sources = sources.to_vec();
    sorted_sources.sort_unstable();
    sorted_sources.dedup();
    for &s in &sorted_sources {
        if !alive[0][s] {
            continue;
        }
        stack.push(s);
        descend(&succ, &alive, steps, &mut stack, &mut out, cap)?;
        stack.pop();
    }
    Ok(out)
}

fn descend(
    succ: &[Vec<Vec<usize>>],
    alive: &[Vec<bool>],
    steps: usize,
    stack: &mut Vec<usize>,
    out: &mut Vec<Path>,
    cap: usize,
) -> Result<(), GraphError> {
    let t = stack.len() - 1;
    if t == steps {
        if out.len() >= cap {
            return Err(GraphError::PathCapExceeded { cap });
        }
        out.push(Path(stack.clone()));
        return Ok(());
    }
    let i = stack[t];
    for &j in &succ[t][i] {
        if alive[t + 1][j] {
            stack.push(j);
            descend(succ, alive, steps, stack, out, cap)?;
            stack.pop();
        }
    }
    Ok(())
}

/// Fixture graphs used throughout the tests and examples.
pub mod fixtures {
    use super::DirectedGraph;

    /// Edges of the nine-node example network (1-based, unit lengths), plus a
    /// zero-length self-loop at the sink.
    pub const G9_EDGES: [(usize, usize, f64); 15] = [
        (1, 2, 1.0),
        (1, 3, 1.0),
        (1, 4, 1.0),
        (2, 3, 1.0),
        (2, 5, 1.0),
        (2, 7, 1.0),
        (3, 4, 1.0),
        (3, 8, 1.0),
        (4, 8, 1.0),
        (5, 6, 1.0),
        (5, 7, 1.0),
        (6, 9, 1.0),
        (7, 9, 1.0),
        (8, 9, 1.0),
        (9, 9, 0.0),
    ];

    pub fn g9() -> DirectedGraph {
        DirectedGraph::from_edges(9, &G9_EDGES).expect("fixture is valid")
    }

    /// The nine-node network with edge 7->9 lengthened to 2.
    pub fn g9_modified() -> DirectedGraph {
        let edges: Vec<_> = G9_EDGES
            .iter()
            .map(|&(i, j, l)| if (i, j) == (7, 9) { (i, j, 2.0) } else { (i, j, l) })
            .collect();
        DirectedGraph::from_edges(9, &edges).expect("fixture is valid")
    }

    /// The nine-node network with a return edge 9->1, which makes it
    /// strongly connected and aperiodic.
    pub fn g9_closed() -> DirectedGraph {
        let mut edges = G9_EDGES.to_vec();
        edges.push((9, 1, 1.0));
        DirectedGraph::from_edges(9, &edges).expect("fixture is valid")
    }

    /// Complete directed graph on `n` nodes (self-loops included), all
    /// lengths equal to `length`.
    pub fn complete(n: usize, length: f64) -> DirectedGraph {
        let edges: Vec<_> = (1..=n)
            .flat_map(|i| (1..=n).map(move |j| (i, j, length)))
            .collect();
        DirectedGraph::from_edges(n, &edges).expect("fixture is valid")
    }

    pub const G9_JSON: &str = include_str!("../fixtures/g9.json");
}
