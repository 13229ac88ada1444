//! Immutable sparse undirected simple graphs and the edge-list format.
//!
//! Adjacency is stored in compressed form: the neighbors of node `u` live in
//! `targets[offsets[u]..offsets[u + 1]]`, and every slot in that range is a
//! *directed edge* `u -> targets[e]`. Directed edges are the unit the belief
//! propagation engine attaches messages to, so each one also records the index
//! of its reverse.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Undirected simple graph with degree metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    edges: Vec<(usize, usize)>,
    degrees: Vec<usize>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    reverse: Vec<usize>,
    labels: Option<Vec<String>>,
}

impl Graph {
    /// Builds a graph on `n` nodes from an edge list.
    ///
    /// Self-loops and out-of-range endpoints are rejected; duplicate edges
    /// (in either orientation) are an error here, since deduplication is a
    /// parsing policy and not something callers building graphs directly
    /// should rely on.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("graph must have at least one node".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        let mut canonical = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Argument(format!(
                    "edge ({u}, {v}) has an endpoint outside [0, {n})"
                )));
            }
            if u == v {
                return Err(Error::Argument(format!("self-loop on node {u}")));
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(Error::Argument(format!("duplicate edge ({u}, {v})")));
            }
            canonical.push(key);
        }
        Ok(Self::build(n, canonical, None))
    }

    /// Attaches string identifiers to the nodes, one per node.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::Argument(format!(
                "{} labels supplied for {} nodes",
                labels.len(),
                self.n()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    fn build(n: usize, edges: Vec<(usize, usize)>, labels: Option<Vec<String>>) -> Self {
        let mut degrees = vec![0usize; n];
        for &(u, v) in &edges {
            degrees[u] += 1;
            degrees[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degrees {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n].to_vec();
        let mut targets = vec![0usize; 2 * edges.len()];
        // (edge slot of u->v, edge slot of v->u)
        let mut pairs = Vec::with_capacity(edges.len());
        for &(u, v) in &edges {
            let a = cursor[u];
            let b = cursor[v];
            targets[a] = v;
            targets[b] = u;
            cursor[u] += 1;
            cursor[v] += 1;
            pairs.push((a, b));
        }
        let mut reverse = vec![0usize; targets.len()];
        for (a, b) in pairs {
            reverse[a] = b;
            reverse[b] = a;
        }
        Self {
            edges,
            degrees,
            offsets,
            targets,
            reverse,
            labels,
        }
    }

    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    /// Number of undirected edges.
    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, u: usize) -> usize {
        self.degrees[u]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Undirected edges as `(u, v)` with `u < v`, in insertion order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }

    /// Range of directed-edge slots leaving `u`.
    pub fn out_edges(&self, u: usize) -> std::ops::Range<usize> {
        self.offsets[u]..self.offsets[u + 1]
    }

    /// Number of directed edges, `2m`.
    pub fn num_directed(&self) -> usize {
        self.targets.len()
    }

    /// Head of directed edge `e`.
    pub fn target(&self, e: usize) -> usize {
        self.targets[e]
    }

    /// The slot of the opposite orientation of directed edge `e`.
    pub fn reverse(&self, e: usize) -> usize {
        self.reverse[e]
    }

    /// Slot of the directed edge `u -> v`, if the two are adjacent.
    pub fn directed_edge(&self, u: usize, v: usize) -> Option<usize> {
        self.out_edges(u).find(|&e| self.targets[e] == v)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.directed_edge(u, v).is_some()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Identifier of node `u`: its label if present, else its index.
    pub fn label(&self, u: usize) -> String {
        match &self.labels {
            Some(l) => l[u].clone(),
            None => u.to_string(),
        }
    }

    /// True when the graph has no cycles.
    pub fn is_forest(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.n()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(u, v) in &self.edges {
            let (a, b) = (find(&mut parent, u), find(&mut parent, v));
            if a == b {
                return false;
            }
            parent[a] = b;
        }
        true
    }

    /// Renders the graph in edge-list format using node labels.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for &(u, v) in &self.edges {
            let _ = writeln!(out, "{} {}", self.label(u), self.label(v));
        }
        out
    }
}

/// Result of parsing an edge list.
#[derive(Debug, Clone)]
pub struct ParsedGraph {
    pub graph: Graph,
    /// Repeated edges that were collapsed into one.
    pub duplicate_edges: usize,
}

impl ParsedGraph {
    pub fn warnings(&self) -> Vec<String> {
        match self.duplicate_edges {
            0 => Vec::new(),
            1 => vec!["1 duplicate edge collapsed".to_string()],
            k => vec![format!("{k} duplicate edges collapsed")],
        }
    }
}

/// Parses whitespace-separated node pairs, one undirected edge per line.
///
/// Blank lines and lines starting with `#` are skipped. Node identifiers are
/// arbitrary tokens, numbered in order of first appearance.
pub fn parse_edge_list<'a>(text: &'a str) -> Result<ParsedGraph> {
    let mut index: HashMap<&'a str, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::new();
    let mut duplicates = 0usize;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(Error::Malformed {
                line: lineno + 1,
                found: tokens.len(),
            });
        }
        if tokens[0] == tokens[1] {
            return Err(Error::SelfLoop {
                line: lineno + 1,
                node: tokens[0].to_string(),
            });
        }
        let mut id = |tok: &'a str| -> usize {
            let next = labels.len();
            *index.entry(tok).or_insert_with(|| {
                labels.push(tok.to_string());
                next
            })
        };
        let u = id(tokens[0]);
        let v = id(tokens[1]);
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            edges.push(key);
        } else {
            duplicates += 1;
        }
    }

    if edges.is_empty() {
        return Err(Error::NoEdges);
    }
    if duplicates > 0 {
        log::warn!("{duplicates} duplicate edge(s) collapsed");
    }
    let n = labels.len();
    Ok(ParsedGraph {
        graph: Graph::build(n, edges, Some(labels)),
        duplicate_edges: duplicates,
    })
}

/// Connection probability `min(1, d_u d_v omega / 2m)` of the degree-corrected model.
pub fn edge_probability(d_u: usize, d_v: usize, m: usize, omega: f64) -> f64 {
    debug_assert!(m >= 1 && omega >= 0.0);
    let p = (d_u as f64) * (d_v as f64) * omega / (2.0 * m as f64);
    p.min(1.0)
}
