//! Pixel lattices and the small explicit graphs used by the tests.
//!
//! Messages live on directed edges. Directed edges are laid out in CSR order
//! by their *target* node, so all messages flowing into node `i` occupy the
//! contiguous range `incoming(i)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary handling for square lattices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Free,
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "free" => Ok(Boundary::Free),
            other => Err(Error::InvalidGrid(format!(
                "unknown boundary mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Lattice {
        width: usize,
        height: usize,
        boundary: Boundary,
    },
    /// Hand-built graph (chains, trees) for oracle tests.
    Explicit,
}

/// An undirected simple graph with a directed-edge index for messages.
#[derive(Debug, Clone)]
pub struct Grid {
    layout: Layout,
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    /// CSR offsets into the directed-edge arrays, by target node.
    offsets: Vec<usize>,
    source: Vec<usize>,
    target: Vec<usize>,
    reverse: Vec<usize>,
    /// `(a -> b, b -> a)` directed ids for each undirected edge `(a, b)`.
    edge_directed: Vec<(usize, usize)>,
}

impl Grid {
    /// Square lattice with row-major pixels; edges are listed row-major with
    /// the right edge of a pixel before its down edge.
    pub fn lattice(width: usize, height: usize, boundary: Boundary) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid(format!(
                "empty lattice {width}x{height}"
            )));
        }
        if boundary == Boundary::Periodic && (width < 3 || height < 3) {
            return Err(Error::InvalidGrid(format!(
                "periodic lattice needs width, height >= 3 (got {width}x{height})"
            )));
        }
        let mut edges = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                match boundary {
                    Boundary::Free => {
                        if x + 1 < width {
                            edges.push((i, i + 1));
                        }
                        if y + 1 < height {
                            edges.push((i, i + width));
                        }
                    }
                    Boundary::Periodic => {
                        edges.push((i, y * width + (x + 1) % width));
                        edges.push((i, ((y + 1) % height) * width + x));
                    }
                }
            }
        }
        Self::build(
            Layout::Lattice {
                width,
                height,
                boundary,
            },
            width * height,
            edges,
        )
    }

    /// Arbitrary simple graph. Rejects self-loops, duplicate edges and
    /// out-of-range endpoints.
    pub fn from_edges(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidGrid("graph without nodes".into()));
        }
        Self::build(Layout::Explicit, num_nodes, edges)
    }

    /// Path graph 0 - 1 - ... - (n-1).
    pub fn chain(n: usize) -> Result<Self> {
        Self::from_edges(n, (1..n).map(|i| (i - 1, i)).collect())
    }

    fn build(layout: Layout, num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        let mut degree = vec![0usize; num_nodes];
        for &(a, b) in &edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::InvalidGrid(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::InvalidGrid(format!("self-loop at {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidGrid(format!("duplicate edge ({a}, {b})")));
            }
            degree[a] += 1;
            degree[b] += 1;
        }

        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let total = *offsets.last().unwrap();
        let mut fill = offsets[..num_nodes].to_vec();
        let mut source = vec![0; total];
        let mut target = vec![0; total];
        let mut edge_directed = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            let ab = fill[b];
            fill[b] += 1;
            source[ab] = a;
            target[ab] = b;
            let ba = fill[a];
            fill[a] += 1;
            source[ba] = b;
            target[ba] = a;
            edge_directed.push((ab, ba));
        }
        let mut reverse = vec![0; total];
        for &(ab, ba) in &edge_directed {
            reverse[ab] = ba;
            reverse[ba] = ab;
        }

        Ok(Grid {
            layout,
            num_nodes,
            edges,
            offsets,
            source,
            target,
            reverse,
            edge_directed,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// `(width, height)` for lattices, `(n, 1)` for explicit graphs.
    pub fn dims(&self) -> (usize, usize) {
        match self.layout {
            Layout::Lattice { width, height, .. } => (width, height),
            Layout::Explicit => (self.num_nodes, 1),
        }
    }

    pub fn boundary(&self) -> Option<Boundary> {
        match self.layout {
            Layout::Lattice { boundary, .. } => Some(boundary),
            Layout::Explicit => None,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_directed(&self) -> usize {
        self.source.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Directed edges `k -> i` for all neighbours `k` of `i`.
    pub fn incoming(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.source[self.incoming(i)].iter().copied()
    }

    pub fn source(&self, d: usize) -> usize {
        self.source[d]
    }

    pub fn target(&self, d: usize) -> usize {
        self.target[d]
    }

    /// The directed edge running the other way.
    pub fn reverse(&self, d: usize) -> usize {
        self.reverse[d]
    }

    /// `(a -> b, b -> a)` for undirected edge `e = (a, b)`.
    pub fn edge_directed(&self, e: usize) -> (usize, usize) {
        self.edge_directed[e]
    }
}

/// Number of labels `q`; always at least two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(usize);

impl LabelSet {
    pub fn new(q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidLabelCount(q));
        }
        Ok(LabelSet(q))
    }

    pub fn q(self) -> usize {
        self.0
    }

    /// Disagreement rate of the uniform (zero coupling) prior, `(q-1)/q`.
    pub fn max_disagreement(self) -> f64 {
        (self.0 - 1) as f64 / self.0 as f64
    }
}

/// One label per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelField {
    labels: Vec<usize>,
}

impl LabelField {
    pub fn new(labels: Vec<usize>, q: LabelSet) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&a| a >= q.q()) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                q: q.q(),
            });
        }
        Ok(LabelField { labels })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fraction of graph edges whose endpoints carry different labels.
    pub fn disagreement(&self, grid: &Grid) -> f64 {
        if grid.num_edges() == 0 {
            return 0.0;
        }
        let differing = grid
            .edges()
            .iter()
            .filter(|&&(a, b)| self.labels[a] != self.labels[b])
            .count();
        differing as f64 / grid.num_edges() as f64
    }
}
