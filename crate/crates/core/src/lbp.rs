//! Sum-product message passing for Potts models on a [`Grid`].
//!
//! The prior and the posterior share this engine: the posterior just adds a
//! per-pixel log-likelihood field. Pairwise factors are `exp((K/2) δ(a, b))`.
//! Messages are normalized probability vectors, one per directed edge, and
//! every sweep is synchronous (Jacobi).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::observation::LikelihoodTable;

/// Potts coupling (the interaction `K`, also written `α(u)`).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coupling(f64);

impl Coupling {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "coupling must be finite and non-negative, got {value}"
            )));
        }
        Ok(Coupling(value))
    }

    pub const ZERO: Coupling = Coupling(0.0);

    pub fn value(self) -> f64 {
        self.0
    }

    /// `exp(K/2) - 1`, the excess weight of an agreeing pair.
    pub(crate) fn excess(self) -> f64 {
        (0.5 * self.0).exp_m1()
    }
}

/// One normalized `q`-vector per directed edge of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageField {
    q: usize,
    data: Vec<f64>,
}

impl MessageField {
    pub fn uniform(grid: &Grid, q: usize) -> Self {
        MessageField {
            q,
            data: vec![1.0 / q as f64; grid.num_directed() * q],
        }
    }

    /// Every message puts weight `bias` on label 0 and spreads the rest.
    pub fn ordered(grid: &Grid, q: usize, bias: f64) -> Self {
        let mut one = vec![(1.0 - bias) / (q - 1) as f64; q];
        one[0] = bias;
        MessageField {
            q,
            data: one.repeat(grid.num_directed()),
        }
    }

    pub fn from_raw(grid: &Grid, q: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.num_directed() * q {
            return Err(Error::SizeMismatch(format!(
                "expected {} message entries, got {}",
                grid.num_directed() * q,
                data.len()
            )));
        }
        if data.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidConfig(
                "messages must be finite and positive".into(),
            ));
        }
        let mut field = MessageField { q, data };
        field.normalize();
        Ok(field)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.q
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn message(&self, d: usize) -> &[f64] {
        &self.data[d * self.q..(d + 1) * self.q]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn normalize(&mut self) {
        for m in self.data.chunks_mut(self.q) {
            let s: f64 = m.iter().sum();
            m.iter_mut().for_each(|x| *x /= s);
        }
    }

    /// Apply a permutation to label indices: new label `perm[a]` gets old label `a`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self.data.chunks(self.q).zip(data.chunks_mut(self.q)) {
            for (a, &p) in perm.iter().enumerate() {
                dst[p] = src[a];
            }
        }
        MessageField { q: self.q, data }
    }

    /// Largest componentwise difference.
    pub fn max_diff(&self, other: &MessageField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest spread `max - min` within any single message; zero for the
    /// symmetric (disordered) fixed point.
    pub fn asymmetry(&self) -> f64 {
        self.data.chunks(self.q).fold(0.0, |m, c| {
            let hi = c.iter().cloned().fold(f64::MIN, f64::max);
            let lo = c.iter().cloned().fold(f64::MAX, f64::min);
            m.max(hi - lo)
        })
    }
}

/// Iteration controls shared by all fixed-point solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the previous message in the damped update; 0 disables damping.
    pub damping: f64,
}

impl Default for LbpOptions {
    fn default() -> Self {
        LbpOptions {
            tol: 1e-9,
            max_iter: 10_000,
            damping: 0.0,
        }
    }
}

impl LbpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig(format!(
                "damping must lie in [0, 1), got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

/// Node and edge beliefs at a message field, plus the Bethe log-partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Beliefs {
    pub q: usize,
    /// `|V| x q`, row-major.
    pub node: Vec<f64>,
    /// `|E| x q x q`; entry `(e, a, b)` is the probability that the first
    /// endpoint of edge `e` takes `a` and the second takes `b`.
    pub edge: Vec<f64>,
    /// Bethe estimate of the log partition function (not per pixel).
    pub log_partition: f64,
    /// Mean over edges of the probability that the endpoints differ.
    pub disagreement: f64,
}

impl Beliefs {
    pub fn node(&self, i: usize) -> &[f64] {
        &self.node[i * self.q..(i + 1) * self.q]
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        &self.edge[e * self.q * self.q..(e + 1) * self.q * self.q]
    }
}

/// Below this many items per task rayon keeps the work on one thread.
const PAR_MIN_LEN: usize = 1024;

/// Per-node likelihood weights `exp(ln g - max)`, with the row maxima kept
/// apart so `g` never has to be represented directly.
struct NodeWeights {
    w: Vec<f64>,
    max: Vec<f64>,
}

impl NodeWeights {
    fn new(grid: &Grid, q: usize, field: Option<&LikelihoodTable>) -> Self {
        match field {
            None => NodeWeights {
                w: vec![1.0; grid.num_nodes() * q],
                max: vec![0.0; grid.num_nodes()],
            },
            Some(t) => {
                let mut w = Vec::with_capacity(t.as_slice().len());
                let mut max = Vec::with_capacity(t.num_pixels());
                for i in 0..t.num_pixels() {
                    let row = t.row(i);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    w.extend(row.iter().map(|v| (v - m).exp()));
                    max.push(m);
                }
                NodeWeights { w, max }
            }
        }
    }
}

/// Cavity weight at `node`: its likelihood weight times every incoming
/// message except the one on directed edge `skip`. Messages are bounded
/// below by `1 / (q + e^(K/2) - 1)`, so the product cannot underflow.
fn cavity(
    grid: &Grid,
    weights: &NodeWeights,
    msgs: &[f64],
    node: usize,
    skip: Option<usize>,
    q: usize,
    out: &mut [f64],
) {
    out.copy_from_slice(&weights.w[node * q..(node + 1) * q]);
    for k in grid.incoming(node) {
        if Some(k) == skip {
            continue;
        }
        for (o, &m) in out.iter_mut().zip(&msgs[k * q..(k + 1) * q]) {
            *o *= m;
        }
    }
}

fn check_field(grid: &Grid, q: usize, field: Option<&LikelihoodTable>) -> Result<()> {
    if let Some(t) = field {
        if t.q() != q || t.num_pixels() != grid.num_nodes() {
            return Err(Error::SizeMismatch(format!(
                "likelihood table is {}x{}, grid has {} nodes and q = {q}",
                t.num_pixels(),
                t.q(),
                grid.num_nodes()
            )));
        }
    }
    Ok(())
}

/// One synchronous update of every message. Returns the new field and the
/// max-norm change.
pub(crate) fn sweep(
    grid: &Grid,
    coupling: Coupling,
    field: Option<&LikelihoodTable>,
    messages: &MessageField,
    damping: f64,
) -> (MessageField, f64) {
    let weights = NodeWeights::new(grid, messages.q, field);
    sweep_weighted(grid, coupling, &weights, messages, damping)
}

fn sweep_weighted(
    grid: &Grid,
    coupling: Coupling,
    weights: &NodeWeights,
    messages: &MessageField,
    damping: f64,
) -> (MessageField, f64) {
    let q = messages.q;
    let excess = coupling.excess();
    let mut data = vec![0.0; messages.data.len()];
    data.par_chunks_mut(q)
        .with_min_len(PAR_MIN_LEN)
        .enumerate()
        .for_each(|(d, out)| {
            cavity(
                grid,
                weights,
                &messages.data,
                grid.source(d),
                Some(grid.reverse(d)),
                q,
                out,
            );
            let s: f64 = out.iter().sum();
            let norm = s * (q as f64 + excess);
            for x in out.iter_mut() {
                *x = (s + excess * *x) / norm;
            }
            if damping > 0.0 {
                let old = messages.message(d);
                for (x, &o) in out.iter_mut().zip(old) {
                    *x = (1.0 - damping) * *x + damping * o;
                }
            }
        });
    let next = MessageField { q, data };
    let residual = next.max_diff(messages);
    (next, residual)
}

/// Outcome of iterating sweeps to a fixed point.
#[derive(Debug, Clone)]
pub(crate) struct LbpRun {
    pub messages: MessageField,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn iterate(
    grid: &Grid,
    coupling: Coupling,
    field: Option<&LikelihoodTable>,
    init: MessageField,
    opts: &LbpOptions,
) -> Result<LbpRun> {
    opts.validate()?;
    check_field(grid, init.q, field)?;
    if init.len() != grid.num_directed() {
        return Err(Error::SizeMismatch(
            "message field does not match the grid".into(),
        ));
    }
    let mut messages = init;
    if grid.num_directed() == 0 {
        return Ok(LbpRun {
            messages,
            residual: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let weights = NodeWeights::new(grid, messages.q, field);
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let (next, r) = sweep_weighted(grid, coupling, &weights, &messages, opts.damping);
        messages = next;
        residual = r;
        if r < opts.tol {
            return Ok(LbpRun {
                messages,
                residual,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(LbpRun {
        messages,
        residual,
        iterations: opts.max_iter,
        converged: false,
    })
}

/// Beliefs and Bethe log-partition `Σ_E ln Z_ij + Σ_i (1 - |∂i|) ln Z_i`.
pub(crate) fn beliefs(
    grid: &Grid,
    coupling: Coupling,
    field: Option<&LikelihoodTable>,
    messages: &MessageField,
) -> Beliefs {
    let q = messages.q;
    let weights = NodeWeights::new(grid, q, field);
    let msgs = &messages.data;
    let excess = coupling.excess();

    let mut node = vec![0.0; grid.num_nodes() * q];
    let node_logz: Vec<f64> = node
        .par_chunks_mut(q)
        .with_min_len(PAR_MIN_LEN)
        .enumerate()
        .map(|(i, out)| {
            cavity(grid, &weights, msgs, i, None, q, out);
            let s: f64 = out.iter().sum();
            out.iter_mut().for_each(|x| *x /= s);
            weights.max[i] + s.ln()
        })
        .collect();

    let mut edge = vec![0.0; grid.num_edges() * q * q];
    let edge_stats: Vec<(f64, f64)> = edge
        .par_chunks_mut(q * q)
        .with_min_len(PAR_MIN_LEN)
        .enumerate()
        .map_init(
            || (vec![0.0; q], vec![0.0; q]),
            |(ca, cb), (e, out)| {
                let (a, b) = grid.edges()[e];
                let (ab, ba) = grid.edge_directed(e);
                cavity(grid, &weights, msgs, a, Some(ba), q, ca);
                cavity(grid, &weights, msgs, b, Some(ab), q, cb);
                let sb: f64 = cb.iter().sum();
                let diag: f64 = ca.iter().zip(cb.iter()).map(|(x, y)| x * y).sum();
                let off: f64 = ca.iter().zip(cb.iter()).map(|(x, y)| x * (sb - y)).sum();
                let z = off + (1.0 + excess) * diag;
                let w_same = (1.0 + excess) / z;
                for (za, &x) in ca.iter().enumerate() {
                    for (zb, &y) in cb.iter().enumerate() {
                        out[za * q + zb] = if za == zb { x * y * w_same } else { x * y / z };
                    }
                }
                let log_z = weights.max[a] + weights.max[b] + z.ln();
                (log_z, off / z)
            },
        )
        .collect();

    // Fixed summation order keeps the reductions reproducible.
    let mut log_partition = 0.0;
    let mut disagreement = 0.0;
    for &(lz, off) in &edge_stats {
        log_partition += lz;
        disagreement += off;
    }
    for (i, &lz) in node_logz.iter().enumerate() {
        log_partition += (1.0 - grid.degree(i) as f64) * lz;
    }
    let disagreement = if edge_stats.is_empty() {
        0.0
    } else {
        disagreement / edge_stats.len() as f64
    };

    Beliefs {
        q,
        node,
        edge,
        log_partition,
        disagreement,
    }
}
