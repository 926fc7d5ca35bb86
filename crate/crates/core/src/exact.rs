//! Exact partition functions and marginals for small graphs.
//!
//! Ground truth for the message-passing code: brute-force enumeration on any
//! graph, and a transfer-matrix recursion on chains.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::lbp::Coupling;
use crate::observation::LikelihoodTable;

/// Enumeration is refused beyond this many configurations.
pub const MAX_STATES: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub q: usize,
    pub log_partition: f64,
    /// `|V| x q`.
    pub node: Vec<f64>,
    /// `|E| x q x q`, ordered like [`Grid::edges`].
    pub edge: Vec<f64>,
    pub disagreement: f64,
}

impl ExactResult {
    pub fn node(&self, i: usize) -> &[f64] {
        &self.node[i * self.q..(i + 1) * self.q]
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        &self.edge[e * self.q * self.q..(e + 1) * self.q * self.q]
    }
}

fn field_value(field: Option<&LikelihoodTable>, i: usize, a: usize) -> f64 {
    field.map_or(0.0, |t| t.row(i)[a])
}

fn check(n: usize, q: usize, field: Option<&LikelihoodTable>) -> Result<()> {
    if q < 2 {
        return Err(Error::InvalidLabelCount(q));
    }
    if let Some(t) = field {
        if t.q() != q || t.num_pixels() != n {
            return Err(Error::SizeMismatch(
                "likelihood table does not match the graph".into(),
            ));
        }
    }
    Ok(())
}

fn finish(
    q: usize,
    edges: &[(usize, usize)],
    mut node: Vec<f64>,
    mut edge: Vec<f64>,
    z: f64,
    log_shift: f64,
) -> ExactResult {
    node.iter_mut().for_each(|x| *x /= z);
    edge.iter_mut().for_each(|x| *x /= z);
    let disagreement = if edges.is_empty() {
        0.0
    } else {
        let mut off = 0.0;
        for e in edge.chunks(q * q) {
            for a in 0..q {
                for b in 0..q {
                    if a != b {
                        off += e[a * q + b];
                    }
                }
            }
        }
        off / edges.len() as f64
    };
    ExactResult {
        q,
        log_partition: log_shift + z.ln(),
        node,
        edge,
        disagreement,
    }
}

/// Sum over all `q^|V|` labelings with weight
/// `Π_E exp((K/2) δ) Π_i g_i(a_i)`.
pub fn enumerate(
    grid: &Grid,
    q: usize,
    coupling: Coupling,
    field: Option<&LikelihoodTable>,
) -> Result<ExactResult> {
    let n = grid.num_nodes();
    check(n, q, field)?;
    let states = (q as u64)
        .checked_pow(n as u32)
        .filter(|&s| s <= MAX_STATES);
    let states = states.ok_or(Error::StateSpaceTooLarge { q, n })?;

    let half_k = 0.5 * coupling.value();
    let edges = grid.edges();
    // Upper bound on any log weight; every term is exp(<= 0).
    let mut shift = half_k * edges.len() as f64;
    for i in 0..n {
        shift += (0..q)
            .map(|a| field_value(field, i, a))
            .fold(f64::NEG_INFINITY, f64::max);
    }

    let mut node = vec![0.0; n * q];
    let mut edge = vec![0.0; edges.len() * q * q];
    let mut z = 0.0;
    let mut config = vec![0usize; n];
    for _ in 0..states {
        let mut lw = -shift;
        for &(a, b) in edges {
            if config[a] == config[b] {
                lw += half_k;
            }
        }
        for (i, &a) in config.iter().enumerate() {
            lw += field_value(field, i, a);
        }
        let w = lw.exp();
        z += w;
        for (i, &a) in config.iter().enumerate() {
            node[i * q + a] += w;
        }
        for (e, &(a, b)) in edges.iter().enumerate() {
            edge[(e * q + config[a]) * q + config[b]] += w;
        }
        // Odometer increment.
        for c in config.iter_mut() {
            *c += 1;
            if *c < q {
                break;
            }
            *c = 0;
        }
    }
    Ok(finish(q, edges, node, edge, z, shift))
}

/// Exact chain `0 - 1 - ... - (n-1)` by scaled forward/backward products of
/// the `q x q` edge factor.
pub fn transfer_matrix_chain(
    n: usize,
    q: usize,
    coupling: Coupling,
    field: Option<&LikelihoodTable>,
) -> Result<ExactResult> {
    if n == 0 {
        return Err(Error::InvalidGrid("chain needs at least one node".into()));
    }
    check(n, q, field)?;
    let psi = |a: usize, b: usize| {
        if a == b {
            (0.5 * coupling.value()).exp()
        } else {
            1.0
        }
    };
    // Node factors rescaled by the row maximum.
    let mut g = vec![0.0; n * q];
    let mut log_scale = 0.0;
    for i in 0..n {
        let m = (0..q)
            .map(|a| field_value(field, i, a))
            .fold(f64::NEG_INFINITY, f64::max);
        log_scale += m;
        for a in 0..q {
            g[i * q + a] = (field_value(field, i, a) - m).exp();
        }
    }

    let mut fwd = vec![0.0; n * q];
    let mut fwd_norm = vec![0.0; n];
    for i in 0..n {
        for a in 0..q {
            let prior = if i == 0 {
                1.0
            } else {
                (0..q).map(|b| fwd[(i - 1) * q + b] * psi(b, a)).sum()
            };
            fwd[i * q + a] = g[i * q + a] * prior;
        }
        let s: f64 = fwd[i * q..(i + 1) * q].iter().sum();
        fwd[i * q..(i + 1) * q].iter_mut().for_each(|x| *x /= s);
        fwd_norm[i] = s;
    }
    let mut bwd = vec![1.0; n * q];
    for i in (0..n - 1).rev() {
        for a in 0..q {
            bwd[i * q + a] = (0..q)
                .map(|b| psi(a, b) * g[(i + 1) * q + b] * bwd[(i + 1) * q + b])
                .sum();
        }
        let s: f64 = bwd[i * q..(i + 1) * q].iter().sum();
        bwd[i * q..(i + 1) * q].iter_mut().for_each(|x| *x /= s);
    }

    let mut node = vec![0.0; n * q];
    for i in 0..n {
        let s: f64 = (0..q).map(|a| fwd[i * q + a] * bwd[i * q + a]).sum();
        for a in 0..q {
            node[i * q + a] = fwd[i * q + a] * bwd[i * q + a] / s;
        }
    }
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    let mut edge = vec![0.0; edges.len() * q * q];
    for (e, &(a_node, b_node)) in edges.iter().enumerate() {
        let block = &mut edge[e * q * q..(e + 1) * q * q];
        for a in 0..q {
            for b in 0..q {
                block[a * q + b] =
                    fwd[a_node * q + a] * psi(a, b) * g[b_node * q + b] * bwd[b_node * q + b];
            }
        }
        let s: f64 = block.iter().sum();
        block.iter_mut().for_each(|x| *x /= s);
    }
    let log_partition = log_scale + fwd_norm.iter().map(|x| x.ln()).sum::<f64>();
    let mut r = finish(q, &edges, node, edge, 1.0, 0.0);
    r.log_partition = log_partition;
    Ok(r)
}
