//! Translation-invariant reduction of prior message passing on a regular
//! lattice (the periodic square lattice has degree 4).
//!
//! When every message is the same vector `λ`, one sweep is the map
//! `λ'(ξ) ∝ Σ_ζ ψ(ξ, ζ) λ(ζ)^(z-1)`, and all per-pixel quantities follow
//! from `λ` alone.

use serde::{Deserialize, Serialize};

use crate::lbp::Coupling;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Disordered,
    Ordered,
}

/// Messages whose components differ by less than this are symmetric.
pub const SYMMETRY_THRESHOLD: f64 = 1e-6;

/// Free energy, disagreement and message of one homogeneous fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousPoint {
    pub coupling: f64,
    pub message: Vec<f64>,
    pub free_energy: f64,
    pub disagreement: f64,
    pub branch: Branch,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A `q`-state Potts prior on an infinite regular lattice of degree `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousLattice {
    q: usize,
    degree: usize,
}

impl HomogeneousLattice {
    pub fn new(q: usize, degree: usize) -> Self {
        assert!(q >= 2 && degree >= 3, "need q >= 2 and degree >= 3");
        HomogeneousLattice { q, degree }
    }

    /// The periodic square lattice.
    pub fn square(q: usize) -> Self {
        Self::new(q, 4)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// `|E| / (2 |V|)`.
    pub fn half_edges_per_node(&self) -> f64 {
        self.degree as f64 / 4.0
    }

    pub fn uniform(&self) -> Vec<f64> {
        vec![1.0 / self.q as f64; self.q]
    }

    pub fn ordered(&self, bias: f64) -> Vec<f64> {
        let mut m = vec![(1.0 - bias) / (self.q - 1) as f64; self.q];
        m[0] = bias;
        m
    }

    /// One application of the message update.
    pub fn map(&self, message: &[f64], coupling: Coupling) -> Vec<f64> {
        let excess = coupling.excess();
        let cav: Vec<f64> = message
            .iter()
            .map(|x| x.powi(self.degree as i32 - 1))
            .collect();
        let s: f64 = cav.iter().sum();
        let norm = s * (self.q as f64 + excess);
        cav.iter().map(|c| (s + excess * c) / norm).collect()
    }

    /// `(free energy per node, edge disagreement)` at message `λ`, using
    /// `f = -(z/2) ln Z_ij - (1 - z) ln Z_i`.
    pub fn evaluate(&self, message: &[f64], coupling: Coupling) -> (f64, f64) {
        let z = self.degree as i32;
        let cav: Vec<f64> = message.iter().map(|x| x.powi(z - 1)).collect();
        let s: f64 = cav.iter().sum();
        let diag: f64 = cav.iter().map(|c| c * c).sum();
        let off: f64 = cav.iter().map(|c| c * (s - c)).sum();
        let z_edge = off + (0.5 * coupling.value()).exp() * diag;
        let z_node: f64 = message.iter().map(|x| x.powi(z)).sum();
        let f = -(z as f64 / 2.0) * z_edge.ln() - (1.0 - z as f64) * z_node.ln();
        (f, off / z_edge)
    }

    /// Iterate the map from `init` until the max-norm change drops below `tol`.
    pub fn fixed_point(
        &self,
        coupling: Coupling,
        init: &[f64],
        tol: f64,
        max_iter: usize,
    ) -> HomogeneousPoint {
        let mut m = init.to_vec();
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        while iterations < max_iter {
            let next = self.map(&m, coupling);
            residual = next
                .iter()
                .zip(&m)
                .fold(0.0, |r, (a, b)| r.max((a - b).abs()));
            m = next;
            iterations += 1;
            if residual < tol {
                break;
            }
        }
        self.point(coupling, m, residual, iterations, residual < tol)
    }

    pub(crate) fn point(
        &self,
        coupling: Coupling,
        message: Vec<f64>,
        residual: f64,
        iterations: usize,
        converged: bool,
    ) -> HomogeneousPoint {
        let (free_energy, disagreement) = self.evaluate(&message, coupling);
        let hi = message.iter().cloned().fold(f64::MIN, f64::max);
        let lo = message.iter().cloned().fold(f64::MAX, f64::min);
        HomogeneousPoint {
            coupling: coupling.value(),
            free_energy,
            disagreement,
            branch: if hi - lo > SYMMETRY_THRESHOLD {
                Branch::Ordered
            } else {
                Branch::Disordered
            },
            message,
            residual,
            iterations,
            converged,
        }
    }

    /// Closed form of the symmetric fixed point: `u = (q-1) / (e^(K/2) + q - 1)`.
    pub fn disordered_disagreement(&self, coupling: f64) -> f64 {
        let q1 = (self.q - 1) as f64;
        q1 / ((0.5 * coupling).exp() + q1)
    }

    /// Coupling where the symmetric fixed point loses stability and the
    /// one-label-favoured branch bifurcates from it:
    /// `e^(K/2) = (q - 2 + z) / (z - 2)`.
    pub fn bifurcation_coupling(&self) -> f64 {
        let z = self.degree as f64;
        2.0 * ((self.q as f64 - 2.0 + z) / (z - 2.0)).ln()
    }

    /// Point on the branch whose messages are `(r, 1, ..., 1)` up to
    /// normalization, with `r > 1`. Solving the fixed-point condition for
    /// the coupling gives
    /// `e^(K/2) = (q - 1 - (q-2) r - r^z) / (r - r^(z-1))`.
    ///
    /// Returns `(K, u, f)`, or `None` when `r` does not give a positive
    /// coupling.
    pub fn broken_branch(&self, r: f64) -> Option<(f64, f64, f64)> {
        let q = self.q as f64;
        let z = self.degree as i32;
        let num = q - 1.0 - (q - 2.0) * r - r.powi(z);
        let den = r - r.powi(z - 1);
        let e_half_k = num / den;
        if !(e_half_k > 1.0) || !e_half_k.is_finite() {
            return None;
        }
        let k = 2.0 * e_half_k.ln();
        let mut message = vec![1.0; self.q];
        message[0] = r;
        let s: f64 = message.iter().sum();
        message.iter_mut().for_each(|x| *x /= s);
        let (f, u) = self.evaluate(&message, Coupling::new(k).ok()?);
        Some((k, u, f))
    }
}
