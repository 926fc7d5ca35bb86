//! Potts prior: message fixed points on a grid, the coupling that realizes
//! a target disagreement rate, and the phase-transition analyzer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::homogeneous::{Branch, HomogeneousLattice, SYMMETRY_THRESHOLD};
use crate::lbp::{self, Beliefs, Coupling, LbpOptions, MessageField};

/// Weight on label 0 used for the symmetry-broken initialization.
pub const ORDERED_BIAS: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub enum MessageInit {
    Uniform,
    Ordered { bias: f64 },
    Given(MessageField),
}

impl MessageInit {
    pub(crate) fn build(&self, grid: &Grid, q: usize) -> Result<MessageField> {
        match self {
            MessageInit::Uniform => Ok(MessageField::uniform(grid, q)),
            MessageInit::Ordered { bias } => {
                if !(*bias > 0.0 && *bias < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "ordered bias must lie in (0, 1), got {bias}"
                    )));
                }
                Ok(MessageField::ordered(grid, q, *bias))
            }
            MessageInit::Given(m) => {
                if m.q() != q || m.len() != grid.num_directed() {
                    return Err(Error::SizeMismatch(
                        "initial messages do not match the grid".into(),
                    ));
                }
                Ok(m.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorFixedPointReport {
    pub messages: MessageField,
    /// Bethe free energy per pixel, `-ln Z / |V|`.
    pub free_energy: f64,
    pub disagreement: f64,
    pub residual: f64,
    pub branch: Branch,
    pub iterations: usize,
    pub converged: bool,
    pub beliefs: Beliefs,
}

/// One synchronous prior update of every message.
pub fn prior_sweep(
    grid: &Grid,
    coupling: Coupling,
    messages: &MessageField,
    damping: f64,
) -> MessageField {
    lbp::sweep(grid, coupling, None, messages, damping).0
}

pub fn solve_prior_fixed_point(
    grid: &Grid,
    q: usize,
    coupling: Coupling,
    init: &MessageInit,
    opts: &LbpOptions,
) -> Result<PriorFixedPointReport> {
    let start = init.build(grid, q)?;
    let run = lbp::iterate(grid, coupling, None, start, opts)?;
    let beliefs = lbp::beliefs(grid, coupling, None, &run.messages);
    let branch = if run.messages.asymmetry() > SYMMETRY_THRESHOLD {
        Branch::Ordered
    } else {
        Branch::Disordered
    };
    Ok(PriorFixedPointReport {
        free_energy: -beliefs.log_partition / grid.num_nodes() as f64,
        disagreement: beliefs.disagreement,
        residual: run.residual,
        branch,
        iterations: run.iterations,
        converged: run.converged,
        messages: run.messages,
        beliefs,
    })
}

/// Solve from the uniform and the ordered initialization and keep the
/// lower free energy. A converged solution always beats an unconverged one.
pub fn solve_prior_resolved(
    grid: &Grid,
    q: usize,
    coupling: Coupling,
    opts: &LbpOptions,
) -> Result<PriorFixedPointReport> {
    let dis = solve_prior_fixed_point(grid, q, coupling, &MessageInit::Uniform, opts)?;
    let ord = solve_prior_fixed_point(
        grid,
        q,
        coupling,
        &MessageInit::Ordered { bias: ORDERED_BIAS },
        opts,
    )?;
    Ok(pick_lower(dis, ord))
}

pub(crate) fn pick_lower(
    a: PriorFixedPointReport,
    b: PriorFixedPointReport,
) -> PriorFixedPointReport {
    match (a.converged, b.converged) {
        (true, false) => a,
        (false, true) => b,
        _ if b.free_energy < a.free_energy && b.branch == Branch::Ordered => b,
        _ => a,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMethod {
    /// Joint iteration of a message sweep and `K <- K (u_K / u)^(1/4)`.
    PaperMultiplicative,
    Bisection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSolution {
    pub coupling: f64,
    /// Prior disagreement actually attained at `coupling`.
    pub disagreement: f64,
    pub free_energy: f64,
    pub branch: Branch,
    /// Method that produced the answer; differs from the request when the
    /// multiplicative rule stalled and bisection took over.
    pub method: AlphaMethod,
    pub iterations: usize,
}

const MULTIPLICATIVE_MAX_ITER: usize = 200_000;

fn check_domain(q: usize, u: f64) -> Result<bool> {
    let max = (q - 1) as f64 / q as f64;
    if !u.is_finite() || u <= 0.0 || u > max + 1e-12 {
        return Err(Error::DisagreementOutOfDomain { u, max });
    }
    Ok(u >= max - 1e-12)
}

/// Coupling of the square-lattice prior whose disagreement rate is `u`.
pub fn solve_alpha_for_u(q: usize, u: f64, method: AlphaMethod, tol: f64) -> Result<AlphaSolution> {
    solve_alpha_from(q, u, method, tol, 1.0)
}

/// As [`solve_alpha_for_u`], starting the multiplicative rule at `k_start`.
pub fn solve_alpha_from(
    q: usize,
    u: f64,
    method: AlphaMethod,
    tol: f64,
    k_start: f64,
) -> Result<AlphaSolution> {
    if q < 2 {
        return Err(Error::InvalidLabelCount(q));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let h = HomogeneousLattice::square(q);
    if check_domain(q, u)? {
        let (f, d) = h.evaluate(&h.uniform(), Coupling::ZERO);
        return Ok(AlphaSolution {
            coupling: 0.0,
            disagreement: d,
            free_energy: f,
            branch: Branch::Disordered,
            method,
            iterations: 0,
        });
    }
    match method {
        AlphaMethod::Bisection => bisect_alpha(&h, u, tol),
        AlphaMethod::PaperMultiplicative => {
            if !(k_start > 0.0 && k_start.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "starting coupling must be positive, got {k_start}"
                )));
            }
            match multiplicative(&h, u, tol, k_start) {
                Some(sol) => Ok(sol),
                None => bisect_alpha(&h, u, tol),
            }
        }
    }
}

fn multiplicative(h: &HomogeneousLattice, u: f64, tol: f64, k_start: f64) -> Option<AlphaSolution> {
    let mut msg = h.ordered(ORDERED_BIAS);
    let mut k = k_start;
    for it in 1..=MULTIPLICATIVE_MAX_ITER {
        let c = Coupling::new(k).ok()?;
        let next = h.map(&msg, c);
        let (_, u_now) = h.evaluate(&next, c);
        let k_next = k * (u_now / u).powf(0.25);
        if !k_next.is_finite() || k_next <= 0.0 {
            return None;
        }
        let dm = next
            .iter()
            .zip(&msg)
            .fold(0.0, |r: f64, (a, b)| r.max((a - b).abs()));
        let dk = (k_next - k).abs();
        msg = next;
        k = k_next;
        if dk < 1e-3 * tol * k.max(1.0) && dm < 1e-3 * tol {
            let p = h.point(Coupling::new(k).ok()?, msg, dm, it, true);
            if (p.disagreement - u).abs() >= tol {
                return None;
            }
            return Some(AlphaSolution {
                coupling: k,
                disagreement: p.disagreement,
                free_energy: p.free_energy,
                branch: p.branch,
                method: AlphaMethod::PaperMultiplicative,
                iterations: it,
            });
        }
    }
    None
}

/// Coupling found by running the multiplicative rule on an actual grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAlpha {
    pub coupling: f64,
    /// Prior disagreement on the grid at `coupling`.
    pub disagreement: f64,
    pub messages: MessageField,
    pub iterations: usize,
    pub method: AlphaMethod,
}

/// The multiplicative rule with the sums taken over the edges of `grid`.
/// `warm` messages are reused only when they are symmetry broken: exactly
/// symmetric messages stay symmetric under every sweep, so they could never
/// reach the ordered part of the curve. Falls back to bisection on `K`
/// (ordered initialization at every step) when the rule does not settle.
pub fn solve_alpha_on_grid(
    grid: &Grid,
    q: usize,
    u: f64,
    tol: f64,
    k_start: f64,
    warm: Option<&MessageField>,
    max_iter: usize,
) -> Result<GridAlpha> {
    if q < 2 {
        return Err(Error::InvalidLabelCount(q));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if grid.num_edges() == 0 {
        return Err(Error::InvalidGrid(
            "the disagreement rate needs at least one edge".into(),
        ));
    }
    if check_domain(q, u)? {
        return Ok(GridAlpha {
            coupling: 0.0,
            disagreement: (q - 1) as f64 / q as f64,
            messages: MessageField::uniform(grid, q),
            iterations: 0,
            method: AlphaMethod::PaperMultiplicative,
        });
    }
    if !(k_start > 0.0 && k_start.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "starting coupling must be positive, got {k_start}"
        )));
    }
    let mut msgs = match warm {
        Some(m)
            if m.q() == q
                && m.len() == grid.num_directed()
                && m.asymmetry() > SYMMETRY_THRESHOLD =>
        {
            m.clone()
        }
        _ => MessageField::ordered(grid, q, ORDERED_BIAS),
    };
    let mut k = k_start;
    for it in 1..=max_iter {
        let c = Coupling::new(k)?;
        let (next, dm) = lbp::sweep(grid, c, None, &msgs, 0.0);
        let u_now = lbp::beliefs(grid, c, None, &next).disagreement;
        let k_next = k * (u_now / u).powf(0.25);
        if !k_next.is_finite() || k_next <= 0.0 {
            break;
        }
        let dk = (k_next - k).abs();
        msgs = next;
        k = k_next;
        if dk < 1e-3 * tol * k.max(1.0) && dm < 1e-3 * tol {
            if (u_now - u).abs() < tol {
                return Ok(GridAlpha {
                    coupling: k,
                    disagreement: u_now,
                    messages: msgs,
                    iterations: it,
                    method: AlphaMethod::PaperMultiplicative,
                });
            }
            break;
        }
    }
    bisect_on_grid(grid, q, u, tol)
}

fn bisect_on_grid(grid: &Grid, q: usize, u: f64, tol: f64) -> Result<GridAlpha> {
    let opts = LbpOptions {
        tol: 1e-3 * tol,
        ..LbpOptions::default()
    };
    let solve = |k: f64| {
        solve_prior_fixed_point(
            grid,
            q,
            Coupling::new(k)?,
            &MessageInit::Ordered { bias: ORDERED_BIAS },
            &opts,
        )
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while solve(hi)?.disagreement > u {
        hi *= 2.0;
        if hi > 64.0 {
            return Err(Error::NotConverged(format!(
                "no coupling found for disagreement {u}"
            )));
        }
    }
    let mut best = (hi, solve(hi)?);
    let mut iterations = 0;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        let r = solve(mid)?;
        iterations += 1;
        if (r.disagreement - u).abs() < (best.1.disagreement - u).abs() {
            best = (mid, r.clone());
        }
        if (r.disagreement - u).abs() < 1e-3 * tol {
            break;
        }
        if r.disagreement > u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(GridAlpha {
        coupling: best.0,
        disagreement: best.1.disagreement,
        messages: best.1.messages,
        iterations,
        method: AlphaMethod::Bisection,
    })
}

/// Location of the maximum of `u` along the broken branch, as `t = ln r`.
fn branch_peak(h: &HomogeneousLattice) -> f64 {
    let u_at = |t: f64| {
        h.broken_branch(t.exp())
            .map_or(f64::NEG_INFINITY, |(_, u, _)| u)
    };
    let step = 0.01;
    let mut best = (1e-9, u_at(1e-9));
    for i in 1..=1000 {
        let t = i as f64 * step;
        let v = u_at(t);
        if v > best.1 {
            best = (t, v);
        }
    }
    if best.0 < step {
        return 0.0;
    }
    let (mut a, mut b) = ((best.0 - step).max(1e-9), best.0 + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while b - a > 1e-12 {
        if u_at(c) > u_at(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}

/// Bisection on the single-valued curve: the symmetric solution down to the
/// bifurcation, then the part of the broken branch where `u` decreases.
fn bisect_alpha(h: &HomogeneousLattice, u: f64, tol: f64) -> Result<AlphaSolution> {
    let k_bif = h.bifurcation_coupling();
    let u_bif = h.disordered_disagreement(k_bif);
    let target = 1e-3 * tol;
    let mut iterations = 0;
    if u >= u_bif {
        let uniform = h.uniform();
        let (mut lo, mut hi) = (0.0, k_bif);
        let mut k = 0.5 * (lo + hi);
        while hi - lo > 1e-15 * hi.max(1.0) {
            k = 0.5 * (lo + hi);
            iterations += 1;
            let (_, d) = h.evaluate(&uniform, Coupling::new(k)?);
            if (d - u).abs() < target {
                break;
            }
            if d > u {
                lo = k;
            } else {
                hi = k;
            }
        }
        let c = Coupling::new(k)?;
        let p = h.point(c, uniform, 0.0, iterations, true);
        return Ok(AlphaSolution {
            coupling: k,
            disagreement: p.disagreement,
            free_energy: p.free_energy,
            branch: Branch::Disordered,
            method: AlphaMethod::Bisection,
            iterations,
        });
    }
    let u_at = |t: f64| h.broken_branch(t.exp());
    let mut lo = branch_peak(h).max(1e-9);
    let mut hi = lo + 1.0;
    while u_at(hi).is_none_or(|(_, v, _)| v > u) {
        hi += 1.0;
        if hi > 150.0 {
            return Err(Error::NotConverged(format!(
                "no coupling found for disagreement {u}"
            )));
        }
    }
    let mut best = u_at(hi).expect("bracket end is on the branch");
    while hi - lo > 1e-15 * hi {
        let t = 0.5 * (lo + hi);
        iterations += 1;
        let Some(p) = u_at(t) else {
            lo = t;
            continue;
        };
        best = p;
        if (p.1 - u).abs() < target {
            break;
        }
        if p.1 > u {
            lo = t;
        } else {
            hi = t;
        }
    }
    let (k, d, f) = best;
    Ok(AlphaSolution {
        coupling: k,
        disagreement: d,
        free_energy: f,
        branch: Branch::Ordered,
        method: AlphaMethod::Bisection,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    FirstOrder,
    NoneDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub q: usize,
    #[serde(rename = "K_C")]
    pub k_c: Option<f64>,
    pub kind: TransitionKind,
    /// Coupling where the symmetric fixed point becomes unstable.
    pub onset: Option<f64>,
}

const BRANCH_TOL: f64 = 1e-13;
const BRANCH_MAX_ITER: usize = 1_000_000;

/// Largest eigenvalue of the linearized map at the symmetric point, along
/// the direction that favours label 0.
fn symmetric_stability(h: &HomogeneousLattice, coupling: Coupling) -> f64 {
    let q = h.q();
    let eps = 1e-6;
    let mut v = vec![-1.0 / q as f64; q];
    v[0] += 1.0;
    let shifted = |s: f64| -> Vec<f64> {
        let m: Vec<f64> = h
            .uniform()
            .iter()
            .zip(&v)
            .map(|(a, b)| a + s * eps * b)
            .collect();
        h.map(&m, coupling)
    };
    let (p, n) = (shifted(1.0), shifted(-1.0));
    let num: f64 = p
        .iter()
        .zip(&n)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = 2.0 * eps * v.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den
}

fn onset(h: &HomogeneousLattice, lo: f64, hi: f64, tol: f64) -> Option<f64> {
    let g =
        |k: f64| symmetric_stability(h, Coupling::new(k).expect("bracket is non-negative")) - 1.0;
    let (mut a, mut b) = (lo, hi);
    if g(a) > 0.0 || g(b) < 0.0 {
        return None;
    }
    while b - a > tol {
        let m = 0.5 * (a + b);
        if g(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

fn check_bracket(bracket: (f64, f64)) -> Result<()> {
    let (lo, hi) = bracket;
    if !(lo >= 0.0 && hi <= 6.0 && lo < hi) {
        return Err(Error::InvalidConfig(format!(
            "bracket must satisfy 0 <= lo < hi <= 6, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// First-order transition of the square-lattice Potts prior: the coupling
/// where the free energies of the symmetric and the ordered branch cross.
pub fn transition_point(q: usize, bracket: (f64, f64), tol: f64) -> Result<TransitionReport> {
    if q < 2 {
        return Err(Error::InvalidLabelCount(q));
    }
    check_bracket(bracket)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let h = HomogeneousLattice::square(q);
    let onset = onset(&h, bracket.0, bracket.1, tol.min(1e-9));
    let gap = |k: f64, init: &[f64]| -> Option<(f64, Vec<f64>)> {
        let c = Coupling::new(k).ok()?;
        let ord = h.fixed_point(c, init, BRANCH_TOL, BRANCH_MAX_ITER);
        if ord.branch != Branch::Ordered {
            return None;
        }
        let (f_dis, _) = h.evaluate(&h.uniform(), c);
        Some((ord.free_energy - f_dis, ord.message))
    };

    let step = 0.01;
    let n = ((bracket.1 - bracket.0) / step).ceil() as usize;
    let mut warm = h.ordered(ORDERED_BIAS);
    let mut seen_above = None;
    let mut crossing = None;
    for i in 0..=n {
        let k = (bracket.0 + i as f64 * step).min(bracket.1);
        match gap(k, &warm) {
            Some((g, msg)) => {
                if g > 0.0 {
                    seen_above = Some(k);
                } else if let Some(k_above) = seen_above {
                    crossing = Some((k_above, k, msg.clone()));
                    break;
                }
                warm = msg;
            }
            None => {
                seen_above = None;
                warm = h.ordered(ORDERED_BIAS);
            }
        }
    }

    let Some((mut lo, mut hi, msg)) = crossing else {
        return Ok(TransitionReport {
            q,
            k_c: None,
            kind: TransitionKind::NoneDetected,
            onset,
        });
    };
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match gap(mid, &msg) {
            Some((g, _)) if g <= 0.0 => hi = mid,
            _ => lo = mid,
        }
    }
    Ok(TransitionReport {
        q,
        k_c: Some(0.5 * (lo + hi)),
        kind: TransitionKind::FirstOrder,
        onset,
    })
}

/// Crossing of the ordered and symmetric prior free energies on `grid`,
/// by bisection inside `bracket`.
pub fn lattice_transition(
    grid: &Grid,
    q: usize,
    bracket: (f64, f64),
    lbp: &LbpOptions,
) -> Result<Option<f64>> {
    let gap = |k: f64| -> Result<f64> {
        let c = Coupling::new(k)?;
        let dis = solve_prior_fixed_point(grid, q, c, &MessageInit::Uniform, lbp)?;
        let ord = solve_prior_fixed_point(
            grid,
            q,
            c,
            &MessageInit::Ordered { bias: ORDERED_BIAS },
            lbp,
        )?;
        if ord.branch != Branch::Ordered {
            return Ok(f64::INFINITY);
        }
        Ok(ord.free_energy - dis.free_energy)
    };
    let (mut lo, mut hi) = bracket;
    if gap(lo)? <= 0.0 || gap(hi)? >= 0.0 {
        return Ok(None);
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if gap(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyRow {
    #[serde(rename = "K")]
    pub coupling: f64,
    pub f: f64,
    #[serde(rename = "dfdK")]
    pub dfdk: f64,
    pub u: f64,
    pub branch: Branch,
}

/// Branch-resolved free energy of the square-lattice prior on a grid of
/// couplings.
pub fn free_energy_curve(q: usize, ks: &[f64]) -> Result<Vec<FreeEnergyRow>> {
    if q < 2 {
        return Err(Error::InvalidLabelCount(q));
    }
    if ks.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig(
            "coupling grid must be ascending".into(),
        ));
    }
    let h = HomogeneousLattice::square(q);
    let mut warm = h.ordered(ORDERED_BIAS);
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let c = Coupling::new(k)?;
        let dis = h.point(c, h.uniform(), 0.0, 0, true);
        let ord = h.fixed_point(c, &warm, BRANCH_TOL, BRANCH_MAX_ITER);
        warm = if ord.branch == Branch::Ordered {
            ord.message.clone()
        } else {
            h.ordered(ORDERED_BIAS)
        };
        let p = if ord.branch == Branch::Ordered && ord.free_energy < dis.free_energy {
            ord
        } else {
            dis
        };
        rows.push(FreeEnergyRow {
            coupling: k,
            f: p.free_energy,
            dfdk: -h.half_edges_per_node() * (1.0 - p.disagreement),
            u: p.disagreement,
            branch: p.branch,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub u: f64,
    pub alpha: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaCurve {
    pub rows: Vec<AlphaRow>,
    /// Grid values outside the domain, with the reason.
    pub rejected: Vec<(f64, Error)>,
}

pub fn alpha_curve(q: usize, us: &[f64], method: AlphaMethod, tol: f64) -> Result<AlphaCurve> {
    if q < 2 {
        return Err(Error::InvalidLabelCount(q));
    }
    let mut curve = AlphaCurve {
        rows: Vec::new(),
        rejected: Vec::new(),
    };
    for &u in us {
        match solve_alpha_for_u(q, u, method, tol) {
            Ok(s) => curve.rows.push(AlphaRow {
                u,
                alpha: s.coupling,
                f: s.free_energy,
            }),
            Err(e @ Error::DisagreementOutOfDomain { .. }) => curve.rejected.push((u, e)),
            Err(e) => return Err(e),
        }
    }
    Ok(curve)
}

/// Free energy curve on a finite lattice. Both initializations are solved
/// at every coupling and the lower free energy is kept.
pub fn lattice_free_energy_curve(
    grid: &Grid,
    q: usize,
    ks: &[f64],
    lbp: &LbpOptions,
) -> Result<Vec<FreeEnergyRow>> {
    if q < 2 {
        return Err(Error::InvalidLabelCount(q));
    }
    if ks.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig(
            "coupling grid must be ascending".into(),
        ));
    }
    let scale = grid.num_edges() as f64 / (2.0 * grid.num_nodes() as f64);
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let r = solve_prior_resolved(grid, q, Coupling::new(k)?, lbp)?;
        if !r.converged {
            return Err(Error::NotConverged(format!("prior messages at K = {k}")));
        }
        rows.push(FreeEnergyRow {
            coupling: k,
            f: r.free_energy,
            dfdk: -scale * (1.0 - r.disagreement),
            u: r.disagreement,
            branch: r.branch,
        });
    }
    Ok(rows)
}

/// `alpha_curve` on a finite lattice, continuing the coupling and the
/// prior messages from one grid value to the next.
pub fn lattice_alpha_curve(
    grid: &Grid,
    q: usize,
    us: &[f64],
    tol: f64,
    max_iter: usize,
    lbp: &LbpOptions,
) -> Result<AlphaCurve> {
    let mut curve = AlphaCurve {
        rows: Vec::new(),
        rejected: Vec::new(),
    };
    let mut k = 1.0;
    let mut warm: Option<MessageField> = None;
    for &u in us {
        match solve_alpha_on_grid(grid, q, u, tol, k, warm.as_ref(), max_iter) {
            Ok(a) => {
                let init = MessageInit::Given(a.messages.clone());
                let r = solve_prior_fixed_point(grid, q, Coupling::new(a.coupling)?, &init, lbp)?;
                curve.rows.push(AlphaRow {
                    u,
                    alpha: a.coupling,
                    f: r.free_energy,
                });
                if a.coupling > 0.0 {
                    k = a.coupling;
                }
                warm = Some(a.messages);
            }
            Err(e @ Error::DisagreementOutOfDomain { .. }) => curve.rejected.push((u, e)),
            Err(e) => return Err(e),
        }
    }
    Ok(curve)
}
