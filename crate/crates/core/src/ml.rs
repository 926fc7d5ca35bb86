//! Maximum marginal likelihood over the coupling: `Θ(K)` by EM at each
//! `K`, the Bethe estimate of `ln P(d | K, Θ(K))`, and detection of the kink
//! the prior's first-order transition leaves in that curve.

use serde::{Deserialize, Serialize};

use crate::cme::image_grid;
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid, LabelField, LabelSet};
use crate::homogeneous::Branch;
use crate::lbp::{Coupling, LbpOptions, MessageField};
use crate::observation::{
    init_params, likelihood_table, weighted_mean_cov, ColorImage, GaussianParams, LikelihoodTable,
};
use crate::posterior::{mpm_label, solve_posterior_fixed_point, PosteriorState};
use crate::prior::{
    lattice_transition, pick_lower, solve_prior_fixed_point, transition_point, MessageInit,
    PriorFixedPointReport, TransitionKind, ORDERED_BIAS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFit {
    pub params: GaussianParams,
    pub table: LikelihoodTable,
    /// Posterior at the returned parameters.
    pub state: PosteriorState,
    pub iterations: usize,
    pub converged: bool,
    pub empty_labels: Vec<usize>,
}

/// EM at fixed coupling: posterior messages, then the weighted update,
/// until the parameters move by less than `tol`.
pub fn fit_theta_at_k(
    grid: &Grid,
    image: &ColorImage,
    coupling: Coupling,
    init: &GaussianParams,
    messages: Option<&MessageField>,
    tol: f64,
    max_iter: usize,
    lbp: &LbpOptions,
) -> Result<ThetaFit> {
    let q = init.q();
    let mut params = init.clone();
    let mut msgs = messages
        .cloned()
        .unwrap_or_else(|| MessageField::uniform(grid, q));
    let mut converged = false;
    let mut iterations = 0;
    let mut empty_labels = Vec::new();
    let mut lbp_ok = true;
    while iterations < max_iter {
        iterations += 1;
        let table = likelihood_table(image, &params)?;
        let state =
            solve_posterior_fixed_point(grid, coupling, &table, &MessageInit::Given(msgs), lbp)?;
        lbp_ok = state.converged;
        let update = weighted_mean_cov(image, &state.beliefs.node, &params)?;
        let drift = update.params.max_diff(&params);
        params = update.params;
        empty_labels = update.empty_labels;
        msgs = state.messages;
        if drift < tol {
            converged = true;
            break;
        }
    }
    let table = likelihood_table(image, &params)?;
    let state =
        solve_posterior_fixed_point(grid, coupling, &table, &MessageInit::Given(msgs), lbp)?;
    Ok(ThetaFit {
        converged: converged && lbp_ok && state.converged,
        params,
        table,
        state,
        iterations,
        empty_labels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogLikelihood {
    /// `(ln Y(d, K, Θ) - ln Y(K)) / |V|`.
    pub value: f64,
    pub u_post: f64,
    pub u_prior: f64,
    pub prior_branch: Branch,
    pub converged: bool,
    pub posterior: PosteriorState,
    pub prior: PriorFixedPointReport,
}

/// Prior on `grid` from the symmetric and the ordered start (the latter
/// warm-started when possible), keeping the lower free energy.
fn resolved_prior(
    grid: &Grid,
    q: usize,
    coupling: Coupling,
    warm: Option<&MessageField>,
    lbp: &LbpOptions,
) -> Result<PriorFixedPointReport> {
    let dis = solve_prior_fixed_point(grid, q, coupling, &MessageInit::Uniform, lbp)?;
    let init = match warm {
        Some(m) => MessageInit::Given(m.clone()),
        None => MessageInit::Ordered { bias: ORDERED_BIAS },
    };
    let ord = solve_prior_fixed_point(grid, q, coupling, &init, lbp)?;
    Ok(pick_lower(dis, ord))
}

fn combine(grid: &Grid, posterior: PosteriorState, prior: PriorFixedPointReport) -> LogLikelihood {
    LogLikelihood {
        value: (posterior.log_partition - prior.beliefs.log_partition) / grid.num_nodes() as f64,
        u_post: posterior.disagreement,
        u_prior: prior.disagreement,
        prior_branch: prior.branch,
        converged: posterior.converged && prior.converged,
        posterior,
        prior,
    }
}

/// Per-pixel log marginal likelihood at fixed `K` and `Θ`.
pub fn log_marginal_likelihood(
    grid: &Grid,
    image: &ColorImage,
    coupling: Coupling,
    params: &GaussianParams,
    lbp: &LbpOptions,
) -> Result<LogLikelihood> {
    let table = likelihood_table(image, params)?;
    let posterior =
        solve_posterior_fixed_point(grid, coupling, &table, &MessageInit::Uniform, lbp)?;
    let prior = resolved_prior(grid, params.q(), coupling, None, lbp)?;
    Ok(combine(grid, posterior, prior))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlConfig {
    pub labels: usize,
    pub boundary: Boundary,
    /// Coarse coupling grid, ascending.
    pub grid: Vec<f64>,
    pub refine_step: f64,
    /// Number of best coarse points refined.
    pub refine_top: usize,
    /// EM stopping threshold on the parameter drift.
    pub fit_tol: f64,
    pub fit_max_iter: usize,
    pub lbp: LbpOptions,
    pub seed: u64,
    /// Slope gap must exceed this multiple of the grid noise.
    pub kink_factor: f64,
    /// Stationarity polish stops at `|u_post - u_prior|` below this.
    pub residual_tol: f64,
}

impl MlConfig {
    pub fn new(labels: usize) -> Self {
        MlConfig {
            labels,
            boundary: Boundary::Free,
            grid: default_grid(),
            refine_step: 0.002,
            refine_top: 3,
            fit_tol: 1e-7,
            fit_max_iter: 1000,
            lbp: LbpOptions::default(),
            seed: 0,
            kink_factor: 10.0,
            residual_tol: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        LabelSet::new(self.labels)?;
        self.lbp.validate()?;
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("coupling grid is empty".into()));
        }
        if self.grid.iter().any(|k| !k.is_finite() || *k < 0.0) {
            return Err(Error::InvalidConfig(
                "couplings must be finite and non-negative".into(),
            ));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "coupling grid must be strictly ascending".into(),
            ));
        }
        if !(self.refine_step > 0.0 && self.fit_tol > 0.0 && self.residual_tol > 0.0) {
            return Err(Error::InvalidConfig(
                "steps and tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `0, 0.02, ..., 4`.
pub fn default_grid() -> Vec<f64> {
    (0..=200).map(|i| i as f64 * 0.02).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlRow {
    #[serde(rename = "K")]
    pub coupling: f64,
    pub loglik: f64,
    pub u_post: f64,
    pub u_prior: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlEstimate {
    pub k_hat: f64,
    pub loglik: f64,
    pub theta: GaussianParams,
    pub labels: LabelField,
    /// `u_post - u_prior` at `k_hat`; zero at a smooth interior maximum.
    pub residual: f64,
    /// First-order transition of the prior on this grid, if any lies in range.
    pub k_c: Option<f64>,
    pub kink_detected: bool,
    pub left_slope: Option<f64>,
    pub right_slope: Option<f64>,
    /// Median `|Δ²ℓ| / h` over the coarse grid away from the transition.
    pub slope_noise: Option<f64>,
}

/// Everything needed to continue a sweep from a coupling.
#[derive(Debug, Clone)]
struct SweepState {
    params: GaussianParams,
    posterior: MessageField,
    /// Ordered prior messages, kept only while that branch exists.
    prior: Option<MessageField>,
}

struct Point {
    row: MlRow,
    fit: ThetaFit,
    state: SweepState,
}

struct Sweeper<'a> {
    grid: &'a Grid,
    image: &'a ColorImage,
    config: &'a MlConfig,
}

impl Sweeper<'_> {
    fn solve(&self, k: f64, from: &SweepState) -> Result<Point> {
        let c = Coupling::new(k)?;
        let cfg = self.config;
        let fit = fit_theta_at_k(
            self.grid,
            self.image,
            c,
            &from.params,
            Some(&from.posterior),
            cfg.fit_tol,
            cfg.fit_max_iter,
            &cfg.lbp,
        )?;
        let prior = resolved_prior(self.grid, cfg.labels, c, from.prior.as_ref(), &cfg.lbp)?;
        let ll = combine(self.grid, fit.state.clone(), prior);
        let state = SweepState {
            params: fit.params.clone(),
            posterior: fit.state.messages.clone(),
            prior: (ll.prior_branch == Branch::Ordered).then(|| ll.prior.messages.clone()),
        };
        Ok(Point {
            row: MlRow {
                coupling: k,
                loglik: ll.value,
                u_post: ll.u_post,
                u_prior: ll.u_prior,
                converged: ll.converged && fit.converged,
            },
            fit,
            state,
        })
    }

    /// Continuation along `ks`; keeps every point.
    fn run(&self, ks: &[f64], from: &SweepState) -> Result<Vec<Point>> {
        let mut out: Vec<Point> = Vec::with_capacity(ks.len());
        for &k in ks {
            let start = out.last().map_or(from, |p| &p.state);
            let p = self.solve(k, start)?;
            out.push(p);
        }
        Ok(out)
    }
}

/// Points `lo, lo + h, ..., hi` (inclusive up to rounding).
fn steps(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let n = ((hi - lo) / h + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * h).collect()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Coarse sweep, refinement around the best points and the transition,
/// a stationarity polish at the maximum, and the kink test.
pub fn sweep(image: &ColorImage, config: &MlConfig) -> Result<(Vec<MlRow>, MlEstimate)> {
    config.validate()?;
    let q = config.labels;
    let grid = image_grid(image, config.boundary)?;
    let sweeper = Sweeper {
        grid: &grid,
        image,
        config,
    };
    let (params, _) = init_params(image, LabelSet::new(q)?, config.seed)?;
    let start = SweepState {
        posterior: MessageField::uniform(&grid, q),
        params,
        prior: None,
    };
    let ks = &config.grid;

    // Coarse pass. Only the start states of possible refinement windows are
    // kept, since a full message field per grid point would not fit.
    let mut coarse: Vec<MlRow> = Vec::with_capacity(ks.len());
    let mut fits: Vec<Option<ThetaFit>> = Vec::new();
    let mut starts: Vec<SweepState> = Vec::with_capacity(ks.len());
    let mut state = start.clone();
    for &k in ks {
        starts.push(SweepState {
            params: state.params.clone(),
            posterior: MessageField::uniform(&grid, q),
            prior: None,
        });
        let p = sweeper.solve(k, &state)?;
        coarse.push(p.row);
        fits.push(None);
        state = p.state;
        if ks.len() == 1 {
            fits[0] = Some(p.fit);
        }
    }
    if coarse.iter().all(|r| !r.converged) {
        return Err(Error::NotConverged("no grid point converged".into()));
    }

    let k_c = match transition_point(q, (0.0, 6.0), 1e-9)? {
        r if r.kind == TransitionKind::FirstOrder && ks.len() >= 3 => {
            let k_hom = r.k_c.expect("first-order transitions carry a coupling");
            let lo = (k_hom - 0.5).max(0.0);
            let hi = k_hom + 0.5;
            lattice_transition(&grid, q, (lo, hi), &config.lbp)?
                .filter(|k| *k > ks[0] && *k < ks[ks.len() - 1])
        }
        _ => None,
    };

    // Refinement windows `[K_{i-1}, K_{i+1}]` around the best coarse points
    // and around the transition.
    let mut order: Vec<usize> = (0..coarse.len()).filter(|&i| coarse[i].converged).collect();
    order.sort_by(|&a, &b| {
        coarse[b]
            .loglik
            .total_cmp(&coarse[a].loglik)
            .then(a.cmp(&b))
    });
    let mut centers: Vec<usize> = order.iter().take(config.refine_top).cloned().collect();
    if let Some(kc) = k_c {
        let i = ks.partition_point(|&k| k < kc);
        centers.push(i.saturating_sub(1));
        centers.push(i.min(ks.len() - 1));
    }
    let mut windows: Vec<(usize, usize)> = centers
        .iter()
        .map(|&i| (i.saturating_sub(1), (i + 1).min(ks.len() - 1)))
        .collect();
    windows.sort();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for w in windows {
        match merged.last_mut() {
            Some(last) if w.0 <= last.1 => last.1 = last.1.max(w.1),
            _ => merged.push(w),
        }
    }

    let mut refined: Vec<Point> = Vec::new();
    for &(a, b) in &merged {
        if a == b {
            continue;
        }
        let pts = steps(ks[a], ks[b], config.refine_step);
        // The window start is re-solved from the coarse parameters so the
        // continuation inside the window is self-contained.
        refined.extend(sweeper.run(&pts, &starts[a])?);
    }

    let mut rows: Vec<MlRow> = coarse.clone();
    for p in &refined {
        if !ks.iter().any(|&k| (k - p.row.coupling).abs() < 1e-9) {
            rows.push(p.row);
        }
    }
    rows.sort_by(|a, b| a.coupling.total_cmp(&b.coupling));

    // Maximum over refined points when available, else over the coarse grid.
    let best_refined = refined
        .iter()
        .enumerate()
        .filter(|(_, p)| p.row.converged)
        .max_by(|(_, a), (_, b)| a.row.loglik.total_cmp(&b.row.loglik));
    let best_coarse = order.first().copied();
    let (mut k_hat, mut best_ll, mut fit, mut residual) = match (best_refined, best_coarse) {
        (Some((_, p)), Some(c)) if p.row.loglik >= coarse[c].loglik - 1e-12 => (
            p.row.coupling,
            p.row.loglik,
            p.fit.clone(),
            p.row.u_post - p.row.u_prior,
        ),
        (_, Some(c)) => {
            let f = match fits[c].take() {
                Some(f) => f,
                None => sweeper.solve(ks[c], &starts[c])?.fit,
            };
            (
                ks[c],
                coarse[c].loglik,
                f,
                coarse[c].u_post - coarse[c].u_prior,
            )
        }
        (Some((_, p)), None) => (
            p.row.coupling,
            p.row.loglik,
            p.fit.clone(),
            p.row.u_post - p.row.u_prior,
        ),
        (None, None) => unreachable!("some point converged"),
    };

    // Stationarity polish between refined neighbours whose residuals
    // bracket zero.
    if let Some((i, _)) = best_refined.filter(|(_, p)| (p.row.coupling - k_hat).abs() < 1e-12) {
        let near_kc = k_c.is_some_and(|kc| (kc - k_hat).abs() < 2.0 * config.refine_step);
        if i > 0 && i + 1 < refined.len() && !near_kc {
            let r = |p: &Point| p.row.u_post - p.row.u_prior;
            let (l, m, h) = (&refined[i - 1], &refined[i], &refined[i + 1]);
            let step_ok = (h.row.coupling - l.row.coupling) < 3.0 * config.refine_step;
            let bracket = if r(l) * r(m) <= 0.0 {
                Some((l, m))
            } else if r(m) * r(h) <= 0.0 {
                Some((m, h))
            } else {
                None
            };
            if let (true, Some((lo, hi))) = (step_ok, bracket) {
                let (mut a, mut b) = (lo.row.coupling, hi.row.coupling);
                let ra = r(lo);
                let from = lo.state.clone();
                for _ in 0..40 {
                    let mid = 0.5 * (a + b);
                    let p = sweeper.solve(mid, &from)?;
                    let rm = p.row.u_post - p.row.u_prior;
                    if p.row.converged && p.row.loglik >= best_ll - 1e-9 {
                        let polished = p.row;
                        k_hat = mid;
                        best_ll = best_ll.max(polished.loglik);
                        residual = rm;
                        fit = p.fit;
                        if rows.iter().all(|x| (x.coupling - mid).abs() > 1e-12) {
                            rows.push(polished);
                        }
                    }
                    if rm.abs() < config.residual_tol {
                        break;
                    }
                    if rm * ra > 0.0 {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                rows.sort_by(|a, b| a.coupling.total_cmp(&b.coupling));
            }
        }
    }

    // Kink test: one-sided secant slopes next to K_C against the typical
    // change of slope per coarse step elsewhere.
    let (mut left_slope, mut right_slope, mut slope_noise, mut kink_detected) =
        (None, None, None, false);
    if let Some(kc) = k_c {
        let near: Vec<&MlRow> = refined
            .iter()
            .map(|p| &p.row)
            .filter(|r| (r.coupling - kc).abs() < 0.05)
            .collect();
        let below: Vec<&&MlRow> = near.iter().filter(|r| r.coupling < kc).collect();
        let above: Vec<&&MlRow> = near.iter().filter(|r| r.coupling > kc).collect();
        if below.len() >= 2 && above.len() >= 2 {
            let (l1, l0) = (below[below.len() - 1], below[below.len() - 2]);
            let (r0, r1) = (above[0], above[1]);
            left_slope = Some((l1.loglik - l0.loglik) / (l1.coupling - l0.coupling));
            right_slope = Some((r1.loglik - r0.loglik) / (r1.coupling - r0.coupling));
        }
        let h = ks
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        let curv: Vec<f64> = (1..ks.len() - 1)
            .filter(|&i| (ks[i] - kc).abs() > 2.0 * h + 1e-9)
            .filter(|&i| coarse[i - 1].converged && coarse[i].converged && coarse[i + 1].converged)
            .map(|i| {
                (coarse[i + 1].loglik - 2.0 * coarse[i].loglik + coarse[i - 1].loglik).abs()
                    / (ks[i + 1] - ks[i])
            })
            .collect();
        slope_noise = median(curv);
        if let (Some(l), Some(r), Some(n)) = (left_slope, right_slope, slope_noise) {
            kink_detected = (r - l).abs() > config.kink_factor * n;
        }
    }

    let labels = mpm_label(&fit.state.beliefs);
    Ok((
        rows,
        MlEstimate {
            k_hat,
            loglik: best_ll,
            theta: fit.params,
            labels,
            residual,
            k_c,
            kink_detected,
            left_slope,
            right_slope,
            slope_noise,
        },
    ))
}
