//! Joint estimation of the disagreement rate `u`, the coupling `α(u)` and
//! the Gaussian parameters by matching prior and posterior disagreement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid, LabelField, LabelSet};
use crate::lbp::{self, Coupling, LbpOptions, MessageField};
use crate::observation::{
    init_params, likelihood_table, weighted_mean_cov, ColorImage, GaussianParams,
};
use crate::posterior::{mpm_label, solve_posterior_fixed_point, PosteriorState};
use crate::prior::{solve_alpha_on_grid, GridAlpha, MessageInit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmeConfig {
    pub labels: usize,
    pub boundary: Boundary,
    /// Outer stopping threshold on `max(|Δu|, max |ΔΘ|)`.
    pub tol: f64,
    pub max_outer: usize,
    /// Tolerance on the prior disagreement when solving for the coupling.
    pub alpha_tol: f64,
    /// Sweep cap for the coupling rule.
    pub alpha_max_iter: usize,
    pub lbp: LbpOptions,
    pub seed: u64,
    /// Initial `u` is clipped to `[clip, (q-1)/q - clip]`.
    pub u_clip: f64,
}

impl CmeConfig {
    pub fn new(labels: usize) -> Self {
        CmeConfig {
            labels,
            boundary: Boundary::Free,
            tol: 1e-5,
            max_outer: 200,
            alpha_tol: 1e-8,
            alpha_max_iter: 100_000,
            lbp: LbpOptions::default(),
            seed: 0,
            u_clip: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        LabelSet::new(self.labels)?;
        self.lbp.validate()?;
        let max = (self.labels - 1) as f64 / self.labels as f64;
        if !(self.tol > 0.0 && self.alpha_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.max_outer == 0 || self.alpha_max_iter == 0 {
            return Err(Error::InvalidConfig(
                "iteration caps must be positive".into(),
            ));
        }
        if !(self.u_clip > 0.0 && 2.0 * self.u_clip < max) {
            return Err(Error::InvalidConfig(format!(
                "u clip {} leaves no room below {max}",
                self.u_clip
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    /// Disagreement fed into Step 2.
    pub u: f64,
    pub alpha: f64,
    /// Posterior disagreement produced by Step 3.
    pub u_post: f64,
    /// `max(|Δu|, max |ΔΘ|)` of this iteration.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub u_hat: f64,
    pub alpha_hat: f64,
    pub theta: GaussianParams,
    pub labels: LabelField,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    /// Initial disagreement after clipping.
    pub u0: f64,
    /// Labels left empty by the last parameter update.
    pub empty_labels: Vec<usize>,
    /// Final posterior messages.
    pub messages: MessageField,
}

pub fn image_grid(image: &ColorImage, boundary: Boundary) -> Result<Grid> {
    Grid::lattice(image.width(), image.height(), boundary)
}

/// Step 2: the coupling whose prior disagreement on `grid` is `u`.
pub fn step2_solve_alpha(
    grid: &Grid,
    q: usize,
    u: f64,
    k_start: f64,
    warm: Option<&MessageField>,
    config: &CmeConfig,
) -> Result<GridAlpha> {
    solve_alpha_on_grid(
        grid,
        q,
        u,
        config.alpha_tol,
        k_start,
        warm,
        config.alpha_max_iter,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step3Update {
    pub params: GaussianParams,
    pub disagreement: f64,
    pub state: PosteriorState,
    pub empty_labels: Vec<usize>,
}

/// Step 3: posterior messages at the current coupling, then the weighted
/// parameter update and the posterior edge disagreement (both under the
/// parameters the messages were computed with).
pub fn step3_update(
    grid: &Grid,
    image: &ColorImage,
    coupling: Coupling,
    params: &GaussianParams,
    messages: &MessageField,
    opts: &LbpOptions,
) -> Result<Step3Update> {
    let table = likelihood_table(image, params)?;
    let state = solve_posterior_fixed_point(
        grid,
        coupling,
        &table,
        &MessageInit::Given(messages.clone()),
        opts,
    )?;
    let update = weighted_mean_cov(image, &state.beliefs.node, params)?;
    Ok(Step3Update {
        params: update.params,
        disagreement: state.disagreement,
        state,
        empty_labels: update.empty_labels,
    })
}

/// Full estimator with the seeded default initialization.
pub fn run_cme(image: &ColorImage, config: &CmeConfig) -> Result<EstimateReport> {
    config.validate()?;
    let (params, labels) = init_params(image, LabelSet::new(config.labels)?, config.seed)?;
    run_cme_with_init(image, config, params, labels)
}

/// Full estimator from given initial parameters and hard labels.
pub fn run_cme_with_init(
    image: &ColorImage,
    config: &CmeConfig,
    params: GaussianParams,
    labels: LabelField,
) -> Result<EstimateReport> {
    config.validate()?;
    let q = config.labels;
    if params.q() != q {
        return Err(Error::SizeMismatch(format!(
            "{} initial components for q = {q}",
            params.q()
        )));
    }
    let grid = image_grid(image, config.boundary)?;
    if grid.num_edges() == 0 {
        return Err(Error::InvalidConfig(
            "a single-pixel image has no edges to estimate u from".into(),
        ));
    }
    if labels.len() != grid.num_nodes() {
        return Err(Error::SizeMismatch(
            "initial labels do not match the image".into(),
        ));
    }
    let max = (q - 1) as f64 / q as f64;
    let u0 = labels
        .disagreement(&grid)
        .clamp(config.u_clip, max - config.u_clip);

    let mut u = u0;
    let mut params = params;
    let mut k = 1.0;
    let mut prior_msgs: Option<MessageField> = None;
    let mut post_msgs = MessageField::uniform(&grid, q);
    let mut trace = Vec::new();
    let mut empty_labels = Vec::new();
    let mut converged = false;
    for t in 1..=config.max_outer {
        let a = step2_solve_alpha(
            &grid,
            q,
            u,
            if k > 0.0 { k } else { 1.0 },
            prior_msgs.as_ref(),
            config,
        )?;
        k = a.coupling;
        prior_msgs = Some(a.messages);
        let s3 = step3_update(
            &grid,
            image,
            Coupling::new(k)?,
            &params,
            &post_msgs,
            &config.lbp,
        )?;
        let u_next = s3.disagreement.clamp(f64::MIN_POSITIVE, max);
        let residual = (u_next - u).abs().max(s3.params.max_diff(&params));
        trace.push(TraceRow {
            t,
            u,
            alpha: k,
            u_post: u_next,
            residual,
        });
        u = u_next;
        params = s3.params;
        post_msgs = s3.state.messages;
        empty_labels = s3.empty_labels;
        if residual < config.tol {
            converged = true;
            break;
        }
    }

    // The last Step 3 moved u, so the reported coupling is re-solved at û.
    let a = step2_solve_alpha(
        &grid,
        q,
        u,
        if k > 0.0 { k } else { 1.0 },
        prior_msgs.as_ref(),
        config,
    )?;
    let table = likelihood_table(image, &params)?;
    let beliefs = lbp::beliefs(&grid, Coupling::new(a.coupling)?, Some(&table), &post_msgs);
    Ok(EstimateReport {
        u_hat: u,
        alpha_hat: a.coupling,
        theta: params,
        labels: mpm_label(&beliefs),
        trace,
        converged,
        u0,
        empty_labels,
        messages: post_msgs,
    })
}
