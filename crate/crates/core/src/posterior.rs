//! Posterior message passing: the prior messages reweighted by the
//! per-pixel likelihood `g(d_i | a_i, Θ)`.

use crate::error::Result;
use crate::grid::{Grid, LabelField, LabelSet};
use crate::lbp::{self, Beliefs, Coupling, LbpOptions, MessageField};
use crate::observation::LikelihoodTable;
use crate::prior::MessageInit;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub messages: MessageField,
    pub beliefs: Beliefs,
    /// Bethe estimate of `ln Y(d, K, Θ)` for the whole image.
    pub log_partition: f64,
    pub disagreement: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One synchronous posterior update of every message.
pub fn posterior_sweep(
    grid: &Grid,
    coupling: Coupling,
    table: &LikelihoodTable,
    messages: &MessageField,
    damping: f64,
) -> MessageField {
    lbp::sweep(grid, coupling, Some(table), messages, damping).0
}

pub fn solve_posterior_fixed_point(
    grid: &Grid,
    coupling: Coupling,
    table: &LikelihoodTable,
    init: &MessageInit,
    opts: &LbpOptions,
) -> Result<PosteriorState> {
    let start = init.build(grid, table.q())?;
    let run = lbp::iterate(grid, coupling, Some(table), start, opts)?;
    let beliefs = lbp::beliefs(grid, coupling, Some(table), &run.messages);
    Ok(PosteriorState {
        log_partition: beliefs.log_partition,
        disagreement: beliefs.disagreement,
        residual: run.residual,
        iterations: run.iterations,
        converged: run.converged,
        messages: run.messages,
        beliefs,
    })
}

/// Per-pixel argmax of the node marginals; ties go to the lowest label.
pub fn mpm_label(beliefs: &Beliefs) -> LabelField {
    let labels = beliefs
        .node
        .chunks(beliefs.q)
        .map(|row| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    LabelField::new(
        labels,
        LabelSet::new(beliefs.q).expect("beliefs have q >= 2"),
    )
    .expect("labels are in range")
}
