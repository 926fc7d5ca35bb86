//! Bayesian color-image segmentation with a Potts prior and loopy belief
//! propagation.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cme;
pub mod error;
pub mod exact;
pub mod grid;
pub mod homogeneous;
pub mod lbp;
pub mod ml;
pub mod observation;
pub mod posterior;
pub mod prior;
pub mod synthetic;

pub use error::{Error, Result};
pub use grid::{Boundary, Grid, LabelField, LabelSet};
pub use homogeneous::{Branch, HomogeneousLattice};
pub use lbp::{Beliefs, Coupling, LbpOptions, MessageField};
pub use observation::{ColorImage, Gaussian, GaussianParams, LikelihoodTable};
