//! Loss evaluation and the constraint controller.
//!
//! Everything here is evaluation-only: multipliers and the grid-KL
//! normaliser are explicit state passed in and returned.

mod sapr;
mod sigma;
mod terms;
mod warmup;

pub use sapr::{q_values, sapr_step, Constraint, QValues, SaprState, SaprStep};
pub use sigma::{estimate_sigma, otsu_threshold, SigmaEstimate, SigmaMethod};
pub use terms::{gaussian_kl, kl_total, recon_loss, GaussianPosterior, KlDims, LossTerms, NGridState};
pub use warmup::{overlap_penalty, warmup_blend, WARMUP_FRACTION};
