//! Planning and learning in linear MDPs where the state is only revealed at
//! random *data-bursts*.
//!
//! Each action `a` reveals the current state with probability `beta(a)`.
//! Between bursts the agent acts blind, so it commits to whole action
//! sequences. The crate is organized bottom-up:
//!
//! - [`model`]: the linear model `P(s'|s,a) = phi(s,a)·mu(s')`, `r = phi·theta`,
//!   with validation, file formats, generators and the paid-observation and
//!   reset constructions.
//! - [`sim`]: seeded episode simulator and transcripts.
//! - [`belief`]: beliefs over hidden states, the Bellman operator on augmented
//!   states and the optimal-value planner.
//! - [`feature`]: the sequence feature map `psi(x, seq)` in which
//!   action-sequence values are linear, exact or built from estimates.
//! - [`offpolicy`]: ridge estimates of the action matrices and burst
//!   frequencies from logged transitions, with error bounds.
//! - [`learner`]: optimistic least-squares value iteration over bursts.
//! - [`eval`]: exact and Monte-Carlo policy evaluation and regret experiments.
//!
//! ```
//! use atst::belief::{optimal_values, ActionMatrixSet};
//! use atst::model::generators::benchmark_three_state;
//!
//! let mdp = benchmark_three_state();
//! let ams = ActionMatrixSet::from_model(&mdp).unwrap();
//! let plan = optimal_values(&mdp, &ams, 60, 60).unwrap();
//! assert!(plan.value(2) > plan.value(0));
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod belief;
pub mod error;
pub mod eval;
pub mod feature;
pub mod learner;
pub mod linalg;
pub mod model;
pub mod offpolicy;
pub mod sequence;
pub mod sim;

pub use error::{Error, Result};
pub use feature::PsiEngine;
pub use learner::{LearnerConfig, StLsviUcb};
pub use model::LinearAtstMdp;
pub use sequence::{ActionSequence, AugmentedState, Continuation};

// The guide's code blocks run as doctests: each chapter becomes the docs of
// an empty module, so a failure names the chapter it came from.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/beliefs.md")]
    mod beliefs {}
    #[doc = include_str!("../../../book/src/sequence-features.md")]
    mod sequence_features {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
