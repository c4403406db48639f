//! Sampling policies that minimise the Age of Detection (AoD) of a
//! finite-state Markov source observed through a lossy channel.
//!
//! The crate is organised bottom-up:
//!
//! - [`markov`]: validated ergodic chains with cached matrix powers.
//! - [`mdp`]: the truncated AoD MDP (states, per-slot cost, kernel).
//! - [`rvi`]: relative value iteration and exact policy evaluation.
//! - [`dual`]: Lagrangian bisection and the randomised CMDP policy.
//! - [`sim`]: slot-level Monte Carlo of the physical system and baselines.
//! - [`experiment`]: configuration, CSV schemas and the CLI commands.
//!
//! ```
//! use aod_core::markov::Dtmc;
//! use aod_core::mdp::{CostVariant, MdpModel, TruncationConfig};
//! use aod_core::dual::{solve_cmdp, DualConfig};
//!
//! let chain = Dtmc::two_state(0.02, 0.01)?;
//! let model = MdpModel::new(&chain, 0.8, TruncationConfig::default(), CostVariant::InclusiveSelf)?;
//! let solution = solve_cmdp(&model, 0.1, &DualConfig::default())?;
//! assert!(solution.f_mixed <= 0.1 + 1e-6);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dual;
pub mod experiment;
pub mod markov;
pub mod mdp;
pub mod rvi;
pub mod sim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/source.md")]
    mod source {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/constrained.md")]
    mod constrained {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
