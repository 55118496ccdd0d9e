//! Parallel maximum-state-entropy exploration for tabular MDPs.
//!
//! - [`mdp`]: finite-horizon MDPs, the Room and Maze gridworlds, rollouts.
//! - [`dist`]: categorical state distributions, entropy, KL, mixtures.
//! - [`policy`]: softmax tabular policies and score functions.
//! - [`pgpse`]: centralized policy-gradient training on the pooled entropy.
//! - [`frank_wolfe`]: parallel Frank-Wolfe with exact planning/density oracles.
//! - [`concentration`]: entropy tail bound and its Monte-Carlo validation.
//! - [`offline`]: dataset collection, relabeling and offline Q-learning.
//! - [`harness`]: experiment configs, seeded runs and CSV artifacts.

pub mod concentration;
pub mod dist;
pub mod error;
pub mod frank_wolfe;
pub mod harness;
pub mod mdp;
pub mod offline;
pub mod pgpse;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
