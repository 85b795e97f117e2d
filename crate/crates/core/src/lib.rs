//! Constrained sequential sampling of crystal descriptors.
//!
//! A crystal is built in three stages: its space group (via crystal-lattice
//! system and point symmetry), its composition, and its lattice parameters.
//! Crystallographic and chemical hard constraints are enforced by masking
//! actions, and a policy network is trained with the trajectory-balance
//! objective so that terminal crystals are sampled in proportion to a
//! Boltzmann-transformed formation-energy reward.

pub mod cli;
pub mod env;
pub mod error;
pub mod gfn;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod record;
pub mod reward;
pub mod symtab;
pub mod tensors;

pub use error::{Error, Result};
