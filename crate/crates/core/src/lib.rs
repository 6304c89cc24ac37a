//! Firing process networks for multivariate discrete distributions.
//!
//! A firing process network (FPN) is a directed network in which every node
//! holds a conditional probability table over a set of *information source*
//! nodes. Repeatedly "firing" nodes (resampling one variable from its table)
//! defines a Markov chain whose limiting distribution is the model
//! distribution. Unlike a Markov network, the graph may be asymmetric and the
//! tables need not be consistent with any single joint distribution.
//!
//! The crate is organised as follows:
//!
//! - [`dist`]: dense joint tables, conditionals, entropies, KL divergence,
//!   m-projections onto conditional part manifolds and the full-conditional
//!   divergence.
//! - [`data`]: CSV ingestion and empirical counting.
//! - [`learn`]: parameter learning and node-by-node MDL/AIC structure search.
//! - [`engine`]: sequential and random firing processes, partial sampling
//!   under evidence.
//! - [`exact`]: transition operators, stationary distributions and the
//!   divergence reports for small state spaces.
//! - [`bench`]: Ising ground truths and the structure-recovery experiments.
//! - [`dot`]: Graphviz export of learned graphs.

pub mod bench;
pub mod data;
pub mod dist;
pub mod dot;
pub mod engine;
mod error;
pub mod exact;
pub mod learn;
pub(crate) mod serde_util;

pub use error::{FpnError, Result};

/// Current version tag written into every JSON artifact.
pub const FORMAT_VERSION: u32 = 1;
