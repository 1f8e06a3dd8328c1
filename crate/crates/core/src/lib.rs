//! Estimation of Galton-Watson offspring distributions from a single sample
//! of observed root paths.
//!
//! - [`tree`]: tree storage, offspring distributions, GW generation.
//! - [`sampling`]: observed-path samples and `P(S|G)`.
//! - [`enumeration`]: non-isomorphic tree catalogs and state-space counts.
//! - [`exact`]: exact likelihood and its multistart maximization.
//! - [`mcmc`]: Metropolis-Hastings over trees and the importance-sampling
//!   estimator.
//! - [`evaluation`]: metrics, baselines and the experiment harness.
//! - [`io`]: JSON formats for trees and samples.

pub mod enumeration;
pub mod error;
pub mod evaluation;
pub mod exact;
pub mod io;
pub mod mcmc;
pub mod numeric;
pub mod optimize;
pub mod sampling;
pub mod tree;

pub use error::{Error, Result};
pub use sampling::SampleTree;
pub use tree::{FullTree, OffspringCensus, OffspringDistribution, Tree};
