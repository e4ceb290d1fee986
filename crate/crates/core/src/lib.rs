//! Hierarchical spatio-temporal Gaussian models for daily concentration data
//! observed on a monitoring network.
//!
//! Six models share the measurement equation `z = u + ε` and differ in the
//! structure of the latent process `u`:
//!
//! | kind   | latent structure                                          |
//! |--------|-----------------------------------------------------------|
//! | `A1`   | spatial field, independent across days                    |
//! | `A2`   | separable space-time field (Kronecker covariance)         |
//! | `A3_1` | nonseparable Gneiting field, exponential `φ`              |
//! | `A3_2` | nonseparable Gneiting field, Cauchy-type `φ`              |
//! | `B`    | scalar AR(1) in time plus a spatial field                 |
//! | `C`    | spatially correlated AR(1) in every site                  |
//!
//! The crate covers estimation by Metropolis-within-Gibbs
//! ([`inference::run_mcmc`]), posterior predictive sampling at unmonitored
//! sites ([`prediction`]), validation indexes and model comparison
//! ([`evaluation`]), and a simulator for every model ([`simulator`]).
//!
//! ```
//! use stmodels::covariance::exp_corr;
//! let r = exp_corr(0.0033, 190.0).unwrap();
//! assert!((r - 0.534).abs() < 1e-3);
//! ```

pub mod covariance;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gaussmath;
pub mod inference;
pub mod models;
pub mod oracle;
pub mod prediction;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
pub use models::{ModelKind, ParamState, PriorSpec};
pub use rng::RngStream;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/covariance.md")]
    mod covariance {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/prediction.md")]
    mod prediction {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
