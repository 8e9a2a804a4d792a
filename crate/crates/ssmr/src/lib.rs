//! Bayesian model selection for systems of simultaneous multivariate linear regressions.

pub mod bf;
pub mod cli;
pub mod data;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mle;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod prior;
pub mod search;
pub mod sim;

pub use data::{CoefficientLayout, SsmrData, SubgroupData};
pub use error::{Error, Result};
