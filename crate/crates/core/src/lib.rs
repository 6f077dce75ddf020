//! Globally optimal joint BS beamforming and discrete IRS phase-shift
//! design by generalized Benders decomposition, with an exhaustive oracle
//! and suboptimal baselines for comparison.

pub mod baselines;
pub mod channel;
pub mod cli;
pub mod conic;
pub mod error;
pub mod gbd;
pub mod oracle;
pub mod reformulation;

pub use error::{Error, Result};

// BLAS and LAPACK for the conic backend.
use openblas_src as _;
