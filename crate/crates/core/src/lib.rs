//! Learning dynamics of deep Learners and LSTM Meta-Learners on linear
//! regression, Fourier regression and contextual bandit tasks.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod learners;
pub mod metalearners;
pub mod nets;
pub mod numerics;
pub mod oracles;
pub mod tasks;

pub use error::{Error, Result};
