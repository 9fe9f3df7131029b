//! Periodic solutions of `-u'' = lambda u + a(t) u^3`.

pub mod autonomous;
pub mod continuation;
pub mod error;
pub mod lsred;
pub mod quad;
pub mod spectral;
pub mod weights;

pub use error::{Error, Result};
