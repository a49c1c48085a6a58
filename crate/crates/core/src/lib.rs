//! Closed-form optimal trading for a CARA investor holding risky assets
//! with linear temporary and permanent market impact, together with the
//! numerical oracles that check it.

pub mod error;
pub mod frontier;
pub mod matfun;
pub mod model;
pub mod quadrature;
pub mod riccati;
pub mod strategy;
pub mod verify;

pub use error::{Error, Result};
