//! Independent checks of the closed forms: a discrete quadratic program
//! and a Monte Carlo simulator.

pub mod mc;
pub mod qp;

pub use mc::{mc_simulate, McReport, DEFAULT_MC_STEPS};
pub use qp::{qp_oracle, DiscreteMoments, DiscreteProblem, QpSolution};
