//! Gradient descent, stochastic gradient descent and stochastic coordinate
//! descent with step-size schedules, exact moment oracles, a 1-D Fokker–Planck
//! solver and ℓ^p-smoothed minimax games.

pub mod checks;
pub mod csv;
pub mod descent;
pub mod error;
pub mod fokker_planck;
pub mod games;
pub mod moments;
pub mod montecarlo;
pub mod objectives;
pub mod rng;
pub mod schedules;

pub use error::{Error, Result};
pub use objectives::{EstimatorKind, ObjectiveFamily};
pub use schedules::Schedule;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
