//! Cooperative Parrondo games on a ring of `N` players: exact transition
//! kernels and stationary distributions, mean-profit formulas, transient-set
//! classification, Monte Carlo estimators and a command-line front end.
//!
//! States are `N`-bit masks with player `i` (1-based) in bit `i - 1`; a set
//! bit means the player's last game was a win.

pub mod cli;
pub mod ergodicity;
pub mod error;
pub mod kernels;
pub mod montecarlo;
pub mod profit;

pub use error::{Error, Result};
pub use kernels::{Kernel, Params, Pattern, StateIndex};
pub use profit::{Dist, Formula, Method, ProfitReport};
