//! Efficient bidding market model.
//!
//! A market of `N = N_s + N_r` agents places unit market orders each step.
//! Speculators buy with the probability that keeps the expected demand
//! equal to the previous demand; random traders flip coins. The price is
//! the demand/supply ratio `d / (N - d)`.
//!
//! Modules:
//! - [`market`]: the stochastic bidding process and seeded simulation.
//! - [`efficiency`]: numerical price-efficient buy probabilities and their
//!   comparison with the demand-efficient closed form.
//! - [`markov`]: transition matrices, stationary distributions and the
//!   beta-integral column-sum identity.
//! - [`stats`]: log returns, tail fits, autocorrelations, conditional
//!   fluctuations and uniformity tests.
//! - [`game`]: the minority game with a superplayer, bots and metrics.

pub mod binomial;
mod error;
pub mod efficiency;
pub mod game;
pub mod market;
pub mod markov;
pub mod stats;

pub use error::{Error, Result};
