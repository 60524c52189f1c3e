//! Composable stochastic-gradient MCMC.
//!
//! A sampler is assembled from independent blocks:
//!
//! * [`data`] serves mini-batches and full-data sweeps from an in-memory [`data::Dataset`].
//! * [`potential`] turns a per-observation log-likelihood and a log-prior into the
//!   (stochastic) potential and its gradient.
//! * [`adaption`] holds online quantities such as the RMSProp preconditioner.
//! * [`integrator`] simulates one step or trajectory of the underlying dynamics.
//! * [`solver`] turns trajectories into Markov transitions and drives the chain loop.
//! * [`scheduler`] supplies step size, temperature, burn-in and thinning per iteration.
//! * [`io`] collects kept samples and serializes them.
//!
//! [`models`] ships a handful of reference models with analytic gradients and a
//! random-walk Metropolis oracle; [`diagnostics`] computes weighted moments and ESS.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adaption;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod integrator;
pub mod io;
pub mod models;
pub mod params;
pub mod potential;
pub mod random;
pub mod scheduler;
pub mod solver;

pub use error::{Error, Result};
pub use params::{Layout, ParameterVector};
pub use random::RandomKey;
