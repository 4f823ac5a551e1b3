//! Federated conditional stochastic optimization.
//!
//! This crate simulates a federation of `N` workers minimizing a nested
//! conditional objective
//!
//! ```text
//! F(x) = (1/N) Σ_n  E_ξ  f_ξ( E_{η|ξ} g_η(x, ξ) )
//! ```
//!
//! where the inner samples `η` are drawn conditionally on the outer sample
//! `ξ`. Because of the nesting, the natural single-(ξ, batch) gradient
//! estimator is biased; the bias decays with the inner batch size `m`.
//!
//! The crate provides:
//!
//! * [`objectives`] — the [`objectives::ConditionalObjective`] abstraction
//!   and four concrete tasks (an analytic quadratic with an exact gradient
//!   oracle, invariant logistic regression, a toy MAML objective, and an
//!   average-precision surrogate on synthetic imbalanced data),
//! * [`estimator`] — the biased conditional gradient estimator and the
//!   empirical objective it differentiates,
//! * [`algorithms`] — the per-worker update rules for FCSG, FCSG-M and the
//!   variance-reduced Acc-FCSG-M,
//! * [`federation`] — the deterministic simulation loop with periodic server
//!   averaging and counter-keyed random streams,
//! * [`schedules`] — theory-prescribed hyperparameter schedules,
//! * [`metrics`] — trace recording, gradient-norm / loss / average-precision
//!   metrics, and CSV serialization,
//! * [`cli`] — the `fedcso` command-line front end.
//!
//! Every run is bit-reproducible from its seed: all randomness flows through
//! streams keyed by `(seed, worker, step, purpose)`, and aggregation always
//! sums in worker-index order.

pub mod algorithms;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod federation;
pub mod metrics;
pub mod objectives;
pub mod rng;
pub mod schedules;

pub use error::{Error, Result};
