//! Asynchronous block-based gradient optimization with heterogeneous
//! Tikhonov regularizations and weighted block-maximum norms.
//!
//! The crate is organised bottom-up:
//!
//! - [`problem`]: block layouts, cost models, regularization and Lipschitz data.
//! - [`blocknorm`]: the weighted block-maximum norm and the induced matrix norm bound.
//! - [`engine`]: a seeded, tick-based simulation of agents holding stale copies
//!   of the ensemble state, with an append-only event log and replay.
//! - [`certify`]: contraction factor, reference minimizer, communication cycles
//!   and the geometric per-cycle error bound checked against observed traces.
//! - [`netflow`]: the eight-agent flow-routing instance.
//! - [`experiment`]: declarative experiment configs, artifact files and reports
//!   (driven by the `async-blockopt` binary).
//!
//! Runnable walkthroughs for each capability live in the crate's `examples/`.

pub mod blocknorm;
pub mod certify;
pub mod engine;
mod error;
pub mod experiment;
pub mod netflow;
pub mod problem;

pub use error::{Error, Result};
