//! Core library for a synchronous, curriculum-driven federated learning
//! simulator.
//!
//! The simulator trains a dense classifier across `K` clients holding
//! label-skewed data splits. Three mechanisms distinguish the full `fedcl`
//! algorithm from the `fedavg` / `fedprox` baselines that run under the same
//! harness:
//!
//! * a confidence-weighted **curriculum loss** ([`curriculum`]) that scores
//!   every sample's difficulty,
//! * per-client **Gaussian-mixture encoding** of those difficulty scores
//!   ([`gmm`]) so raw scores never leave a client, and the server-side pool of
//!   mixture draws that approximates the global difficulty distribution
//!   ([`sync`]),
//! * a **data-free distillation** channel ([`distill`]): a conditional
//!   generator trained on the server against the ensemble of client predictor
//!   heads, whose generated latent features augment every client's local
//!   objective.
//!
//! [`federation`] ties the pieces into a round-based orchestrator with a
//! freeze/unfreeze schedule, and [`wire`] provides the versioned binary
//! encoding used for report/broadcast checkpoints.
//!
//! The crate is `no_std` (alloc required). All transcendental math goes
//! through [`math`], which delegates to `libm`, so results do not depend on
//! the host C library; combined with the derived seeding scheme in [`rng`],
//! identical configurations reproduce bit-identical runs.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod curriculum;
pub mod data;
pub mod distill;
pub mod error;
pub mod federation;
pub mod gmm;
pub mod math;
pub mod nn;
pub mod rng;
pub mod sync;
pub mod wire;

pub use error::{Error, Result};
