//! Deterministic simulator for differentially private perturbed push-sum
//! (DPPS) consensus over time-varying directed graphs, and for PartPSP,
//! the partial-communication decentralized SGD optimizer built on top of it.
//!
//! The crate is organized around the protocol stack:
//!
//! - [`topology`] — directed graph schedules (d-Out, EXP, custom) and their
//!   doubly stochastic weight matrices.
//! - [`privacy`] — Laplace noise, the per-node sensitivity-estimate
//!   recursion, the brute-force real-sensitivity oracle, and the per-round
//!   privacy budget `epsilon = b / gamma_n`.
//! - [`protocol`] — one round of DPPS across all nodes, periodic
//!   synchronization, and the network-mean observable.
//! - [`optimizer`] — PartPSP: model partitioning, L1 gradient clipping,
//!   local SGD steps, and the perturbation `eps_i = -gamma_s * g_{i,s}`
//!   fed into DPPS.
//! - [`tasks`] — trainable objectives: a from-scratch MLP with softmax
//!   cross-entropy, synthetic Gaussian-cluster data, and an MNIST IDX
//!   loader.
//! - [`harness`] — experiment configuration, the deterministic runner,
//!   sensitivity sweeps, the `C'`/`lambda` calibration utility, and CSV/JSON
//!   metrics export.
//!
//! Every run is a pure function of its configuration and master seed: node
//! RNG streams are derived from `(master_seed, node_id, purpose)` so that
//! replays are bit-identical.

pub mod harness;
pub mod optimizer;
pub mod privacy;
pub mod protocol;
pub mod seed;
pub mod tasks;
pub mod topology;

pub use privacy::{PrivacyBudget, SensitivityEstimate, SensitivityEstimator};
pub use protocol::{NodeState, RoundOutcome, SyncResetMode};
pub use topology::{GraphSchedule, WeightMatrix};
