//! Simulation and joint resource optimization for Heterogeneous Split
//! Federated Learning (HSFL): clients split a shared model at per-client cut
//! layers, train the client-side part locally, and offload the rest to a main
//! server, with an edge server aggregating client-side models each round.
//!
//! The crate has three groups of modules:
//!
//! - **Latency machinery** — [`profile`], [`env`], [`latency`]: per-round
//!   latency of every client as a pure function of the model split, the
//!   resource allocation, and one stochastic draw of channel gains and client
//!   frequencies.
//! - **Optimizers** — [`freq`] (Lagrangian server-frequency allocation),
//!   [`power`] (branch-and-bound subchannel/power allocation), [`cutlayer`]
//!   (genetic cut-layer search over a sample-average latency estimate), glued
//!   together by [`policy`].
//! - **Protocol semantics** — [`protocol`] (round-by-round simulation with
//!   straggler exclusion and the common-layer aggregation plan) and
//!   [`splitnn`] (a toy dense-network engine that executes split training and
//!   federated aggregation on real parameters).
//!
//! [`config`] and [`experiment`] provide the file formats and sweep runner
//! used by the `hsfl` command-line tool.

pub mod config;
pub mod cutlayer;
pub mod env;
pub mod error;
pub mod experiment;
pub mod freq;
pub mod latency;
pub mod policy;
pub mod power;
pub mod profile;
pub mod protocol;
pub mod splitnn;

pub use error::{Error, Result};
