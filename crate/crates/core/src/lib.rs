//! Deterministic federated-learning simulator with clustered decoder exchange.
//!
//! Clients share a frozen feature backbone and train only a small decoder
//! head. Every `T`-th round the server averages the uploaded decoders
//! (FedAvg); in the other rounds it splits them into two clusters by cosine
//! distance and redistributes them so that clients receive decoders trained
//! on other domains, preferring decoders from the opposite cluster.
//!
//! Module map:
//!
//! * [`params`]: flattened decoders, cosine distance, weighted averaging.
//! * [`clustering`]: average-linkage agglomeration into two clusters.
//! * [`exchange`]: clustered, round-robin and random delivery plans.
//! * [`server`]: the round loop and whole-simulation driver.
//! * [`clients`]: synthetic domains, frozen backbone, local optimizers.
//! * [`harness`]: experiment configs, output files, comparisons, ablations.

pub mod clients;
pub mod clustering;
pub mod error;
pub mod exchange;
pub mod harness;
pub mod params;
pub mod record;
pub mod seed;
pub mod server;

pub use error::{Error, Result};
