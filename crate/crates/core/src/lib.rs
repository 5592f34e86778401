//! Road traffic monitoring from DSRC channel frequency responses.
//!
//! The crate covers the whole desk-scale pipeline: randomized traffic scenes,
//! geometric multipath synthesis, least-squares channel estimation from a
//! known preamble, per-subcarrier preprocessing, and from-scratch learners
//! that map magnitude CFRs to traffic intensity labels and vehicle counts.

pub mod chanest;
pub mod error;
pub mod experiment;
pub mod learn;
pub mod metrics;
pub mod preprocess;
pub mod raychan;
pub mod records;
pub mod scene;
pub mod seed;

pub use error::{Error, Result};
