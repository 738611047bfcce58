//! Fundamental diagrams of traffic on a circular road.
//!
//! Cars on a ring follow one of three deterministic update rules: a min-plus
//! linear rule (`minplus`), a minimum over affine speed rules (`control`) or a
//! min-max over affine speed rules (`game`). Each rule has a closed-form
//! average speed, and density times speed gives the flow. This crate computes
//! those closed forms, checks them against simulated trajectories and fits
//! piecewise-affine curves to measured diagrams.

pub mod cli;
pub mod diagram;
pub mod error;
pub mod minplus;
pub mod models;
pub mod simulate;

pub use error::{Error, Result};
