//! Accelerated dynamics toolkit for metastable overdamped/underdamped Langevin
//! processes on low-dimensional model potentials.
//!
//! The crate is organised bottom-up:
//!
//! * [`potential`] analytic surfaces, critical points and bias potentials
//! * [`dynamics`] Euler–Maruyama and BAOAB integrators with per-walker streams
//! * [`statemap`] state labels, exit detection and exit-region attribution
//! * [`kmc`] jump Markov process over a rate graph
//! * [`qsd`] Fleming–Viot ensembles, Gelman–Rubin diagnostic, rejection dephasing
//! * [`kramers`] Eyring–Kramers prefactors, exit-law asymptotics, TAD factors
//! * [`accel`] Parallel Replica, hyperdynamics, TAD and the state-to-state driver
//! * [`splice`] parallel trajectory splicing
//! * [`oracle`] spectral solver, brute-force exit statistics and test statistics
//! * [`config`] / [`runner`] the configuration-driven experiment runner

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod accel;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod kmc;
pub mod kramers;
pub mod oracle;
pub mod potential;
pub mod qsd;
pub mod rng;
pub mod runner;
pub mod splice;
pub mod statemap;

pub use error::{Error, Result};
