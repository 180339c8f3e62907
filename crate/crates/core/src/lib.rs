//! Simulation and analysis of a self-repelling diffusion on the circle.

pub mod cli;
pub mod config;
pub mod ergodic;
pub mod flow;
pub mod hormander;
pub mod hypo;
pub mod model;
pub mod output;
pub mod period;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod stats;
