//! Experiment driver for the multiscale solver: convergence and decay
//! studies, field export and coefficient generation.

pub mod commands;
pub mod config;
pub mod dump;
