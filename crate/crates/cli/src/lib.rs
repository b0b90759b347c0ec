//! Orchestration for simulation, two-stage training, imputation and sweeps.

pub mod checkpoint;
pub mod commands;
pub mod config;
