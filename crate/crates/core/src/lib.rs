//! Communication and iteration-time models for hybrid-parallel GPT and MoE
//! training, a pipeline schedule simulator, and a configuration tuner.

pub mod config;
pub mod cost;
pub mod profiles;
pub mod report;
pub mod sim;
pub mod traffic;
pub mod tuner;
