//! Entropy-regularized actor-critic search over low-dimensional latent prompts.

pub mod agent;
pub mod analysis;
pub mod driver;
pub mod env;
pub mod llm;
pub mod nn;
pub mod scoring;
pub mod tasks;
