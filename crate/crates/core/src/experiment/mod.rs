//! Config-driven experiment runner: corpora, operator perturbation, trials and artifacts.

pub mod config;
pub mod corpus;
pub mod output;
pub mod perturb;
pub mod runner;
pub mod trials;
