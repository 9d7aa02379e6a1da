//! Fast-slow-thinking task decomposition pipeline, baselines, and the
//! evaluation harness around them.

pub mod baseline;
pub mod cli;
pub mod coverage;
pub mod dynathink;
pub mod extract;
pub mod fst;
pub mod gateway;
pub mod human;
pub mod method;
pub mod metrics;
pub mod perturb;
pub mod prompt;
pub mod runner;
pub mod task;
