pub mod analyze;
pub mod behavior;
pub mod intervene;
pub mod report;
pub mod run_agent;
pub mod synth;
pub mod train;
