pub mod ablation;
pub mod config;
pub mod cost;
pub mod explain;
pub mod featfile;
pub mod metrics;
pub mod modelfile;
pub mod record;
pub mod report;
pub mod synth;
