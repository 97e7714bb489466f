//! Configuration, the staged pipeline and report files.

pub mod config;
pub mod pipeline;
pub mod reports;

pub use config::{demo_config_text, parse_config, parse_config_str, RunConfig};
pub use pipeline::{run_pipeline, run_pipeline_until, stages_through, AcceptanceLine, PipelineReport, Stage, StageStatus};
pub use reports::{emit_reports, render_summary};
