//! Scenario files, the execution engine, and log post-processing.

pub mod engine;
pub mod report;
pub mod spec;

pub use engine::{run, EngineError, LogRecord, RunOptions, RunOutput};
pub use spec::{Diagnostic, ScenarioSpec};
