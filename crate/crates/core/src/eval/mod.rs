//! Ablation runs over multiple-choice benchmarks.

mod bench;
mod extract;
mod report;
mod run;

use thiserror::Error;

pub use bench::{letter_index, load_benchmark, parse_benchmark, BenchmarkFormat, BenchmarkItem, MAX_CHOICES};
pub use extract::extract_choice;
pub use report::{emit_report, markdown, percent, score, ReportPaths, ResultCell, Score};
pub use run::{
    AblationConfig, Condition, Evaluator, RunRecord, MCQ_DIRECT_TEMPLATE, MCQ_RAG_TEMPLATE, UNSURE_CHOICE,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}, field {field}: {message}")]
    Format { line: usize, field: String, message: String },
    #[error("no records to score")]
    EmptyRun,
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}
