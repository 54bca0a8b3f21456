//! Linear NOTEARS structure learning over evaluation metrics, with
//! treatment in-edge blocking and intervention-effect estimation.

pub mod acyclic;
pub mod graph;
pub mod notears;
pub mod table;
pub mod textstats;

use thiserror::Error;

pub use acyclic::{acyclicity, acyclicity_with_grad, expm};
pub use graph::{
    break_cycles, effects_heatmap, intervention_effect, shd, topological_order, total_effects, CausalGraph, Heatmap,
};
pub use notears::{block_in_edges, fit_notears, FitResult, NotearsParams, Objective};
pub use table::{analyze, load_runs, Analysis, MetricTable, Role, RunRow, Treatment, OUTCOMES};
pub use textstats::{text_stats, TextStats};

#[derive(Debug, Error)]
pub enum CausalError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values")]
    NonFinite,
    #[error("graph has a cycle")]
    Cyclic,
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("bad input: {0}")]
    Input(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
