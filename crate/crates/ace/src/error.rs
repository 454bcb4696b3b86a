//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

use crate::model::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("envelope has no hyperplanes")]
    EmptyEnvelope,

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("LP solver stalled after {iterations} iterations (objective {objective})")]
    SolverStalled {
        iterations: usize,
        objective: f64,
        best_x: Vec<f64>,
    },

    #[error("stage {stage}: no feasible action at state {state:?}")]
    InfeasibleState { stage: usize, state: Vec<f64> },

    #[error("stage {stage}: stage problem is unbounded below (model error)")]
    UnboundedStage { stage: usize },

    #[error("section {id} lies entirely outside the state domain")]
    SectionOutsideDomain { id: u64 },

    #[error("section {id}: worst point coincides with an existing vertex")]
    NoProgress { id: u64 },

    #[error("stage {stage}: initial vertex {vertex:?} has no feasible action")]
    InitVertexInfeasible { stage: usize, vertex: Vec<f64> },

    #[error("state domain is degenerate in coordinates {coords:?}")]
    DegenerateDomain { coords: Vec<usize> },

    #[error("model validation failed:\n{0}")]
    ModelInvalid(ValidationReport),

    #[error("lattice too large: {cells} cells x {actions} actions exceeds {limit}")]
    GridTooLarge {
        cells: usize,
        actions: usize,
        limit: usize,
    },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("malformed file {path}: {detail}")]
    MalformedFile { path: PathBuf, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
