use num_complex::Complex64;
use thiserror::Error;

use crate::graph::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph is not admissible: {0}")]
    InvalidGraph(ValidationReport),

    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),

    #[error("unknown edge `{0}`")]
    UnknownEdge(String),

    #[error("edge `{0}` is a loop and cannot be contracted")]
    ContractLoop(String),

    #[error("compact part of the graph is not connected")]
    Disconnected,

    #[error("spectral point z = {z} lies at or near the Dirichlet spectrum of edge `{edge}`")]
    SpectralSingularity { z: Complex64, edge: String },

    #[error("z = 0 is excluded from evaluation")]
    ZeroEnergy,

    #[error("matrix is singular or ill-conditioned (condition estimate {cond:e})")]
    SingularMatrix { cond: f64 },

    #[error("graph has no external vertices")]
    NoLeads,

    #[error("DtD factor singular at z = {z}; resample")]
    SingularFactor { z: Complex64 },

    #[error("plane-wave matching system singular at s = {s}")]
    SingularSystem { s: f64 },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("insufficient data: {have} usable samples, need {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry mismatch between dataset and graph")]
    GeometryMismatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
