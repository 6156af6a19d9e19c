use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("edge {edge} is a self-loop on vertex {vertex}")]
    SelfLoop { edge: usize, vertex: usize },

    #[error("vertex index {index} out of range (graph has {n} vertices)")]
    VertexOutOfRange { index: usize, n: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// `line` is 1-based, 0 when the problem is not tied to a line
    #[error("{}", located(*line, message))]
    Parse { line: usize, message: String },

    #[error("flow problem infeasible: {0}")]
    Infeasible(String),

    #[error("rescaling did not converge after {iterations} sweeps (last step {defect:e})")]
    NoConvergence {
        iterations: usize,
        defect: f64,
        last: Vec<f64>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

fn located(line: usize, message: &str) -> String {
    if line == 0 {
        message.to_string()
    } else {
        format!("line {line}: {message}")
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
