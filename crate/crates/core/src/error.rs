use std::path::PathBuf;

use thiserror::Error;

/// Failure of the one-dimensional solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("derivative never changed sign while bracketing (last probe at {last_probe})")]
    Unbounded { last_probe: f64 },
    #[error("bracket [{lo}, {hi}] does not enclose a sign change")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("objective returned NaN at {at}")]
    NotANumber { at: f64 },
    #[error("no convergence after {iterations} iterations (last iterate {last})")]
    IterationLimit { iterations: usize, last: f64 },
}

/// Pipeline stage names used to attribute errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TrustPropagation,
    VotingRights,
    PreferenceLearning,
    Scaling,
    Aggregation,
    PostProcess,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::TrustPropagation => "trust_propagation",
            Stage::VotingRights => "voting_rights",
            Stage::PreferenceLearning => "preference_learning",
            Stage::Scaling => "scaling",
            Stage::Aggregation => "aggregation",
            Stage::PostProcess => "post_process",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Input data violating a dataset invariant.
    #[error("data error: {0}")]
    Data(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn in_stage(self, stage: Stage) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the root cause is a configuration problem.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Json(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
