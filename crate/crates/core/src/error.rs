use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate key {key}")]
    DuplicateKey { key: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("{0} is outside the data range")]
    OutOfRange(String),

    #[error("no calendar metadata for {0}")]
    UnknownDate(NaiveDate),

    #[error("singular design matrix: columns {columns:?} are linearly dependent on earlier columns")]
    SingularDesign { columns: Vec<String> },

    #[error("IRLS did not converge after {iterations} iterations (last deviance {deviance})")]
    NoConvergence { iterations: usize, deviance: f64 },

    #[error("every candidate model failed to fit: {}", .0.join("; "))]
    AllCandidatesFailed(Vec<String>),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("horizon too short: {censored_fraction:.3} of paths reached the cap without alarm")]
    HorizonTooShort { censored_fraction: f64 },

    #[error("could not bracket the target ARL {target} within {expansions} expansions")]
    NotBracketable { target: f64, expansions: usize },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery rather than the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::HorizonTooShort { .. }
                | Error::NotBracketable { .. }
        )
    }
}
