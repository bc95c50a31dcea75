use thiserror::Error;

/// Errors raised anywhere in the estimation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("singular design: column `{column}` is collinear with the preceding columns")]
    SingularDesign { column: String },

    #[error("non-finite moment: {0}")]
    NonFiniteMoment(String),

    #[error("PPML did not converge after {iterations} iterations (max |score| = {max_score:.3e})")]
    NotConverged {
        iterations: usize,
        max_score: f64,
        last_iterate: Vec<f64>,
    },

    #[error("PPML separation detected: coefficient `{column}` diverging")]
    Separation { column: String },

    #[error("treatment arm {arm} is empty")]
    DegenerateArm { arm: u8 },

    #[error("learner diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("MVPF singular: denominator 1 - tau/(1-tau)*z*eps is zero")]
    Singularity,

    #[error("length mismatch: {0}")]
    Mismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the caller's inputs rather than numerical failure.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Domain(_)
            | Error::InvalidData(_)
            | Error::Mismatch(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::DegenerateArm { .. } => true,
            Error::Fold { source, .. } => source.is_user_error(),
            _ => false,
        }
    }

    pub(crate) fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
