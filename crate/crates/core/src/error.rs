use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("invalid {what}: {reason}")]
    Domain { what: &'static str, reason: String },

    /// The request is well-formed but cannot be satisfied (e.g. more chunks than tokens).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The exhaustive partition oracle refuses instances above its size guard.
    #[error(
        "oracle bound exceeded: S={seq_len} (max {max_seq_len}), N={chunks} (max {max_chunks})"
    )]
    OracleBound {
        seq_len: usize,
        max_seq_len: usize,
        chunks: usize,
        max_chunks: usize,
    },

    /// Candidate enumeration pruned everything away.
    #[error("no feasible config: {0}")]
    NoCandidates(String),

    /// Every enumerated candidate exceeds device memory.
    #[error("all candidates exceed device memory:\n{0}")]
    AllInfeasible(String),

    /// The configuration file is malformed or names unknown / missing keys.
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn domain(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// Well-formed request that no configuration can satisfy.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::Infeasible(_) | Error::NoCandidates(_) | Error::AllInfeasible(_)
        )
    }
}
