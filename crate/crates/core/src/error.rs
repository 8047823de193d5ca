use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "point {point}: family has {members} members, at least 6 are needed for the moment system"
    )]
    OperatorUnderdetermined { point: usize, members: usize },

    #[error("point {point}: singular moment matrix (condition estimate {condition:.3e})")]
    SingularMomentMatrix { point: usize, condition: f64 },

    #[error("operator construction failed at {} point(s); first: {}", .failures.len(), .failures[0])]
    OperatorBuild { failures: Vec<Error> },

    #[error("operator {tag} misses a quadratic by {error:.3e} (relative)")]
    OperatorInexact { tag: String, error: f64 },

    #[error("degenerate flow direction: equivalent plastic strain {ebar_p:.3e} with effective stress {sigma_e:.3e} Pa")]
    DegenerateFlowDirection { sigma_e: f64, ebar_p: f64 },

    #[error("derivative order ({p1},{p2}) is not supported here, only first-order tags are")]
    UnsupportedOrder { p1: u8, p2: u8 },

    #[error("poisoned gradient: non-finite value at a `{0}` node")]
    PoisonedGradient(&'static str),

    #[error("material constant {name} left its admissible range ({value:e})")]
    MaterialCollapse { name: &'static str, value: f64 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{}:{line}: {message}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularMomentMatrix { .. }
                | Error::OperatorBuild { .. }
                | Error::OperatorInexact { .. }
                | Error::DegenerateFlowDirection { .. }
                | Error::PoisonedGradient(_)
                | Error::NonFiniteLoss { .. }
                | Error::MaterialCollapse { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
