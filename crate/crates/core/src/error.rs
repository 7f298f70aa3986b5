use thiserror::Error;

use crate::domain::DomainError;
use crate::qp::{KktResiduals, QpError, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("{context}: solver returned {status:?} (max KKT residual {:e}, {iterations} iterations)", residuals.max())]
    NotOptimal {
        context: String,
        status: QpStatus,
        residuals: KktResiduals,
        iterations: usize,
    },
}
