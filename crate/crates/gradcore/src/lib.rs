//! Scalar reverse-mode automatic differentiation over flat parameter vectors.
//!
//! The expression language covers what preference-optimization losses need:
//! add/mul, exp/ln, sigmoid, softplus, log-sum-exp, stop-gradient, clamping
//! and indicator masks. Large structured computations (a transformer
//! log-probability, a verdict-logit readout) plug in as [`ParamFunction`]
//! leaves that supply their own vector-Jacobian products, so the scalar graph
//! stays small while gradients still flow end to end.
//!
//! Every backend claim is checkable: [`finite_diff_check`] compares
//! reverse-mode gradients against central differences with indicator branches
//! held fixed, and classifies stop-gradient-blocked entries separately.

mod check;
mod eval;
mod expr;
mod param;

pub use check::{finite_diff_check, CheckStatus, EntryCheck, FiniteDiffReport};
pub use eval::{evaluate, gradient, sigmoid, softplus, value_and_gradient};
pub use expr::{Expr, ParamFunction};
pub use param::{Layout, LayoutEntry, ParamVector};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parameter index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("{0}")]
    ParamFn(String),
}

pub type Result<T> = std::result::Result<T, Error>;
