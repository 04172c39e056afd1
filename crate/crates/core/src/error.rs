use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid model: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("strain index {index} out of range for {n} strains")]
    StrainIndex { index: usize, n: usize },

    #[error("no sign change of phi found while bracketing the homeostatic root")]
    NoRootInBracket,

    #[error("singular stage matrix")]
    SingularMatrix,

    #[error("strain {strain} has no endemic equilibrium (T0 = {t0})")]
    NoEndemicEquilibrium { strain: usize, t0: f64 },

    #[error("state outside the domain of the function: {0}")]
    DomainError(&'static str),

    #[error("largest thresholds are tied; the winner is not generic")]
    NotGeneric,

    #[error("operation requires constant recruitment")]
    UnsupportedRecruitment,

    #[error("wrong model shape: {0}")]
    WrongModelShape(&'static str),

    #[error("invalid integrator options: {0}")]
    InvalidOptions(String),

    #[error("step size underflow at t = {t} (h = {h})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("step budget of {max_steps} exhausted at t = {t}")]
    StepBudget { t: f64, max_steps: usize },

    #[error("sweep grid has {cells} cells (limit {limit}) or {axes} axes (limit 3)")]
    BudgetExceeded { cells: usize, limit: usize, axes: usize },

    #[error("unknown parameter path `{0}`")]
    UnknownParameter(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
