use thiserror::Error;

use crate::statemap::StateLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integrator diverged at step {step}; last finite position {last_finite:?}")]
    IntegratorDivergence { step: u64, last_finite: Vec<f64> },

    #[error("gradient descent did not converge within {iterations} iterations from {start:?}")]
    ClassificationTimeout { iterations: usize, start: Vec<f64> },

    #[error("no exit from state {state} within {steps} steps")]
    NoExitWithinBudget { state: StateLabel, steps: u64 },

    #[error("state {0} is absorbing (all outgoing rates are zero)")]
    AbsorbingState(StateLabel),

    #[error("all {replicas} Fleming-Viot replicas exited in the same step")]
    EnsembleExtinction { replicas: usize },

    #[error("Gelman-Rubin diagnostic did not converge within {steps} steps (last ratio - 1 = {last_excess})")]
    DiagnosticTimeout {
        steps: u64,
        last_excess: f64,
        partial: Box<crate::qsd::QsdEstimate>,
    },

    #[error("dephasing exhausted its budget of {attempts} attempts ({accepted} accepted)")]
    DephasingBudget { attempts: u64, accepted: usize },

    #[error("Hessian signature error at {position:?}: expected {expected}, eigenvalues {eigenvalues:?}")]
    Signature {
        position: Vec<f64>,
        expected: &'static str,
        eigenvalues: Vec<f64>,
    },

    #[error("degenerate critical point at {position:?} (smallest |eigenvalue| {min_abs_eigenvalue:e})")]
    DegenerateCriticalPoint {
        position: Vec<f64>,
        min_abs_eigenvalue: f64,
    },

    #[error("not a generalized saddle: outward normal derivative {normal_derivative} <= 0")]
    NotGeneralizedSaddle { normal_derivative: f64 },

    #[error("state geometry has no boundary minima")]
    EmptyBoundary,

    #[error("bias is nonzero ({value:e}) at exit point {position:?}")]
    InvalidBias { value: f64, position: Vec<f64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no segment available for state {state} and no producer scheduled")]
    Starvation {
        state: StateLabel,
        partial: Box<crate::accel::StateToStateTrajectory>,
    },

    #[error("statistical test inapplicable: {0}")]
    TestInapplicable(String),

    #[error("eigen-solver did not converge after {iterations} iterations (residual {residual:e})")]
    SolverNonConvergence { iterations: usize, residual: f64 },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
