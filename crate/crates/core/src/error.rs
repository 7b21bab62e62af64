use thiserror::Error;

/// Errors raised by the numerical operators of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("fractional order {0} outside the operational range (-2, inf)")]
    OrderOutOfRange(f64),
    #[error("signal does not vanish at its left endpoint (|f(t0)| = {value:e}, sup = {sup:e})")]
    UnsupportedSupport { value: f64, sup: f64 },
    #[error("mass parameter must be positive, got {0}")]
    NonPositiveA(f64),
    #[error("spectral energy fraction {fraction:e} near the Nyquist band exceeds 1%")]
    AliasRisk { fraction: f64 },
    #[error("expected a >= 1/2, got {0}")]
    BelowResonance(f64),
    #[error("no lower bound is claimed in the resonant case a = 1/2")]
    ResonantA,
    #[error("region scheme {scheme} is not defined for a = {a}")]
    SchemeMismatch { scheme: &'static str, a: f64 },
    #[error("parameter domain violated: {0}")]
    ParamDomainViolated(String),
    #[error("parameter ordering violated: {0}")]
    ParamOrderViolated(String),
    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergent(String),
    #[error("denominator vanished in norm quotient")]
    ZeroDenominator,
    #[error("forcing order lambda = {0} outside the admissible window")]
    LambdaOutOfRange(f64),
    #[error("singular quadrature failed: {0}")]
    SingularQuadratureFail(String),
    #[error("test function support violates the grid interior requirement: {0}")]
    SupportViolation(String),
    #[error("index window violated: {0}")]
    WindowViolation(String),
    #[error("solution blew up at t = {t}: norm {norm:e} exceeds the guard")]
    BlowUpDetected { t: f64, norm: f64 },
    #[error("nonlinear fixed-point iteration did not converge at t = {t} (defect {defect:e})")]
    NonConvergentNonlinearIteration { t: f64, defect: f64 },
    #[error("compatibility condition violated: {0}")]
    CompatibilityViolation(String),
    #[error("iteration diverged: distances increased for 3 consecutive iterates")]
    DivergentIteration,
    #[error("mass ledger is empty")]
    EmptyLedger,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
