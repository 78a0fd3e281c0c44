use thiserror::Error;

/// Errors raised by the simulation and analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error(
        "grid point (theta = {theta}, alpha = {alpha}) violates sin^2(alpha/2) <= sin^2((alpha - 2 theta)/2)"
    )]
    GridConstraint { theta: f64, alpha: f64 },

    #[error("parameters (c = {c}, epsilon = {epsilon}) violate epsilon <= c <= 1 - epsilon")]
    ParameterConstraint { c: f64, epsilon: f64 },

    #[error("invalid noise configuration: {0}")]
    InvalidNoise(String),

    #[error("frequency table is missing cell ({measurement}, {preparation})")]
    MissingCell {
        measurement: String,
        preparation: String,
    },

    #[error("primary fit did not converge after {iterations} iterations (chi^2 = {chi_squared})")]
    NonConvergence { iterations: usize, chi_squared: f64 },

    #[error("gauge transform is singular (condition number {condition:e})")]
    SingularGauge { condition: f64 },

    #[error("maximally mixed state system is ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("operational equivalence is infeasible (minimal constraint violation {violation:e})")]
    Infeasible { violation: f64 },

    #[error("quadratic program did not converge within {iterations} iterations")]
    QpIterationLimit { iterations: usize },

    #[error("{failed} of {total} bootstrap resamples failed")]
    BootstrapFailed { failed: usize, total: usize },

    #[error("bootstrap needs at least 2 resamples, got {0}")]
    TooFewResamples(usize),

    #[error("every point was excluded from the fidelity average")]
    AllExcluded,

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
