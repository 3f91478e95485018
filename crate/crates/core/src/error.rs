use thiserror::Error;

/// Errors raised by the model, controllers and hybrid execution.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Validation(String),

    #[error("mass matrix is singular or ill-conditioned (condition estimate {0:e})")]
    SingularMass(f64),

    #[error("normal contact operator {0:e} below 1e-10")]
    SingularContact(f64),

    #[error("impact operator ill-conditioned (condition estimate {0:e})")]
    SingularImpact(f64),

    #[error("Bezier degree {0} too low: relative degree two needs M >= 2")]
    DegreeTooLow(usize),

    #[error("stacked decoupling matrix near singular (sigma_min = {0:e})")]
    NearSingularDecoupling(f64),

    #[error("slip channel singular (||M_s|| = {0:e})")]
    SlipChannelSingular(f64),

    #[error("holonomic channel singular (sigma_min(M_h) = {0:e})")]
    HolonomicChannelSingular(f64),

    #[error("no impact within {0} s")]
    NoImpact(f64),

    #[error("fall detected: {0}")]
    Fall(String),

    #[error("normal contact force became negative ({0:e} N)")]
    NegativeNormalForce(f64),

    #[error("integrator failure: {0}")]
    Integrator(String),

    #[error("step failed: {0}")]
    StepFailed(String),

    #[error("return trajectory left the section chart: {0}")]
    SectionMiss(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e}){detail}")]
    NoConvergence { iterations: usize, residual: f64, detail: String },

    #[error("infeasible gait targets: {0}")]
    InfeasibleTargets(String),
}

pub type Result<T> = std::result::Result<T, Error>;
