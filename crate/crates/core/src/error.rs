use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Two interacting bodies got closer than the Cartesian collision threshold.
    #[error(
        "bodies {0} and {1} are {distance:e} apart (below the collision threshold); \
         use the regularized chart for this segment",
        pair.0, pair.1
    )]
    Singularity { pair: (usize, usize), distance: f64 },

    /// Exact binary collision of the regularized pair (u = 0): Cartesian
    /// velocities are undefined there.
    #[error("state is at binary collision of bodies 1 and 4 (u = 0); Cartesian velocities are undefined")]
    AtCollision,

    #[error("step size underflow at x = {at} (h = {step:e}); near a Cartesian singularity use the regularized chart")]
    StepUnderflow { at: f64, step: f64 },

    #[error("step budget of {max_steps} exhausted at x = {at}")]
    StepBudget { max_steps: usize, at: f64 },

    #[error("target {target} is outside the reached range [{lo}, {hi}]")]
    NotBracketed { target: f64, lo: f64, hi: f64 },

    #[error("test particle starts on top of body 1 (x0 = x10); no regularized seed exists")]
    CollisionSeed,

    #[error(
        "Newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("Jacobian is rank deficient")]
    RankDeficient,

    #[error("{0}")]
    Domain(String),

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures that come from the numerics (integration, Newton)
    /// rather than from malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singularity { .. }
                | Error::AtCollision
                | Error::StepUnderflow { .. }
                | Error::StepBudget { .. }
                | Error::NotBracketed { .. }
                | Error::NewtonDiverged { .. }
                | Error::RankDeficient
        )
    }
}
