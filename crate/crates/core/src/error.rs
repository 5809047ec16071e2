use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("singular market: beta^2 + sigma^2 = 0 at t={t}, z={z}")]
    SingularMarket { t: f64, z: f64 },

    #[error("singular allocation: beta + sigma + gamma = 0 at t={t}, z={z}")]
    SingularAllocation { t: f64, z: f64 },

    #[error("jump measure psi must be positive, got {psi} at node {node}")]
    NonPositivePsi { node: usize, psi: f64 },

    #[error("non-finite {what} at node {node}")]
    NonFinite { what: &'static str, node: usize },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("PDE diverged at time level {level} (|h|_inf = {norm})")]
    PdeDivergence { level: usize, norm: f64 },

    #[error("wealth plus human capital must be positive, got {value}")]
    NonPositiveWealth { value: f64 },

    #[error("annuity factor must be positive, got {value} at t={t}")]
    NonPositiveAnnuity { t: f64, value: f64 },

    #[error("objective not finite while searching psi at t={t}, z={z}")]
    NonFiniteObjective { t: f64, z: f64 },

    #[error("infeasible guarantee: budget gap {gap_low} at rho={rho_low} and {gap_high} at rho=1 have the same sign")]
    InfeasibleGuarantee {
        rho_low: f64,
        gap_low: f64,
        gap_high: f64,
    },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
