use thiserror::Error;

/// Everything that can go wrong while building models, planning or learning.
#[derive(Debug, Error)]
pub enum Error {
    #[error("transition row for state {state}, action {action} sums to {sum} instead of 1")]
    NonStochasticKernel { state: usize, action: usize, sum: f64 },

    #[error("transition row for state {state}, action {action} has negative mass {value} at next state {next}")]
    NegativeKernel {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },

    #[error("norm bound violated: {what} at {index} is {value}, bound {bound}")]
    NormBoundViolated {
        what: &'static str,
        index: String,
        value: f64,
        bound: f64,
    },

    #[error("observation cost at state {state}, action {action} is {cost}, outside [0, {c_max}]")]
    CostOutOfRange {
        state: usize,
        action: usize,
        cost: f64,
        c_max: f64,
    },

    #[error("reset distribution sums to {sum} (or has a negative entry)")]
    NonStochasticReset { sum: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("augmented state has an empty action tail")]
    EmptyTail,

    #[error("augmented state is the termination sentinel")]
    Terminal,

    #[error("belief entry {value} at state {state} is below the clamping tolerance")]
    NegativeBelief { state: usize, value: f64 },

    #[error("belief sums to {sum} instead of 1")]
    NonStochasticBelief { sum: f64 },

    #[error("value {value} at table index {index} is outside [0, {v_max}]")]
    ValueOutOfRange { index: usize, value: f64, v_max: f64 },

    #[error("depth budget exhausted")]
    DepthExhausted,

    #[error("planning problem too large: {nodes} nodes exceed the budget of {budget}")]
    PlanningTooLarge { nodes: usize, budget: usize },

    #[error("epsilon {eps} exceeds the admissible maximum {max}")]
    EpsilonTooLarge { eps: f64, max: f64 },

    #[error("sampling distribution has empty support")]
    DegenerateDistribution,

    #[error("exhaustive sequence search needs {nodes} nodes, budget is {budget}")]
    OptimizerBudgetExceeded { nodes: u128, budget: usize },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by invalid user input (models, configs, parameters)
    /// rather than I/O or internal limits.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::Csv(_) | Error::PlanningTooLarge { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
