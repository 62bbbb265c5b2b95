use thiserror::Error;

/// Errors produced by the solver library and the CLI driver.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("node index {index} out of range (n_nodes = {n_nodes})")]
    IndexOutOfRange { index: usize, n_nodes: usize },

    #[error("non-finite density sample at x = {x}")]
    NonFiniteSample { x: f64 },

    #[error("mollifier kernel under-resolved: eps = {eps} < rho = {rho}")]
    KernelUnderResolved { eps: f64, rho: f64 },

    #[error("initial density carries mass {total:.3e} on the grid (support outside the hull?)")]
    VanishingMass { total: f64 },

    #[error("flow target {target} from node {node} left the hull [{x_lo}, {x_hi}]")]
    FlowLeftHull {
        node: usize,
        target: f64,
        x_lo: f64,
        x_hi: f64,
    },

    #[error("weights violate the probability simplex: {0}")]
    SimplexViolation(String),

    #[error("time {t} outside [0, {t_end}]")]
    TimeOutOfRange { t: f64, t_end: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown problem '{0}' (expected test1, test2 or nogame)")]
    UnknownProblem(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SolverError>;
