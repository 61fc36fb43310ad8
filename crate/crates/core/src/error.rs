use thiserror::Error;

/// Constraint families of the MPC problem, used to report which class of
/// constraints made an instance infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintClass {
    FeederLimit,
    EnergyFloor,
    BinCap,
    SupplyLimits,
    ClearingLogic,
    Unknown,
}

impl std::fmt::Display for ConstraintClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::FeederLimit => "feeder limit",
            Self::EnergyFloor => "controllable energy floor",
            Self::BinCap => "bin occupancy cap",
            Self::SupplyLimits => "supply capacity/ramp limits",
            Self::ClearingLogic => "market-clearing logic",
            Self::Unknown => "unidentified constraint set",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("market infeasible: uncontrollable demand {d_other} kW exceeds feeder limit {d_feeder} kW")]
    MarketInfeasible { d_other: f64, d_feeder: f64 },

    #[error("bid price {price} outside bin grid [{min}, {max}]")]
    OutOfGrid { price: f64, min: f64, max: f64 },

    #[error("index {index} out of range (max {max})")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("equilibrium undefined: alpha = 1")]
    UndefinedEquilibrium,

    #[error("eigensolver did not converge within {budget} iterations per eigenvalue")]
    EigenNoConvergence { budget: usize },

    #[error("optimization problem infeasible ({0})")]
    Infeasible(ConstraintClass),

    #[error("solver hit its iteration limit ({iterations} iterations)")]
    MaxIterations { iterations: usize },

    #[error("search budget exhausted before any feasible schedule was found ({nodes} nodes)")]
    BudgetExhausted { nodes: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
