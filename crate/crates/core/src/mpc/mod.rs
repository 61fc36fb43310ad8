//! Finite-horizon scheduling of a DER population through clearing prices:
//! an exact formulation over whole-bin clearing thresholds solved by
//! branch-and-bound, and a convex relaxation with fractional clearing.

mod closed;
pub mod condensed;
mod problem;
mod solve;

pub use closed::{
    closed_loop_metrics, evaluate_closed_loop, initial_distribution, ClosedLoopMetrics, RMSE_NORMALIZER_MW,
};
pub use problem::{MpcKind, MpcProblem, MpcSettings, MpcSolution, SolverStats, Source, SpreadPeriods};
pub use solve::{
    evaluate_thresholds, extract_prices, replay, solve_by_enumeration, solve_mpc, solve_mpc_mip, solve_mpc_qp,
    threshold_from_on_mass, Replay,
};
pub mod toy;

#[cfg(test)]
mod tests;
