//! Closed-loop validation: broadcast the optimized prices to the simulated
//! population and compare against the plan.

use serde::Serialize;

use super::problem::{MpcKind, MpcProblem, MpcSettings, MpcSolution};
use super::solve::solve_mpc;
use crate::aggmodel::{BinDistribution, BinGrid};
use crate::error::{Error, Result};
use crate::popsim::{rmse, run_priced, Population, Scenario, Trace};

/// Normalizer of the demand RMSE (MW).
pub const RMSE_NORMALIZER_MW: f64 = 8.0;

#[derive(Debug, Clone, Serialize)]
pub struct ClosedLoopMetrics {
    pub kind: MpcKind,
    pub horizon: usize,
    /// Interval-average system demand (MW).
    pub mean_system_mw: f64,
    /// Interval-average controllable demand (MW).
    pub mean_controllable_mw: f64,
    /// Largest demand right after a clearing (MW); devices only switch off
    /// within an interval, so this is the interval peak.
    pub peak_system_mw: f64,
    /// RMSE of demand at clearing against the plan, over 8 MW.
    pub rmse: f64,
    /// Same with interval-average demand as the actual series.
    pub rmse_interval_average: f64,
    pub lambda_mean: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Largest single-bin fraction in the planned `X_1..X_N`.
    pub max_bin_fraction: f64,
    /// Bins of the planned `X_N` holding at least one device.
    pub terminal_spread: usize,
    /// Same two measures on the simulated population, after the last
    /// clearing.
    pub sim_max_bin_fraction: f64,
    pub sim_terminal_spread: usize,
    pub feeder_violations: usize,
    pub planned_controllable_mw: f64,
    pub objective: f64,
    pub solve_s: f64,
    pub nodes: usize,
    pub gap: f64,
}

/// Bin distribution of a scenario's initial population.
pub fn initial_distribution(scn: &Scenario, grid: &BinGrid) -> Result<BinDistribution> {
    let pop = Population::from_scenario(scn)?;
    BinDistribution::from_states(&pop.states(), grid)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Metrics of a plan replayed through the simulator.
pub fn closed_loop_metrics(p: &MpcProblem, sol: &MpcSolution, trace: &Trace) -> Result<ClosedLoopMetrics> {
    let n = trace.intervals.len();
    if n != sol.i_max.len() {
        return Err(Error::Dimension(format!("trace has {n} intervals, plan has {}", sol.i_max.len())));
    }
    let cleared: Vec<f64> = trace.intervals.iter().map(|r| (r.cleared_kw + r.d_other_kw) / 1000.0).collect();
    let averaged: Vec<f64> = trace.intervals.iter().map(|r| (r.avg_kw + r.d_other_kw) / 1000.0).collect();
    let controllable: Vec<f64> = trace.intervals.iter().map(|r| r.avg_kw / 1000.0).collect();
    let device_mass = p.device_mass();
    let (sim_max, sim_spread) = trace.snapshots.last().map_or((0.0, 0), |d| {
        (trace.snapshots.iter().map(|s| s.max_mass()).fold(0.0, f64::max), d.spread(device_mass))
    });
    Ok(ClosedLoopMetrics {
        kind: sol.kind,
        horizon: n,
        mean_system_mw: mean(&averaged),
        mean_controllable_mw: mean(&controllable),
        peak_system_mw: cleared.iter().copied().fold(0.0, f64::max),
        rmse: rmse(&cleared, &sol.d_mw, RMSE_NORMALIZER_MW)?,
        rmse_interval_average: rmse(&averaged, &sol.d_mw, RMSE_NORMALIZER_MW)?,
        lambda_mean: mean(&sol.lambda),
        lambda_min: sol.lambda.iter().copied().fold(f64::INFINITY, f64::min),
        lambda_max: sol.lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_bin_fraction: sol.max_bin_fraction(),
        terminal_spread: sol.terminal_spread(device_mass),
        sim_max_bin_fraction: sim_max,
        sim_terminal_spread: sim_spread,
        feeder_violations: cleared.iter().filter(|d| **d > p.feeder_mw * (1.0 + 1e-12)).count(),
        planned_controllable_mw: mean(&sol.d_c_mw),
        objective: sol.objective,
        solve_s: sol.stats.wall_s,
        nodes: sol.stats.nodes,
        gap: sol.stats.gap,
    })
}

/// Solve the plan, broadcast its prices to the scenario's population and
/// report the closed-loop metrics. The scenario supplies the population and
/// its uncontrollable demand must match the problem's.
pub fn evaluate_closed_loop(
    p: &MpcProblem,
    kind: MpcKind,
    scn: &Scenario,
    settings: &MpcSettings,
) -> Result<(MpcSolution, ClosedLoopMetrics, Trace)> {
    let mut scn = scn.clone();
    scn.horizon = p.horizon;
    scn.snapshot_bins = Some(p.n_bins());
    scn.feeder_kw = Some(p.feeder_mw * 1000.0);
    scn.d_other_kw = p.d_other_mw.iter().take(p.horizon).map(|v| v * 1000.0).collect();
    if scn.pi_base.len() < p.horizon {
        scn.pi_base = vec![p.grid.pi_max; p.horizon];
    }
    if scn.n_devices == 0 {
        return Ok(empty_population(p, kind, &scn));
    }
    let sol = solve_mpc(p, kind, settings)?;
    let trace = run_priced(&scn, &sol.pi_clr)?;
    let metrics = closed_loop_metrics(p, &sol, &trace)?;
    Ok((sol, metrics, trace))
}

/// With no devices there is nothing to schedule: controllable quantities
/// are zero and the plan matches the uncontrollable demand exactly.
fn empty_population(p: &MpcProblem, kind: MpcKind, scn: &Scenario) -> (MpcSolution, ClosedLoopMetrics, Trace) {
    let d: Vec<f64> = p.d_other_mw.iter().take(p.horizon).copied().collect();
    let lambda: Vec<f64> =
        if p.trivial_dispatch() { d.iter().map(|v| p.sources[0].marginal(*v)).collect() } else { vec![0.0; d.len()] };
    let sol = MpcSolution {
        kind,
        i_max: vec![0; p.horizon],
        pi_clr: vec![p.grid.pi_max; p.horizon],
        x: vec![p.x_ini.clone(); p.horizon + 1],
        x_on: vec![vec![0.0; 3 * p.n_bins()]; p.horizon],
        x_off: vec![p.x_ini.x.clone(); p.horizon],
        p_mw: d.iter().map(|v| vec![*v]).collect(),
        d_c_mw: vec![0.0; p.horizon],
        d_mw: d.clone(),
        lambda: lambda.clone(),
        objective: 0.0,
        stats: Default::default(),
    };
    let metrics = ClosedLoopMetrics {
        kind,
        horizon: p.horizon,
        mean_system_mw: mean(&d),
        mean_controllable_mw: 0.0,
        peak_system_mw: d.iter().copied().fold(0.0, f64::max),
        rmse: 0.0,
        rmse_interval_average: 0.0,
        lambda_mean: mean(&lambda),
        lambda_min: lambda.iter().copied().fold(f64::INFINITY, f64::min),
        lambda_max: lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_bin_fraction: 0.0,
        terminal_spread: 0,
        sim_max_bin_fraction: 0.0,
        sim_terminal_spread: 0,
        feeder_violations: d.iter().filter(|v| **v > p.feeder_mw).count(),
        planned_controllable_mw: 0.0,
        objective: 0.0,
        solve_s: 0.0,
        nodes: 0,
        gap: 0.0,
    };
    let trace = Trace { tau_min: scn.tau_min, p_elec_kw: scn.p_elec_kw(), ..Trace::default() };
    (sol, metrics, trace)
}
