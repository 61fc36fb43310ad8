use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use nalgebra::DVector;

use super::condensed::{BuildOptions, Condensed, SUPPORT_EPS};
use super::problem::{MpcKind, MpcProblem, MpcSettings, MpcSolution, SolverStats};
use crate::aggmodel::{split_and_reset, BinDistribution};
use crate::error::{ConstraintClass, Error, Result};
use crate::market::threshold_to_price;
use crate::qp::solve_qp;

/// Clearing threshold of one period from fractional on-masses: the deepest
/// price-bin whose on-mass in either controllable set reaches `zeta`.
/// `x_on` has `3·N_B` entries; `0` means nothing clears.
pub fn threshold_from_on_mass(x_on: &[f64], n_bins: usize, zeta: f64) -> usize {
    (0..2 * n_bins.min(x_on.len() / 2))
        .filter(|&slot| x_on[slot] >= zeta)
        .map(|slot| slot % n_bins + 1)
        .max()
        .unwrap_or(0)
}

/// Clearing prices of a threshold schedule.
pub fn extract_prices(i_max: &[usize], grid: &crate::aggmodel::BinGrid) -> Result<Vec<f64>> {
    i_max.iter().map(|&i| threshold_to_price(i, grid)).collect()
}

/// Deterministic replay of a threshold schedule through the bin model.
#[derive(Debug, Clone)]
pub struct Replay {
    /// `X_0..X_N`.
    pub x: Vec<BinDistribution>,
    pub x_on: Vec<Vec<f64>>,
    pub x_off: Vec<Vec<f64>>,
    pub d_c_mw: Vec<f64>,
}

pub fn replay(p: &MpcProblem, i_max: &[usize]) -> Replay {
    let mut x = vec![p.x_ini.clone()];
    let mut x_on = Vec::with_capacity(i_max.len());
    let mut x_off = Vec::with_capacity(i_max.len());
    let mut d_c = Vec::with_capacity(i_max.len());
    for &i in i_max {
        let cur = x.last().unwrap();
        let (on, off) = crate::aggmodel::split(cur, i);
        let plus = split_and_reset(cur, i);
        d_c.push(p.scale_mw() * on.iter().sum::<f64>());
        x_on.push(on);
        x_off.push(off);
        x.push(crate::aggmodel::propagate(&plus, &p.model, 1));
    }
    Replay { x, x_on, x_off, d_c_mw: d_c }
}

/// Supply schedule, marginal prices and supply cost for fixed demand.
struct Dispatch {
    p: Vec<Vec<f64>>,
    d: Vec<f64>,
    lambda: Vec<f64>,
    cost: f64,
}

fn dispatch(p: &MpcProblem, d_c: &[f64], settings: &MpcSettings) -> Result<Dispatch> {
    let d: Vec<f64> = (0..p.horizon).map(|k| p.d_other_mw[k] + d_c[k]).collect();
    if d.iter().any(|v| *v > p.feeder_mw + settings.feas_tol) {
        return Err(Error::Infeasible(ConstraintClass::FeederLimit));
    }
    if p.trivial_dispatch() {
        let s = &p.sources[0];
        return Ok(Dispatch {
            p: d.iter().map(|v| vec![*v]).collect(),
            lambda: d.iter().map(|v| s.marginal(*v)).collect(),
            cost: d.iter().map(|v| s.cost(*v)).sum(),
            d,
        });
    }
    let x_n = vec![0.0; 3 * p.n_bins()];
    let mut opts = BuildOptions::default();
    // The energy floor is checked by the caller; demand is fixed here.
    opts.drop = Some(ConstraintClass::EnergyFloor);
    let c = Condensed::build(p, d_c, &x_n, opts)?;
    let sol = solve_qp(&c.qp, &settings.qp).map_err(|e| match e {
        Error::Infeasible(_) => Error::Infeasible(ConstraintClass::SupplyLimits),
        other => other,
    })?;
    let r = c.recover(p, &sol);
    Ok(Dispatch { p: r.p, d: r.d, lambda: r.lambda, cost: c.objective(&sol) })
}

fn spread_cost(p: &MpcProblem, k: usize, x: &[f64]) -> f64 {
    if p.mu_s == 0.0 || !p.spread_weighted(k) {
        return 0.0;
    }
    let b = p.b_avg();
    p.mu_s * x.iter().map(|v| (v - b) * (v - b)).sum::<f64>()
}

/// Objective of a threshold schedule under the exact mixed-integer model,
/// or the violated constraint class.
pub fn evaluate_thresholds(p: &MpcProblem, i_max: &[usize], settings: &MpcSettings) -> Result<(f64, Replay)> {
    if i_max.len() != p.horizon {
        return Err(Error::Dimension(format!("{} thresholds for a horizon of {}", i_max.len(), p.horizon)));
    }
    let r = replay(p, i_max);
    if r.x.iter().skip(1).any(|d| d.max_mass() > p.b_max + settings.feas_tol) {
        return Err(Error::Infeasible(ConstraintClass::BinCap));
    }
    if r.d_c_mw.iter().sum::<f64>() < p.floor_total_mw() - settings.feas_tol {
        return Err(Error::Infeasible(ConstraintClass::EnergyFloor));
    }
    let disp = dispatch(p, &r.d_c_mw, settings)?;
    let penalty: f64 = i_max.iter().map(|&i| 2.0 * p.mu_w * i as f64).sum();
    let spread: f64 = r.x.iter().enumerate().map(|(k, d)| spread_cost(p, k, &d.x)).sum();
    Ok((disp.cost + penalty + spread, r))
}

fn finish(
    p: &MpcProblem,
    kind: MpcKind,
    i_max: Vec<usize>,
    r: Replay,
    objective: f64,
    stats: SolverStats,
    settings: &MpcSettings,
) -> Result<MpcSolution> {
    let disp = dispatch(p, &r.d_c_mw, settings)?;
    Ok(MpcSolution {
        kind,
        pi_clr: extract_prices(&i_max, &p.grid)?,
        i_max,
        x: r.x,
        x_on: r.x_on,
        x_off: r.x_off,
        p_mw: disp.p,
        d_c_mw: r.d_c_mw,
        d_mw: disp.d,
        lambda: disp.lambda,
        objective,
        stats,
    })
}

/// Cheap necessary conditions, checked before any optimization.
fn precheck(p: &MpcProblem) -> Result<()> {
    p.validate()?;
    let headroom: Vec<f64> = (0..p.horizon).map(|k| p.feeder_mw - p.d_other_mw[k]).collect();
    if headroom.iter().any(|h| *h < 0.0) {
        return Err(Error::Infeasible(ConstraintClass::FeederLimit));
    }
    // Locked devices may unlock later, so the whole population counts.
    let controllable = p.x_ini.total();
    let reachable: f64 = headroom.iter().map(|h| h.min(p.scale_mw() * controllable)).sum();
    if p.floor_total_mw() > reachable + 1e-9 {
        // The floor cannot be met even with every device on whenever the
        // feeder allows it.
        let unconstrained = p.scale_mw() * controllable * p.horizon as f64;
        return Err(Error::Infeasible(if p.floor_total_mw() > unconstrained + 1e-9 {
            ConstraintClass::EnergyFloor
        } else {
            ConstraintClass::FeederLimit
        }));
    }
    Ok(())
}

/// Name the constraint class responsible for an infeasible relaxation: the
/// first class whose removal makes the relaxation feasible.
fn classify_relaxation(p: &MpcProblem, settings: &MpcSettings) -> ConstraintClass {
    for class in [
        ConstraintClass::EnergyFloor,
        ConstraintClass::BinCap,
        ConstraintClass::FeederLimit,
        ConstraintClass::SupplyLimits,
    ] {
        let opts = BuildOptions { drop: Some(class), ..BuildOptions::default() };
        if let Ok(c) = Condensed::build(p, &[], &p.x_ini.x, opts) {
            if solve_qp(&c.qp, &settings.qp).is_ok() {
                return class;
            }
        }
    }
    ConstraintClass::Unknown
}

fn relaxation_error(p: &MpcProblem, settings: &MpcSettings, e: Error) -> Error {
    match e {
        Error::Infeasible(ConstraintClass::Unknown) => Error::Infeasible(classify_relaxation(p, settings)),
        other => other,
    }
}

/// Solve the relaxed quadratic program with the per-bin priority cost and
/// extract thresholds by the on-mass rule.
pub fn solve_mpc_qp(p: &MpcProblem, settings: &MpcSettings) -> Result<MpcSolution> {
    let start = Instant::now();
    precheck(p)?;
    let n = p.n_bins();
    let opts = BuildOptions { on_cost: true, ..BuildOptions::default() };
    let c = Condensed::build(p, &[], &p.x_ini.x, opts).map_err(|e| relaxation_error(p, settings, e))?;
    let sol = solve_qp(&c.qp, &settings.qp).map_err(|e| relaxation_error(p, settings, e))?;
    let r = c.recover(p, &sol);
    let zeta = p.zeta();

    let mut x_on = Vec::with_capacity(p.horizon);
    let mut x_off = Vec::with_capacity(p.horizon);
    let mut i_max = Vec::with_capacity(p.horizon);
    let mut d_c = Vec::with_capacity(p.horizon);
    for k in 0..p.horizon {
        let xk = &r.x[k];
        let mut on = vec![0.0; 3 * n];
        for i in 0..n {
            let (a, b) = (xk[i].max(0.0), xk[i + n].max(0.0));
            let z = r.z[k][i];
            if a + b > 0.0 {
                on[i] = z * a / (a + b);
                on[i + n] = z * b / (a + b);
            }
        }
        let off: Vec<f64> = (0..3 * n).map(|j| (xk[j] - on[j]).max(0.0)).collect();
        i_max.push(threshold_from_on_mass(&on, n, zeta));
        d_c.push(p.scale_mw() * r.z[k].iter().sum::<f64>());
        x_on.push(on);
        x_off.push(off);
    }
    let stats = SolverStats {
        nodes: 1,
        qp_solves: 1,
        qp_iterations: sol.iterations,
        gap: 0.0,
        proven_optimal: true,
        budget_exhausted: false,
        wall_s: start.elapsed().as_secs_f64(),
    };
    Ok(MpcSolution {
        kind: MpcKind::Qp,
        pi_clr: extract_prices(&i_max, &p.grid)?,
        i_max,
        x: r.x.iter().map(|v| BinDistribution::from_vec(n, v.iter().map(|e| e.max(0.0)).collect())).collect(),
        x_on,
        x_off,
        p_mw: r.p,
        d_c_mw: d_c,
        d_mw: r.d,
        lambda: r.lambda,
        objective: c.objective(&sol),
        stats,
    })
}

/// Solve by trying every threshold schedule. Exponential; meant as an
/// oracle for small instances.
pub fn solve_by_enumeration(p: &MpcProblem, settings: &MpcSettings) -> Result<(Vec<usize>, f64)> {
    p.validate()?;
    let n = p.n_bins();
    let total = (n as u128 + 1).checked_pow(p.horizon as u32).unwrap_or(u128::MAX);
    if total > 50_000_000 {
        return Err(Error::InvalidParameter(format!("{total} schedules are too many to enumerate")));
    }
    let mut seq = vec![0usize; p.horizon];
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut last_err = ConstraintClass::Unknown;
    loop {
        match evaluate_thresholds(p, &seq, settings) {
            Ok((obj, _)) => {
                if best.as_ref().is_none_or(|b| obj < b.1) {
                    best = Some((seq.clone(), obj));
                }
            }
            Err(Error::Infeasible(c)) => last_err = c,
            Err(e) => return Err(e),
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == seq.len() {
                return best.ok_or(Error::Infeasible(last_err));
            }
            seq[pos] += 1;
            if seq[pos] <= n {
                break;
            }
            seq[pos] = 0;
            pos += 1;
        }
    }
}

struct Node {
    i_max: Vec<usize>,
    x: DVector<f64>,
    d_c: Vec<f64>,
    /// Exact objective contribution of the fixed periods other than supply.
    fixed_cost: f64,
    /// Lower bound inherited from the parent.
    bound: f64,
}

/// Heap entry ordered so that the smallest bound pops first, deeper nodes
/// first among equal bounds.
struct Open(Node);

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.bound.total_cmp(&self.0.bound).then(self.0.i_max.len().cmp(&other.0.i_max.len()))
    }
}

/// Branch-and-bound over per-period clearing thresholds. Nodes fix a prefix
/// of the schedule; bounds come from the condensed relaxation of the
/// remaining periods with a linear underestimate of their on-cost. The
/// search plunges along the child nearest the relaxation and otherwise
/// expands the open node with the smallest bound.
pub fn solve_mpc_mip(p: &MpcProblem, settings: &MpcSettings) -> Result<MpcSolution> {
    let start = Instant::now();
    precheck(p)?;
    let n = p.n_bins();
    let horizon = p.horizon;
    let scale = p.scale_mw();
    let margin = |v: f64| 1e-9 * (1.0 + v.abs());

    let mut stats = SolverStats::default();
    let mut incumbent: Option<(Vec<usize>, f64)> = None;
    let mut open = BinaryHeap::new();
    let mut dive = vec![Node {
        i_max: Vec::new(),
        x: DVector::from_column_slice(&p.x_ini.x),
        d_c: Vec::new(),
        fixed_cost: 0.0,
        bound: f64::NEG_INFINITY,
    }];
    let mut root_bound = f64::NEG_INFINITY;
    let mut root_infeasible: Option<Error> = None;

    while let Some(node) = dive.pop().or_else(|| open.pop().map(|o: Open| o.0)) {
        let prune_level = |inc: &Option<(Vec<usize>, f64)>| {
            inc.as_ref().map_or(f64::INFINITY, |(_, v)| v - settings.gap_tol * v.abs().max(1.0))
        };
        if node.bound - margin(node.bound) >= prune_level(&incumbent) {
            continue;
        }
        if stats.nodes >= settings.node_limit || start.elapsed() >= settings.time_limit {
            open.push(Open(node));
            stats.budget_exhausted = true;
            break;
        }
        stats.nodes += 1;
        let k0 = node.i_max.len();

        if k0 == horizon {
            if node.d_c.iter().sum::<f64>() < p.floor_total_mw() - settings.feas_tol {
                continue;
            }
            match dispatch(p, &node.d_c, settings) {
                Ok(d) => {
                    let total = d.cost + node.fixed_cost;
                    if incumbent.as_ref().is_none_or(|(_, v)| total < *v) {
                        if incumbent.is_none() {
                            // The hunt is over; pending dive nodes join the
                            // best-first queue.
                            open.extend(dive.drain(..).map(Open));
                        }
                        incumbent = Some((node.i_max.clone(), total));
                    }
                }
                Err(Error::Infeasible(_)) => {}
                Err(e) => return Err(e),
            }
            continue;
        }

        // Relaxation bound for the free periods.
        let mut bound = node.bound;
        let mut level: Option<f64> = None;
        match Condensed::build(
            p,
            &node.d_c,
            node.x.as_slice(),
            BuildOptions { on_cost_bound: true, ..BuildOptions::default() },
        ) {
            Ok(c) => {
                stats.qp_solves += 1;
                match solve_qp(&c.qp, &settings.qp) {
                    Ok(sol) => {
                        stats.qp_iterations += sol.iterations;
                        bound = bound.max(node.fixed_cost + c.objective(&sol));
                        let on: f64 = c.z_vars.first().map_or(0.0, |row| row.iter().map(|&(_, v)| sol.x[v]).sum());
                        level = Some(on);
                    }
                    Err(Error::Infeasible(_)) => {
                        if k0 == 0 {
                            root_infeasible = Some(Error::Infeasible(classify_relaxation(p, settings)));
                        }
                        continue;
                    }
                    // An unsolved relaxation gives no bound; keep branching.
                    Err(_) => {}
                }
            }
            Err(Error::Infeasible(class)) => {
                if k0 == 0 {
                    root_infeasible = Some(Error::Infeasible(class));
                }
                continue;
            }
            Err(e) => return Err(e),
        }
        if k0 == 0 {
            root_bound = bound;
        }
        if bound - margin(bound) >= prune_level(&incumbent) {
            continue;
        }

        // Children: one per distinct clearing. Thresholds on empty bins clear
        // the same mass as a shallower one at a higher on-cost.
        let xd = BinDistribution::from_vec(n, node.x.as_slice().to_vec());
        let mut cum = vec![0.0];
        let mut candidates = vec![0usize];
        for i in 0..n {
            let mass = node.x[i] + node.x[i + n];
            cum.push(cum[i] + mass.max(0.0));
            if mass > SUPPORT_EPS {
                candidates.push(i + 1);
            }
        }
        let target = level.unwrap_or(0.0);
        candidates.sort_by(|&a, &b| (cum[a] - target).abs().total_cmp(&(cum[b] - target).abs()).then(a.cmp(&b)));
        // The nearest level continues the plunge; its siblings wait. Until
        // a first schedule is found the search is depth-first, so that every
        // sibling is tried before returning to shallow nodes.
        let hunting = incumbent.is_none();
        let mut children = Vec::new();
        for &j in &candidates {
            let plus = split_and_reset(&xd, j);
            let dc = scale * plus.on_fraction();
            if p.d_other_mw[k0] + dc > p.feeder_mw + settings.feas_tol {
                continue;
            }
            let next = &p.model.a * DVector::from_column_slice(&plus.x);
            if p.b_max < 1.0 && next.iter().any(|v| *v > p.b_max + settings.feas_tol) {
                continue;
            }
            let mut i_max = node.i_max.clone();
            i_max.push(j);
            let mut d_c = node.d_c.clone();
            d_c.push(dc);
            let fixed_cost = node.fixed_cost + 2.0 * p.mu_w * j as f64 + spread_cost(p, k0 + 1, next.as_slice());
            children.push(Node { i_max, x: next, d_c, fixed_cost, bound });
        }
        if hunting {
            dive.extend(children.into_iter().rev());
        } else {
            let mut it = children.into_iter();
            dive.extend(it.next());
            open.extend(it.map(Open));
        }
    }

    stats.wall_s = start.elapsed().as_secs_f64();
    let Some((best, value)) = incumbent else {
        if let Some(e) = root_infeasible {
            return Err(e);
        }
        if stats.budget_exhausted {
            return Err(Error::BudgetExhausted { nodes: stats.nodes });
        }
        // The relaxation is feasible but no whole-bin schedule is.
        return Err(Error::Infeasible(ConstraintClass::ClearingLogic));
    };
    let open_bound = dive.iter().map(|nd| nd.bound).chain(open.iter().map(|o| o.0.bound)).fold(f64::INFINITY, f64::min);
    let lower = if stats.budget_exhausted { open_bound.min(value).max(root_bound.min(value)) } else { value };
    stats.gap = ((value - lower) / value.abs().max(1.0)).max(0.0);
    stats.proven_optimal = !stats.budget_exhausted || stats.gap <= settings.gap_tol;
    let (obj, r) = evaluate_thresholds(p, &best, settings)?;
    finish(p, MpcKind::Mip, best, r, obj, stats, settings)
}

/// Solve with the formulation named by `kind`.
pub fn solve_mpc(p: &MpcProblem, kind: MpcKind, settings: &MpcSettings) -> Result<MpcSolution> {
    match kind {
        MpcKind::Mip => solve_mpc_mip(p, settings),
        MpcKind::Qp => solve_mpc_qp(p, settings),
    }
}
