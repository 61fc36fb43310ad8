use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::aggmodel::{BinDistribution, BinGrid, Conditioning, TransitionModel};
use crate::error::{Error, Result};
use crate::qp::QpSettings;

/// Quadratic-cost supply source, `C(P) = c0 + c1·P + c2·P²` with `P` in MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(default)]
    pub p_min_mw: Option<f64>,
    #[serde(default)]
    pub p_max_mw: Option<f64>,
    /// Largest change of output between consecutive periods (MW).
    #[serde(default)]
    pub ramp_mw: Option<f64>,
}

impl Source {
    pub fn quadratic(c0: f64, c1: f64, c2: f64) -> Self {
        Self { c0, c1, c2, p_min_mw: None, p_max_mw: None, ramp_mw: None }
    }

    pub fn cost(&self, p: f64) -> f64 {
        self.c0 + self.c1 * p + self.c2 * p * p
    }

    pub fn marginal(&self, p: f64) -> f64 {
        self.c1 + 2.0 * self.c2 * p
    }

    fn unconstrained(&self) -> bool {
        self.p_min_mw.is_none() && self.p_max_mw.is_none() && self.ramp_mw.is_none()
    }
}

/// Which periods the spread penalty covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpreadPeriods {
    /// Every predicted distribution `X_1..X_N`.
    #[default]
    All,
    /// Only the terminal distribution `X_N`.
    Terminal,
}

#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub horizon: usize,
    pub sources: Vec<Source>,
    /// Post-reset transition model.
    pub model: TransitionModel,
    pub grid: BinGrid,
    pub x_ini: BinDistribution,
    /// Uncontrollable demand per period (MW).
    pub d_other_mw: Vec<f64>,
    pub feeder_mw: f64,
    /// Average controllable demand the horizon must reach (MW); the
    /// constraint is `Σ D_c ≥ energy_floor_mw · horizon`.
    pub energy_floor_mw: f64,
    pub mu_w: f64,
    pub mu_s: f64,
    pub b_max: f64,
    pub w_o: f64,
    /// Dispatch threshold on fractional on-mass; `None` means one device.
    pub zeta: Option<f64>,
    pub n_devices: usize,
    pub p_elec_kw: f64,
    pub spread_periods: SpreadPeriods,
}

impl MpcProblem {
    pub fn n_bins(&self) -> usize {
        self.grid.n_bins
    }

    /// Controllable demand (MW) of a unit on-fraction.
    pub fn scale_mw(&self) -> f64 {
        self.n_devices as f64 * self.p_elec_kw / 1000.0
    }

    pub fn b_avg(&self) -> f64 {
        1.0 / (3 * self.n_bins()) as f64
    }

    pub fn zeta(&self) -> f64 {
        self.zeta.unwrap_or_else(|| if self.n_devices > 0 { 1.0 / self.n_devices as f64 } else { 1e-9 })
    }

    pub fn floor_total_mw(&self) -> f64 {
        self.energy_floor_mw * self.horizon as f64
    }

    /// Mass one device represents; used for spread counts.
    pub fn device_mass(&self) -> f64 {
        if self.n_devices > 0 {
            1.0 / self.n_devices as f64
        } else {
            f64::INFINITY
        }
    }

    pub fn spread_weighted(&self, k: usize) -> bool {
        k >= 1
            && k <= self.horizon
            && match self.spread_periods {
                SpreadPeriods::All => true,
                SpreadPeriods::Terminal => k == self.horizon,
            }
    }

    /// A single source without bounds or ramps dispatches as `P = D`.
    pub fn trivial_dispatch(&self) -> bool {
        self.sources.len() == 1 && self.sources[0].unconstrained()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let n = self.n_bins();
        if self.horizon == 0 {
            return bad("horizon must be at least one period".into());
        }
        if self.sources.is_empty() {
            return bad("at least one supply source is required".into());
        }
        for s in &self.sources {
            if !(s.c2 >= 0.0) {
                return bad(format!("supply cost must be convex, got c2 = {}", s.c2));
            }
            if let (Some(lo), Some(hi)) = (s.p_min_mw, s.p_max_mw) {
                if lo > hi {
                    return bad(format!("source bounds [{lo}, {hi}] are empty"));
                }
            }
            if s.ramp_mw.is_some_and(|r| !(r >= 0.0)) {
                return bad("ramp limits must be nonnegative".into());
            }
        }
        if self.model.n_bins != n || self.x_ini.n_bins != n {
            return Err(Error::Dimension(format!(
                "model has {} bins, initial distribution {}, grid {}",
                self.model.n_bins, self.x_ini.n_bins, n
            )));
        }
        if self.model.meta.conditioning != Conditioning::PostReset {
            return bad("the optimizer needs a post-reset (price-independent) transition model".into());
        }
        if self.d_other_mw.len() < self.horizon {
            return Err(Error::Dimension(format!(
                "uncontrollable demand covers {} periods, horizon is {}",
                self.d_other_mw.len(),
                self.horizon
            )));
        }
        if !(self.b_max >= self.b_avg() - 1e-12 && self.b_max <= 1.0) {
            return bad(format!("bin cap {} must lie in [1/(3·N_B), 1]", self.b_max));
        }
        if !(self.mu_w >= 0.0 && self.mu_s >= 0.0) {
            return bad("weights must be nonnegative".into());
        }
        if !(self.w_o > 1.0) {
            return bad(format!("bin-cost base must exceed 1, got {}", self.w_o));
        }
        if !(self.feeder_mw > 0.0) || !(self.energy_floor_mw >= 0.0) {
            return bad("feeder limit must be positive and the energy floor nonnegative".into());
        }
        if self.zeta.is_some_and(|z| !(z > 0.0)) {
            return bad("dispatch threshold must be positive".into());
        }
        if !(self.p_elec_kw >= 0.0) {
            return bad("device power must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MpcKind {
    Mip,
    Qp,
}

impl std::fmt::Display for MpcKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MpcKind::Mip => "MIP",
            MpcKind::Qp => "QP",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MpcSettings {
    pub qp: QpSettings,
    /// Primal feasibility tolerance for constraint checks.
    pub feas_tol: f64,
    /// Relative optimality gap at which branch-and-bound stops.
    pub gap_tol: f64,
    pub node_limit: usize,
    pub time_limit: Duration,
}

impl Default for MpcSettings {
    fn default() -> Self {
        Self {
            qp: QpSettings::default(),
            feas_tol: 1e-8,
            gap_tol: 1e-6,
            node_limit: 200_000,
            time_limit: Duration::from_secs(480),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolverStats {
    pub nodes: usize,
    pub qp_solves: usize,
    pub qp_iterations: usize,
    /// Relative gap between incumbent and best remaining bound.
    pub gap: f64,
    pub proven_optimal: bool,
    pub budget_exhausted: bool,
    pub wall_s: f64,
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub kind: MpcKind,
    /// Threshold index per period (0 clears nothing).
    pub i_max: Vec<usize>,
    pub pi_clr: Vec<f64>,
    /// Pre-clearing distributions `X_0..X_N`.
    pub x: Vec<BinDistribution>,
    /// On and off parts per period (`3·N_B` entries, locked slots are off).
    pub x_on: Vec<Vec<f64>>,
    pub x_off: Vec<Vec<f64>>,
    /// Supply per period and source (MW).
    pub p_mw: Vec<Vec<f64>>,
    pub d_c_mw: Vec<f64>,
    pub d_mw: Vec<f64>,
    pub lambda: Vec<f64>,
    pub objective: f64,
    pub stats: SolverStats,
}

impl MpcSolution {
    /// Largest single-bin fraction over `X_1..X_N`.
    pub fn max_bin_fraction(&self) -> f64 {
        self.x.iter().skip(1).map(|d| d.max_mass()).fold(0.0, f64::max)
    }

    /// Bins of the terminal distribution holding at least `min_mass`.
    pub fn terminal_spread(&self, min_mass: f64) -> usize {
        self.x.last().map_or(0, |d| d.spread(min_mass))
    }

    /// Per-period CSV: `k, t_min, i_max, pi_clr, p_mw, d_c_mw, d_mw, lambda`.
    pub fn write_csv(&self, path: &std::path::Path, tau_min: f64) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "t_min", "i_max", "pi_clr", "p_mw", "d_c_mw", "d_mw", "lambda_elec"])?;
        for k in 0..self.i_max.len() {
            w.write_record([
                k.to_string(),
                (k as f64 * tau_min).to_string(),
                self.i_max[k].to_string(),
                self.pi_clr[k].to_string(),
                self.p_mw[k].iter().sum::<f64>().to_string(),
                self.d_c_mw[k].to_string(),
                self.d_mw[k].to_string(),
                self.lambda[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Distribution trajectory CSV: one row per period and bin.
    pub fn write_bins_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "bin", "x", "x_on", "x_off"])?;
        for (k, d) in self.x.iter().enumerate() {
            for (b, v) in d.x.iter().enumerate() {
                let on = self.x_on.get(k).map_or(0.0, |o| o[b]);
                let off = self.x_off.get(k).map_or(*v, |o| o[b]);
                w.write_record([k.to_string(), (b + 1).to_string(), v.to_string(), on.to_string(), off.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
