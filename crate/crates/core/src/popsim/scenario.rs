use serde::{Deserialize, Serialize};

use crate::aggmodel::BinGrid;
use crate::der::{BatteryParams, BidParams, TclParams};
use crate::error::{Error, Result};

/// Physical model every device of a population follows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DeviceModel {
    /// Thermal model stepped at its inner step within each interval.
    Tcl(TclParams),
    /// Generalized battery stepped once per interval.
    Battery(BatteryParams),
}

/// Initial-state distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Initial {
    TemperatureUniform { lo_c: f64, hi_c: f64 },
    SocUniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_devices: usize,
    pub device: DeviceModel,
    pub bid: BidParams,
    /// When set, each device's bid slope is drawn uniformly from this range.
    #[serde(default)]
    pub beta_range: Option<[f64; 2]>,
    pub initial: Initial,
    pub tau_min: f64,
    /// Number of market intervals.
    pub horizon: usize,
    /// Base price per interval ($/MWh).
    pub pi_base: Vec<f64>,
    /// Feeder limit (kW); `None` leaves the feeder unconstrained.
    #[serde(default)]
    pub feeder_kw: Option<f64>,
    /// Uncontrollable demand per interval (kW).
    pub d_other_kw: Vec<f64>,
    /// Process noise amplitude on the temperature (°C/min).
    #[serde(default)]
    pub noise_c_per_min: f64,
    /// Release level of the lower-SOC lockout; off when unset.
    #[serde(default)]
    pub lower_lockout_release: Option<f64>,
    /// Length of the demand averaging window (min); defaults to `tau_min`.
    #[serde(default)]
    pub average_window_min: Option<f64>,
    /// Record a bin snapshot and per-device bin path on this many price
    /// bins.
    #[serde(default)]
    pub snapshot_bins: Option<usize>,
    /// Record every n-th device's state each interval.
    #[serde(default)]
    pub thin_devices: Option<usize>,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.tau_min > 0.0) {
            return bad(format!("market interval must be positive, got {}", self.tau_min));
        }
        match &self.device {
            DeviceModel::Tcl(t) => {
                t.validate()?;
                t.steps_per_interval(self.tau_min)?;
            }
            DeviceModel::Battery(b) => b.validate()?,
        }
        if !(self.bid.beta > 0.0 && self.bid.e_set > 0.0 && self.bid.e_set < 1.0) {
            return bad("bid slope must be positive and e_set inside (0, 1)".into());
        }
        if let Some([lo, hi]) = self.beta_range {
            if !(lo > 0.0 && lo <= hi) {
                return bad(format!("bid slope range [{lo}, {hi}] is empty or nonpositive"));
            }
        }
        match self.initial {
            Initial::TemperatureUniform { lo_c, hi_c } if !(lo_c <= hi_c) => {
                return bad(format!("initial temperature range [{lo_c}, {hi_c}] is empty"))
            }
            Initial::SocUniform { lo, hi } if !(0.0 <= lo && lo <= hi && hi <= 1.0) => {
                return bad(format!("initial SOC range [{lo}, {hi}] is not inside [0, 1]"))
            }
            Initial::TemperatureUniform { .. } if matches!(self.device, DeviceModel::Battery(_)) => {
                return bad("battery populations need an SOC initial condition".into())
            }
            _ => {}
        }
        if self.pi_base.len() < self.horizon || self.d_other_kw.len() < self.horizon {
            return bad(format!(
                "series cover {} / {} intervals, horizon is {}",
                self.pi_base.len(),
                self.d_other_kw.len(),
                self.horizon
            ));
        }
        if let Some(f) = self.feeder_kw {
            if !(f > 0.0) {
                return bad(format!("feeder limit must be positive, got {f}"));
            }
        }
        if self.noise_c_per_min < 0.0 {
            return bad("noise amplitude must be nonnegative".into());
        }
        if let Some(w) = self.average_window_min {
            if !(w > 0.0) {
                return bad("averaging window must be positive".into());
            }
        }
        if self.snapshot_bins == Some(0) || self.thin_devices == Some(0) {
            return bad("snapshot bins and device thinning must be positive".into());
        }
        Ok(())
    }

    /// Electrical draw of one device when on (kW).
    pub fn p_elec_kw(&self) -> f64 {
        match &self.device {
            DeviceModel::Tcl(t) => t.p_elec_kw(),
            DeviceModel::Battery(b) => b.p_elec_kw,
        }
    }

    /// Price grid spanning every device's bid curve.
    pub fn bin_grid(&self, n_bins: usize) -> Result<BinGrid> {
        let beta_max = self.beta_range.map_or(self.bid.beta, |r| r[1]);
        BinGrid::new(n_bins, self.bid.pi_max, self.bid.pi_max - beta_max)
    }

    /// Market interval in inner steps (one for batteries).
    pub fn inner_steps(&self) -> usize {
        match &self.device {
            DeviceModel::Tcl(t) => t.steps_per_interval(self.tau_min).unwrap_or(1),
            DeviceModel::Battery(_) => 1,
        }
    }
}
