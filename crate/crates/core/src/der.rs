//! Device-level models.
//!
//! A DER is abstracted as a generalized battery with a normalized state of
//! charge `e ∈ [0, 1]`, a hysteretic lockout flag and an affine bid curve.
//! Thermostatically controlled loads (air conditioners) are simulated with a
//! first-order thermal model and mapped onto the battery abstraction through
//! their deadband: `e = 1` at the lower deadband temperature, `e = 0` at the
//! upper one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bid curve and lockout settings shared by every device kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidParams {
    /// Bid price at zero SOC ($/MWh).
    pub pi_max: f64,
    /// Slope of the bid curve ($/MWh per unit SOC).
    pub beta: f64,
    /// Lockout release level (normalized SOC).
    pub e_set: f64,
}

impl BidParams {
    pub fn pi_min(&self) -> f64 {
        self.pi_max - self.beta
    }
}

/// Generalized battery parameters for one market interval.
///
/// The per-step dynamics are `e' = a·e + drift + gamma·v·m`. `drift` is zero
/// for a lossless-at-rest battery and negative for a cooling TCL whose
/// temperature drifts toward ambient while off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    pub a: f64,
    pub gamma: f64,
    #[serde(default)]
    pub drift: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub e_set: f64,
    pub pi_max: f64,
    pub beta: f64,
    pub p_elec_kw: f64,
    /// Release level of the optional lower-boundary lockout. When set, a
    /// device reaching `e_min` is forced on until its SOC exceeds this level.
    #[serde(default)]
    pub lower_release: Option<f64>,
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if !(self.a > 0.0 && self.a <= 1.0) {
            return bad("battery a must lie in (0, 1]");
        }
        if !(self.gamma > 0.0) {
            return bad("battery gamma must be positive");
        }
        if self.e_min != 0.0 || self.e_max != 1.0 {
            return bad("SOC bounds must be normalized to [0, 1]");
        }
        if !(self.e_set > self.e_min && self.e_set < self.e_max) {
            return bad("e_set must lie strictly inside (e_min, e_max)");
        }
        if !(self.beta > 0.0) {
            return bad("bid slope beta must be positive");
        }
        if !(self.p_elec_kw > 0.0) {
            return bad("electrical power must be positive");
        }
        if let Some(r) = self.lower_release {
            if !(r > self.e_min && r < self.e_max) {
                return bad("lower lockout release must lie inside (e_min, e_max)");
            }
        }
        Ok(())
    }

    pub fn bid(&self) -> BidParams {
        BidParams { pi_max: self.pi_max, beta: self.beta, e_set: self.e_set }
    }
}

/// Operating state of one device at a market instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerState {
    /// Normalized SOC.
    pub e: f64,
    /// `true` when controllable, `false` while locked out.
    pub m: bool,
    /// Cleared flag for the current interval.
    pub v: bool,
    /// Forced on by the optional lower-boundary lockout.
    #[serde(default)]
    pub must_run: bool,
    /// Current bid ($/MWh), always `bid_price(e)`.
    pub bid: f64,
}

impl DerState {
    /// A controllable, not-cleared device at SOC `e`.
    pub fn new(e: f64, bid: &BidParams) -> Self {
        Self { e, m: true, v: false, must_run: false, bid: bid_price(e, bid) }
    }

    /// Physically drawing power during the interval.
    pub fn is_on(&self) -> bool {
        self.must_run || (self.v && self.m)
    }
}

/// Affine bid curve `pi_max − beta·e`; SOC outside `[0, 1]` bids at the
/// nearest end of the curve.
pub fn bid_price(e: f64, bid: &BidParams) -> f64 {
    bid.pi_max - bid.beta * e.clamp(0.0, 1.0)
}

/// Lockout update from the pre-step SOC: lock at or above `e_max`, release
/// below `e_set`, otherwise hold.
pub fn next_lockout(e: f64, m: bool, e_set: f64, e_max: f64) -> bool {
    if e >= e_max {
        false
    } else if e < e_set {
        true
    } else {
        m
    }
}

/// One market-interval step of the generalized battery.
pub fn battery_step(state: &DerState, params: &BatteryParams) -> DerState {
    let u = if state.is_on() { 1.0 } else { 0.0 };
    let e_next = (params.a * state.e + params.drift + params.gamma * u).clamp(0.0, 1.0);
    let m_next = next_lockout(state.e, state.m, params.e_set, params.e_max);
    let must_run = match params.lower_release {
        Some(release) => {
            if state.e <= params.e_min {
                true
            } else if state.e > release {
                false
            } else {
                state.must_run
            }
        }
        None => false,
    };
    DerState { e: e_next, m: m_next, v: state.v && m_next, must_run, bid: bid_price(e_next, &params.bid()) }
}

/// First-order thermal model of a cooling TCL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TclParams {
    /// Thermal capacitance C (kWh/°C).
    pub capacitance_kwh_per_c: f64,
    /// Thermal resistance R (°C/kW).
    pub resistance_c_per_kw: f64,
    /// Energy transfer rate P when on (kW thermal).
    pub power_kw: f64,
    /// Coefficient of performance.
    pub cop: f64,
    pub theta_min_c: f64,
    pub theta_max_c: f64,
    pub theta_ambient_c: f64,
    /// Inner simulation step h (s).
    pub step_s: f64,
}

impl Default for TclParams {
    /// A 3-ton residential air conditioner with a 19–21 °C deadband and a
    /// 10 s inner step.
    fn default() -> Self {
        Self {
            capacitance_kwh_per_c: 7.04,
            resistance_c_per_kw: 2.84,
            power_kw: 10.55,
            cop: 3.5,
            theta_min_c: 19.0,
            theta_max_c: 21.0,
            theta_ambient_c: 32.0,
            step_s: 10.0,
        }
    }
}

impl TclParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.capacitance_kwh_per_c, self.resistance_c_per_kw, self.power_kw, self.cop, self.step_s];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter("TCL C, R, P, COP and step must be positive".into()));
        }
        if !(self.theta_min_c < self.theta_max_c) {
            return Err(Error::InvalidParameter("TCL deadband must satisfy theta_min < theta_max".into()));
        }
        Ok(())
    }

    /// Per-step decay factor `exp(−h / (C·R))`.
    pub fn a_tilde(&self) -> f64 {
        (-(self.step_s / 3600.0) / (self.capacitance_kwh_per_c * self.resistance_c_per_kw)).exp()
    }

    /// Temperature gain `P·R` while on.
    pub fn theta_gain(&self) -> f64 {
        self.power_kw * self.resistance_c_per_kw
    }

    pub fn p_elec_kw(&self) -> f64 {
        self.power_kw / self.cop
    }

    pub fn deadband(&self) -> f64 {
        self.theta_max_c - self.theta_min_c
    }

    /// Deadband-normalized SOC; not clamped, so temperatures outside the
    /// deadband map outside `[0, 1]`.
    pub fn soc(&self, theta: f64) -> f64 {
        (self.theta_max_c - theta) / self.deadband()
    }

    pub fn temperature(&self, e: f64) -> f64 {
        self.theta_max_c - e * self.deadband()
    }

    /// Number of inner steps in a market interval of `tau_min` minutes.
    pub fn steps_per_interval(&self, tau_min: f64) -> Result<usize> {
        let ratio = tau_min * 60.0 / self.step_s;
        let n = ratio.round();
        if !(tau_min > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "market interval {tau_min} min is not a positive multiple of the {} s inner step",
                self.step_s
            )));
        }
        Ok(n as usize)
    }
}

/// One inner step of the thermal model.
pub fn tcl_step(theta: f64, on: bool, tcl: &TclParams) -> f64 {
    let a = tcl.a_tilde();
    let m = if on { 1.0 } else { 0.0 };
    a * theta + (1.0 - a) * (tcl.theta_ambient_c - m * tcl.theta_gain())
}

/// [`tcl_step`] plus additive process noise, uniform on
/// `±amplitude_c_per_min` scaled to the inner step.
pub fn tcl_step_noisy<R: Rng + ?Sized>(
    theta: f64,
    on: bool,
    tcl: &TclParams,
    amplitude_c_per_min: f64,
    rng: &mut R,
) -> f64 {
    let next = tcl_step(theta, on, tcl);
    if amplitude_c_per_min > 0.0 {
        let scale = tcl.step_s / 60.0;
        next + rng.random_range(-amplitude_c_per_min..=amplitude_c_per_min) * scale
    } else {
        next
    }
}

/// Battery coefficients whose one-interval step reproduces the thermal model
/// composed over `tau_min / h` inner steps with a constant on/off input.
///
/// The composed map on temperature is affine, `θ' = ãⁿθ + (1 − ãⁿ)(θa − mθg)`,
/// so it is matched exactly by `a = ãⁿ` together with the drift and gain that
/// place the always-off and always-on fixed points at the normalized SOC of
/// `θa` and `θa − θg`.
pub fn tcl_to_battery(tcl: &TclParams, tau_min: f64, bid: &BidParams) -> Result<BatteryParams> {
    tcl.validate()?;
    let n = tcl.steps_per_interval(tau_min)?;
    let a = tcl.a_tilde().powi(n as i32);
    let e_off = tcl.soc(tcl.theta_ambient_c);
    let e_on = tcl.soc(tcl.theta_ambient_c - tcl.theta_gain());
    Ok(BatteryParams {
        a,
        gamma: (1.0 - a) * (e_on - e_off),
        drift: (1.0 - a) * e_off,
        e_min: 0.0,
        e_max: 1.0,
        e_set: bid.e_set,
        pi_max: bid.pi_max,
        beta: bid.beta,
        p_elec_kw: tcl.p_elec_kw(),
        lower_release: None,
    })
}
