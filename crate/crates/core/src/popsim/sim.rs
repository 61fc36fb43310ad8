use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{DeviceModel, Initial, Scenario};
use crate::aggmodel::{assign_bin, BinDistribution, BinGrid};
use crate::der::{battery_step, bid_price, next_lockout, tcl_step, tcl_step_noisy, BidParams, DerState};
use crate::error::{Error, Result};
use crate::market::{clear_market, collect_bids, dispatch};

/// One simulated device. `x` is the temperature for TCLs and the SOC for
/// batteries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Device {
    pub x: f64,
    pub m: bool,
    pub v: bool,
    pub must_run: bool,
    pub bid: BidParams,
}

/// A population advanced interval by interval.
#[derive(Debug, Clone)]
pub struct Population {
    pub model: DeviceModel,
    pub devices: Vec<Device>,
    pub tau_min: f64,
    pub noise_c_per_min: f64,
    pub lower_release: Option<f64>,
    rng: ChaCha8Rng,
}

impl Population {
    /// Draw the initial population of a scenario.
    pub fn from_scenario(scn: &Scenario) -> Result<Self> {
        scn.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
        let mut devices = Vec::with_capacity(scn.n_devices);
        for _ in 0..scn.n_devices {
            let x = match scn.initial {
                Initial::TemperatureUniform { lo_c, hi_c } => uniform(&mut rng, lo_c, hi_c),
                Initial::SocUniform { lo, hi } => {
                    let e = uniform(&mut rng, lo, hi);
                    match &scn.device {
                        DeviceModel::Tcl(t) => t.temperature(e),
                        DeviceModel::Battery(_) => e,
                    }
                }
            };
            let mut bid = scn.bid;
            if let Some([lo, hi]) = scn.beta_range {
                bid.beta = uniform(&mut rng, lo, hi);
            }
            devices.push(Device { x, m: true, v: false, must_run: false, bid });
        }
        Ok(Self {
            model: scn.device,
            devices,
            tau_min: scn.tau_min,
            noise_c_per_min: scn.noise_c_per_min,
            lower_release: scn.lower_lockout_release,
            rng,
        })
    }

    /// A population with explicitly placed devices.
    pub fn from_devices(
        model: DeviceModel,
        devices: Vec<Device>,
        tau_min: f64,
        noise_c_per_min: f64,
        seed: u64,
    ) -> Self {
        Self { model, devices, tau_min, noise_c_per_min, lower_release: None, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn p_elec_kw(&self) -> f64 {
        match &self.model {
            DeviceModel::Tcl(t) => t.p_elec_kw(),
            DeviceModel::Battery(b) => b.p_elec_kw,
        }
    }

    pub fn inner_steps(&self) -> usize {
        match &self.model {
            DeviceModel::Tcl(t) => t.steps_per_interval(self.tau_min).unwrap_or(1),
            DeviceModel::Battery(_) => 1,
        }
    }

    /// Normalized SOC of a device, clamped to `[0, 1]`.
    pub fn soc(&self, d: &Device) -> f64 {
        match &self.model {
            DeviceModel::Tcl(t) => t.soc(d.x).clamp(0.0, 1.0),
            DeviceModel::Battery(_) => d.x.clamp(0.0, 1.0),
        }
    }

    pub fn state(&self, d: &Device) -> DerState {
        let e = self.soc(d);
        DerState { e, m: d.m, v: d.v, must_run: d.must_run, bid: bid_price(e, &d.bid) }
    }

    pub fn states(&self) -> Vec<DerState> {
        self.devices.iter().map(|d| self.state(d)).collect()
    }

    /// Set cleared flags from a broadcast price.
    pub fn apply_price(&mut self, pi_clr: f64) {
        let flags = dispatch(pi_clr, &self.states());
        for (d, v) in self.devices.iter_mut().zip(flags) {
            d.v = v;
        }
    }

    /// Demand of devices that run regardless of the market (kW).
    pub fn must_run_kw(&self) -> f64 {
        self.devices.iter().filter(|d| d.must_run).count() as f64 * self.p_elec_kw()
    }

    /// Demand of the currently cleared or forced-on devices (kW).
    pub fn on_kw(&self) -> f64 {
        self.devices.iter().filter(|d| d.must_run || (d.v && d.m)).count() as f64 * self.p_elec_kw()
    }

    /// Advance one market interval; returns the demand (kW) during each
    /// inner step.
    pub fn advance(&mut self) -> Vec<f64> {
        let p = self.p_elec_kw();
        match self.model {
            DeviceModel::Battery(params) => {
                let demand = self.on_kw();
                let mut params = params;
                params.lower_release = self.lower_release;
                for d in &mut self.devices {
                    params.pi_max = d.bid.pi_max;
                    params.beta = d.bid.beta;
                    params.e_set = d.bid.e_set;
                    let e = d.x.clamp(0.0, 1.0);
                    let s = DerState { e, m: d.m, v: d.v, must_run: d.must_run, bid: bid_price(e, &d.bid) };
                    let next = battery_step(&s, &params);
                    d.x = next.e;
                    d.m = next.m;
                    d.v = next.v;
                    d.must_run = next.must_run;
                }
                vec![demand]
            }
            DeviceModel::Tcl(tcl) => {
                let steps = self.inner_steps();
                let mut out = Vec::with_capacity(steps);
                for _ in 0..steps {
                    let mut on_count = 0usize;
                    for d in &mut self.devices {
                        let on = d.must_run || (d.v && d.m);
                        on_count += on as usize;
                        d.x = if self.noise_c_per_min > 0.0 {
                            tcl_step_noisy(d.x, on, &tcl, self.noise_c_per_min, &mut self.rng)
                        } else {
                            tcl_step(d.x, on, &tcl)
                        };
                        let e = tcl.soc(d.x);
                        d.m = next_lockout(e, d.m, d.bid.e_set, 1.0);
                        if !d.m {
                            d.v = false;
                        }
                        if let Some(release) = self.lower_release {
                            if e <= 0.0 {
                                d.must_run = true;
                            } else if e > release {
                                d.must_run = false;
                            }
                        }
                    }
                    out.push(on_count as f64 * p);
                }
                out
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub k: usize,
    /// Interval start, minutes from scenario start.
    pub t_min: f64,
    pub pi_clr: f64,
    /// Demand of the devices on right after clearing (kW).
    pub cleared_kw: f64,
    /// Controllable demand averaged over the interval (kW).
    pub avg_kw: f64,
    pub d_other_kw: f64,
    pub on_fraction: f64,
    pub locked_fraction: f64,
    pub feeder_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSample {
    pub k: usize,
    pub device: usize,
    /// °C, for TCL populations.
    pub temperature_c: Option<f64>,
    pub soc: f64,
    pub m: bool,
    pub v: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub tau_min: f64,
    pub n_devices: usize,
    pub p_elec_kw: f64,
    pub intervals: Vec<IntervalRecord>,
    /// Averaging window of `window_kw` (min).
    pub window_min: f64,
    /// Controllable demand averaged over consecutive windows (kW).
    pub window_kw: Vec<f64>,
    /// Post-dispatch bin occupancy per interval.
    pub snapshots: Vec<BinDistribution>,
    /// Post-dispatch 1-based bin of every device per interval.
    pub bin_paths: Vec<Vec<usize>>,
    pub device_samples: Vec<DeviceSample>,
}

impl Trace {
    pub fn cleared_kw(&self) -> Vec<f64> {
        self.intervals.iter().map(|r| r.cleared_kw).collect()
    }

    pub fn avg_kw(&self) -> Vec<f64> {
        self.intervals.iter().map(|r| r.avg_kw).collect()
    }

    /// System demand per interval: interval-average controllable demand
    /// plus uncontrollable demand (kW).
    pub fn system_kw(&self) -> Vec<f64> {
        self.intervals.iter().map(|r| r.avg_kw + r.d_other_kw).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "time_min",
            "demand_kw",
            "cleared_kw",
            "other_kw",
            "price",
            "locked_fraction",
            "on_fraction",
            "feeder_violation",
        ])?;
        for r in &self.intervals {
            w.write_record([
                r.t_min.to_string(),
                r.avg_kw.to_string(),
                r.cleared_kw.to_string(),
                r.d_other_kw.to_string(),
                r.pi_clr.to_string(),
                r.locked_fraction.to_string(),
                r.on_fraction.to_string(),
                (r.feeder_violation as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_window_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time_min", "demand_kw"])?;
        for (i, v) in self.window_kw.iter().enumerate() {
            w.write_record([(i as f64 * self.window_min).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_devices_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time_min", "device", "temperature_c", "soc", "m", "v"])?;
        for s in &self.device_samples {
            w.write_record([
                (s.k as f64 * self.tau_min).to_string(),
                s.device.to_string(),
                s.temperature_c.map(|t| t.to_string()).unwrap_or_default(),
                s.soc.to_string(),
                (s.m as u8).to_string(),
                (s.v as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

enum PriceSource<'a> {
    Auction,
    Broadcast(&'a [f64]),
}

/// Simulate the scenario with an auction each interval against the base
/// price and feeder limit.
pub fn run_exogenous(scn: &Scenario) -> Result<Trace> {
    run(scn, PriceSource::Auction)
}

/// Simulate the scenario with clearing prices imposed directly. Feeder
/// violations are recorded, not prevented.
pub fn run_priced(scn: &Scenario, prices: &[f64]) -> Result<Trace> {
    if prices.len() < scn.horizon {
        return Err(Error::Dimension(format!("{} prices for a {}-interval horizon", prices.len(), scn.horizon)));
    }
    run(scn, PriceSource::Broadcast(prices))
}

fn run(scn: &Scenario, source: PriceSource<'_>) -> Result<Trace> {
    let mut pop = Population::from_scenario(scn)?;
    let n = scn.n_devices;
    let p = pop.p_elec_kw();
    let grid: Option<BinGrid> = scn.snapshot_bins.map(|nb| scn.bin_grid(nb)).transpose()?;
    let steps = pop.inner_steps();
    let step_min = scn.tau_min / steps as f64;
    let window_min = scn.average_window_min.unwrap_or(scn.tau_min);
    let window_steps = ((window_min / step_min).round() as usize).max(1);
    let per_device = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };

    let mut trace = Trace {
        tau_min: scn.tau_min,
        n_devices: n,
        p_elec_kw: p,
        window_min: window_steps as f64 * step_min,
        bin_paths: if grid.is_some() { vec![Vec::with_capacity(scn.horizon); n] } else { Vec::new() },
        ..Trace::default()
    };
    let mut step_kw = Vec::with_capacity(scn.horizon * steps);

    for k in 0..scn.horizon {
        let d_other = scn.d_other_kw[k];
        let pi_clr = match source {
            PriceSource::Auction => {
                let states = pop.states();
                let quantities = vec![p; n];
                let bids = collect_bids(&states, &quantities);
                let outcome = clear_market(
                    &bids,
                    scn.pi_base[k],
                    scn.feeder_kw.unwrap_or(f64::INFINITY),
                    d_other + pop.must_run_kw(),
                )?;
                for (b, cleared) in bids.iter().zip(&outcome.decisions) {
                    pop.devices[b.device_id].v = *cleared;
                }
                for d in pop.devices.iter_mut().filter(|d| !d.m || d.must_run) {
                    d.v = false;
                }
                outcome.pi_clr
            }
            PriceSource::Broadcast(prices) => {
                pop.apply_price(prices[k]);
                prices[k]
            }
        };

        let cleared_kw = pop.on_kw();
        let states = pop.states();
        let on = states.iter().filter(|s| s.is_on()).count();
        let locked = states.iter().filter(|s| !s.m).count();
        if let Some(g) = &grid {
            trace.snapshots.push(BinDistribution::from_states(&states, g)?);
            for (path, s) in trace.bin_paths.iter_mut().zip(&states) {
                path.push(assign_bin(s, g)?);
            }
        }
        if let Some(thin) = scn.thin_devices {
            for (j, (d, s)) in pop.devices.iter().zip(&states).enumerate().step_by(thin) {
                trace.device_samples.push(DeviceSample {
                    k,
                    device: j,
                    temperature_c: matches!(pop.model, DeviceModel::Tcl(_)).then_some(d.x),
                    soc: s.e,
                    m: s.m,
                    v: s.v,
                });
            }
        }

        let demand = pop.advance();
        let avg_kw = demand.iter().sum::<f64>() / demand.len() as f64;
        step_kw.extend(demand);
        let feeder_violation = scn.feeder_kw.is_some_and(|f| cleared_kw + d_other > f * (1.0 + 1e-12));
        trace.intervals.push(IntervalRecord {
            k,
            t_min: k as f64 * scn.tau_min,
            pi_clr,
            cleared_kw,
            avg_kw,
            d_other_kw: d_other,
            on_fraction: per_device(on),
            locked_fraction: per_device(locked),
            feeder_violation,
        });
    }
    trace.window_kw = step_kw.chunks(window_steps).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    Ok(trace)
}
