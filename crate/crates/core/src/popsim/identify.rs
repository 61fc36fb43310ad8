//! Simulator-driven identification of bin transition models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{DeviceModel, Scenario};
use super::sim::{run_priced, Device, Population, Trace};
use crate::aggmodel::{
    assign_bin, identify_transition, propagate, BinDistribution, BinGrid, Conditioning, OpSet, TransitionCounts,
    TransitionModel,
};
use crate::error::{Error, Result};

/// Identify a price-conditioned model by running the scenario's population
/// at a constant clearing price and counting post-dispatch bin moves.
/// Returns the model together with the trace it was fitted on.
pub fn identify_fixed_price(scn: &Scenario, pi_clr: f64, n_bins: usize) -> Result<(TransitionModel, Trace)> {
    let mut scn = scn.clone();
    scn.snapshot_bins = Some(n_bins);
    let trace = run_priced(&scn, &vec![pi_clr; scn.horizon])?;
    let model = identify_transition(&trace.bin_paths, n_bins, scn.tau_min, Conditioning::FixedPrice { pi_clr })?;
    Ok((model, trace))
}

/// Identify the natural (price-independent) dynamics: `per_bin` devices are
/// placed uniformly in the price range of every sending bin, with the
/// operating state that bin stands for, and simulated for one interval
/// without re-clearing.
pub fn identify_post_reset(scn: &Scenario, n_bins: usize, per_bin: usize, seed: u64) -> Result<TransitionModel> {
    scn.validate()?;
    if per_bin == 0 {
        return Err(Error::InvalidParameter("identification needs at least one device per bin".into()));
    }
    let grid = scn.bin_grid(n_bins)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = TransitionCounts::new(n_bins);

    for sending in 1..=grid.n_states() {
        let (j, set) = grid.decompose(sending);
        let (hi, lo) = (grid.boundary(j - 1), grid.boundary(j));
        let mut devices = Vec::with_capacity(per_bin);
        for _ in 0..per_bin {
            let price = rng.random_range(lo..hi);
            let mut bid = scn.bid;
            if let Some([b_lo, b_hi]) = scn.beta_range {
                bid.beta = if b_hi > b_lo { rng.random_range(b_lo..b_hi) } else { b_lo };
            }
            let e = ((bid.pi_max - price) / bid.beta).clamp(0.0, 1.0);
            let x = match &scn.device {
                DeviceModel::Tcl(t) => t.temperature(e),
                DeviceModel::Battery(_) => e,
            };
            devices.push(Device { x, m: set != OpSet::Locked, v: set == OpSet::On, must_run: false, bid });
        }
        let mut pop = Population::from_devices(scn.device, devices, scn.tau_min, scn.noise_c_per_min, rng.random());
        pop.advance();
        for s in pop.states() {
            counts.record(sending, assign_bin(&s, &grid)?);
        }
    }
    Ok(counts.into_model(scn.tau_min, Conditioning::PostReset))
}

/// On-fraction predicted by a price-conditioned model over `horizon`
/// intervals from `x0`.
pub fn predict_on_fraction(model: &TransitionModel, x0: &BinDistribution, horizon: usize) -> Vec<f64> {
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(horizon);
    for k in 0..horizon {
        if k > 0 {
            x = propagate(&x, model, 1);
        }
        out.push(x.on_fraction());
    }
    out
}

/// On-fraction of a post-reset model driven by a threshold sequence.
pub fn predict_on_fraction_reset(model: &TransitionModel, x0: &BinDistribution, thresholds: &[usize]) -> Vec<f64> {
    let mut x = x0.clone();
    thresholds
        .iter()
        .map(|&i_max| {
            let plus = crate::aggmodel::split_and_reset(&x, i_max);
            let on = plus.on_fraction();
            x = propagate(&plus, model, 1);
            on
        })
        .collect()
}

/// Grid matching a scenario's bid range; convenience for callers that only
/// know the bin count.
pub fn scenario_grid(scn: &Scenario, n_bins: usize) -> Result<BinGrid> {
    scn.bin_grid(n_bins)
}
