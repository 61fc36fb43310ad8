//! Experiments shared by the commands and the acceptance tests: model fit
//! against the simulator, spectra of fixed-price models and construction of
//! MPC problems from a configuration.

use serde::Serialize;
use tecoord::aggmodel::{classify_spectrum, max_abs_imag, spectrum, SpectrumClass, TransitionModel};
use tecoord::mpc::{initial_distribution, MpcProblem};
use tecoord::popsim::{identify_fixed_price, identify_post_reset, predict_on_fraction, rmse, Scenario};

use crate::config::{FitBasis, Loaded};
use crate::error::CliError;

/// 8 MW feeder normalizer of a 1473-device population.
pub const REFERENCE_NORMALIZER_KW: f64 = 8000.0;
pub const REFERENCE_DEVICES: f64 = 1473.0;

/// Normalizer scaled to a population of `n_devices`.
pub fn scaled_normalizer_kw(n_devices: usize) -> f64 {
    REFERENCE_NORMALIZER_KW * n_devices as f64 / REFERENCE_DEVICES
}

/// A fixed-price model and how well it reproduces the run it came from.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: TransitionModel,
    pub time_min: Vec<f64>,
    pub actual_kw: Vec<f64>,
    pub predicted_kw: Vec<f64>,
    pub rmse: f64,
}

/// Identify a fixed-price model at `pi_clr` and compare its open-loop
/// prediction from the first clearing with the simulated demand.
pub fn fixed_price_fit(
    scn: &Scenario,
    pi_clr: f64,
    n_bins: usize,
    basis: FitBasis,
    normalizer_kw: f64,
) -> Result<Fit, CliError> {
    let (model, trace) = identify_fixed_price(scn, pi_clr, n_bins)?;
    let scale = scn.n_devices as f64 * scn.p_elec_kw();
    let on = match trace.snapshots.first() {
        Some(x0) => predict_on_fraction(&model, x0, scn.horizon),
        None => Vec::new(),
    };
    let (time_min, actual_kw, predicted_kw) = match basis {
        FitBasis::Instants => (
            (0..on.len()).map(|k| k as f64 * scn.tau_min).collect(),
            trace.cleared_kw(),
            on.iter().map(|f| f * scale).collect::<Vec<_>>(),
        ),
        FitBasis::Window => {
            let per = if on.is_empty() { 0 } else { trace.window_kw.len() / on.len() };
            let predicted: Vec<f64> = on.iter().flat_map(|f| std::iter::repeat_n(f * scale, per)).collect();
            let n = predicted.len();
            ((0..n).map(|j| j as f64 * trace.window_min).collect(), trace.window_kw[..n].to_vec(), predicted)
        }
    };
    let rmse = rmse(&actual_kw, &predicted_kw, normalizer_kw)?;
    Ok(Fit { model, time_min, actual_kw, predicted_kw, rmse })
}

/// Eigenvalues of a model with their classification.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub label: String,
    pub eigenvalues: Vec<(f64, f64)>,
    pub max_abs_imag: f64,
    pub class: String,
    pub real: bool,
}

pub fn spectrum_report(
    label: &str,
    model: &TransitionModel,
    i_max: Option<usize>,
    tol: f64,
) -> Result<SpectrumReport, CliError> {
    let eigs = spectrum(model, i_max)?;
    let class = classify_spectrum(&eigs, tol);
    Ok(SpectrumReport {
        label: label.to_string(),
        eigenvalues: eigs.iter().map(|c| (c.re, c.im)).collect(),
        max_abs_imag: max_abs_imag(&eigs),
        class: class.to_string(),
        real: class == SpectrumClass::Real,
    })
}

/// MPC problem and matching scenario described by a configuration. The
/// post-reset model is identified unless one is supplied.
pub fn mpc_problem(loaded: &Loaded, model: Option<TransitionModel>) -> Result<(MpcProblem, Scenario), CliError> {
    let m = loaded.mpc()?;
    let sc = &loaded.config.scenario;
    let scn = sc.build_at(sc.tau_min, m.horizon, &loaded.base_dir)?;
    let grid = scn.bin_grid(m.n_bins)?;
    let model = match model {
        Some(model) => {
            if model.n_bins != m.n_bins {
                return Err(CliError::Config(format!(
                    "model has {} bins but mpc.n_bins is {}",
                    model.n_bins, m.n_bins
                )));
            }
            model
        }
        None => identify_post_reset(&scn, m.n_bins, m.per_bin, m.identify_seed.unwrap_or(scn.seed))?,
    };
    let x_ini = initial_distribution(&scn, &grid)?;
    let p = MpcProblem {
        horizon: m.horizon,
        sources: m.sources.clone(),
        model,
        grid,
        x_ini,
        d_other_mw: scn.d_other_kw.iter().map(|v| v / 1000.0).collect(),
        feeder_mw: m.feeder_mw,
        energy_floor_mw: m.energy_floor_mw,
        mu_w: m.mu_w,
        mu_s: m.mu_s,
        b_max: m.b_max,
        w_o: m.w_o,
        zeta: m.zeta,
        n_devices: scn.n_devices,
        p_elec_kw: scn.p_elec_kw(),
        spread_periods: m.spread_periods,
    };
    p.validate()?;
    Ok((p, scn))
}
