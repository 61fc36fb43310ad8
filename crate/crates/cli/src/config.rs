//! Run configuration: a TOML document with a `[scenario]` table and optional
//! per-command tables, patched by repeatable `key=value` overrides.
//!
//! Keys carry their units as suffixes (`tau_min`, `feeder_kw`, `feeder_mw`,
//! `pi_base_per_mwh`). Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tecoord::der::{BidParams, TclParams};
use tecoord::mpc::{MpcKind, MpcSettings, Source, SpreadPeriods};
use tecoord::popsim::{profiles, DeviceModel, Initial, Scenario};

use crate::error::CliError;

/// A per-interval series: a constant, explicit values, or a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Series {
    Constant(f64),
    Values(Vec<f64>),
    Generated(SeriesSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SeriesSpec {
    /// The bundled synthetic non-AC feeder profile (kW), sampled at interval
    /// starts from `start_hour` and multiplied by `scale`.
    Synthetic {
        start_hour: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Piecewise-constant values from `[start_min, value]` breakpoints.
    Steps { breakpoints: Vec<[f64; 2]> },
    /// Two-column `interval,value` CSV, relative to the config file.
    Csv { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

impl Default for Series {
    fn default() -> Self {
        Series::Constant(0.0)
    }
}

impl Series {
    /// Materialize `n` intervals of `tau_min` minutes.
    pub fn resolve(&self, tau_min: f64, n: usize, base_dir: &Path) -> Result<Vec<f64>, CliError> {
        Ok(match self {
            Series::Constant(v) => vec![*v; n],
            Series::Values(v) => v.clone(),
            Series::Generated(SeriesSpec::Synthetic { start_hour, scale }) => {
                profiles::synthetic_non_ac_series_kw(*start_hour, tau_min, n, *scale)
            }
            Series::Generated(SeriesSpec::Steps { breakpoints }) => {
                let bp: Vec<(f64, f64)> = breakpoints.iter().map(|b| (b[0], b[1])).collect();
                profiles::step_series(&bp, tau_min, n)?
            }
            Series::Generated(SeriesSpec::Csv { path }) => {
                let path = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                profiles::read_series_csv(&path)?
            }
        })
    }
}

fn default_device() -> DeviceModel {
    DeviceModel::Tcl(TclParams::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_devices: usize,
    #[serde(default = "default_device")]
    pub device: DeviceModel,
    pub bid: BidParams,
    #[serde(default)]
    pub beta_range: Option<[f64; 2]>,
    pub initial: Initial,
    pub tau_min: f64,
    pub horizon: usize,
    pub pi_base_per_mwh: Series,
    #[serde(default)]
    pub feeder_kw: Option<f64>,
    #[serde(default)]
    pub d_other_kw: Series,
    #[serde(default)]
    pub noise_c_per_min: f64,
    #[serde(default)]
    pub lower_lockout_release: Option<f64>,
    #[serde(default)]
    pub average_window_min: Option<f64>,
    #[serde(default)]
    pub snapshot_bins: Option<usize>,
    #[serde(default)]
    pub thin_devices: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    /// Scenario at the configured interval and horizon.
    pub fn build(&self, base_dir: &Path) -> Result<Scenario, CliError> {
        self.build_at(self.tau_min, self.horizon, base_dir)
    }

    /// Scenario with the interval and horizon replaced; generated series
    /// are resampled at the new interval.
    pub fn build_at(&self, tau_min: f64, horizon: usize, base_dir: &Path) -> Result<Scenario, CliError> {
        let scn = Scenario {
            n_devices: self.n_devices,
            device: self.device,
            bid: self.bid,
            beta_range: self.beta_range,
            initial: self.initial,
            tau_min,
            horizon,
            pi_base: self.pi_base_per_mwh.resolve(tau_min, horizon, base_dir)?,
            feeder_kw: self.feeder_kw,
            d_other_kw: self.d_other_kw.resolve(tau_min, horizon, base_dir)?,
            noise_c_per_min: self.noise_c_per_min,
            lower_lockout_release: self.lower_lockout_release,
            average_window_min: self.average_window_min,
            snapshot_bins: self.snapshot_bins,
            thin_devices: self.thin_devices,
            seed: self.seed,
        };
        scn.validate()?;
        Ok(scn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentifyMode {
    /// Run the population at a constant clearing price and count bin moves.
    #[default]
    FixedPrice,
    /// Seed every bin and simulate one interval of natural dynamics.
    PostReset,
}

/// Which demand the fit report compares against the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitBasis {
    /// Demand right after each clearing against the model's on-fraction.
    #[default]
    Instants,
    /// Demand averaged over short windows against the model held constant
    /// through each interval.
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyConfig {
    #[serde(default)]
    pub mode: IdentifyMode,
    pub n_bins: Vec<usize>,
    /// Market intervals to identify at; empty means the scenario's.
    #[serde(default)]
    pub tau_min: Vec<f64>,
    /// When set, the horizon at each interval covers this duration.
    #[serde(default)]
    pub duration_min: Option<f64>,
    /// Clearing price of fixed-price identification ($/MWh).
    #[serde(default)]
    pub pi_clr_per_mwh: Option<f64>,
    #[serde(default = "default_per_bin")]
    pub per_bin: usize,
    /// Compare each fixed-price model's prediction with the run it was
    /// fitted on.
    #[serde(default)]
    pub fit: bool,
    #[serde(default)]
    pub fit_basis: FitBasis,
    /// Defaults to 8 MW scaled from 1473 devices to the population size.
    #[serde(default)]
    pub rmse_normalizer_kw: Option<f64>,
}

fn default_per_bin() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub n_bins: usize,
    /// One fixed-price model per price.
    #[serde(default)]
    pub pi_clr_per_mwh: Vec<f64>,
    /// Threshold for post-reset model files given on the command line.
    #[serde(default)]
    pub i_max: Option<usize>,
    /// A spectrum counts as real when every |imag| is below this.
    #[serde(default = "default_real_tol")]
    pub real_tol: f64,
}

fn default_real_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindSelection {
    #[default]
    Mip,
    Qp,
    Both,
}

impl KindSelection {
    pub fn kinds(self) -> Vec<MpcKind> {
        match self {
            Self::Mip => vec![MpcKind::Mip],
            Self::Qp => vec![MpcKind::Qp],
            Self::Both => vec![MpcKind::Mip, MpcKind::Qp],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    #[serde(default)]
    pub kind: KindSelection,
    pub horizon: usize,
    #[serde(default = "default_mpc_bins")]
    pub n_bins: usize,
    /// Devices seeded per bin when identifying the post-reset model.
    #[serde(default = "default_per_bin")]
    pub per_bin: usize,
    /// Identification seed; defaults to the scenario seed.
    #[serde(default)]
    pub identify_seed: Option<u64>,
    pub b_max: f64,
    pub mu_s: f64,
    pub mu_w: f64,
    #[serde(default = "default_w_o")]
    pub w_o: f64,
    pub feeder_mw: f64,
    pub energy_floor_mw: f64,
    #[serde(default)]
    pub zeta: Option<f64>,
    #[serde(default)]
    pub spread_periods: SpreadPeriods,
    pub sources: Vec<Source>,
    #[serde(default = "default_time_limit")]
    pub time_limit_s: f64,
    #[serde(default = "default_node_limit")]
    pub node_limit: usize,
    #[serde(default = "default_gap_tol")]
    pub gap_tol: f64,
}

fn default_mpc_bins() -> usize {
    20
}

fn default_w_o() -> f64 {
    3.0
}

fn default_time_limit() -> f64 {
    480.0
}

fn default_node_limit() -> usize {
    MpcSettings::default().node_limit
}

fn default_gap_tol() -> f64 {
    MpcSettings::default().gap_tol
}

impl MpcConfig {
    /// Solver settings; a deterministic run drops the wall-clock limit so
    /// that only the node budget can end the search.
    pub fn settings(&self, deterministic: bool) -> Result<MpcSettings, CliError> {
        if !(self.time_limit_s > 0.0) || !(self.gap_tol >= 0.0) {
            return Err(CliError::Config("mpc.time_limit_s must be positive and mpc.gap_tol nonnegative".into()));
        }
        let time_limit = if deterministic { Duration::MAX } else { Duration::from_secs_f64(self.time_limit_s) };
        Ok(MpcSettings { gap_tol: self.gap_tol, node_limit: self.node_limit, time_limit, ..MpcSettings::default() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Simulate,
    Identify,
    Spectrum,
    Mpc,
    Validate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub command: CommandName,
    /// Dotted key to vary, e.g. `mpc.b_max`.
    pub key: String,
    pub values: Vec<toml::Value>,
    #[serde(default = "one_job")]
    pub jobs: usize,
}

fn one_job() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub name: Option<String>,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub identify: Option<IdentifyConfig>,
    #[serde(default)]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default)]
    pub mpc: Option<MpcConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

/// A parsed configuration together with the raw document it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub table: toml::Table,
    pub base_dir: PathBuf,
    /// Display name: the `name` key or the file stem.
    pub name: String,
}

impl Loaded {
    /// Read a config file, apply overrides and an optional seed.
    pub fn from_file(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_table(table, base_dir, &stem, overrides, seed)
    }

    pub fn from_table(
        mut table: toml::Table,
        base_dir: PathBuf,
        default_name: &str,
        overrides: &[String],
        seed: Option<u64>,
    ) -> Result<Self, CliError> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{o}` is not of the form key=value")))?;
            set_key(&mut table, key.trim(), parse_value(value.trim()))?;
        }
        if let Some(s) = seed {
            set_key(&mut table, "scenario.seed", toml::Value::Integer(s as i64))?;
        }
        let config: Config = toml::Value::Table(table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let name = config.name.clone().unwrap_or_else(|| default_name.to_string());
        Ok(Self { config, table, base_dir, name })
    }

    /// SHA-256 of the effective configuration and command, hex encoded.
    pub fn hash(&self, command: &str) -> String {
        let doc = serde_json::json!({ "command": command, "config": self.config });
        let digest = Sha256::digest(serde_json::to_vec(&doc).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        self.config.scenario.build(&self.base_dir)
    }

    pub fn mpc(&self) -> Result<&MpcConfig, CliError> {
        self.config.mpc.as_ref().ok_or_else(|| CliError::Config(format!("{}: missing [mpc] table", self.name)))
    }
}

/// Parse an override value as a TOML literal, falling back to a string.
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Set a dotted key, creating intermediate tables.
pub fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed key `{key}`")));
    }
    let (last, path) = parts.split_last().expect("nonempty key");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("`{key}`: `{p}` is not a table"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
