//! Command implementations. Each command reads one or more configurations,
//! writes its results under the output directory and reports whether a
//! search budget ran out.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::json;
use tecoord::aggmodel::TransitionModel;
use tecoord::mpc::{evaluate_closed_loop, solve_mpc, ClosedLoopMetrics, MpcKind, MpcSolution};
use tecoord::popsim::{identify_fixed_price, identify_post_reset, run_exogenous, Trace};

use crate::config::{set_key, CommandName, IdentifyMode, Loaded};
use crate::error::CliError;
use crate::output::Output;
use crate::studies::{fixed_price_fit, mpc_problem, scaled_normalizer_kw, spectrum_report};

/// How a command ended when it did not fail outright.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Results were written but a search stopped on its budget.
    BudgetExhausted(String),
}

impl Status {
    fn merge(self, other: Status) -> Status {
        match (self, other) {
            (Status::Ok, s) | (s, Status::Ok) => s,
            (Status::BudgetExhausted(a), Status::BudgetExhausted(b)) => Status::BudgetExhausted(format!("{a}; {b}")),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::BudgetExhausted(_) => "budget-exhausted",
        }
    }
}

/// Inputs common to every command.
#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub scenarios: Vec<PathBuf>,
    pub models: Vec<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
    pub deterministic: bool,
}

pub fn run(cmd: &str, args: &RunArgs) -> Result<Status, CliError> {
    if args.scenarios.is_empty() {
        return Err(CliError::Config("at least one --scenario is required".into()));
    }
    let loaded = args
        .scenarios
        .iter()
        .map(|p| Loaded::from_file(p, &args.overrides, args.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let models = args
        .models
        .iter()
        .map(|p| Ok((label_of(p), TransitionModel::load(p)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    match cmd {
        "sweep" => sweep(single(&loaded, cmd)?, &models, &args.out, args.deterministic),
        _ => execute(parse_command(cmd)?, &loaded, &models, &args.out, args.deterministic),
    }
}

fn parse_command(cmd: &str) -> Result<CommandName, CliError> {
    serde_json::from_value(json!(cmd)).map_err(|_| CliError::Config(format!("unknown command `{cmd}`")))
}

fn label_of(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string()
}

fn single<'a>(loaded: &'a [Loaded], cmd: &str) -> Result<&'a Loaded, CliError> {
    match loaded {
        [one] => Ok(one),
        _ => Err(CliError::Config(format!("{cmd} takes exactly one --scenario"))),
    }
}

/// Run a command on already loaded configurations.
pub fn execute(
    cmd: CommandName,
    loaded: &[Loaded],
    models: &[(String, TransitionModel)],
    out: &Path,
    deterministic: bool,
) -> Result<Status, CliError> {
    let name = command_str(cmd);
    let hash = if loaded.len() == 1 {
        loaded[0].hash(name)
    } else {
        let all: Vec<String> = loaded.iter().map(|l| l.hash(name)).collect();
        sha_hex(all.join(",").as_bytes())
    };
    let mut o = Output::create(out, name, hash, deterministic)?;
    let result = match cmd {
        CommandName::Simulate => single(loaded, name).and_then(|l| simulate(l, &mut o)),
        CommandName::Identify => single(loaded, name).and_then(|l| identify(l, &mut o)),
        CommandName::Spectrum => single(loaded, name).and_then(|l| spectrum(l, models, &mut o)),
        CommandName::Mpc => single(loaded, name).and_then(|l| mpc(l, models, &mut o)),
        CommandName::Validate => validate(loaded, models, &mut o),
    };
    // The manifest records failures too, listing whatever was written.
    o.finish(match &result {
        Ok(s) => s.label(),
        Err(CliError::Budget(_)) => "budget-exhausted",
        Err(_) => "failed",
    })?;
    result
}

fn command_str(cmd: CommandName) -> &'static str {
    match cmd {
        CommandName::Simulate => "simulate",
        CommandName::Identify => "identify",
        CommandName::Spectrum => "spectrum",
        CommandName::Mpc => "mpc",
        CommandName::Validate => "validate",
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn simulate(l: &Loaded, o: &mut Output) -> Result<Status, CliError> {
    let scn = l.scenario()?;
    let trace = run_exogenous(&scn)?;
    trace.write_csv(&o.file("trace.csv"))?;
    trace.write_window_csv(&o.file("window.csv"))?;
    if scn.thin_devices.is_some() {
        trace.write_devices_csv(&o.file("devices.csv"))?;
    }
    o.json("summary.json", &trace_summary(&l.name, &trace))?;
    eprintln!("simulated {} devices over {} intervals", scn.n_devices, scn.horizon);
    Ok(Status::Ok)
}

fn trace_summary(name: &str, t: &Trace) -> serde_json::Value {
    let avg = t.avg_kw();
    let mean = if avg.is_empty() { 0.0 } else { avg.iter().sum::<f64>() / avg.len() as f64 };
    json!({
        "name": name,
        "intervals": t.intervals.len(),
        "mean_controllable_kw": mean,
        "peak_cleared_kw": t.cleared_kw().into_iter().fold(0.0, f64::max),
        "feeder_violations": t.intervals.iter().filter(|r| r.feeder_violation).count(),
        "price_min": t.intervals.iter().map(|r| r.pi_clr).fold(f64::INFINITY, f64::min),
        "price_max": t.intervals.iter().map(|r| r.pi_clr).fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Serialize)]
struct IdentifyRow {
    n_bins: usize,
    tau_min: f64,
    horizon: usize,
    samples: usize,
    empty_bins: usize,
    column_sum_error: f64,
    rmse: Option<f64>,
    model: String,
}

fn identify(l: &Loaded, o: &mut Output) -> Result<Status, CliError> {
    let cfg =
        l.config.identify.as_ref().ok_or_else(|| CliError::Config(format!("{}: missing [identify] table", l.name)))?;
    let sc = &l.config.scenario;
    let taus = if cfg.tau_min.is_empty() { vec![sc.tau_min] } else { cfg.tau_min.clone() };
    let duration = cfg.duration_min.unwrap_or(sc.tau_min * sc.horizon as f64);
    let normalizer = cfg.rmse_normalizer_kw.unwrap_or_else(|| scaled_normalizer_kw(sc.n_devices));
    let mut rows = Vec::new();
    for &tau in &taus {
        if !(tau > 0.0) {
            return Err(CliError::Config("identify.tau_min entries must be positive".into()));
        }
        let horizon = (duration / tau).round() as usize;
        let scn = sc.build_at(tau, horizon, &l.base_dir)?;
        for &nb in &cfg.n_bins {
            let stem = format!("nb{nb}_tau{tau}");
            let (model, fit) = match cfg.mode {
                IdentifyMode::PostReset => (identify_post_reset(&scn, nb, cfg.per_bin, scn.seed)?, None),
                IdentifyMode::FixedPrice => {
                    let pi = cfg.pi_clr_per_mwh.ok_or_else(|| {
                        CliError::Config("fixed-price identification needs identify.pi_clr_per_mwh".into())
                    })?;
                    if cfg.fit {
                        let f = fixed_price_fit(&scn, pi, nb, cfg.fit_basis, normalizer)?;
                        (f.model.clone(), Some(f))
                    } else {
                        (identify_fixed_price(&scn, pi, nb)?.0, None)
                    }
                }
            };
            let model_name = format!("model_{stem}.json");
            model.save(&o.file(&model_name))?;
            if let Some(f) = &fit {
                let mut w = csv::Writer::from_path(o.file(&format!("fit_{stem}.csv")))?;
                w.write_record(["time_min", "actual_kw", "predicted_kw"])?;
                for j in 0..f.time_min.len() {
                    w.write_record([
                        f.time_min[j].to_string(),
                        f.actual_kw[j].to_string(),
                        f.predicted_kw[j].to_string(),
                    ])?;
                }
                w.flush()?;
                eprintln!("N_B = {nb}, tau = {tau} min: normalized RMSE {:.4}", f.rmse);
            }
            rows.push(IdentifyRow {
                n_bins: nb,
                tau_min: tau,
                horizon,
                samples: model.meta.samples,
                empty_bins: model.meta.empty_bins.len(),
                column_sum_error: model.column_sum_error(),
                rmse: fit.map(|f| f.rmse),
                model: model_name,
            });
        }
    }
    let mut w = csv::Writer::from_path(o.file("identify_report.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    o.json("identify.json", &json!({ "name": l.name, "normalizer_kw": normalizer, "models": rows }))?;
    Ok(Status::Ok)
}

fn spectrum(l: &Loaded, models: &[(String, TransitionModel)], o: &mut Output) -> Result<Status, CliError> {
    let cfg =
        l.config.spectrum.as_ref().ok_or_else(|| CliError::Config(format!("{}: missing [spectrum] table", l.name)))?;
    let mut reports = Vec::new();
    if models.is_empty() {
        if cfg.pi_clr_per_mwh.is_empty() {
            return Err(CliError::Config("spectrum needs --model files or spectrum.pi_clr_per_mwh".into()));
        }
        let scn = l.scenario()?;
        for &pi in &cfg.pi_clr_per_mwh {
            let (model, _) = identify_fixed_price(&scn, pi, cfg.n_bins)?;
            let label = format!("pi{pi}_nb{}", cfg.n_bins);
            model.save(&o.file(&format!("model_{label}.json")))?;
            reports.push(spectrum_report(&label, &model, None, cfg.real_tol)?);
        }
    } else {
        for (label, model) in models {
            reports.push(spectrum_report(label, model, cfg.i_max, cfg.real_tol)?);
        }
    }
    let mut summary = csv::Writer::from_path(o.file("spectrum.csv"))?;
    summary.write_record(["label", "class", "max_abs_imag", "eigenvalues"])?;
    for r in &reports {
        let mut w = csv::Writer::from_path(o.file(&format!("eigs_{}.csv", r.label)))?;
        w.write_record(["index", "re", "im", "modulus"])?;
        for (i, (re, im)) in r.eigenvalues.iter().enumerate() {
            w.write_record([(i + 1).to_string(), re.to_string(), im.to_string(), re.hypot(*im).to_string()])?;
        }
        w.flush()?;
        summary.write_record([
            r.label.clone(),
            r.class.clone(),
            r.max_abs_imag.to_string(),
            r.eigenvalues.len().to_string(),
        ])?;
        println!("{}: {} (max |imag| = {:.3e})", r.label, r.class, r.max_abs_imag);
    }
    summary.flush()?;
    o.json("spectrum.json", &json!({ "name": l.name, "real_tol": cfg.real_tol, "spectra": reports }))?;
    Ok(Status::Ok)
}

fn first_model(models: &[(String, TransitionModel)]) -> Result<Option<TransitionModel>, CliError> {
    match models {
        [] => Ok(None),
        [(_, m)] => Ok(Some(m.clone())),
        _ => Err(CliError::Config("this command takes at most one --model".into())),
    }
}

fn solution_json(sol: &MpcSolution, n_devices: usize) -> serde_json::Value {
    json!({
        "kind": sol.kind,
        "objective": sol.objective,
        "i_max": sol.i_max,
        "pi_clr": sol.pi_clr,
        "lambda": sol.lambda,
        "d_c_mw": sol.d_c_mw,
        "d_mw": sol.d_mw,
        "max_bin_fraction": sol.max_bin_fraction(),
        "terminal_spread": sol.terminal_spread(device_mass(n_devices)),
        "stats": sol.stats,
    })
}

fn budget_status(label: &str, sol: &MpcSolution) -> Status {
    if sol.stats.budget_exhausted {
        Status::BudgetExhausted(format!(
            "{label}: search budget exhausted after {} nodes; best schedule has relative gap {:.3e}",
            sol.stats.nodes, sol.stats.gap
        ))
    } else {
        Status::Ok
    }
}

fn mpc(l: &Loaded, models: &[(String, TransitionModel)], o: &mut Output) -> Result<Status, CliError> {
    let m = l.mpc()?;
    let settings = m.settings(o.deterministic())?;
    let (p, scn) = mpc_problem(l, first_model(models)?)?;
    p.model.save(&o.file("model.json"))?;
    let mut status = Status::Ok;
    let mut sols = Vec::new();
    for kind in m.kind.kinds() {
        let sol = solve_mpc(&p, kind, &settings)?;
        let tag = kind_tag(kind);
        sol.write_csv(&o.file(&format!("plan_{tag}.csv")), scn.tau_min)?;
        sol.write_bins_csv(&o.file(&format!("bins_{tag}.csv")))?;
        o.json(&format!("mpc_{tag}.json"), &solution_json(&sol, p.n_devices))?;
        eprintln!("{kind}: objective {:.4}, i_max {:?}", sol.objective, sol.i_max);
        status = status.merge(budget_status(&format!("{} {kind}", l.name), &sol));
        sols.push(sol);
    }
    if sols.len() > 1 {
        let mut w = csv::Writer::from_path(o.file("comparison.csv"))?;
        let mut header = vec!["metric".to_string()];
        header.extend(sols.iter().map(|s| s.kind.to_string()));
        w.write_record(&header)?;
        let unit = device_mass(p.n_devices);
        let rows: [(&str, &dyn Fn(&MpcSolution) -> String); 6] = [
            ("objective", &|s| s.objective.to_string()),
            ("mean_lambda", &|s| mean(&s.lambda).to_string()),
            ("mean_controllable_mw", &|s| mean(&s.d_c_mw).to_string()),
            ("max_bin_fraction", &|s| s.max_bin_fraction().to_string()),
            ("terminal_spread", &|s| s.terminal_spread(unit).to_string()),
            ("gap", &|s| s.stats.gap.to_string()),
        ];
        for (name, f) in rows {
            let mut rec = vec![name.to_string()];
            rec.extend(sols.iter().map(f));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(status)
}

/// Fraction of the population one device represents.
fn device_mass(n_devices: usize) -> f64 {
    1.0 / n_devices.max(1) as f64
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn kind_tag(kind: MpcKind) -> &'static str {
    match kind {
        MpcKind::Mip => "mip",
        MpcKind::Qp => "qp",
    }
}

/// One evaluated case of the validation table.
#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub b_max: f64,
    pub mu_s: f64,
    pub mu_w: f64,
    pub metrics: ClosedLoopMetrics,
    pub proven_optimal: bool,
}

/// Closed-loop evaluation of every case in `loaded`.
pub fn evaluate_cases(
    loaded: &[Loaded],
    models: &[(String, TransitionModel)],
    deterministic: bool,
) -> Result<Vec<(CaseResult, MpcSolution, Trace)>, CliError> {
    let mut out = Vec::new();
    for l in loaded {
        let m = l.mpc()?;
        let settings = m.settings(deterministic)?;
        let kinds = m.kind.kinds();
        if m.horizon == 0 {
            continue;
        }
        let (p, scn) = mpc_problem(l, first_model(models)?)?;
        for kind in &kinds {
            let (sol, metrics, trace) = evaluate_closed_loop(&p, *kind, &scn, &settings)?;
            let name = if kinds.len() > 1 { format!("{}_{}", l.name, kind_tag(*kind)) } else { l.name.clone() };
            eprintln!("{name}: {kind} solved in {:.1} s, rmse {:.4}", metrics.solve_s, metrics.rmse);
            let proven_optimal = sol.stats.proven_optimal;
            out.push((
                CaseResult { name, b_max: m.b_max, mu_s: m.mu_s, mu_w: m.mu_w, metrics, proven_optimal },
                sol,
                trace,
            ));
        }
    }
    Ok(out)
}

const PVA_HEADER: [&str; 9] = [
    "time_min",
    "i_max",
    "pi_clr",
    "planned_controllable_mw",
    "actual_cleared_mw",
    "actual_average_mw",
    "planned_system_mw",
    "actual_system_mw",
    "lambda_elec",
];

fn validate(loaded: &[Loaded], models: &[(String, TransitionModel)], o: &mut Output) -> Result<Status, CliError> {
    for l in loaded {
        if l.mpc()?.horizon == 0 {
            let mut w = csv::Writer::from_path(o.file(&format!("predicted_vs_actual_{}.csv", l.name)))?;
            w.write_record(PVA_HEADER)?;
            w.flush()?;
        }
    }
    let cases = evaluate_cases(loaded, models, o.deterministic())?;
    let mut status = Status::Ok;
    for (c, sol, trace) in &cases {
        status = status.merge(budget_status(&c.name, sol));
        let mut w = csv::Writer::from_path(o.file(&format!("predicted_vs_actual_{}.csv", c.name)))?;
        w.write_record(PVA_HEADER)?;
        for (k, r) in trace.intervals.iter().enumerate() {
            w.write_record([
                r.t_min.to_string(),
                sol.i_max[k].to_string(),
                sol.pi_clr[k].to_string(),
                sol.d_c_mw[k].to_string(),
                (r.cleared_kw / 1000.0).to_string(),
                (r.avg_kw / 1000.0).to_string(),
                sol.d_mw[k].to_string(),
                ((r.cleared_kw + r.d_other_kw) / 1000.0).to_string(),
                sol.lambda[k].to_string(),
            ])?;
        }
        w.flush()?;
    }
    write_metrics_table(&o.file("metrics.csv"), &cases.iter().map(|c| &c.0).collect::<Vec<_>>(), o.deterministic())?;
    let results: Vec<&CaseResult> = cases.iter().map(|c| &c.0).collect();
    o.json("metrics.json", &json!({ "cases": results }))?;
    Ok(status)
}

/// Metrics as rows and cases as columns.
pub fn write_metrics_table(path: &Path, cases: &[&CaseResult], deterministic: bool) -> Result<(), CliError> {
    type Row = (&'static str, fn(&CaseResult) -> String);
    let mut rows: Vec<Row> = vec![
        ("type", |c| c.metrics.kind.to_string()),
        ("horizon", |c| c.metrics.horizon.to_string()),
        ("b_max", |c| c.b_max.to_string()),
        ("mu_s", |c| c.mu_s.to_string()),
        ("mu_w", |c| c.mu_w.to_string()),
        ("mean_system_mw", |c| c.metrics.mean_system_mw.to_string()),
        ("mean_controllable_mw", |c| c.metrics.mean_controllable_mw.to_string()),
        ("peak_system_mw", |c| c.metrics.peak_system_mw.to_string()),
        ("rmse", |c| c.metrics.rmse.to_string()),
        ("rmse_interval_average", |c| c.metrics.rmse_interval_average.to_string()),
        ("lambda_mean", |c| c.metrics.lambda_mean.to_string()),
        ("lambda_min", |c| c.metrics.lambda_min.to_string()),
        ("lambda_max", |c| c.metrics.lambda_max.to_string()),
        ("max_bin_fraction", |c| c.metrics.max_bin_fraction.to_string()),
        ("terminal_spread", |c| c.metrics.terminal_spread.to_string()),
        ("sim_max_bin_fraction", |c| c.metrics.sim_max_bin_fraction.to_string()),
        ("sim_terminal_spread", |c| c.metrics.sim_terminal_spread.to_string()),
        ("feeder_violations", |c| c.metrics.feeder_violations.to_string()),
        ("planned_controllable_mw", |c| c.metrics.planned_controllable_mw.to_string()),
        ("objective", |c| c.metrics.objective.to_string()),
        ("nodes", |c| c.metrics.nodes.to_string()),
        ("gap", |c| c.metrics.gap.to_string()),
        ("proven_optimal", |c| c.proven_optimal.to_string()),
    ];
    if !deterministic {
        rows.push(("solve_s", |c| c.metrics.solve_s.to_string()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["metric".to_string()];
    header.extend(cases.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for (name, f) in rows {
        let mut rec = vec![name.to_string()];
        rec.extend(cases.iter().map(|c| f(c)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Directory name of a sweep point.
fn point_dir(index: usize, key: &str, value: &toml::Value) -> String {
    let v = match value {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let clean: String = format!("{key}={v}")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-' | '=') { c } else { '_' })
        .collect();
    format!("{index:03}_{clean}")
}

/// Run the `[sweep]` command once per value, each in its own subdirectory.
/// Points are independent, so they run on up to `jobs` threads.
pub fn sweep(
    l: &Loaded,
    models: &[(String, TransitionModel)],
    out: &Path,
    deterministic: bool,
) -> Result<Status, CliError> {
    let sw = l.config.sweep.clone().ok_or_else(|| CliError::Config(format!("{}: missing [sweep] table", l.name)))?;
    if sw.jobs == 0 {
        return Err(CliError::Config("sweep.jobs must be at least 1".into()));
    }
    let mut points = Vec::with_capacity(sw.values.len());
    for (i, v) in sw.values.iter().enumerate() {
        let mut table = l.table.clone();
        table.remove("sweep");
        set_key(&mut table, &sw.key, v.clone())?;
        let point = Loaded::from_table(table, l.base_dir.clone(), &l.name, &[], None)?;
        points.push((point_dir(i, &sw.key, v), point));
    }
    let mut o = Output::create(out, "sweep", l.hash("sweep"), deterministic)?;
    let results: Vec<Mutex<Option<Result<Status, CliError>>>> = points.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..sw.jobs.min(points.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((dir, point)) = points.get(i) else { break };
                let r = execute(sw.command, std::slice::from_ref(point), models, &out.join(dir), deterministic);
                *results[i].lock().expect("sweep result lock") = Some(r);
            });
        }
    });
    let mut status = Status::Ok;
    let mut failure = None;
    let mut w = csv::Writer::from_path(o.file("sweep.csv"))?;
    w.write_record(["point", "key", "value", "config_hash", "status"])?;
    for (((dir, point), r), value) in points.iter().zip(results).zip(&sw.values) {
        let r = r.into_inner().expect("sweep result lock").expect("every point ran");
        let label = match &r {
            Ok(s) => s.label().to_string(),
            Err(e) => format!("error (exit {}): {e}", e.exit_code()),
        };
        w.write_record([dir.as_str(), &sw.key, &value.to_string(), &point.hash(command_str(sw.command)), &label])?;
        match r {
            Ok(s) => status = status.merge(s),
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    w.flush()?;
    o.finish(if failure.is_some() { "failed" } else { status.label() })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(status),
    }
}
