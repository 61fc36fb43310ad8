//! Acceptance suite. Prints one PASS/FAIL line per criterion with its
//! runtime and fails at the end if any criterion failed.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tecoord::aggmodel::{
    eigenvalues, max_abs_imag, propagate, simple_classify, simple_equilibrium, spectrum, split_and_reset,
    SimpleAggModel, Stability, TransitionModel,
};
use tecoord::mpc::toy::{random_distribution, random_model, random_problem};
use tecoord::mpc::{solve_by_enumeration, solve_mpc_mip, MpcKind, MpcSettings, MpcSolution};
use tecoord::popsim::{identify_fixed_price, identify_post_reset};
use tecoord::Error;
use tecoord_cli::commands::{evaluate_cases, CaseResult};
use tecoord_cli::config::{FitBasis, Loaded};
use tecoord_cli::studies::{fixed_price_fit, scaled_normalizer_kw};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn load(name: &str) -> Loaded {
    Loaded::from_file(&scenario(name), &[], None).unwrap()
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn record(&mut self, id: &str, v: Verdict, elapsed: Duration) {
        let label = if v.pass { "PASS" } else { "FAIL" };
        // Written straight to stderr so the line survives output capture.
        let _ = writeln!(std::io::stderr(), "criterion {id}: {label} ({}) [{:.3} s]", v.detail, elapsed.as_secs_f64());
        if !v.pass {
            self.failed.push(id.trim_end_matches(char::is_alphabetic).parse().unwrap());
        }
    }

    fn run(&mut self, id: &str, f: impl FnOnce() -> Verdict) {
        let t = Instant::now();
        let v = f();
        self.record(id, v, t.elapsed());
    }
}

fn simple_models() -> Verdict {
    let t = Instant::now();
    let i = SimpleAggModel { a: 0.9, gamma: 0.1, beta: 50.0, pi_max: 50.0, k_p: 0.02 };
    let ii = SimpleAggModel { a: 0.7, gamma: 0.25, beta: 150.0, pi_max: 150.0, k_p: 0.05 };
    let eq = simple_equilibrium(&i).unwrap();
    let class_i = simple_classify(&i);
    let class_ii = simple_classify(&ii);
    let elapsed = t.elapsed();
    let ok = (i.alpha() - 0.8).abs() <= 1e-12
        && (eq.u - 0.5).abs() <= 1e-12
        && (eq.e - 0.5).abs() <= 1e-12
        && (eq.pi - 25.0).abs() <= 1e-12
        && class_i == Stability::MonotoneStable
        && (ii.alpha() + 1.175).abs() <= 1e-12
        && class_ii == Stability::OscillatoryDivergent
        && elapsed < Duration::from_millis(1);
    verdict(
        ok,
        format!(
            "alpha {:.12} / {:.12}, u* {:.12}, e* {:.12}, pi* {:.12}, {:?} / {:?}, {:?}",
            i.alpha(),
            ii.alpha(),
            eq.u,
            eq.e,
            eq.pi,
            class_i,
            class_ii,
            elapsed
        ),
    )
}

fn stochastic_structure() -> Verdict {
    let fig8 = load("fig8");
    let scn = fig8.scenario().unwrap();
    let mut models: Vec<(String, TransitionModel)> = Vec::new();
    for nb in [10, 20, 40] {
        for pi in [30.0, 10.0] {
            models.push((format!("fixed nb{nb} pi{pi}"), identify_fixed_price(&scn, pi, nb).unwrap().0));
        }
    }
    let case1 = load("case1");
    let m = case1.mpc().unwrap();
    let sc = &case1.config.scenario;
    let cscn = sc.build_at(sc.tau_min, m.horizon, &case1.base_dir).unwrap();
    models.push(("post-reset nb20".into(), identify_post_reset(&cscn, m.n_bins, m.per_bin, 7).unwrap()));

    let mut bad = Vec::new();
    for (label, model) in &models {
        let eigs = eigenvalues(&model.a).unwrap();
        let sums = model.column_sum_error() <= 1e-12;
        let entries = model.a.iter().all(|v| (0.0..=1.0).contains(v));
        let unit = eigs.iter().any(|e| (e.re - 1.0).abs() <= 1e-9 && e.im.abs() <= 1e-9);
        let moduli = eigs.iter().all(|e| e.norm() <= 1.0 + 1e-9);
        if !(sums && entries && unit && moduli) {
            bad.push(format!("{label}: sums {sums} entries {entries} unit {unit} moduli {moduli}"));
        }
    }

    let mut worst = 0.0f64;
    let mut negative = false;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nb = 20;
        let model = random_model(nb, &mut rng);
        let mut x = random_distribution(nb, &mut rng);
        for _ in 0..1000 {
            let i_max = rng.random_range(0..=nb);
            x = propagate(&split_and_reset(&x, i_max), &model, 1);
            worst = worst.max((x.total() - 1.0).abs());
            negative |= x.x.iter().any(|v| *v < 0.0);
        }
    }
    let ok = bad.is_empty() && worst <= 1e-12 && !negative;
    verdict(ok, format!("{} models checked, {} bad {:?}, worst mass drift {worst:.2e}", models.len(), bad.len(), bad))
}

fn eigenvalue_regimes() -> Verdict {
    let t = Instant::now();
    let fig8 = load("fig8");
    let scn = fig8.scenario().unwrap();
    let high = spectrum(&identify_fixed_price(&scn, 30.0, 40).unwrap().0, None).unwrap();
    let low = spectrum(&identify_fixed_price(&scn, 10.0, 40).unwrap().0, None).unwrap();
    let high_imag = max_abs_imag(&high);
    let low_imag = max_abs_imag(&low);
    let elapsed = t.elapsed();
    let ok = high_imag < 1e-6 && low_imag > 1e-3 && elapsed < Duration::from_secs(60);
    verdict(
        ok,
        format!("max |imag| at 30 $/MWh {high_imag:.3e} (need < 1e-6), at 10 $/MWh {low_imag:.3e} (need > 1e-3)"),
    )
}

fn fit_ordering() -> Verdict {
    let t = Instant::now();
    let fig8 = load("fig8");
    let scn = fig8.scenario().unwrap();
    let norm = scaled_normalizer_kw(scn.n_devices);
    let errs: Vec<f64> = [10, 20, 40]
        .iter()
        .map(|nb| fixed_price_fit(&scn, 10.0, *nb, FitBasis::Instants, norm).unwrap().rmse)
        .collect();
    let ok =
        errs[0] >= errs[1] && errs[1] >= errs[2] && errs[0] >= 2.0 * errs[2] && t.elapsed() < Duration::from_secs(300);
    verdict(ok, format!("rmse N_B 10/20/40 = {:.4} / {:.4} / {:.4}", errs[0], errs[1], errs[2]))
}

fn tau_sweep() -> Verdict {
    let t = Instant::now();
    let fig11 = load("fig11");
    let sc = &fig11.config.scenario;
    let mut errs = HashMap::new();
    for tau in [1.0, 10.0, 30.0, 60.0] {
        let horizon = (360.0_f64 / tau).round() as usize;
        let scn = sc.build_at(tau, horizon, &fig11.base_dir).unwrap();
        let fit = fixed_price_fit(&scn, 10.0, 40, FitBasis::Window, scaled_normalizer_kw(scn.n_devices)).unwrap();
        errs.insert(tau as u32, fit.rmse);
    }
    let ok =
        [10, 30].iter().all(|m| errs[m] < errs[&1] && errs[m] < errs[&60]) && t.elapsed() < Duration::from_secs(600);
    verdict(
        ok,
        format!("rmse tau 1/10/30/60 = {:.4} / {:.4} / {:.4} / {:.4}", errs[&1], errs[&10], errs[&30], errs[&60]),
    )
}

fn oracle_equivalence() -> Verdict {
    let t = Instant::now();
    let settings = MpcSettings { gap_tol: 0.0, ..MpcSettings::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut agree, mut infeasible, mut worst) = (0, 0, 0.0f64);
    let mut mismatches = Vec::new();
    for _ in 0..50 {
        let seed = rng.random::<u64>();
        let nb = rng.random_range(1..=4);
        let h = rng.random_range(1..=3);
        let p = random_problem(seed, nb, h);
        match (solve_mpc_mip(&p, &settings), solve_by_enumeration(&p, &settings)) {
            (Ok(sol), Ok((_, best))) => {
                let diff = (sol.objective - best).abs() / best.abs().max(1.0);
                worst = worst.max(diff);
                if diff <= 1e-8 {
                    agree += 1;
                } else {
                    mismatches.push(seed);
                }
            }
            (Err(Error::Infeasible(_)), Err(Error::Infeasible(_))) => infeasible += 1,
            _ => mismatches.push(seed),
        }
    }
    let ok = mismatches.is_empty() && t.elapsed() < Duration::from_secs(60);
    verdict(
        ok,
        format!("{agree} matched, {infeasible} infeasible in both, worst relative difference {worst:.1e}, mismatched seeds {mismatches:?}"),
    )
}

/// Closed-loop runs of the eight case files. Cases sharing identification
/// inputs share the identified model.
fn run_cases() -> (Vec<(CaseResult, MpcSolution)>, Duration) {
    let t = Instant::now();
    let mut models: HashMap<String, TransitionModel> = HashMap::new();
    let mut out = Vec::new();
    for i in 1..=8 {
        let l = load(&format!("case{i}"));
        let m = l.mpc().unwrap();
        let sc = &l.config.scenario;
        let scn = sc.build_at(sc.tau_min, m.horizon, &l.base_dir).unwrap();
        let seed = m.identify_seed.unwrap_or(scn.seed);
        let key = serde_json::to_string(&(sc, sc.tau_min, m.n_bins, m.per_bin, seed)).unwrap();
        let model =
            models.entry(key).or_insert_with(|| identify_post_reset(&scn, m.n_bins, m.per_bin, seed).unwrap()).clone();
        let cases = evaluate_cases(std::slice::from_ref(&l), &[("identified".into(), model)], false).unwrap();
        out.extend(cases.into_iter().map(|(c, sol, _)| (c, sol)));
    }
    (out, t.elapsed())
}

fn describe(c: &CaseResult) -> String {
    format!(
        "{} spread {} max {:.3} (simulated {} / {:.3}) rmse {:.4}",
        c.name,
        c.metrics.terminal_spread,
        c.metrics.max_bin_fraction,
        c.metrics.sim_terminal_spread,
        c.metrics.sim_max_bin_fraction,
        c.metrics.rmse
    )
}

fn case_criteria(report: &mut Report) {
    let (cases, elapsed) = run_cases();
    let results: Vec<&CaseResult> = cases.iter().map(|c| &c.0).collect();
    let share = elapsed / 4;

    // Terminal spread and bin concentration of the planned X_N.
    let a: Vec<&&CaseResult> = results.iter().filter(|c| c.mu_s == 0.0 && c.b_max == 1.0).collect();
    let a_ok = !a.is_empty() && a.iter().all(|c| c.metrics.terminal_spread <= 6 && c.metrics.max_bin_fraction >= 0.35);
    report.record("7a", verdict(a_ok, a.iter().map(|c| describe(c)).collect::<Vec<_>>().join("; ")), share);

    let b: Vec<&&CaseResult> = results.iter().filter(|c| c.mu_s == 1000.0 || c.b_max == 0.25).collect();
    let b_ok = !b.is_empty() && b.iter().all(|c| c.metrics.terminal_spread >= 10 && c.metrics.max_bin_fraction <= 0.26);
    report.record("7b", verdict(b_ok, b.iter().map(|c| describe(c)).collect::<Vec<_>>().join("; ")), share);

    // Each QP case against every MIP case of the same horizon.
    let mut pairs = Vec::new();
    let mut c_ok = true;
    for q in results.iter().filter(|c| c.metrics.kind == MpcKind::Qp) {
        for m in results.iter().filter(|c| c.metrics.kind == MpcKind::Mip && c.metrics.horizon == q.metrics.horizon) {
            c_ok &= q.metrics.rmse > m.metrics.rmse;
            pairs.push(format!("{} {:.4} vs {} {:.4}", q.name, q.metrics.rmse, m.name, m.metrics.rmse));
        }
    }
    c_ok &= !pairs.is_empty();
    report.record("7c", verdict(c_ok, pairs.join("; ")), share);

    let mips: Vec<&&CaseResult> = results.iter().filter(|c| c.metrics.kind == MpcKind::Mip).collect();
    let violations: usize = mips.iter().map(|c| c.metrics.feeder_violations).sum();
    let peak = mips.iter().map(|c| c.metrics.peak_system_mw).fold(0.0, f64::max);
    report.record(
        "7d",
        verdict(!mips.is_empty() && violations == 0, format!("{violations} violations, peak {peak:.3} MW")),
        share,
    );
    report.record(
        "7",
        verdict(
            elapsed < Duration::from_secs(1800),
            format!("{} cases in {:.1} s (limit 1800 s)", results.len(), elapsed.as_secs_f64()),
        ),
        elapsed,
    );

    // Solve times of the same runs.
    let mut speed_ok = true;
    let mut speeds = Vec::new();
    for c in &results {
        let s = c.metrics.solve_s;
        match c.metrics.kind {
            MpcKind::Qp => {
                speed_ok &= s < 30.0;
                speeds.push(format!("{} qp {s:.2} s", c.name));
            }
            MpcKind::Mip if c.metrics.horizon == 12 => {
                speed_ok &= s < 600.0 && c.proven_optimal;
                speeds.push(format!("{} mip {s:.1} s proven {} gap {:.2e}", c.name, c.proven_optimal, c.metrics.gap));
            }
            MpcKind::Mip => {}
        }
    }
    let solve_total: f64 = results.iter().map(|c| c.metrics.solve_s).sum();
    report.record("8", verdict(speed_ok, speeds.join("; ")), Duration::from_secs_f64(solve_total));

    // Prices against marginal cost of the single source.
    let t = Instant::now();
    let mut worst = 0.0f64;
    for (_, sol) in &cases {
        for (k, lambda) in sol.lambda.iter().enumerate() {
            worst = worst.max((lambda - (10.0 + 5.0 * sol.p_mw[k][0])).abs());
        }
    }
    report.record("9", verdict(worst <= 1e-6, format!("worst |lambda - (10 + 5 P)| = {worst:.2e}")), t.elapsed());

    let t = Instant::now();
    let capped: Vec<(&CaseResult, f64)> =
        cases.iter().filter(|(c, _)| c.b_max == 0.25).map(|(c, sol)| (c, sol.max_bin_fraction())).collect();
    let cap_ok = !capped.is_empty() && capped.iter().all(|(_, x)| *x <= 0.25 + 1e-8);
    report.record(
        "10",
        verdict(cap_ok, capped.iter().map(|(c, x)| format!("{} max x {x:.10}", c.name)).collect::<Vec<_>>().join("; ")),
        t.elapsed(),
    );
}

#[test]
fn acceptance_criteria() {
    let mut report = Report { failed: Vec::new() };
    report.run("1", simple_models);
    report.run("2", stochastic_structure);
    report.run("3", eigenvalue_regimes);
    report.run("4", fit_ordering);
    report.run("5", tau_sweep);
    report.run("6", oracle_equivalence);
    case_criteria(&mut report);
    report.failed.dedup();
    assert!(report.failed.is_empty(), "failed criteria: {:?}", report.failed);
}
