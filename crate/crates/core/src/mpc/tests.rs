use super::toy::random_problem;
use super::*;
use crate::aggmodel::split;
use crate::error::{ConstraintClass, Error};

fn exact() -> MpcSettings {
    MpcSettings { gap_tol: 0.0, ..MpcSettings::default() }
}

#[test]
fn on_mass_thresholds() {
    let n = 20;
    let zeta = 0.01;
    let mut on = vec![0.0; 3 * n];
    on[0] = 0.3;
    on[1] = 0.2;
    on[2] = zeta / 2.0;
    assert_eq!(threshold_from_on_mass(&on, n, zeta), 2);
    // I_2 slots count by their price-bin.
    on[n + 4] = 0.05;
    assert_eq!(threshold_from_on_mass(&on, n, zeta), 5);
    assert_eq!(threshold_from_on_mass(&vec![zeta / 3.0; 3 * n], n, zeta), 0);
    let grid = crate::aggmodel::BinGrid::new(n, 50.0, 10.0).unwrap();
    assert_eq!(extract_prices(&[0], &grid).unwrap(), vec![50.0]);
}

#[test]
fn whole_bin_clearing_pattern() {
    // Mass in price-bins 6, 7 of both controllable sets cleared at 7.
    let n = 20;
    let mut x = vec![0.0; 3 * n];
    for slot in [5, 6, n + 5, n + 6] {
        x[slot] = 0.25;
    }
    let d = crate::aggmodel::BinDistribution::from_vec(n, x);
    let (on, _) = split(&d, 7);
    assert_eq!(threshold_from_on_mass(&on, n, 1e-3), 7);
}

#[test]
fn branch_and_bound_matches_enumeration() {
    let mut checked = 0;
    for seed in 0..40u64 {
        let n_bins = 1 + (seed as usize % 4);
        let horizon = 1 + (seed as usize / 4) % 3;
        let p = random_problem(seed, n_bins, horizon);
        let settings = exact();
        let brute = solve_by_enumeration(&p, &settings);
        let bnb = solve_mpc_mip(&p, &settings);
        match (brute, bnb) {
            (Ok((_, v)), Ok(sol)) => {
                assert!((sol.objective - v).abs() <= 1e-8, "seed {seed}: {} vs {v}", sol.objective);
                checked += 1;
            }
            (Err(Error::Infeasible(_)), Err(Error::Infeasible(_))) => {}
            (a, b) => panic!("seed {seed}: enumeration {a:?}, branch-and-bound {:?}", b.map(|s| s.objective)),
        }
    }
    assert!(checked >= 20, "only {checked} feasible instances");
}

#[test]
fn relaxation_lower_bounds_the_exact_problem() {
    for seed in 100..130u64 {
        let mut p = random_problem(seed, 3, 3);
        p.mu_w = 0.0;
        let Ok(mip) = solve_mpc_mip(&p, &exact()) else { continue };
        let qp = solve_mpc_qp(&p, &MpcSettings::default()).unwrap();
        assert!(qp.objective <= mip.objective + 1e-6 * (1.0 + mip.objective.abs()), "seed {seed}");
    }
}

#[test]
fn marginal_price_from_the_balance_dual() {
    for seed in 200..210u64 {
        let p = random_problem(seed, 4, 3);
        let Ok(sol) = solve_mpc_qp(&p, &MpcSettings::default()) else { continue };
        for (k, l) in sol.lambda.iter().enumerate() {
            let pk: f64 = sol.p_mw[k].iter().sum();
            assert!((l - (10.0 + 5.0 * pk)).abs() <= 1e-6, "seed {seed} period {k}: {l} vs {pk}");
        }
    }
}

#[test]
fn bin_cap_holds_in_both_formulations() {
    let mut seen = 0;
    for seed in 300..330u64 {
        let mut p = random_problem(seed, 4, 3);
        p.b_max = 0.3;
        p.x_ini = super::toy::random_distribution(4, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        if let Ok(sol) = solve_mpc_qp(&p, &MpcSettings::default()) {
            assert!(sol.max_bin_fraction() <= 0.3 + 1e-8);
            seen += 1;
        }
        if let Ok(sol) = solve_mpc_mip(&p, &MpcSettings::default()) {
            assert!(sol.max_bin_fraction() <= 0.3 + 1e-8);
        }
    }
    assert!(seen > 0);
}

#[test]
fn on_cost_alone_clears_nothing() {
    let mut p = random_problem(7, 4, 3);
    p.sources = vec![Source::quadratic(0.0, 0.0, 0.0)];
    p.mu_w = 1.0;
    p.mu_s = 0.0;
    p.b_max = 1.0;
    p.energy_floor_mw = 0.0;
    p.feeder_mw = 8.0;
    let sol = solve_mpc_mip(&p, &exact()).unwrap();
    assert!(sol.i_max.iter().all(|i| *i == 0));
    assert_eq!(sol.objective, 0.0);
}

#[test]
fn exact_schedule_replays_its_own_trajectory() {
    let p = random_problem(11, 4, 3);
    let sol = solve_mpc_mip(&p, &exact()).unwrap();
    let r = replay(&p, &sol.i_max);
    for (a, b) in r.x.iter().zip(&sol.x) {
        assert_eq!(a, b);
    }
    assert!(sol.d_mw.iter().all(|d| *d <= p.feeder_mw + 1e-8));
}

#[test]
fn infeasibility_is_classified() {
    let mut p = random_problem(3, 3, 3);
    p.energy_floor_mw = 10.0;
    p.feeder_mw = 20.0;
    assert!(matches!(solve_mpc_qp(&p, &MpcSettings::default()), Err(Error::Infeasible(ConstraintClass::EnergyFloor))));
    // Enough devices for the floor but not enough feeder headroom.
    p.energy_floor_mw = 2.5;
    p.feeder_mw = p.d_other_mw.iter().copied().fold(0.0, f64::max) + 1.0;
    assert!(matches!(solve_mpc_mip(&p, &MpcSettings::default()), Err(Error::Infeasible(ConstraintClass::FeederLimit))));
    p.feeder_mw = 1.0;
    assert!(matches!(solve_mpc_qp(&p, &MpcSettings::default()), Err(Error::Infeasible(ConstraintClass::FeederLimit))));
}

#[test]
fn rejects_bad_parameters() {
    let mut p = random_problem(1, 2, 2);
    p.w_o = 1.0;
    assert!(matches!(solve_mpc_qp(&p, &MpcSettings::default()), Err(Error::InvalidParameter(_))));
    let mut p = random_problem(1, 2, 2);
    p.d_other_mw.truncate(1);
    assert!(matches!(solve_mpc_mip(&p, &MpcSettings::default()), Err(Error::Dimension(_))));
}

use rand::SeedableRng;
