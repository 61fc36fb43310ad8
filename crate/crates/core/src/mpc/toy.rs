//! Small synthetic instances for cross-checking solvers.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::problem::{MpcProblem, Source, SpreadPeriods};
use crate::aggmodel::{BinDistribution, BinGrid, Conditioning, TransitionMeta, TransitionModel};

/// Random column-stochastic post-reset model: every column spreads its mass
/// over one to three random states.
pub fn random_model(n_bins: usize, rng: &mut impl Rng) -> TransitionModel {
    let n = 3 * n_bins;
    let mut a = DMatrix::zeros(n, n);
    for c in 0..n {
        let k = rng.random_range(1..=3usize.min(n));
        let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        for w in weights {
            a[(rng.random_range(0..n), c)] += w / total;
        }
    }
    TransitionModel {
        n_bins,
        tau_min: 10.0,
        a,
        meta: TransitionMeta { conditioning: Conditioning::PostReset, samples: 0, empty_bins: Vec::new() },
    }
}

/// Random distribution with roughly half of the states occupied.
pub fn random_distribution(n_bins: usize, rng: &mut impl Rng) -> BinDistribution {
    let mut x: Vec<f64> =
        (0..3 * n_bins).map(|_| if rng.random_bool(0.5) { rng.random_range(0.05..1.0) } else { 0.0 }).collect();
    if x.iter().all(|v| *v == 0.0) {
        x[0] = 1.0;
    }
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    BinDistribution::from_vec(n_bins, x)
}

/// Random instance with `n_bins` price bins and `horizon` periods: a 3 MW
/// population, 2–4 MW uncontrollable demand and randomly chosen weights,
/// caps, floors and feeder limits. Some draws are infeasible on purpose.
pub fn random_problem(seed: u64, n_bins: usize, horizon: usize) -> MpcProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_model(n_bins, &mut rng);
    let x_ini = random_distribution(n_bins, &mut rng);
    let d_other_mw: Vec<f64> = (0..horizon).map(|_| rng.random_range(2.0..4.0)).collect();
    let b_avg = 1.0 / (3 * n_bins) as f64;
    let b_max: f64 = [1.0f64, 0.6, 0.45][rng.random_range(0..3)].max(b_avg);
    MpcProblem {
        horizon,
        sources: vec![Source::quadratic(0.0, 10.0, 2.5)],
        model,
        grid: BinGrid::new(n_bins, 50.0, 10.0).expect("valid grid"),
        x_ini,
        d_other_mw,
        feeder_mw: [8.0, 5.5][rng.random_range(0..2)],
        energy_floor_mw: rng.random_range(0.0..1.2),
        mu_w: [0.0, 1.0, 5.0][rng.random_range(0..3)],
        mu_s: [0.0, 10.0, 1000.0][rng.random_range(0..3)],
        b_max,
        w_o: 3.0,
        zeta: None,
        n_devices: 100,
        p_elec_kw: 30.0,
        spread_periods: if rng.random_bool(0.8) { SpreadPeriods::All } else { SpreadPeriods::Terminal },
    }
}
