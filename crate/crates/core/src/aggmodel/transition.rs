//! Bin transition models: identification from sampled trajectories,
//! propagation, and the on/off split with its reset maps.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::bins::BinDistribution;
use crate::error::{Error, Result};

/// What the sending states of an identified model represent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Conditioning {
    /// Post-dispatch states under a constant clearing price; the model
    /// already contains the clearing decision.
    FixedPrice { pi_clr: f64 },
    /// Post-reset states; the model holds only the natural dynamics and the
    /// clearing decision enters through [`split_and_reset`].
    PostReset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMeta {
    pub conditioning: Conditioning,
    /// Number of observed transitions.
    pub samples: usize,
    /// 1-based sending bins without observations; they were given a
    /// self-transition.
    pub empty_bins: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub n_bins: usize,
    pub tau_min: f64,
    /// Column-stochastic: `a[(i, j)]` is the probability of moving from bin
    /// `j + 1` to bin `i + 1` in one interval.
    pub a: DMatrix<f64>,
    pub meta: TransitionMeta,
}

/// Transition counts accumulated before normalization.
#[derive(Debug, Clone)]
pub struct TransitionCounts {
    n_bins: usize,
    /// `counts[(to, from)]`
    counts: DMatrix<f64>,
    samples: usize,
}

impl TransitionCounts {
    pub fn new(n_bins: usize) -> Self {
        let n = 3 * n_bins;
        Self { n_bins, counts: DMatrix::zeros(n, n), samples: 0 }
    }

    /// Record one move between 1-based bins.
    pub fn record(&mut self, from: usize, to: usize) {
        self.counts[(to - 1, from - 1)] += 1.0;
        self.samples += 1;
    }

    pub fn merge(&mut self, other: &TransitionCounts) {
        self.counts += &other.counts;
        self.samples += other.samples;
    }

    pub fn into_model(self, tau_min: f64, conditioning: Conditioning) -> TransitionModel {
        let mut a = self.counts;
        let mut empty_bins = Vec::new();
        for j in 0..a.ncols() {
            let total: f64 = a.column(j).sum();
            if total > 0.0 {
                a.column_mut(j).unscale_mut(total);
            } else {
                a[(j, j)] = 1.0;
                empty_bins.push(j + 1);
            }
        }
        TransitionModel {
            n_bins: self.n_bins,
            tau_min,
            a,
            meta: TransitionMeta { conditioning, samples: self.samples, empty_bins },
        }
    }
}

/// Identify a model from per-device bin paths (1-based bins sampled every
/// `tau_min` minutes); every consecutive pair is one transition.
pub fn identify_transition(
    paths: &[Vec<usize>],
    n_bins: usize,
    tau_min: f64,
    conditioning: Conditioning,
) -> Result<TransitionModel> {
    let n = 3 * n_bins;
    let mut counts = TransitionCounts::new(n_bins);
    for path in paths {
        if let Some(&bad) = path.iter().find(|&&b| b == 0 || b > n) {
            return Err(Error::IndexOutOfRange { index: bad, max: n });
        }
        for w in path.windows(2) {
            counts.record(w[0], w[1]);
        }
    }
    Ok(counts.into_model(tau_min, conditioning))
}

/// Selection matrix that merges on-mass of price-bin `i` from both
/// controllable sets into on-slot `i`. Locked slots map to themselves.
pub fn b_on(n_bins: usize) -> DMatrix<f64> {
    let n = 3 * n_bins;
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n_bins {
        b[(i, i)] = 1.0;
        b[(i, i + n_bins)] = 1.0;
        b[(i + 2 * n_bins, i + 2 * n_bins)] = 1.0;
    }
    b
}

/// Selection matrix that merges off-mass of price-bin `i` from both
/// controllable sets into off-slot `i`. Locked slots map to themselves.
pub fn b_off(n_bins: usize) -> DMatrix<f64> {
    let n = 3 * n_bins;
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n_bins {
        b[(i + n_bins, i)] = 1.0;
        b[(i + n_bins, i + n_bins)] = 1.0;
        b[(i + 2 * n_bins, i + 2 * n_bins)] = 1.0;
    }
    b
}

/// Split a distribution at clearing threshold `i_max`: controllable mass in
/// price-bins `1..=i_max` is on, everything else (including all locked mass)
/// is off.
pub fn split(x: &BinDistribution, i_max: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.n_bins;
    let mut on = vec![0.0; 3 * n];
    let mut off = x.x.clone();
    for i in 0..i_max.min(n) {
        for slot in [i, i + n] {
            on[slot] = x.x[slot];
            off[slot] = 0.0;
        }
    }
    (on, off)
}

/// Post-clearing distribution `B_on·x_on + B_off·x_off`.
pub fn split_and_reset(x: &BinDistribution, i_max: usize) -> BinDistribution {
    let n = x.n_bins;
    let cut = i_max.min(n);
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let merged = x.x[i] + x.x[i + n];
        if i < cut {
            out[i] = merged;
        } else {
            out[i + n] = merged;
        }
        out[i + 2 * n] = x.x[i + 2 * n];
    }
    BinDistribution::from_vec(n, out)
}

/// Matrix form of [`split_and_reset`] at a fixed threshold.
pub fn reset_matrix(n_bins: usize, i_max: usize) -> DMatrix<f64> {
    let n = 3 * n_bins;
    let mut r = DMatrix::zeros(n, n);
    for i in 0..n_bins {
        let dest = if i < i_max { i } else { i + n_bins };
        r[(dest, i)] = 1.0;
        r[(dest, i + n_bins)] = 1.0;
        r[(i + 2 * n_bins, i + 2 * n_bins)] = 1.0;
    }
    r
}

/// Apply the model `k` times.
pub fn propagate(x: &BinDistribution, model: &TransitionModel, k: usize) -> BinDistribution {
    let mut v = DVector::from_column_slice(&x.x);
    for _ in 0..k {
        v = &model.a * v;
    }
    BinDistribution::from_vec(x.n_bins, v.as_slice().to_vec())
}

impl TransitionModel {
    pub fn n_states(&self) -> usize {
        3 * self.n_bins
    }

    /// One clearing plus one interval of natural dynamics.
    pub fn step_reset(&self, x: &BinDistribution, i_max: usize) -> BinDistribution {
        let plus = split_and_reset(x, i_max);
        propagate(&plus, self, 1)
    }

    /// Largest deviation of a column sum from 1.
    pub fn column_sum_error(&self) -> f64 {
        (0..self.a.ncols()).map(|j| (self.a.column(j).sum() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// One-interval closed-loop matrix: `A` itself for a price-conditioned
    /// model, `A·R(i_max)` for a post-reset model.
    pub fn closed_loop_matrix(&self, i_max: Option<usize>) -> Result<DMatrix<f64>> {
        match (self.meta.conditioning, i_max) {
            (Conditioning::FixedPrice { .. }, _) => Ok(self.a.clone()),
            (Conditioning::PostReset, Some(i)) if i <= self.n_bins => Ok(&self.a * reset_matrix(self.n_bins, i)),
            (Conditioning::PostReset, Some(i)) => Err(Error::IndexOutOfRange { index: i, max: self.n_bins }),
            (Conditioning::PostReset, None) => {
                Err(Error::InvalidParameter("a post-reset model needs a clearing threshold for its closed loop".into()))
            }
        }
    }

    pub fn b_on(&self) -> DMatrix<f64> {
        b_on(self.n_bins)
    }

    pub fn b_off(&self) -> DMatrix<f64> {
        b_off(self.n_bins)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = TransitionFile {
            n_bins: self.n_bins,
            n_states: self.n_states(),
            tau_min: self.tau_min,
            meta: self.meta.clone(),
            a_row_major: (0..self.a.nrows()).flat_map(|i| self.a.row(i).iter().copied().collect::<Vec<_>>()).collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: TransitionFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let n = 3 * file.n_bins;
        if file.n_states != n || file.a_row_major.len() != n * n {
            return Err(Error::Dimension(format!(
                "model file declares {} bins but stores {} entries",
                file.n_bins,
                file.a_row_major.len()
            )));
        }
        Ok(Self {
            n_bins: file.n_bins,
            tau_min: file.tau_min,
            a: DMatrix::from_row_slice(n, n, &file.a_row_major),
            meta: file.meta,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TransitionFile {
    n_bins: usize,
    n_states: usize,
    tau_min: f64,
    meta: TransitionMeta,
    a_row_major: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_dist(n_bins: usize, raw: &[f64]) -> BinDistribution {
        let total: f64 = raw.iter().sum();
        BinDistribution::from_vec(n_bins, raw.iter().map(|v| v / total).collect())
    }

    /// Deterministic shift model: on mass moves `up` bins deeper, off mass
    /// `down` bins shallower, everything clamped to the grid.
    fn shift_model(n_bins: usize, up: usize, down: usize) -> TransitionModel {
        let mut paths = Vec::new();
        for i in 0..n_bins {
            paths.push(vec![i + 1, (i + up).min(n_bins - 1) + 1]);
            paths.push(vec![i + 1 + n_bins, i.saturating_sub(down) + 1 + n_bins]);
            paths.push(vec![i + 1 + 2 * n_bins, i + 1 + 2 * n_bins]);
        }
        identify_transition(&paths, n_bins, 10.0, Conditioning::PostReset).unwrap()
    }

    #[test]
    fn frozen_locked_population() {
        let n = 5;
        let paths: Vec<Vec<usize>> = (0..50).map(|_| vec![3 * n; 4]).collect();
        let m = identify_transition(&paths, n, 10.0, Conditioning::FixedPrice { pi_clr: 10.0 }).unwrap();
        assert_eq!(m.a[(3 * n - 1, 3 * n - 1)], 1.0);
        assert_eq!(m.meta.samples, 150);
        assert_eq!(m.meta.empty_bins.len(), 3 * n - 1);
        // Every unobserved bin stays put.
        for j in 0..3 * n {
            assert_eq!(m.a[(j, j)], 1.0);
        }
    }

    #[test]
    fn identified_columns_are_stochastic() {
        let m = shift_model(8, 2, 1);
        assert!(m.column_sum_error() < 1e-12);
        assert!(m.a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn reset_examples() {
        let n = 20;
        let mut x = vec![0.0; 60];
        x[5] = 0.1;
        x[6] = 0.2;
        x[25] = 0.3;
        x[26] = 0.4;
        let d = BinDistribution::from_vec(n, x);
        let r = split_and_reset(&d, 7);
        assert!((r.x[5] - 0.4).abs() < 1e-15);
        assert!((r.x[6] - 0.6).abs() < 1e-15);
        assert_eq!(r.off().iter().sum::<f64>(), 0.0);

        let none = split_and_reset(&d, 0);
        assert_eq!(none.on_fraction(), 0.0);
        assert!((none.x[25] - 0.4).abs() < 1e-15 && (none.x[26] - 0.6).abs() < 1e-15);

        let mut with_locked = d.x.clone();
        with_locked[45] = 0.5;
        let d = random_dist(n, &with_locked);
        let all = split_and_reset(&d, n);
        assert!((all.on_fraction() + all.locked_fraction() - 1.0).abs() < 1e-15);
        assert_eq!(all.locked(), d.locked());
    }

    #[test]
    fn reset_matrix_matches_split_form() {
        let n = 6;
        let raw: Vec<f64> = (0..18).map(|i| 1.0 + (i * 7 % 5) as f64).collect();
        let d = random_dist(n, &raw);
        for i_max in 0..=n {
            let (on, off) = split(&d, i_max);
            let via_b = b_on(n) * DVector::from_vec(on) + b_off(n) * DVector::from_vec(off);
            let via_r = reset_matrix(n, i_max) * DVector::from_column_slice(&d.x);
            let direct = split_and_reset(&d, i_max);
            for k in 0..3 * n {
                assert!((via_b[k] - direct.x[k]).abs() < 1e-15);
                assert!((via_r[k] - direct.x[k]).abs() < 1e-15);
            }
        }
        for b in [b_on(n), b_off(n)] {
            for j in 0..3 * n {
                assert_eq!(b.column(j).sum(), 1.0);
            }
        }
    }

    /// Price-conditioned model built from the same deterministic shifts:
    /// at threshold `i_max` a device in price-bin i is on iff i ≤ i_max,
    /// so its sending state already carries the dispatch label.
    fn price_conditioned(n_bins: usize, up: usize, down: usize, i_max: usize) -> TransitionModel {
        let label = |i: usize| if i < i_max { i } else { i + n_bins };
        let mut paths = Vec::new();
        for i in 0..n_bins {
            let to_on = (i + up).min(n_bins - 1);
            let to_off = i.saturating_sub(down);
            let target = if i < i_max { to_on } else { to_off };
            paths.push(vec![label(i) + 1, label(target) + 1]);
        }
        identify_transition(&paths, n_bins, 10.0, Conditioning::FixedPrice { pi_clr: 0.0 }).unwrap()
    }

    #[test]
    fn formulations_agree_on_homogeneous_shifts() {
        let n = 10;
        let post = shift_model(n, 2, 1);
        let seq = [3usize, 3, 5, 5, 1, 7, 7, 2, 4, 4];
        let mut x_post = BinDistribution::point(n, 4);
        let mut x_cond = split_and_reset(&x_post, seq[0]);
        for (k, &i_max) in seq.iter().enumerate() {
            x_post = post.step_reset(&x_post, i_max);
            let cond = price_conditioned(n, 2, 1, i_max);
            x_cond = propagate(&x_cond, &cond, 1);
            if let Some(&next) = seq.get(k + 1) {
                // Relabel for the next interval's price.
                x_cond = split_and_reset(&x_cond, next);
                let relabelled_post = split_and_reset(&x_post, next);
                for s in 0..3 * n {
                    assert!((relabelled_post.x[s] - x_cond.x[s]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let m = shift_model(4, 1, 1);
        let dir = std::env::temp_dir().join(format!("tecoord-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.json");
        m.save(&path).unwrap();
        let back = TransitionModel::load(&path).unwrap();
        assert_eq!(back, m);
        std::fs::remove_dir_all(dir).ok();
    }

    proptest! {
        #[test]
        fn reset_then_propagate_conserves_mass(
            raw in prop::collection::vec(0.0f64..1.0, 30),
            i_max in 0usize..=10,
            steps in 1usize..20,
        ) {
            prop_assume!(raw.iter().sum::<f64>() > 0.1);
            let d = random_dist(10, &raw);
            let m = shift_model(10, 3, 2);
            let mut x = d.clone();
            for _ in 0..steps {
                x = m.step_reset(&x, i_max);
            }
            prop_assert!((x.total() - 1.0).abs() < 1e-12);
            prop_assert!(x.x.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn reset_is_idempotent(raw in prop::collection::vec(0.0f64..1.0, 30), i_max in 0usize..=10) {
            prop_assume!(raw.iter().sum::<f64>() > 0.1);
            let d = random_dist(10, &raw);
            let once = split_and_reset(&d, i_max);
            let twice = split_and_reset(&once, i_max);
            prop_assert_eq!(once, twice);
        }
    }
}
