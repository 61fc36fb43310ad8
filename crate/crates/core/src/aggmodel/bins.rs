//! Price-bin geometry and bin-mass distributions.
//!
//! Bin indices in the public API are 1-based: price-bins run `1..=N_B` from
//! the highest bid down, and the full state space `1..=3·N_B` stacks the
//! on set, the controllable-off set and the locked set in that order.
//! Vectors are stored 0-based, so slot `i − 1` holds bin `i`.

use serde::{Deserialize, Serialize};

use crate::der::DerState;
use crate::error::{Error, Result};

/// Slack allowed when a bid sits a rounding error outside the grid.
const GRID_EPS: f64 = 1e-9;

/// Operating state of a device, as grouped by the bin model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpSet {
    /// Controllable and cleared.
    On,
    /// Controllable, not cleared.
    Off,
    /// Locked out.
    Locked,
}

impl OpSet {
    pub fn of(m: bool, v: bool) -> Self {
        match (m, v) {
            (false, _) => OpSet::Locked,
            (true, true) => OpSet::On,
            (true, false) => OpSet::Off,
        }
    }

    pub fn offset(self, n_bins: usize) -> usize {
        match self {
            OpSet::On => 0,
            OpSet::Off => n_bins,
            OpSet::Locked => 2 * n_bins,
        }
    }
}

/// Uniform grid of `n_bins` price intervals between `pi_min` and `pi_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub n_bins: usize,
    pub pi_max: f64,
    pub pi_min: f64,
}

impl BinGrid {
    pub fn new(n_bins: usize, pi_max: f64, pi_min: f64) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidParameter("bin grid needs at least one bin".into()));
        }
        if !(pi_max > pi_min) || !pi_max.is_finite() || !pi_min.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bin grid requires pi_max > pi_min, got [{pi_min}, {pi_max}]"
            )));
        }
        Ok(Self { n_bins, pi_max, pi_min })
    }

    pub fn width(&self) -> f64 {
        (self.pi_max - self.pi_min) / self.n_bins as f64
    }

    /// Number of bins over all three operating sets.
    pub fn n_states(&self) -> usize {
        3 * self.n_bins
    }

    /// Price boundary `π̃_i` for `i ∈ 0..=N_B`.
    pub fn boundary(&self, i: usize) -> f64 {
        if i == self.n_bins {
            self.pi_min
        } else {
            self.pi_max - i as f64 * self.width()
        }
    }

    /// SOC level `ẽ_i` matching `π̃_i` on a homogeneous population.
    pub fn soc_level(&self, i: usize) -> f64 {
        i as f64 / self.n_bins as f64
    }

    /// Price-bin `j ∈ 1..=N_B` with `price ∈ (π̃_j, π̃_{j−1}]`; both grid
    /// endpoints are closed into the end bins.
    pub fn price_bin(&self, price: f64) -> Result<usize> {
        if price > self.pi_max + GRID_EPS || price < self.pi_min - GRID_EPS || price.is_nan() {
            return Err(Error::OutOfGrid { price, min: self.pi_min, max: self.pi_max });
        }
        let depth = ((self.pi_max - price) / self.width()).floor();
        Ok((depth.max(0.0) as usize + 1).min(self.n_bins))
    }

    /// 1-based state index of a price-bin within an operating set.
    pub fn state_index(&self, price_bin: usize, set: OpSet) -> usize {
        price_bin + set.offset(self.n_bins)
    }

    /// Split a 1-based state index into its price-bin and operating set.
    pub fn decompose(&self, state: usize) -> (usize, OpSet) {
        let n = self.n_bins;
        let set = match (state - 1) / n {
            0 => OpSet::On,
            1 => OpSet::Off,
            _ => OpSet::Locked,
        };
        ((state - 1) % n + 1, set)
    }
}

/// Bin index `1..=3·N_B` of a device.
pub fn assign_bin(state: &DerState, grid: &BinGrid) -> Result<usize> {
    let j = grid.price_bin(state.bid)?;
    Ok(grid.state_index(j, OpSet::of(state.m, state.v || state.must_run)))
}

/// Probability mass over the `3·N_B` bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinDistribution {
    pub n_bins: usize,
    pub x: Vec<f64>,
}

impl BinDistribution {
    /// Validates nonnegativity and unit total mass to `tol`.
    pub fn new(n_bins: usize, x: Vec<f64>, tol: f64) -> Result<Self> {
        if x.len() != 3 * n_bins {
            return Err(Error::Dimension(format!("distribution has {} entries, expected {}", x.len(), 3 * n_bins)));
        }
        if x.iter().any(|v| !(*v >= -tol)) {
            return Err(Error::InvalidParameter("distribution has negative mass".into()));
        }
        let total: f64 = x.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidParameter(format!("distribution mass {total} differs from 1")));
        }
        Ok(Self { n_bins, x })
    }

    /// Unchecked constructor for vectors produced by stochastic maps.
    pub fn from_vec(n_bins: usize, x: Vec<f64>) -> Self {
        debug_assert_eq!(x.len(), 3 * n_bins);
        Self { n_bins, x }
    }

    /// All mass in one 1-based bin.
    pub fn point(n_bins: usize, bin: usize) -> Self {
        let mut x = vec![0.0; 3 * n_bins];
        x[bin - 1] = 1.0;
        Self { n_bins, x }
    }

    /// Histogram of a population. An empty population yields the all-zero
    /// vector.
    pub fn from_states(states: &[DerState], grid: &BinGrid) -> Result<Self> {
        let mut x = vec![0.0; grid.n_states()];
        for s in states {
            x[assign_bin(s, grid)? - 1] += 1.0;
        }
        if !states.is_empty() {
            let w = 1.0 / states.len() as f64;
            x.iter_mut().for_each(|v| *v *= w);
        }
        Ok(Self { n_bins: grid.n_bins, x })
    }

    pub fn total(&self) -> f64 {
        self.x.iter().sum()
    }

    pub fn on(&self) -> &[f64] {
        &self.x[..self.n_bins]
    }

    pub fn off(&self) -> &[f64] {
        &self.x[self.n_bins..2 * self.n_bins]
    }

    pub fn locked(&self) -> &[f64] {
        &self.x[2 * self.n_bins..]
    }

    pub fn on_fraction(&self) -> f64 {
        self.on().iter().sum()
    }

    pub fn locked_fraction(&self) -> f64 {
        self.locked().iter().sum()
    }

    pub fn max_mass(&self) -> f64 {
        self.x.iter().copied().fold(0.0, f64::max)
    }

    /// Number of bins holding at least `min_mass`.
    pub fn spread(&self, min_mass: f64) -> usize {
        self.x.iter().filter(|v| **v >= min_mass).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> BinGrid {
        BinGrid::new(20, 50.0, 10.0).unwrap()
    }

    fn dev(bid: f64, m: bool, v: bool) -> DerState {
        DerState { e: 0.0, m, v, must_run: false, bid }
    }

    #[test]
    fn boundaries() {
        let g = grid();
        assert_eq!(g.width(), 2.0);
        assert_eq!(g.boundary(0), 50.0);
        assert_eq!(g.boundary(7), 36.0);
        assert_eq!(g.boundary(20), 10.0);
        assert_eq!(g.soc_level(20), 1.0);
    }

    #[test]
    fn assign_examples() {
        let g = grid();
        assert_eq!(assign_bin(&dev(50.0, true, true), &g).unwrap(), 1);
        assert_eq!(assign_bin(&dev(10.0, false, false), &g).unwrap(), 60);
        assert_eq!(g.price_bin(36.5).unwrap(), 7);
        assert_eq!(assign_bin(&dev(36.5, true, false), &g).unwrap(), 27);
        // Half-open intervals: the lower boundary belongs to the next bin.
        assert_eq!(g.price_bin(36.0).unwrap(), 8);
        assert_eq!(g.price_bin(38.0).unwrap(), 7);
        assert!(assign_bin(&dev(50.5, true, true), &g).is_err());
        assert!(assign_bin(&dev(9.0, true, true), &g).is_err());
    }

    #[test]
    fn decompose_roundtrip() {
        let g = grid();
        for s in 1..=60 {
            let (j, set) = g.decompose(s);
            assert_eq!(g.state_index(j, set), s);
        }
    }

    #[test]
    fn histogram_and_metrics() {
        let g = grid();
        let pop = [dev(49.0, true, true), dev(49.5, true, true), dev(30.0, true, false), dev(12.0, false, false)];
        let d = BinDistribution::from_states(&pop, &g).unwrap();
        assert_eq!(d.x[0], 0.5);
        assert_eq!(d.on_fraction(), 0.5);
        assert_eq!(d.locked_fraction(), 0.25);
        assert_eq!(d.spread(0.25), 3);
        assert!((d.total() - 1.0).abs() < 1e-15);
        assert!(BinDistribution::new(20, d.x.clone(), 1e-12).is_ok());
        assert!(BinDistribution::new(20, vec![0.0; 60], 1e-12).is_err());
    }
}
