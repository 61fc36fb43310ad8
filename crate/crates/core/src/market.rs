//! Feeder-limited double-auction clearing and price-based dispatch.

use serde::{Deserialize, Serialize};

use crate::aggmodel::BinGrid;
use crate::der::DerState;
use crate::error::{Error, Result};

/// One demand bid. Locked devices do not bid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub device_id: usize,
    /// $/MWh
    pub price: f64,
    /// kW
    pub quantity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketOutcome {
    /// Clearing price ($/MWh).
    pub pi_clr: f64,
    /// Cleared controllable demand (kW).
    pub d_clr: f64,
    /// Demand bid at or above the base price (kW).
    pub d_base: f64,
    /// Whether the feeder limit set the price.
    pub feeder_bound: bool,
    /// Clearing decision for each input bid, in input order.
    pub decisions: Vec<bool>,
}

/// Bids of every controllable device in a population; `quantity_kw[j]` is
/// device `j`'s electrical draw.
pub fn collect_bids(states: &[DerState], quantity_kw: &[f64]) -> Vec<Bid> {
    states
        .iter()
        .zip(quantity_kw)
        .enumerate()
        .filter(|(_, (s, _))| s.m && !s.must_run)
        .map(|(j, (s, q))| Bid { device_id: j, price: s.bid, quantity: *q })
        .collect()
}

/// Clear the auction against the feeder limit.
///
/// If the demand bid at or above `pi_base` fits next to `d_other`, the market
/// clears at the base price. Otherwise the price rises through the bid
/// levels until the cleared quantity fits the remaining headroom; bids at an
/// identical price clear or fail together, so the cleared demand can end up
/// strictly below the limit. When not even the highest price level fits, the
/// price is set just above it and nothing clears.
pub fn clear_market(bids: &[Bid], pi_base: f64, d_feeder: f64, d_other: f64) -> Result<MarketOutcome> {
    if !(d_feeder > 0.0) {
        return Err(Error::InvalidParameter(format!("feeder limit must be positive, got {d_feeder}")));
    }
    if !(d_other >= 0.0) {
        return Err(Error::InvalidParameter(format!("uncontrollable demand must be nonnegative, got {d_other}")));
    }
    if d_other > d_feeder {
        return Err(Error::MarketInfeasible { d_other, d_feeder });
    }
    if let Some(b) = bids.iter().find(|b| !(b.quantity > 0.0) || !b.price.is_finite()) {
        return Err(Error::InvalidParameter(format!("bid from device {} is malformed", b.device_id)));
    }

    let d_base: f64 = bids.iter().filter(|b| b.price >= pi_base).map(|b| b.quantity).sum();
    let headroom = d_feeder - d_other;

    let (pi_clr, feeder_bound) = if d_base < headroom {
        (pi_base, false)
    } else {
        let mut order: Vec<usize> = (0..bids.len()).collect();
        order.sort_by(|&i, &j| bids[j].price.total_cmp(&bids[i].price));
        let mut cum = 0.0;
        let mut price = None;
        let mut idx = 0;
        while idx < order.len() {
            let level = bids[order[idx]].price;
            let mut level_q = 0.0;
            while idx < order.len() && bids[order[idx]].price == level {
                level_q += bids[order[idx]].quantity;
                idx += 1;
            }
            if cum + level_q > headroom {
                break;
            }
            cum += level_q;
            price = Some(level);
        }
        let top = order.first().map(|&i| bids[i].price).unwrap_or(pi_base);
        (price.unwrap_or_else(|| top.next_up()).max(pi_base), true)
    };

    let decisions: Vec<bool> = bids.iter().map(|b| b.price >= pi_clr).collect();
    let d_clr = bids.iter().zip(&decisions).filter(|(_, d)| **d).map(|(b, _)| b.quantity).sum();
    Ok(MarketOutcome { pi_clr, d_clr, d_base, feeder_bound, decisions })
}

/// Cleared flags for a population under a broadcast price. Ties clear.
pub fn dispatch(pi_clr: f64, states: &[DerState]) -> Vec<bool> {
    states.iter().map(|s| s.m && s.bid >= pi_clr).collect()
}

/// Clearing price that dispatches price-bins `1..=i_max`.
pub fn threshold_to_price(i_max: usize, grid: &BinGrid) -> Result<f64> {
    if i_max > grid.n_bins {
        return Err(Error::IndexOutOfRange { index: i_max, max: grid.n_bins });
    }
    Ok(grid.boundary(i_max))
}
