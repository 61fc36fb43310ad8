//! Monte-Carlo population simulation under auction or broadcast prices.

pub mod identify;
pub mod profiles;
mod scenario;
mod sim;

pub use identify::{identify_fixed_price, identify_post_reset, predict_on_fraction, predict_on_fraction_reset};
pub use scenario::{DeviceModel, Initial, Scenario};
pub use sim::{run_exogenous, run_priced, Device, DeviceSample, IntervalRecord, Population, Trace};

use crate::error::{Error, Result};

/// Root-mean-square difference of two series divided by `normalizer`.
pub fn rmse(actual: &[f64], predicted: &[f64], normalizer: f64) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::Dimension(format!("rmse over series of length {} and {}", actual.len(), predicted.len())));
    }
    if !(normalizer > 0.0) {
        return Err(Error::InvalidParameter("rmse normalizer must be positive".into()));
    }
    if actual.is_empty() {
        return Ok(0.0);
    }
    let mse = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum::<f64>() / actual.len() as f64;
    Ok(mse.sqrt() / normalizer)
}
