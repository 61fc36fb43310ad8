//! Exogenous per-interval series: uncontrollable demand and base prices.

use std::path::Path;

use crate::error::{Error, Result};

/// Hourly non-AC feeder demand (MW) of a synthetic summer weekday for a
/// 1473-customer residential feeder: overnight trough near 1.9 MW, peak
/// near 4.2 MW in late afternoon. Synthetic: shaped to be plausible, not
/// derived from measurements.
pub const SYNTHETIC_NON_AC_MW: [f64; 24] = [
    2.30, 2.10, 2.00, 1.90, 1.90, 2.00, 2.30, 2.60, 2.80, 3.00, 3.20, 3.40, //
    3.60, 3.80, 3.95, 4.10, 4.20, 4.20, 3.80, 3.50, 3.30, 3.00, 2.70, 2.50,
];

/// Synthetic non-AC demand (MW) at a fractional hour of day, linearly
/// interpolated and wrapped at midnight.
pub fn synthetic_non_ac_mw(hour: f64) -> f64 {
    let h = hour.rem_euclid(24.0);
    let i = h.floor() as usize % 24;
    let frac = h - h.floor();
    SYNTHETIC_NON_AC_MW[i] * (1.0 - frac) + SYNTHETIC_NON_AC_MW[(i + 1) % 24] * frac
}

/// Synthetic non-AC demand (kW) at the start of each of `n` intervals of
/// `tau_min` minutes beginning at `start_hour`, scaled by `scale`.
pub fn synthetic_non_ac_series_kw(start_hour: f64, tau_min: f64, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|k| 1000.0 * scale * synthetic_non_ac_mw(start_hour + k as f64 * tau_min / 60.0)).collect()
}

/// Piecewise-constant series from `(start_min, value)` breakpoints; the
/// first breakpoint also covers any earlier interval.
pub fn step_series(breakpoints: &[(f64, f64)], tau_min: f64, n: usize) -> Result<Vec<f64>> {
    if breakpoints.is_empty() {
        return Err(Error::InvalidParameter("step series needs at least one breakpoint".into()));
    }
    if breakpoints.windows(2).any(|w| !(w[0].0 < w[1].0)) {
        return Err(Error::InvalidParameter("step series breakpoints must increase in time".into()));
    }
    Ok((0..n)
        .map(|k| {
            let t = k as f64 * tau_min;
            breakpoints.iter().rev().find(|(start, _)| *start <= t + 1e-9).unwrap_or(&breakpoints[0]).1
        })
        .collect())
}

/// Read a two-column `interval,value` CSV. A header row is skipped when its
/// first field is not a number. Indices must cover `0..n` exactly once.
pub fn read_series_csv(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "{}: row {} has fewer than 2 columns",
                path.display(),
                line + 1
            )));
        }
        let idx = match rec[0].parse::<f64>() {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(_) => {
                return Err(Error::InvalidParameter(format!(
                    "{}: bad interval index on row {}",
                    path.display(),
                    line + 1
                )))
            }
        };
        let value: f64 = rec[1]
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("{}: bad value on row {}", path.display(), line + 1)))?;
        rows.push((idx as usize, value));
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(Error::InvalidParameter(format!("{}: interval indices must be 0..n without gaps", path.display())));
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_profile_shape() {
        let peak = SYNTHETIC_NON_AC_MW.iter().copied().fold(0.0, f64::max);
        assert!((peak - 4.2).abs() < 1e-12);
        assert!((synthetic_non_ac_mw(18.5) - 3.65).abs() < 1e-12);
        assert!((synthetic_non_ac_mw(23.5) - 2.4).abs() < 1e-12);
        let s = synthetic_non_ac_series_kw(18.0, 10.0, 18, 1.0);
        let mean = s.iter().sum::<f64>() / 18.0;
        assert!(mean > 3000.0 && mean < 4000.0);
    }

    #[test]
    fn steps() {
        let s = step_series(&[(0.0, 48.0), (480.0, 20.0), (720.0, 10.0)], 60.0, 14).unwrap();
        assert_eq!(s[7], 48.0);
        assert_eq!(s[8], 20.0);
        assert_eq!(s[12], 10.0);
        assert!(step_series(&[(10.0, 1.0), (5.0, 2.0)], 1.0, 3).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = std::env::temp_dir().join(format!("tecoord-series-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("s.csv");
        std::fs::write(&path, "interval,value\n1,2.5\n0,1.5\n2,3\n").unwrap();
        assert_eq!(read_series_csv(&path).unwrap(), vec![1.5, 2.5, 3.0]);
        std::fs::write(&path, "0,1\n2,3\n").unwrap();
        assert!(read_series_csv(&path).is_err());
        std::fs::remove_dir_all(dir).ok();
    }
}
