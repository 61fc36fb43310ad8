//! First-order aggregate model of a homogeneous battery population whose
//! charging rate responds proportionally to the clearing price.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpleAggModel {
    pub a: f64,
    pub gamma: f64,
    pub beta: f64,
    pub pi_max: f64,
    /// Proportional response of the charging fraction to price (1/($/MWh)).
    pub k_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub u: f64,
    pub e: f64,
    pub pi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    MonotoneStable,
    OscillatoryStable,
    OscillatoryDivergent,
    Marginal,
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MonotoneStable => "monotone-stable",
            Self::OscillatoryStable => "oscillatory-stable",
            Self::OscillatoryDivergent => "oscillatory-divergent",
            Self::Marginal => "marginal",
        })
    }
}

impl SimpleAggModel {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 || self.beta < 0.0 || self.k_p < 0.0 {
            return Err(Error::InvalidParameter("gamma, beta and K_p must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.a - self.gamma * self.beta * self.k_p
    }

    pub fn k_c(&self) -> f64 {
        self.pi_max * self.k_p * (1.0 - self.a)
    }

    /// One step `u' = α·u + K_c`.
    pub fn step(&self, u: f64) -> f64 {
        self.alpha() * u + self.k_c()
    }
}

pub fn simple_equilibrium(model: &SimpleAggModel) -> Result<Equilibrium> {
    let alpha = model.alpha();
    if alpha == 1.0 {
        return Err(Error::UndefinedEquilibrium);
    }
    let d = 1.0 - alpha;
    Ok(Equilibrium {
        u: model.k_c() / d,
        e: model.gamma * model.pi_max * model.k_p / d,
        pi: model.pi_max * (1.0 - model.a) / d,
    })
}

/// Classification by `α`. `α = 0` reaches the equilibrium in one step and is
/// counted as monotone.
pub fn simple_classify(model: &SimpleAggModel) -> Stability {
    let alpha = model.alpha();
    if alpha.abs() == 1.0 {
        Stability::Marginal
    } else if alpha >= 0.0 && alpha < 1.0 {
        Stability::MonotoneStable
    } else if alpha > -1.0 && alpha < 0.0 {
        Stability::OscillatoryStable
    } else if alpha < -1.0 {
        Stability::OscillatoryDivergent
    } else {
        // α > 1 requires a > 1, which no dissipative battery has.
        Stability::Marginal
    }
}

/// Closed-form trajectory `u_0 … u_k` (k + 1 values).
pub fn simple_trajectory(model: &SimpleAggModel, u0: f64, k: usize) -> Vec<f64> {
    let alpha = model.alpha();
    let k_c = model.k_c();
    (0..=k)
        .map(|n| {
            let ak = alpha.powi(n as i32);
            let geometric = if alpha == 1.0 { n as f64 } else { (1.0 - ak) / (1.0 - alpha) };
            ak * u0 + k_c * geometric
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn case_i() -> SimpleAggModel {
        SimpleAggModel { a: 0.9, gamma: 0.1, beta: 50.0, pi_max: 50.0, k_p: 0.02 }
    }

    fn case_ii() -> SimpleAggModel {
        SimpleAggModel { a: 0.7, gamma: 0.25, beta: 150.0, pi_max: 150.0, k_p: 0.05 }
    }

    #[test]
    fn case_i_equilibrium() {
        let m = case_i();
        assert!((m.alpha() - 0.8).abs() < 1e-12);
        let eq = simple_equilibrium(&m).unwrap();
        assert!((eq.u - 0.5).abs() < 1e-12);
        assert!((eq.e - 0.5).abs() < 1e-12);
        assert!((eq.pi - 25.0).abs() < 1e-12);
        assert_eq!(simple_classify(&m), Stability::MonotoneStable);
    }

    #[test]
    fn case_ii_diverges() {
        let m = case_ii();
        assert!((m.alpha() + 1.175).abs() < 1e-12);
        assert_eq!(simple_classify(&m), Stability::OscillatoryDivergent);
    }

    #[test]
    fn no_bid_feedback_charges_fully() {
        let m = SimpleAggModel { a: 0.9, gamma: 0.1, beta: 0.0, pi_max: 50.0, k_p: 1.0 / 50.0 };
        assert_eq!(m.alpha(), 0.9);
        assert!((simple_equilibrium(&m).unwrap().u - 1.0).abs() < 1e-12);
    }

    #[test]
    fn undefined_equilibrium() {
        let m = SimpleAggModel { a: 1.0, gamma: 0.1, beta: 0.0, pi_max: 50.0, k_p: 0.02 };
        assert!(matches!(simple_equilibrium(&m), Err(Error::UndefinedEquilibrium)));
        assert_eq!(simple_classify(&m), Stability::Marginal);
    }

    #[test]
    fn oscillatory_stable_alternates() {
        // α = 0.5 − 0.1·50·0.2 = −0.5
        let m = SimpleAggModel { a: 0.5, gamma: 0.1, beta: 50.0, pi_max: 50.0, k_p: 0.2 };
        assert!((m.alpha() + 0.5).abs() < 1e-12);
        assert_eq!(simple_classify(&m), Stability::OscillatoryStable);
        let u_star = simple_equilibrium(&m).unwrap().u;
        let traj = simple_trajectory(&m, 0.0, 12);
        for w in traj.windows(2) {
            let (d0, d1) = (w[0] - u_star, w[1] - u_star);
            assert!(d0 * d1 < 0.0 && d1.abs() < d0.abs());
        }
    }

    #[test]
    fn trajectory_examples() {
        let m = case_i();
        let u_star = simple_equilibrium(&m).unwrap().u;
        assert!(simple_trajectory(&m, u_star, 50).iter().all(|u| (u - u_star).abs() < 1e-12));
        assert!((simple_trajectory(&m, 0.0, 400)[400] - 0.5).abs() < 1e-12);
        let t = simple_trajectory(&m, 0.3, 1);
        assert!((t[1] - (m.alpha() * 0.3 + m.k_c())).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn closed_form_matches_iteration(
            a in 0.05f64..1.0,
            gamma in 0.0f64..0.5,
            beta in 0.0f64..100.0,
            pi_max in 10.0f64..200.0,
            k_p in 0.0f64..0.05,
            u0 in -1.0f64..2.0,
        ) {
            let m = SimpleAggModel { a, gamma, beta, pi_max, k_p };
            let closed = simple_trajectory(&m, u0, 30);
            let mut u = u0;
            for (n, c) in closed.iter().enumerate() {
                let scale = 1.0f64.max(u.abs()).max(m.alpha().abs().powi(n as i32));
                prop_assert!((u - c).abs() <= 1e-12 * scale * (n as f64 + 1.0), "n={} {} vs {}", n, u, c);
                u = m.step(u);
            }
        }
    }
}
