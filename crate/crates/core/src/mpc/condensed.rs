//! Condensed QP over the periods that are still free.
//!
//! Only the merged on-mass `z_{i,k}` of each price-bin is a decision: the
//! reset sends on-mass of both controllable slots of bin `i` to on-slot `i`,
//! so how `z` splits between them affects neither the dynamics, the demand
//! nor the on-cost. The distributions are affine in the stacked decisions,
//! `X_k = x0_k + S_k·v`, and are substituted out. Periods before `k0` have
//! fixed clearing decisions and enter only through their controllable
//! demand.

use nalgebra::{DMatrix, DVector};

use super::problem::MpcProblem;
use crate::error::{ConstraintClass, Error, Result};
use crate::qp::{QpProblem, QpSolution};

/// Mass below this is treated as absent when deciding which bins can clear.
pub const SUPPORT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    /// Include the per-bin on-cost `μ_w·w_o^i·z`.
    pub on_cost: bool,
    /// Include a linear underestimate of the whole-bin on-cost `2μ_w·i_max`:
    /// clearing mass `z` from a bin that holds at most `m̄` costs at least
    /// `2μ_w·z/m̄`.
    pub on_cost_bound: bool,
    /// Leave one constraint class out (used to classify infeasibility).
    pub drop: Option<ConstraintClass>,
}

pub struct Condensed {
    pub qp: QpProblem,
    pub k0: usize,
    /// Per free period `k0 + t`: `(price-bin index 0-based, variable)`.
    pub z_vars: Vec<Vec<(usize, usize)>>,
    pub p_vars: Vec<Vec<usize>>,
    pub d_vars: Vec<usize>,
    /// Equality row of each period's power balance.
    pub balance_rows: Vec<usize>,
    /// `X_{k0+t} = x0[t] + s[t]·v` for `t = 0..=N−k0`.
    pub x0: Vec<DVector<f64>>,
    pub s: Vec<DMatrix<f64>>,
    /// Objective constant not represented in the QP.
    pub constant: f64,
}

/// Values recovered from a condensed solution.
pub struct Recovered {
    /// Merged on-mass per free period and price-bin.
    pub z: Vec<Vec<f64>>,
    /// `X_{k0..=N}`.
    pub x: Vec<DVector<f64>>,
    pub p: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    pub lambda: Vec<f64>,
}

fn supported(v: f64) -> bool {
    v > SUPPORT_EPS
}

/// Upper bounds on every slot's mass over the free periods, valid for any
/// clearing: a controllable bin may land in either of its slots, so the
/// larger of the two transition columns carries its merged mass. Returns
/// the bounds with the cap applied and, per period, the bound before the
/// cap of that period is applied.
fn mass_bounds(p: &MpcProblem, x_k0: &[f64], free: usize, cap: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = p.n_bins();
    let ns = 3 * n;
    let a = &p.model.a;
    let mut out = vec![x_k0.to_vec()];
    let mut raw = vec![x_k0.to_vec()];
    for t in 0..free {
        let cur = &out[t];
        let mut next = vec![0.0; ns];
        for i in 0..n {
            let merged = (cur[i] + cur[i + n]).min(1.0);
            let locked = cur[i + 2 * n];
            for (r, nx) in next.iter_mut().enumerate() {
                *nx += a[(r, i)].max(a[(r, i + n)]) * merged + a[(r, i + 2 * n)] * locked;
            }
        }
        raw.push(next.clone());
        // The cap holds on every state after the first clearing.
        next.iter_mut().for_each(|v| *v = v.min(cap));
        out.push(next);
    }
    (out, raw)
}

impl Condensed {
    /// Build the QP for periods `k0..N` from the known state `x_k0`.
    /// `prefix_dc` holds the controllable demand (MW) of periods `0..k0`.
    pub fn build(p: &MpcProblem, prefix_dc: &[f64], x_k0: &[f64], opts: BuildOptions) -> Result<Self> {
        let n = p.n_bins();
        let ns = 3 * n;
        let horizon = p.horizon;
        let k0 = prefix_dc.len();
        if k0 > horizon || x_k0.len() != ns {
            return Err(Error::Dimension("prefix longer than the horizon or state of wrong size".into()));
        }
        let free = horizon - k0;
        let scale = p.scale_mw();
        let a = &p.model.a;
        let keep = |c: ConstraintClass| opts.drop != Some(c);

        // Structural support of each free period's pre-clearing state.
        let mut support: Vec<Vec<bool>> = Vec::with_capacity(free + 1);
        support.push(x_k0.iter().map(|v| supported(*v)).collect());
        for t in 0..free {
            let cur = &support[t];
            let mut plus = vec![false; ns];
            for i in 0..n {
                if cur[i] || cur[i + n] {
                    plus[i] = true;
                    plus[i + n] = true;
                }
                plus[i + 2 * n] = cur[i + 2 * n];
            }
            let mut next = vec![false; ns];
            for (c, on) in plus.iter().enumerate() {
                if *on {
                    for (r, nx) in next.iter_mut().enumerate() {
                        if a[(r, c)] != 0.0 {
                            *nx = true;
                        }
                    }
                }
            }
            support.push(next);
        }

        // Variable layout: all z first, then per period the sources and D.
        let mut z_vars = Vec::with_capacity(free);
        let mut nv = 0;
        for sup in support.iter().take(free) {
            let mut row = Vec::new();
            for i in 0..n {
                if sup[i] || sup[i + n] {
                    row.push((i, nv));
                    nv += 1;
                }
            }
            z_vars.push(row);
        }
        let nz = nv;
        let mut p_vars = Vec::with_capacity(horizon);
        let mut d_vars = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            p_vars.push((0..p.sources.len()).map(|j| nv + j).collect::<Vec<_>>());
            nv += p.sources.len();
            d_vars.push(nv);
            nv += 1;
        }

        // Affine state maps.
        let mut x0 = Vec::with_capacity(free + 1);
        let mut s = Vec::with_capacity(free + 1);
        x0.push(DVector::from_column_slice(x_k0));
        s.push(DMatrix::zeros(ns, nz));
        for t in 0..free {
            let (xc, sc) = (&x0[t], &s[t]);
            let mut xp = DVector::zeros(ns);
            let mut sp = DMatrix::zeros(ns, nz);
            for i in 0..n {
                xp[i + n] = xc[i] + xc[i + n];
                xp[i + 2 * n] = xc[i + 2 * n];
                for col in 0..nz {
                    sp[(i + n, col)] = sc[(i, col)] + sc[(i + n, col)];
                    sp[(i + 2 * n, col)] = sc[(i + 2 * n, col)];
                }
            }
            for &(i, var) in &z_vars[t] {
                sp[(i, var)] += 1.0;
                sp[(i + n, var)] -= 1.0;
            }
            x0.push(a * xp);
            s.push(a * sp);
        }

        let mut qp = QpProblem::new(nv);
        let mut constant = 0.0;
        let mut g_rows: Vec<(Vec<(usize, f64)>, DVector<f64>, f64)> = Vec::new();

        // z bounds: 0 ≤ z ≤ controllable mass of its bin.
        for (t, row) in z_vars.iter().enumerate() {
            for &(i, var) in row {
                qp.lb[var] = 0.0;
                if t == 0 {
                    qp.ub[var] = x_k0[i] + x_k0[i + n];
                } else {
                    let coeff: DVector<f64> = -(s[t].row(i).transpose() + s[t].row(i + n).transpose());
                    g_rows.push((vec![(var, 1.0)], coeff, x0[t][i] + x0[t][i + n]));
                }
            }
        }

        // Bin cap on X_{k0+1..=N}.
        if keep(ConstraintClass::BinCap) && p.b_max < 1.0 {
            // Rows whose slot can never exceed the cap are left out.
            let (_, reach) = mass_bounds(p, x_k0, free, p.b_max);
            for t in 1..=free {
                for r in 0..ns {
                    let sr = s[t].row(r);
                    if reach[t][r] <= p.b_max {
                        continue;
                    }
                    if sr.iter().any(|v| *v != 0.0) {
                        g_rows.push((Vec::new(), sr.transpose(), p.b_max - x0[t][r]));
                    } else if x0[t][r] > p.b_max + 1e-9 {
                        return Err(Error::Infeasible(ConstraintClass::BinCap));
                    }
                }
            }
        }

        // Energy floor.
        if keep(ConstraintClass::EnergyFloor) {
            let remaining = p.floor_total_mw() - prefix_dc.iter().sum::<f64>();
            if nz == 0 {
                if remaining > 1e-9 * (1.0 + p.floor_total_mw()) {
                    return Err(Error::Infeasible(ConstraintClass::EnergyFloor));
                }
            } else if remaining > 0.0 {
                let mut coeff = DVector::zeros(nv);
                for var in 0..nz {
                    coeff[var] = -scale;
                }
                g_rows.push((Vec::new(), coeff, -remaining));
            }
        }

        // Ramps.
        if keep(ConstraintClass::SupplyLimits) {
            for (j, src) in p.sources.iter().enumerate() {
                if let Some(r) = src.ramp_mw {
                    for k in 0..horizon.saturating_sub(1) {
                        let (a0, a1) = (p_vars[k][j], p_vars[k + 1][j]);
                        g_rows.push((vec![(a1, 1.0), (a0, -1.0)], DVector::zeros(nv), r));
                        g_rows.push((vec![(a1, -1.0), (a0, 1.0)], DVector::zeros(nv), r));
                    }
                }
            }
        }

        let mi = g_rows.len();
        qp.g = DMatrix::zeros(mi, nv);
        qp.g_rhs = DVector::zeros(mi);
        for (row, (sparse, dense, rhs)) in g_rows.into_iter().enumerate() {
            if dense.len() == nv {
                qp.g.row_mut(row).copy_from(&dense.transpose());
            } else {
                // Dense part covers only the z block.
                for c in 0..dense.len() {
                    qp.g[(row, c)] = dense[c];
                }
            }
            for (c, v) in sparse {
                qp.g[(row, c)] += v;
            }
            qp.g_rhs[row] = rhs;
        }

        // Equalities: demand definition and power balance per period.
        qp.e = DMatrix::zeros(2 * horizon, nv);
        qp.f = DVector::zeros(2 * horizon);
        let mut balance_rows = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let rd = 2 * k;
            qp.e[(rd, d_vars[k])] = 1.0;
            if k < k0 {
                qp.f[rd] = p.d_other_mw[k] + prefix_dc[k];
            } else {
                for &(_, var) in &z_vars[k - k0] {
                    qp.e[(rd, var)] = -scale;
                }
                qp.f[rd] = p.d_other_mw[k];
            }
            let rb = 2 * k + 1;
            for &var in &p_vars[k] {
                qp.e[(rb, var)] = 1.0;
            }
            qp.e[(rb, d_vars[k])] = -1.0;
            balance_rows.push(rb);
        }

        // Bounds on demand and sources.
        for k in 0..horizon {
            if keep(ConstraintClass::FeederLimit) {
                qp.ub[d_vars[k]] = p.feeder_mw;
            }
            if keep(ConstraintClass::SupplyLimits) {
                for (j, src) in p.sources.iter().enumerate() {
                    if let Some(lo) = src.p_min_mw {
                        qp.lb[p_vars[k][j]] = lo;
                    }
                    if let Some(hi) = src.p_max_mw {
                        qp.ub[p_vars[k][j]] = hi;
                    }
                }
            }
        }

        // Objective: supply cost.
        for k in 0..horizon {
            for (j, src) in p.sources.iter().enumerate() {
                let var = p_vars[k][j];
                qp.h[(var, var)] += 2.0 * src.c2;
                qp.c[var] += src.c1;
                constant += src.c0;
            }
        }
        // On-cost of fractional clearing.
        if opts.on_cost && p.mu_w > 0.0 {
            for row in &z_vars {
                for &(i, var) in row {
                    qp.c[var] += p.mu_w * p.w_o.powi(i as i32 + 1);
                }
            }
        }
        if opts.on_cost_bound && p.mu_w > 0.0 {
            let cap = if keep(ConstraintClass::BinCap) { p.b_max.min(1.0) } else { 1.0 };
            let (bounds, _) = mass_bounds(p, x_k0, free, cap);
            for (t, row) in z_vars.iter().enumerate() {
                for &(i, var) in row {
                    let m = bounds[t][i] + bounds[t][i + n];
                    // A floor on m̄ keeps the coefficients moderate; a
                    // smaller coefficient is still an underestimate.
                    qp.c[var] += 2.0 * p.mu_w / m.clamp(0.02, 1.0);
                }
            }
        }
        // Spread penalty over the free part of the trajectory.
        if p.mu_s > 0.0 {
            let b = p.b_avg();
            for t in 1..=free {
                if !p.spread_weighted(k0 + t) {
                    continue;
                }
                let r = x0[t].map(|v| v - b);
                constant += p.mu_s * r.dot(&r);
                if nz > 0 {
                    let st = &s[t];
                    let hz = st.tr_mul(st) * (2.0 * p.mu_s);
                    let cz = st.tr_mul(&r) * (2.0 * p.mu_s);
                    let mut hb = qp.h.view_mut((0, 0), (nz, nz));
                    hb += hz;
                    let mut cb = qp.c.rows_mut(0, nz);
                    cb += cz;
                }
            }
        }

        Ok(Self { qp, k0, z_vars, p_vars, d_vars, balance_rows, x0, s, constant })
    }

    pub fn n_z(&self) -> usize {
        self.z_vars.iter().map(|r| r.len()).sum()
    }

    pub fn objective(&self, sol: &QpSolution) -> f64 {
        sol.objective + self.constant
    }

    pub fn recover(&self, p: &MpcProblem, sol: &QpSolution) -> Recovered {
        let n = p.n_bins();
        let nz = self.n_z();
        let v = sol.x.rows(0, nz).into_owned();
        let z = self
            .z_vars
            .iter()
            .map(|row| {
                let mut out = vec![0.0; n];
                for &(i, var) in row {
                    out[i] = sol.x[var].max(0.0);
                }
                out
            })
            .collect();
        let x = self.x0.iter().zip(self.s.iter()).map(|(x0, s)| x0 + s * &v).collect();
        let pw = self.p_vars.iter().map(|row| row.iter().map(|&var| sol.x[var]).collect()).collect();
        let d = self.d_vars.iter().map(|&var| sol.x[var]).collect();
        let lambda = self.balance_rows.iter().map(|&r| -sol.y[r]).collect();
        Recovered { z, x, p: pw, d, lambda }
    }
}
