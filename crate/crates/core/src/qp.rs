//! Dense convex quadratic programming by a primal-dual interior-point method
//! (Mehrotra predictor-corrector).
//!
//! Problem form:
//!
//! ```text
//! minimize   ½ xᵀHx + cᵀx
//! subject to E x = f,  G x ≤ g,  lb ≤ x ≤ ub
//! ```
//!
//! `H` must be positive semidefinite. Infinite bounds are allowed. Multipliers
//! follow the Lagrangian `½xᵀHx + cᵀx + yᵀ(Ex − f) + zᵀ(Gx − g) − zlᵀ(x − lb)
//! + zuᵀ(x − ub)` with `z, zl, zu ≥ 0`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{ConstraintClass, Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub e: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g: DMatrix<f64>,
    pub g_rhs: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    /// Relative tolerance on primal residuals, dual residuals and the
    /// complementarity gap.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 200 }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub zl: DVector<f64>,
    pub zu: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residuals: KktResiduals,
}

/// Unscaled infinity norms of the KKT residuals at a point.
#[derive(Debug, Clone, Copy, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub equality: f64,
    /// Largest violation of `Gx ≤ g` or of the bounds.
    pub inequality: f64,
    /// Largest complementarity product.
    pub complementarity: f64,
}

impl QpProblem {
    /// An unconstrained problem in `n` variables; callers fill in the parts
    /// they need.
    pub fn new(n: usize) -> Self {
        Self {
            h: DMatrix::zeros(n, n),
            c: DVector::zeros(n),
            e: DMatrix::zeros(0, n),
            f: DVector::zeros(0),
            g: DMatrix::zeros(0, n),
            g_rhs: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.n();
        let ok = self.h.shape() == (n, n)
            && self.e.ncols() == n
            && self.e.nrows() == self.f.len()
            && self.g.ncols() == n
            && self.g.nrows() == self.g_rhs.len()
            && self.lb.len() == n
            && self.ub.len() == n;
        if !ok {
            return Err(Error::Dimension("inconsistent QP dimensions".into()));
        }
        if self.lb.iter().zip(self.ub.iter()).any(|(l, u)| l > u) {
            return Err(Error::Infeasible(ConstraintClass::Unknown));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.c.dot(x)
    }

    /// KKT residuals of a primal-dual point.
    pub fn residuals(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        z: &DVector<f64>,
        zl: &DVector<f64>,
        zu: &DVector<f64>,
    ) -> KktResiduals {
        let rd = &self.h * x + &self.c + self.e.tr_mul(y) + self.g.tr_mul(z) - zl + zu;
        let re = &self.e * x - &self.f;
        let gx = &self.g * x;
        let mut ineq: f64 = 0.0;
        let mut comp: f64 = 0.0;
        for i in 0..gx.len() {
            ineq = ineq.max(gx[i] - self.g_rhs[i]);
            comp = comp.max((z[i] * (self.g_rhs[i] - gx[i])).abs());
        }
        for j in 0..x.len() {
            if self.lb[j].is_finite() {
                ineq = ineq.max(self.lb[j] - x[j]);
                comp = comp.max((zl[j] * (x[j] - self.lb[j])).abs());
            }
            if self.ub[j].is_finite() {
                ineq = ineq.max(x[j] - self.ub[j]);
                comp = comp.max((zu[j] * (self.ub[j] - x[j])).abs());
            }
        }
        KktResiduals { stationarity: rd.amax(), equality: re.amax(), inequality: ineq.max(0.0), complementarity: comp }
    }
}

/// Factor on the tolerance for the relative KKT error accepted once progress
/// stalls.
const ACCEPTABLE: f64 = 100.0;

/// Solve a convex QP.
pub fn solve_qp(p: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    p.check()?;
    Ipm::new(p).run(settings)
}

struct Ipm<'a> {
    p: &'a QpProblem,
    gt: DMatrix<f64>,
    /// Elementwise absolute values of `Eᵀ` and `Gᵀ`, for scaling the
    /// stationarity test by the size of the terms that cancel in it.
    et_abs: DMatrix<f64>,
    gt_abs: DMatrix<f64>,
    /// Nonzeros of each inequality row when the rows are sparse enough for
    /// `GᵀWG` to be assembled from outer products.
    g_sparse: Option<Vec<Vec<(usize, f64)>>>,
    h_abs: DMatrix<f64>,
    has_lb: Vec<bool>,
    has_ub: Vec<bool>,
    n_comp: usize,
}

/// Search direction.
struct Dir {
    dx: DVector<f64>,
    dy: DVector<f64>,
    ds: DVector<f64>,
    dz: DVector<f64>,
    dzl: DVector<f64>,
    dzu: DVector<f64>,
}

/// Factorization of the reduced Newton system.
struct Factor {
    k: DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    schur: Option<Cholesky<f64, nalgebra::Dyn>>,
    kinv_et: DMatrix<f64>,
}

impl<'a> Ipm<'a> {
    fn new(p: &'a QpProblem) -> Self {
        let has_lb: Vec<bool> = p.lb.iter().map(|v| v.is_finite()).collect();
        let has_ub: Vec<bool> = p.ub.iter().map(|v| v.is_finite()).collect();
        let n_comp = p.g.nrows() + has_lb.iter().filter(|b| **b).count() + has_ub.iter().filter(|b| **b).count();
        let rows: Vec<Vec<(usize, f64)>> =
            p.g.row_iter()
                .map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect())
                .collect();
        let work: usize = rows.iter().map(|r| r.len() * r.len()).sum();
        let g_sparse = (2 * work < p.g.nrows() * p.n() * p.n()).then_some(rows);
        Self {
            p,
            gt: p.g.transpose(),
            et_abs: p.e.transpose().abs(),
            gt_abs: p.g.transpose().abs(),
            g_sparse,
            h_abs: p.h.abs(),
            has_lb,
            has_ub,
            n_comp,
        }
    }

    fn run(&self, settings: &QpSettings) -> Result<QpSolution> {
        let p = self.p;
        let n = p.n();
        let me = p.f.len();
        let mi = p.g_rhs.len();

        // Start strictly inside the bounds.
        let mut x = DVector::from_fn(n, |j, _| {
            let (l, u) = (p.lb[j], p.ub[j]);
            match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => l + 1.0f64.max(0.1 * l.abs()),
                (false, true) => u - 1.0f64.max(0.1 * u.abs()),
                (false, false) => 0.0,
            }
        });
        for j in 0..n {
            if self.has_lb[j] && self.has_ub[j] && p.ub[j] - p.lb[j] <= 0.0 {
                // Fixed variable: keep a tiny interior so the barrier exists.
                x[j] = p.lb[j];
            }
        }
        let mut y = DVector::zeros(me);
        let mut s = (&p.g_rhs - &p.g * &x).map(|v| v.max(1.0));
        let mut z = DVector::from_element(mi, 1.0);
        let mut zl = DVector::from_fn(n, |j, _| if self.has_lb[j] { 1.0 } else { 0.0 });
        let mut zu = DVector::from_fn(n, |j, _| if self.has_ub[j] { 1.0 } else { 0.0 });
        // Let bound multipliers absorb the gradient at the start so that
        // widely scaled costs do not leave a huge initial dual residual.
        let grad0 = &p.h * &x + &p.c;
        for j in 0..n {
            if grad0[j] > 0.0 && self.has_lb[j] {
                zl[j] += grad0[j];
            } else if grad0[j] < 0.0 && self.has_ub[j] {
                zu[j] -= grad0[j];
            }
        }

        let fixed: Vec<bool> = (0..n).map(|j| self.has_lb[j] && self.has_ub[j] && p.ub[j] - p.lb[j] <= 0.0).collect();
        if fixed.iter().any(|f| *f) {
            return self.solve_with_fixed(settings, &fixed);
        }

        let c_scale = 1.0 + p.c.amax();
        let f_scale = 1.0 + p.f.amax();
        let g_scale = 1.0 + p.g_rhs.iter().filter(|v| v.is_finite()).fold(0.0f64, |a, v| a.max(v.abs()));

        let mut best_infeas = f64::INFINITY;
        let mut stall = 0usize;
        let mut best: Option<(f64, usize, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> = None;
        let mut since_best = 0usize;

        for iter in 0..settings.max_iter {
            let tl = DVector::from_fn(n, |j, _| if self.has_lb[j] { x[j] - p.lb[j] } else { 1.0 });
            let tu = DVector::from_fn(n, |j, _| if self.has_ub[j] { p.ub[j] - x[j] } else { 1.0 });

            let hx = &p.h * &x;
            let ety = p.e.tr_mul(&y);
            let gtz = &self.gt * &z;
            let rd = &hx + &p.c + &ety + &gtz - &zl + &zu;
            let re = &p.e * &x - &p.f;
            let rg = &p.g * &x + &s - &p.g_rhs;

            let mu = self.mu(&s, &z, &tl, &zl, &tu, &zu);

            // Per-component stationarity test, relative to the largest term
            // entering the component.
            let ety_abs = &self.et_abs * y.abs();
            let gtz_abs = &self.gt_abs * z.abs();
            let hx_abs = &self.h_abs * x.abs();
            let dual_rel = (0..n)
                .map(|j| {
                    let scale = 1.0 + p.c[j].abs().max(hx_abs[j]).max(ety_abs[j]).max(gtz_abs[j]).max(zl[j]).max(zu[j]);
                    rd[j].abs() / scale
                })
                .fold(0.0, f64::max);
            let primal_e = re.amax();
            let primal_g = rg.amax();
            let primal_rel = (primal_e / f_scale).max(primal_g / g_scale);
            let comp_rel = mu / (1.0 + p.objective(&x).abs() / (self.n_comp.max(1) as f64)).min(c_scale);
            let merit = dual_rel.max(primal_rel).max(comp_rel);
            if merit.is_finite() && merit < best.as_ref().map_or(f64::INFINITY, |b| b.0) {
                best = Some((merit, iter, x.clone(), y.clone(), z.clone(), zl.clone(), zu.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            if merit <= settings.tol {
                return Ok(self.package(x, y, z, zl, zu, iter));
            }
            // Progress has stopped at a point that is converged to a looser
            // level: round-off in the Newton system limits further gains.
            let stagnant = since_best > 8 || mu < f64::MIN_POSITIVE.sqrt();
            if stagnant {
                if let Some((m, it, bx, by, bz, bzl, bzu)) = best.take() {
                    if m <= ACCEPTABLE * settings.tol {
                        return Ok(self.package(bx, by, bz, bzl, bzu, it));
                    }
                    best = Some((m, it, bx, by, bz, bzl, bzu));
                }
            }

            // Infeasibility: primal residual stalls while multipliers blow up.
            let infeas = primal_e / f_scale + primal_g / g_scale;
            if infeas < 0.9 * best_infeas {
                best_infeas = infeas;
                stall = 0;
            } else {
                stall += 1;
            }
            let dual_size = y.amax().max(z.amax()).max(zl.amax()).max(zu.amax());
            if infeas > 1e3 * settings.tol && (dual_size > 1e12 * c_scale || (iter > 10 && stall > 15)) {
                return Err(Error::Infeasible(ConstraintClass::Unknown));
            }

            let fac = self.factor(&s, &z, &tl, &zl, &tu, &zu)?;

            // Predictor.
            let rc_g = -s.component_mul(&z);
            let rc_l = DVector::from_fn(n, |j, _| if self.has_lb[j] { -tl[j] * zl[j] } else { 0.0 });
            let rc_u = DVector::from_fn(n, |j, _| if self.has_ub[j] { -tu[j] * zu[j] } else { 0.0 });
            let aff = self.direction(&fac, &rd, &re, &rg, &rc_g, &rc_l, &rc_u, &s, &z, &tl, &zl, &tu, &zu);
            let alpha_aff = self.step_length(&aff, &s, &z, &tl, &zl, &tu, &zu, 1.0);
            let mu_aff = {
                let s2 = &s + alpha_aff * &aff.ds;
                let z2 = &z + alpha_aff * &aff.dz;
                let tl2 = &tl + alpha_aff * &aff.dx;
                let tu2 = &tu - alpha_aff * &aff.dx;
                let zl2 = &zl + alpha_aff * &aff.dzl;
                let zu2 = &zu + alpha_aff * &aff.dzu;
                self.mu(&s2, &z2, &tl2, &zl2, &tu2, &zu2)
            };
            let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };

            // Corrector.
            let sm = sigma * mu;
            let rc_g = DVector::from_fn(mi, |i, _| sm - s[i] * z[i] - aff.ds[i] * aff.dz[i]);
            let rc_l =
                DVector::from_fn(
                    n,
                    |j, _| {
                        if self.has_lb[j] {
                            sm - tl[j] * zl[j] - aff.dx[j] * aff.dzl[j]
                        } else {
                            0.0
                        }
                    },
                );
            let rc_u =
                DVector::from_fn(
                    n,
                    |j, _| {
                        if self.has_ub[j] {
                            sm - tu[j] * zu[j] + aff.dx[j] * aff.dzu[j]
                        } else {
                            0.0
                        }
                    },
                );
            let d = self.direction(&fac, &rd, &re, &rg, &rc_g, &rc_l, &rc_u, &s, &z, &tl, &zl, &tu, &zu);
            let alpha = self.step_length(&d, &s, &z, &tl, &zl, &tu, &zu, 0.995);

            x += alpha * &d.dx;
            y += alpha * &d.dy;
            s += alpha * &d.ds;
            z += alpha * &d.dz;
            zl += alpha * &d.dzl;
            zu += alpha * &d.dzu;
            for j in 0..n {
                if !self.has_lb[j] {
                    zl[j] = 0.0;
                }
                if !self.has_ub[j] {
                    zu[j] = 0.0;
                }
            }
            let finite = [&x, &y, &s, &z, &zl, &zu].iter().all(|v| v.iter().all(|e| e.is_finite()));
            if !finite {
                if let Some((m, it, bx, by, bz, bzl, bzu)) = best.take() {
                    if m <= ACCEPTABLE * settings.tol {
                        return Ok(self.package(bx, by, bz, bzl, bzu, it));
                    }
                }
                // Divergence while still primal infeasible is the usual
                // signature of an empty feasible set.
                if best_infeas > 1e3 * settings.tol {
                    return Err(Error::Infeasible(ConstraintClass::Unknown));
                }
                return Err(Error::Numerical("interior-point iterate diverged".into()));
            }
        }
        if let Some((m, it, bx, by, bz, bzl, bzu)) = best {
            if m <= ACCEPTABLE * settings.tol {
                return Ok(self.package(bx, by, bz, bzl, bzu, it));
            }
        }
        Err(Error::MaxIterations { iterations: settings.max_iter })
    }

    fn package(
        &self,
        x: DVector<f64>,
        y: DVector<f64>,
        z: DVector<f64>,
        mut zl: DVector<f64>,
        mut zu: DVector<f64>,
        iterations: usize,
    ) -> QpSolution {
        let p = self.p;
        for j in 0..p.n() {
            if !self.has_lb[j] {
                zl[j] = 0.0;
            }
            if !self.has_ub[j] {
                zu[j] = 0.0;
            }
        }
        let residuals = p.residuals(&x, &y, &z, &zl, &zu);
        QpSolution { objective: p.objective(&x), x, y, z, zl, zu, iterations, residuals }
    }

    /// Variables with `lb == ub` are substituted out and the reduced problem
    /// is solved; multipliers of the fixed bounds are recovered from
    /// stationarity.
    fn solve_with_fixed(&self, settings: &QpSettings, fixed: &[bool]) -> Result<QpSolution> {
        let p = self.p;
        let n = p.n();
        let free: Vec<usize> = (0..n).filter(|&j| !fixed[j]).collect();
        let xf = DVector::from_fn(n, |j, _| if fixed[j] { p.lb[j] } else { 0.0 });
        let nf = free.len();
        let mut r = QpProblem::new(nf);
        let hxf = &p.h * &xf;
        for (a, &ja) in free.iter().enumerate() {
            r.c[a] = p.c[ja] + hxf[ja];
            r.lb[a] = p.lb[ja];
            r.ub[a] = p.ub[ja];
            for (b, &jb) in free.iter().enumerate() {
                r.h[(a, b)] = p.h[(ja, jb)];
            }
        }
        r.e = DMatrix::from_fn(p.e.nrows(), nf, |i, a| p.e[(i, free[a])]);
        r.f = &p.f - &p.e * &xf;
        r.g = DMatrix::from_fn(p.g.nrows(), nf, |i, a| p.g[(i, free[a])]);
        r.g_rhs = &p.g_rhs - &p.g * &xf;
        let sub = if nf == 0 {
            let infeasible = r.f.amax() > settings.tol * (1.0 + p.f.amax())
                || r.g_rhs.iter().any(|v| *v < -settings.tol * (1.0 + p.g_rhs.amax()));
            if infeasible {
                return Err(Error::Infeasible(ConstraintClass::Unknown));
            }
            QpSolution {
                x: DVector::zeros(0),
                y: DVector::zeros(p.e.nrows()),
                z: DVector::zeros(p.g.nrows()),
                zl: DVector::zeros(0),
                zu: DVector::zeros(0),
                objective: 0.0,
                iterations: 0,
                residuals: KktResiduals::default(),
            }
        } else {
            solve_qp(&r, settings)?
        };
        let mut x = xf;
        let mut zl = DVector::zeros(n);
        let mut zu = DVector::zeros(n);
        for (a, &j) in free.iter().enumerate() {
            x[j] = sub.x[a];
            zl[j] = sub.zl[a];
            zu[j] = sub.zu[a];
        }
        let rd = &p.h * &x + &p.c + p.e.tr_mul(&sub.y) + p.g.tr_mul(&sub.z);
        for j in (0..n).filter(|&j| fixed[j]) {
            // rd − zl + zu = 0 with only one of them nonzero.
            if rd[j] >= 0.0 {
                zl[j] = rd[j];
            } else {
                zu[j] = -rd[j];
            }
        }
        let residuals = p.residuals(&x, &sub.y, &sub.z, &zl, &zu);
        Ok(QpSolution {
            objective: p.objective(&x),
            x,
            y: sub.y,
            z: sub.z,
            zl,
            zu,
            iterations: sub.iterations,
            residuals,
        })
    }

    fn mu(
        &self,
        s: &DVector<f64>,
        z: &DVector<f64>,
        tl: &DVector<f64>,
        zl: &DVector<f64>,
        tu: &DVector<f64>,
        zu: &DVector<f64>,
    ) -> f64 {
        if self.n_comp == 0 {
            return 0.0;
        }
        let mut total = s.dot(z);
        for j in 0..tl.len() {
            if self.has_lb[j] {
                total += tl[j] * zl[j];
            }
            if self.has_ub[j] {
                total += tu[j] * zu[j];
            }
        }
        total / self.n_comp as f64
    }

    #[allow(clippy::too_many_arguments)]
    fn factor(
        &self,
        s: &DVector<f64>,
        z: &DVector<f64>,
        tl: &DVector<f64>,
        zl: &DVector<f64>,
        tu: &DVector<f64>,
        zu: &DVector<f64>,
    ) -> Result<Factor> {
        let p = self.p;
        let n = p.n();
        let mut k = p.h.clone();
        if let Some(rows) = &self.g_sparse {
            for (i, row) in rows.iter().enumerate() {
                let w = z[i] / s[i];
                for &(a, va) in row {
                    let wa = w * va;
                    for &(b, vb) in row {
                        k[(a, b)] += wa * vb;
                    }
                }
            }
        } else if p.g.nrows() > 0 {
            let w = DVector::from_fn(s.len(), |i, _| (z[i] / s[i]).sqrt());
            let mut gs = p.g.clone();
            for (i, mut row) in gs.row_iter_mut().enumerate() {
                row *= w[i];
            }
            k.gemm_tr(1.0, &gs, &gs, 1.0);
        }
        for j in 0..n {
            if self.has_lb[j] {
                k[(j, j)] += zl[j] / tl[j];
            }
            if self.has_ub[j] {
                k[(j, j)] += zu[j] / tu[j];
            }
        }
        let diag_max = (0..n).map(|j| k[(j, j)].abs()).fold(1.0f64, f64::max);
        let mut reg = 0.0;
        let chol = loop {
            let mut kr = k.clone();
            if reg > 0.0 {
                for j in 0..n {
                    kr[(j, j)] += reg;
                }
            }
            if let Some(c) = Cholesky::new(kr) {
                break c;
            }
            reg = if reg == 0.0 { 1e-14 * diag_max } else { reg * 100.0 };
            if reg > 1e-2 * diag_max {
                return Err(Error::Numerical("reduced KKT matrix is not positive definite".into()));
            }
        };
        let (schur, kinv_et) = if p.e.nrows() > 0 {
            let kinv_et = chol.solve(&p.e.transpose());
            let mut sm = &p.e * &kinv_et;
            let sd = (0..sm.nrows()).map(|i| sm[(i, i)].abs()).fold(0.0f64, f64::max).max(1e-300);
            let mut sreg = 0.0;
            let sc = loop {
                let mut trial = sm.clone();
                for i in 0..trial.nrows() {
                    trial[(i, i)] += sreg;
                }
                if let Some(c) = Cholesky::new(trial) {
                    break c;
                }
                sreg = if sreg == 0.0 { 1e-14 * sd } else { sreg * 100.0 };
                if sreg > 1e-2 * sd {
                    return Err(Error::Numerical("equality constraints are rank deficient".into()));
                }
            };
            sm.fill(0.0);
            (Some(sc), kinv_et)
        } else {
            (None, DMatrix::zeros(n, 0))
        };
        Ok(Factor { k, chol, schur, kinv_et })
    }

    /// Solve `[K Eᵀ; E 0] [dx; dy] = [r1; r2]` with two refinement sweeps.
    fn solve_reduced(&self, fac: &Factor, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = self.p;
        let once = |a: &DVector<f64>, b: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
            let kinv_a = fac.chol.solve(a);
            match &fac.schur {
                Some(sc) => {
                    let dy = sc.solve(&(&p.e * &kinv_a - b));
                    let dx = kinv_a - &fac.kinv_et * &dy;
                    (dx, dy)
                }
                None => (kinv_a, DVector::zeros(0)),
            }
        };
        let (mut dx, mut dy) = once(r1, r2);
        for _ in 0..2 {
            let res1 = r1 - (&fac.k * &dx + p.e.tr_mul(&dy));
            let res2 = r2 - &p.e * &dx;
            if res1.amax() <= 1e-15 * (1.0 + r1.amax()) && res2.amax() <= 1e-15 * (1.0 + r2.amax()) {
                break;
            }
            let (cx, cy) = once(&res1, &res2);
            dx += cx;
            dy += cy;
        }
        (dx, dy)
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        fac: &Factor,
        rd: &DVector<f64>,
        re: &DVector<f64>,
        rg: &DVector<f64>,
        rc_g: &DVector<f64>,
        rc_l: &DVector<f64>,
        rc_u: &DVector<f64>,
        s: &DVector<f64>,
        z: &DVector<f64>,
        tl: &DVector<f64>,
        zl: &DVector<f64>,
        tu: &DVector<f64>,
        zu: &DVector<f64>,
    ) -> Dir {
        let p = self.p;
        let n = p.n();
        let mi = s.len();
        let w = DVector::from_fn(mi, |i, _| (rc_g[i] + z[i] * rg[i]) / s[i]);
        let mut r1 = -rd - &self.gt * &w;
        for j in 0..n {
            if self.has_lb[j] {
                r1[j] += rc_l[j] / tl[j];
            }
            if self.has_ub[j] {
                r1[j] -= rc_u[j] / tu[j];
            }
        }
        let r2 = -re;
        let (dx, dy) = self.solve_reduced(fac, &r1, &r2);
        let gdx = &p.g * &dx;
        let ds = DVector::from_fn(mi, |i, _| -rg[i] - gdx[i]);
        let dz = DVector::from_fn(mi, |i, _| (rc_g[i] - z[i] * ds[i]) / s[i]);
        let dzl = DVector::from_fn(n, |j, _| if self.has_lb[j] { (rc_l[j] - zl[j] * dx[j]) / tl[j] } else { 0.0 });
        let dzu = DVector::from_fn(n, |j, _| if self.has_ub[j] { (rc_u[j] + zu[j] * dx[j]) / tu[j] } else { 0.0 });
        Dir { dx, dy, ds, dz, dzl, dzu }
    }

    #[allow(clippy::too_many_arguments)]
    fn step_length(
        &self,
        d: &Dir,
        s: &DVector<f64>,
        z: &DVector<f64>,
        tl: &DVector<f64>,
        zl: &DVector<f64>,
        tu: &DVector<f64>,
        zu: &DVector<f64>,
        fraction: f64,
    ) -> f64 {
        let mut alpha: f64 = 1.0 / fraction;
        let mut limit = |v: f64, dv: f64| {
            if dv < 0.0 {
                alpha = alpha.min(-v / dv);
            }
        };
        for i in 0..s.len() {
            limit(s[i], d.ds[i]);
            limit(z[i], d.dz[i]);
        }
        for j in 0..tl.len() {
            if self.has_lb[j] {
                limit(tl[j], d.dx[j]);
                limit(zl[j], d.dzl[j]);
            }
            if self.has_ub[j] {
                limit(tu[j], -d.dx[j]);
                limit(zu[j], d.dzu[j]);
            }
        }
        (fraction * alpha).min(1.0)
    }
}
