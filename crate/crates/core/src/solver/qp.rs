//! Box-constrained QPs with optimal-control structure.
//!
//! ```text
//! min  sum_n 0.5 [x;u]' [Q S'; S R] [x;u] + q'x + r'u  +  0.5 x_N' Q_N x_N + q_N' x_N
//! s.t. x_0 = x_init
//!      x_{n+1} = A_n x_n + B_n u_n + c_n
//!      u_lo <= u_n <= u_hi,  x_lo <= x_n <= x_hi  (n >= 1)
//! ```
//!
//! Solved by a Mehrotra predictor-corrector interior-point method whose
//! Newton systems are factorized by a backward Riccati recursion, followed
//! by an active-set refinement that recovers the exact solution once the
//! active inputs are identified.
//!
//! Multipliers follow `grad f + G' pi + z_u - z_l = 0`, where `pi[n+1]`
//! belongs to the dynamics constraint of interval `n` (entering as
//! `A x + B u + c - x_{n+1}`) and `pi[0]` to the initial-state constraint
//! (entering as `x_init - x_0`).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, Const, SMatrix, SVector};
use serde::{Deserialize, Serialize};

// Test builds link std, whose inherent float methods shadow the trait.
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct QpStage<const NX: usize, const NU: usize> {
    pub a: SMatrix<f64, NX, NX>,
    pub b: SMatrix<f64, NX, NU>,
    pub c: SVector<f64, NX>,
    pub q: SMatrix<f64, NX, NX>,
    /// Cross term, `NU x NX`.
    pub s: SMatrix<f64, NU, NX>,
    pub r: SMatrix<f64, NU, NU>,
    pub qv: SVector<f64, NX>,
    pub rv: SVector<f64, NU>,
    /// State bounds; ignored at node 0, where the state is fixed.
    pub x_lo: SVector<f64, NX>,
    pub x_hi: SVector<f64, NX>,
    pub u_lo: SVector<f64, NU>,
    pub u_hi: SVector<f64, NU>,
}

impl<const NX: usize, const NU: usize> QpStage<NX, NU> {
    /// Zero cost, zero dynamics, no bounds.
    pub fn empty() -> Self {
        Self {
            a: SMatrix::zeros(),
            b: SMatrix::zeros(),
            c: SVector::zeros(),
            q: SMatrix::zeros(),
            s: SMatrix::zeros(),
            r: SMatrix::zeros(),
            qv: SVector::zeros(),
            rv: SVector::zeros(),
            x_lo: SVector::repeat(f64::NEG_INFINITY),
            x_hi: SVector::repeat(f64::INFINITY),
            u_lo: SVector::repeat(f64::NEG_INFINITY),
            u_hi: SVector::repeat(f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpQp<const NX: usize, const NU: usize> {
    pub stages: Vec<QpStage<NX, NU>>,
    pub qn: SMatrix<f64, NX, NX>,
    pub qvn: SVector<f64, NX>,
    pub xn_lo: SVector<f64, NX>,
    pub xn_hi: SVector<f64, NX>,
    pub x_init: SVector<f64, NX>,
}

impl<const NX: usize, const NU: usize> OcpQp<NX, NU> {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    fn x_bounds(&self, n: usize) -> (SVector<f64, NX>, SVector<f64, NX>) {
        let inf = SVector::repeat(f64::INFINITY);
        if n == 0 {
            (-inf, inf)
        } else if n == self.stages.len() {
            (self.xn_lo, self.xn_hi)
        } else {
            (self.stages[n].x_lo, self.stages[n].x_hi)
        }
    }

    fn bounds_conflict(&self) -> bool {
        let bad = |lo: &[f64], hi: &[f64]| lo.iter().zip(hi).any(|(l, h)| l > h || l.is_nan() || h.is_nan());
        self.stages.iter().any(|s| bad(s.u_lo.as_slice(), s.u_hi.as_slice()))
            || (1..=self.horizon()).any(|n| {
                let (lo, hi) = self.x_bounds(n);
                bad(lo.as_slice(), hi.as_slice())
            })
    }

    /// Objective value at a primal point.
    pub fn objective(&self, xs: &[SVector<f64, NX>], us: &[SVector<f64, NU>]) -> f64 {
        let mut f = 0.0;
        for (n, st) in self.stages.iter().enumerate() {
            let (x, u) = (&xs[n], &us[n]);
            f += 0.5 * x.dot(&(st.q * x)) + u.dot(&(st.s * x)) + 0.5 * u.dot(&(st.r * u));
            f += st.qv.dot(x) + st.rv.dot(u);
        }
        let xn = &xs[self.horizon()];
        f + 0.5 * xn.dot(&(self.qn * xn)) + self.qvn.dot(xn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpMode {
    /// Aggressive steps to the boundary.
    Speed,
    /// Conservative step length and more iterations.
    Robust,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub mode: QpMode,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tol: 1e-3, max_iter: 50, mode: QpMode::Robust }
    }
}

impl QpSettings {
    fn step_fraction(&self) -> f64 {
        match self.mode {
            QpMode::Speed => 0.995,
            QpMode::Robust => 0.95,
        }
    }

    fn iteration_limit(&self) -> usize {
        match self.mode {
            QpMode::Speed => self.max_iter,
            QpMode::Robust => self.max_iter * 2,
        }
    }
}

/// Largest violations of the optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub equality: f64,
    pub inequality: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.equality).max(self.inequality).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<const NX: usize, const NU: usize> {
    pub xs: Vec<SVector<f64, NX>>,
    pub us: Vec<SVector<f64, NU>>,
    /// `N + 1` equality multipliers, see the module docs.
    pub pis: Vec<SVector<f64, NX>>,
    /// Net bound multipliers `z_u - z_l` per node; node 0 is always zero.
    pub x_mult: Vec<SVector<f64, NX>>,
    pub u_mult: Vec<SVector<f64, NU>>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

/// Riccati factorization of the equality-constrained LQ subproblem, possibly
/// with some input components fixed.
#[derive(Debug, Clone)]
struct Factorization<const NX: usize, const NU: usize> {
    /// Cost-to-go Hessians, `N + 1` entries.
    p: Vec<SMatrix<f64, NX, NX>>,
    gain: Vec<SMatrix<f64, NU, NX>>,
    rt: Vec<SMatrix<f64, NU, NU>>,
    st: Vec<SMatrix<f64, NU, NX>>,
    chol: Vec<Cholesky<f64, Const<NU>>>,
    fixed: Vec<[bool; NU]>,
}

/// Affine terms of the backward pass.
#[derive(Debug, Clone, PartialEq)]
struct VectorPass<const NX: usize, const NU: usize> {
    p: Vec<SVector<f64, NX>>,
    feedforward: Vec<SVector<f64, NU>>,
}

/// Per-stage Hessians of an LQ subproblem.
struct LqHessians<'a, const NX: usize, const NU: usize> {
    qp: &'a OcpQp<NX, NU>,
    dx: &'a [SVector<f64, NX>],
    du: &'a [SVector<f64, NU>],
}

fn factorize<const NX: usize, const NU: usize>(
    h: &LqHessians<'_, NX, NU>,
    fixed: &[[bool; NU]],
) -> Option<Factorization<NX, NU>> {
    let qp = h.qp;
    let n_stages = qp.horizon();
    let mut p = vec![SMatrix::<f64, NX, NX>::zeros(); n_stages + 1];
    let mut gain = vec![SMatrix::<f64, NU, NX>::zeros(); n_stages];
    let mut rts = vec![SMatrix::<f64, NU, NU>::zeros(); n_stages];
    let mut sts = vec![SMatrix::<f64, NU, NX>::zeros(); n_stages];
    let mut chols = Vec::with_capacity(n_stages);

    p[n_stages] = qp.qn + SMatrix::from_diagonal(&h.dx[n_stages]);
    for n in (0..n_stages).rev() {
        let st = &qp.stages[n];
        let pn = &p[n + 1];
        let pa = pn * st.a;
        let qt = st.q + SMatrix::from_diagonal(&h.dx[n]) + st.a.transpose() * pa;
        let stt = st.s + st.b.transpose() * pa;
        let rt = st.r + SMatrix::from_diagonal(&h.du[n]) + st.b.transpose() * pn * st.b;

        let mut rt_red = rt;
        let mut st_red = stt;
        for j in 0..NU {
            if fixed[n][j] {
                for k in 0..NU {
                    rt_red[(j, k)] = 0.0;
                    rt_red[(k, j)] = 0.0;
                }
                rt_red[(j, j)] = 1.0;
                for k in 0..NX {
                    st_red[(j, k)] = 0.0;
                }
            }
        }
        let rt_red = 0.5 * (rt_red + rt_red.transpose());
        let chol = Cholesky::new(rt_red)?;
        let k = -chol.solve(&st_red);
        let kt_st = k.transpose() * stt;
        let pnew = qt + kt_st + kt_st.transpose() + k.transpose() * rt * k;
        p[n] = 0.5 * (pnew + pnew.transpose());
        gain[n] = k;
        rts[n] = rt;
        sts[n] = stt;
        chols.push(chol);
    }
    chols.reverse();
    Some(Factorization { p, gain, rt: rts, st: sts, chol: chols, fixed: fixed.to_vec() })
}

/// Backward pass for the affine terms given linear cost terms `(gq, gr)`,
/// dynamics offsets `cs` and, for fixed inputs, their values in `fixed_val`.
fn vector_pass<const NX: usize, const NU: usize>(
    qp: &OcpQp<NX, NU>,
    f: &Factorization<NX, NU>,
    gq: &[SVector<f64, NX>],
    gr: &[SVector<f64, NU>],
    cs: &[SVector<f64, NX>],
    fixed_val: &[SVector<f64, NU>],
) -> VectorPass<NX, NU> {
    let n_stages = qp.horizon();
    let mut pv = vec![SVector::<f64, NX>::zeros(); n_stages + 1];
    let mut ff = vec![SVector::<f64, NU>::zeros(); n_stages];
    pv[n_stages] = gq[n_stages];
    for n in (0..n_stages).rev() {
        let st = &qp.stages[n];
        let w = f.p[n + 1] * cs[n] + pv[n + 1];
        let qt = gq[n] + st.a.transpose() * w;
        let rt_vec = gr[n] + st.b.transpose() * w;
        let mut rhs = rt_vec;
        for j in 0..NU {
            if f.fixed[n][j] {
                for i in 0..NU {
                    if !f.fixed[n][i] {
                        rhs[i] += f.rt[n][(i, j)] * fixed_val[n][j];
                    }
                }
            }
        }
        for j in 0..NU {
            if f.fixed[n][j] {
                rhs[j] = -fixed_val[n][j];
            }
        }
        let k = -f.chol[n].solve(&rhs);
        let kk = &f.gain[n];
        pv[n] = qt + kk.transpose() * rt_vec + (f.st[n].transpose() + kk.transpose() * f.rt[n]) * k;
        ff[n] = k;
    }
    VectorPass { p: pv, feedforward: ff }
}

struct Trajectory<const NX: usize, const NU: usize> {
    xs: Vec<SVector<f64, NX>>,
    us: Vec<SVector<f64, NU>>,
    pis: Vec<SVector<f64, NX>>,
}

fn forward_pass<const NX: usize, const NU: usize>(
    qp: &OcpQp<NX, NU>,
    f: &Factorization<NX, NU>,
    v: &VectorPass<NX, NU>,
    cs: &[SVector<f64, NX>],
    x_init: &SVector<f64, NX>,
) -> Trajectory<NX, NU> {
    let n_stages = qp.horizon();
    let mut xs = Vec::with_capacity(n_stages + 1);
    let mut us = Vec::with_capacity(n_stages);
    let mut pis = Vec::with_capacity(n_stages + 1);
    let mut x = *x_init;
    for n in 0..n_stages {
        let st = &qp.stages[n];
        let u = f.gain[n] * x + v.feedforward[n];
        pis.push(f.p[n] * x + v.p[n]);
        xs.push(x);
        us.push(u);
        x = st.a * x + st.b * u + cs[n];
    }
    pis.push(f.p[n_stages] * x + v.p[n_stages]);
    xs.push(x);
    Trajectory { xs, us, pis }
}

/// Slack/dual pair storage for one block of bounded variables.
#[derive(Debug, Clone, Copy)]
struct BoxDuals<const D: usize> {
    lo: SVector<f64, D>,
    hi: SVector<f64, D>,
    tl: SVector<f64, D>,
    tu: SVector<f64, D>,
    zl: SVector<f64, D>,
    zu: SVector<f64, D>,
}

impl<const D: usize> BoxDuals<D> {
    fn new(lo: SVector<f64, D>, hi: SVector<f64, D>, v: &SVector<f64, D>) -> Self {
        let mut b = Self {
            lo,
            hi,
            tl: SVector::repeat(1.0),
            tu: SVector::repeat(1.0),
            zl: SVector::zeros(),
            zu: SVector::zeros(),
        };
        for i in 0..D {
            if lo[i].is_finite() {
                b.tl[i] = (v[i] - lo[i]).max(1.0);
                b.zl[i] = 1.0;
            }
            if hi[i].is_finite() {
                b.tu[i] = (hi[i] - v[i]).max(1.0);
                b.zu[i] = 1.0;
            }
        }
        b
    }

    fn count(&self) -> usize {
        (0..D).map(|i| self.lo[i].is_finite() as usize + self.hi[i].is_finite() as usize).sum()
    }

    fn complementarity_sum(&self) -> f64 {
        (0..D)
            .map(|i| {
                let l = if self.lo[i].is_finite() { self.tl[i] * self.zl[i] } else { 0.0 };
                let u = if self.hi[i].is_finite() { self.tu[i] * self.zu[i] } else { 0.0 };
                l + u
            })
            .sum()
    }

    /// Primal residuals `(v - lo - tl, hi - v - tu)`, zero where unbounded.
    fn primal_residuals(&self, v: &SVector<f64, D>) -> (SVector<f64, D>, SVector<f64, D>) {
        let mut rl = SVector::zeros();
        let mut ru = SVector::zeros();
        for i in 0..D {
            if self.lo[i].is_finite() {
                rl[i] = v[i] - self.lo[i] - self.tl[i];
            }
            if self.hi[i].is_finite() {
                ru[i] = self.hi[i] - v[i] - self.tu[i];
            }
        }
        (rl, ru)
    }

    fn net(&self) -> SVector<f64, D> {
        self.zu - self.zl
    }

    fn barrier_diagonal(&self) -> SVector<f64, D> {
        SVector::from_fn(|i, _| {
            let l = if self.lo[i].is_finite() { self.zl[i] / self.tl[i] } else { 0.0 };
            let u = if self.hi[i].is_finite() { self.zu[i] / self.tu[i] } else { 0.0 };
            l + u
        })
    }

    /// Gradient modification for the reduced Newton system with
    /// complementarity targets `cl = sigma mu - tl zl - corr_l` (and `cu`).
    fn gradient_shift(&self, v: &SVector<f64, D>, cl: &SVector<f64, D>, cu: &SVector<f64, D>) -> SVector<f64, D> {
        let (rl, ru) = self.primal_residuals(v);
        SVector::from_fn(|i, _| {
            let mut g = 0.0;
            if self.lo[i].is_finite() {
                g -= cl[i] / self.tl[i] - self.zl[i] / self.tl[i] * rl[i];
            }
            if self.hi[i].is_finite() {
                g -= -cu[i] / self.tu[i] + self.zu[i] / self.tu[i] * ru[i];
            }
            g
        })
    }

    /// Slack and dual directions from a primal direction.
    fn directions(
        &self,
        v: &SVector<f64, D>,
        dv: &SVector<f64, D>,
        cl: &SVector<f64, D>,
        cu: &SVector<f64, D>,
    ) -> [SVector<f64, D>; 4] {
        let (rl, ru) = self.primal_residuals(v);
        let mut dtl = SVector::zeros();
        let mut dtu = SVector::zeros();
        let mut dzl = SVector::zeros();
        let mut dzu = SVector::zeros();
        for i in 0..D {
            if self.lo[i].is_finite() {
                dtl[i] = dv[i] + rl[i];
                dzl[i] = (cl[i] - self.zl[i] * dtl[i]) / self.tl[i];
            }
            if self.hi[i].is_finite() {
                dtu[i] = -dv[i] + ru[i];
                dzu[i] = (cu[i] - self.zu[i] * dtu[i]) / self.tu[i];
            }
        }
        [dtl, dtu, dzl, dzu]
    }

    fn max_step(&self, d: &[SVector<f64, D>; 4]) -> (f64, f64) {
        let mut ap: f64 = 1.0;
        let mut ad: f64 = 1.0;
        for i in 0..D {
            if self.lo[i].is_finite() {
                if d[0][i] < 0.0 {
                    ap = ap.min(-self.tl[i] / d[0][i]);
                }
                if d[2][i] < 0.0 {
                    ad = ad.min(-self.zl[i] / d[2][i]);
                }
            }
            if self.hi[i].is_finite() {
                if d[1][i] < 0.0 {
                    ap = ap.min(-self.tu[i] / d[1][i]);
                }
                if d[3][i] < 0.0 {
                    ad = ad.min(-self.zu[i] / d[3][i]);
                }
            }
        }
        (ap, ad)
    }

    fn trial_complementarity(&self, d: &[SVector<f64, D>; 4], ap: f64, ad: f64) -> f64 {
        (0..D)
            .map(|i| {
                let l = if self.lo[i].is_finite() {
                    (self.tl[i] + ap * d[0][i]) * (self.zl[i] + ad * d[2][i])
                } else {
                    0.0
                };
                let u = if self.hi[i].is_finite() {
                    (self.tu[i] + ap * d[1][i]) * (self.zu[i] + ad * d[3][i])
                } else {
                    0.0
                };
                l + u
            })
            .sum()
    }

    fn apply(&mut self, d: &[SVector<f64, D>; 4], ap: f64, ad: f64) {
        for i in 0..D {
            if self.lo[i].is_finite() {
                self.tl[i] += ap * d[0][i];
                self.zl[i] += ad * d[2][i];
            }
            if self.hi[i].is_finite() {
                self.tu[i] += ap * d[1][i];
                self.zu[i] += ad * d[3][i];
            }
        }
    }

    fn max_dual(&self) -> f64 {
        self.zl.amax().max(self.zu.amax())
    }

    /// Active flags `(lower, upper)` inferred from the dual/slack ratio.
    fn active(&self) -> ([bool; D], [bool; D]) {
        let mut lo = [false; D];
        let mut hi = [false; D];
        for i in 0..D {
            lo[i] = self.lo[i].is_finite() && self.zl[i] > self.tl[i];
            hi[i] = self.hi[i].is_finite() && self.zu[i] > self.tu[i];
        }
        (lo, hi)
    }
}

fn complementarity_targets<const D: usize>(
    b: &BoxDuals<D>,
    sigma_mu: f64,
    corr: Option<&[SVector<f64, D>; 4]>,
) -> (SVector<f64, D>, SVector<f64, D>) {
    let mut cl = SVector::zeros();
    let mut cu = SVector::zeros();
    for i in 0..D {
        cl[i] = sigma_mu - b.tl[i] * b.zl[i];
        cu[i] = sigma_mu - b.tu[i] * b.zu[i];
        if let Some(d) = corr {
            cl[i] -= d[0][i] * d[2][i];
            cu[i] -= d[1][i] * d[3][i];
        }
    }
    (cl, cu)
}

/// Residuals of stationarity and of the equality constraints.
struct Residuals<const NX: usize, const NU: usize> {
    stat_x: Vec<SVector<f64, NX>>,
    stat_u: Vec<SVector<f64, NU>>,
    /// `eq[n] = A x_n + B u_n + c - x_{n+1}`.
    eq: Vec<SVector<f64, NX>>,
    init: SVector<f64, NX>,
}

fn residuals<const NX: usize, const NU: usize>(
    qp: &OcpQp<NX, NU>,
    t: &Trajectory<NX, NU>,
    x_mult: &[SVector<f64, NX>],
    u_mult: &[SVector<f64, NU>],
    x_init: &SVector<f64, NX>,
) -> Residuals<NX, NU> {
    let n_stages = qp.horizon();
    let mut stat_x = Vec::with_capacity(n_stages + 1);
    let mut stat_u = Vec::with_capacity(n_stages);
    let mut eq = Vec::with_capacity(n_stages);
    for n in 0..n_stages {
        let st = &qp.stages[n];
        let (x, u) = (&t.xs[n], &t.us[n]);
        let sx = st.q * x + st.s.transpose() * u + st.qv + st.a.transpose() * t.pis[n + 1] - t.pis[n] + x_mult[n];
        let su = st.r * u + st.s * x + st.rv + st.b.transpose() * t.pis[n + 1] + u_mult[n];
        stat_x.push(sx);
        stat_u.push(su);
        eq.push(st.a * x + st.b * u + st.c - t.xs[n + 1]);
    }
    let xn = &t.xs[n_stages];
    stat_x.push(qp.qn * xn + qp.qvn - t.pis[n_stages] + x_mult[n_stages]);
    Residuals { stat_x, stat_u, eq, init: x_init - t.xs[0] }
}

fn kkt_of<const NX: usize, const NU: usize>(
    qp: &OcpQp<NX, NU>,
    t: &Trajectory<NX, NU>,
    x_mult: &[SVector<f64, NX>],
    u_mult: &[SVector<f64, NU>],
    x_init: &SVector<f64, NX>,
) -> KktResiduals {
    let res = residuals(qp, t, x_mult, u_mult, x_init);
    let mut k = KktResiduals::default();
    // Stationarity with respect to x_0 only defines pi_0.
    for sx in res.stat_x.iter().skip(1) {
        k.stationarity = k.stationarity.max(sx.amax());
    }
    for su in &res.stat_u {
        k.stationarity = k.stationarity.max(su.amax());
    }
    for e in &res.eq {
        k.equality = k.equality.max(e.amax());
    }
    k.equality = k.equality.max(res.init.amax());
    let mut check = |v: f64, lo: f64, hi: f64, m: f64| {
        k.inequality = k.inequality.max(lo - v).max(v - hi);
        if m > 0.0 {
            k.complementarity = k.complementarity.max(if hi.is_finite() { m * (hi - v).abs() } else { m });
        } else if m < 0.0 {
            k.complementarity = k.complementarity.max(if lo.is_finite() { -m * (v - lo).abs() } else { -m });
        }
    };
    for (n, st) in qp.stages.iter().enumerate() {
        for j in 0..NU {
            check(t.us[n][j], st.u_lo[j], st.u_hi[j], u_mult[n][j]);
        }
    }
    for n in 1..=qp.horizon() {
        let (lo, hi) = qp.x_bounds(n);
        for i in 0..NX {
            check(t.xs[n][i], lo[i], hi[i], x_mult[n][i]);
        }
    }
    k
}

struct IpResult<const NX: usize, const NU: usize> {
    traj: Trajectory<NX, NU>,
    xb: Vec<BoxDuals<NX>>,
    ub: Vec<BoxDuals<NU>>,
    status: QpStatus,
    iterations: usize,
}

fn interior_point<const NX: usize, const NU: usize>(
    qp: &OcpQp<NX, NU>,
    x_init: &SVector<f64, NX>,
    settings: &QpSettings,
) -> IpResult<NX, NU> {
    let n_stages = qp.horizon();
    let mut traj = Trajectory {
        xs: vec![SVector::<f64, NX>::zeros(); n_stages + 1],
        us: vec![SVector::<f64, NU>::zeros(); n_stages],
        pis: vec![SVector::<f64, NX>::zeros(); n_stages + 1],
    };
    traj.xs[0] = *x_init;
    for n in 0..n_stages {
        let st = &qp.stages[n];
        for j in 0..NU {
            traj.us[n][j] = match (st.u_lo[j].is_finite(), st.u_hi[j].is_finite()) {
                (true, true) => 0.5 * (st.u_lo[j] + st.u_hi[j]),
                (true, false) => st.u_lo[j].max(0.0),
                (false, true) => st.u_hi[j].min(0.0),
                (false, false) => 0.0,
            };
        }
    }
    let mut xb: Vec<BoxDuals<NX>> = (0..=n_stages)
        .map(|n| {
            let (lo, hi) = qp.x_bounds(n);
            BoxDuals::new(lo, hi, &traj.xs[n])
        })
        .collect();
    let mut ub: Vec<BoxDuals<NU>> =
        qp.stages.iter().enumerate().map(|(n, st)| BoxDuals::new(st.u_lo, st.u_hi, &traj.us[n])).collect();
    let n_bounds: usize = xb.iter().map(|b| b.count()).sum::<usize>() + ub.iter().map(|b| b.count()).sum::<usize>();
    let no_fix = vec![[false; NU]; n_stages];
    let no_val = vec![SVector::<f64, NU>::zeros(); n_stages];
    let tau = settings.step_fraction();
    let limit = settings.iteration_limit();
    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;

    for it in 0..=limit {
        let x_mult: Vec<_> = xb.iter().map(|b| b.net()).collect();
        let u_mult: Vec<_> = ub.iter().map(|b| b.net()).collect();
        let res = residuals(qp, &traj, &x_mult, &u_mult, x_init);
        let mu = if n_bounds > 0 {
            (xb.iter().map(|b| b.complementarity_sum()).sum::<f64>()
                + ub.iter().map(|b| b.complementarity_sum()).sum::<f64>())
                / n_bounds as f64
        } else {
            0.0
        };
        let mut primal: f64 = res.eq.iter().fold(res.init.amax(), |m, e| m.max(e.amax()));
        for (n, b) in xb.iter().enumerate().skip(1) {
            let (rl, ru) = b.primal_residuals(&traj.xs[n]);
            primal = primal.max(rl.amax()).max(ru.amax());
        }
        for (n, b) in ub.iter().enumerate() {
            let (rl, ru) = b.primal_residuals(&traj.us[n]);
            primal = primal.max(rl.amax()).max(ru.amax());
        }
        let dual =
            res.stat_x.iter().skip(1).map(|s| s.amax()).chain(res.stat_u.iter().map(|s| s.amax())).fold(0.0, f64::max);
        iterations = it;
        if primal <= settings.tol && dual <= settings.tol && mu <= settings.tol {
            status = QpStatus::Solved;
            break;
        }
        let max_dual = xb.iter().map(|b| b.max_dual()).chain(ub.iter().map(|b| b.max_dual())).fold(0.0, f64::max);
        if max_dual > 1e12 && primal > settings.tol {
            status = QpStatus::Infeasible;
            break;
        }
        if it == limit {
            break;
        }

        let dx: Vec<_> = xb.iter().map(|b| b.barrier_diagonal()).collect();
        let du: Vec<_> = ub.iter().map(|b| b.barrier_diagonal()).collect();
        let hess = LqHessians { qp, dx: &dx, du: &du };
        let Some(fact) = factorize(&hess, &no_fix) else {
            break;
        };
        // Newton step in delta form: the LQ constraints carry the equality
        // residuals, the gradients carry the stationarity residuals.
        let cs: Vec<_> = res.eq.clone();
        let solve =
            |sigma_mu: f64, corr_x: Option<&[[SVector<f64, NX>; 4]]>, corr_u: Option<&[[SVector<f64, NU>; 4]]>| {
                let mut gq = Vec::with_capacity(n_stages + 1);
                let mut gr = Vec::with_capacity(n_stages);
                let mut targets_x = Vec::with_capacity(n_stages + 1);
                let mut targets_u = Vec::with_capacity(n_stages);
                for n in 0..=n_stages {
                    let (cl, cu) = complementarity_targets(&xb[n], sigma_mu, corr_x.map(|c| &c[n]));
                    let shift = if n == 0 { SVector::zeros() } else { xb[n].gradient_shift(&traj.xs[n], &cl, &cu) };
                    gq.push(res.stat_x[n] + shift);
                    targets_x.push((cl, cu));
                }
                for n in 0..n_stages {
                    let (cl, cu) = complementarity_targets(&ub[n], sigma_mu, corr_u.map(|c| &c[n]));
                    gr.push(res.stat_u[n] + ub[n].gradient_shift(&traj.us[n], &cl, &cu));
                    targets_u.push((cl, cu));
                }
                let vp = vector_pass(qp, &fact, &gq, &gr, &cs, &no_val);
                let step = forward_pass(qp, &fact, &vp, &cs, &res.init);
                let dxs: Vec<[SVector<f64, NX>; 4]> = (0..=n_stages)
                    .map(|n| {
                        if n == 0 {
                            [SVector::zeros(); 4]
                        } else {
                            xb[n].directions(&traj.xs[n], &step.xs[n], &targets_x[n].0, &targets_x[n].1)
                        }
                    })
                    .collect();
                let dus: Vec<[SVector<f64, NU>; 4]> = (0..n_stages)
                    .map(|n| ub[n].directions(&traj.us[n], &step.us[n], &targets_u[n].0, &targets_u[n].1))
                    .collect();
                (step, dxs, dus)
            };
        let step_lengths = |dxs: &[[SVector<f64, NX>; 4]], dus: &[[SVector<f64, NU>; 4]]| {
            let mut ap: f64 = 1.0;
            let mut ad: f64 = 1.0;
            for (b, d) in xb.iter().zip(dxs) {
                let (p, q) = b.max_step(d);
                ap = ap.min(p);
                ad = ad.min(q);
            }
            for (b, d) in ub.iter().zip(dus) {
                let (p, q) = b.max_step(d);
                ap = ap.min(p);
                ad = ad.min(q);
            }
            (ap, ad)
        };

        let (aff, aff_x, aff_u) = solve(0.0, None, None);
        let (sigma_mu, corr) = if n_bounds > 0 {
            let (ap, ad) = step_lengths(&aff_x, &aff_u);
            let mu_aff = (xb.iter().zip(&aff_x).map(|(b, d)| b.trial_complementarity(d, ap, ad)).sum::<f64>()
                + ub.iter().zip(&aff_u).map(|(b, d)| b.trial_complementarity(d, ap, ad)).sum::<f64>())
                / n_bounds as f64;
            let sigma = (mu_aff / mu).powi(3).min(1.0);
            (sigma * mu, true)
        } else {
            (0.0, false)
        };
        let (step, dxs, dus) = if corr { solve(sigma_mu, Some(&aff_x), Some(&aff_u)) } else { (aff, aff_x, aff_u) };
        let (mut ap, mut ad) = step_lengths(&dxs, &dus);
        if n_bounds > 0 {
            ap = (tau * ap).min(1.0);
            ad = (tau * ad).min(1.0);
        }
        for n in 0..=n_stages {
            traj.xs[n] += step.xs[n] * ap;
            traj.pis[n] += step.pis[n] * ad;
            xb[n].apply(&dxs[n], ap, ad);
        }
        for n in 0..n_stages {
            traj.us[n] += step.us[n] * ap;
            ub[n].apply(&dus[n], ap, ad);
        }
    }
    IpResult { traj, xb, ub, status, iterations }
}

/// Active-set refinement: the equality-constrained LQ with the identified
/// active inputs fixed, factorized once and reusable for any initial state.
#[derive(Debug, Clone)]
struct ActiveSetSystem<const NX: usize, const NU: usize> {
    fact: Factorization<NX, NU>,
    vectors: VectorPass<NX, NU>,
    /// `-1` lower, `+1` upper, `2` both (equal bounds), `0` free.
    sides: Vec<[i8; NU]>,
}

fn active_set_system<const NX: usize, const NU: usize>(
    qp: &OcpQp<NX, NU>,
    ip: &IpResult<NX, NU>,
) -> Option<ActiveSetSystem<NX, NU>> {
    // State bounds would need a state-constrained recursion; leave those to
    // the interior-point iterate.
    if ip.xb.iter().skip(1).any(|b| {
        let (l, h) = b.active();
        l.iter().chain(h.iter()).any(|a| *a)
    }) {
        return None;
    }
    let n_stages = qp.horizon();
    let mut fixed = vec![[false; NU]; n_stages];
    let mut sides = vec![[0i8; NU]; n_stages];
    let mut values = vec![SVector::<f64, NU>::zeros(); n_stages];
    for n in 0..n_stages {
        let (lo, hi) = ip.ub[n].active();
        for j in 0..NU {
            if qp.stages[n].u_lo[j] == qp.stages[n].u_hi[j] {
                fixed[n][j] = true;
                sides[n][j] = 2;
                values[n][j] = qp.stages[n].u_lo[j];
            } else if lo[j] {
                fixed[n][j] = true;
                sides[n][j] = -1;
                values[n][j] = qp.stages[n].u_lo[j];
            } else if hi[j] {
                fixed[n][j] = true;
                sides[n][j] = 1;
                values[n][j] = qp.stages[n].u_hi[j];
            }
        }
    }
    let zx = vec![SVector::<f64, NX>::zeros(); n_stages + 1];
    let zu = vec![SVector::<f64, NU>::zeros(); n_stages];
    let fact = factorize(&LqHessians { qp, dx: &zx, du: &zu }, &fixed)?;
    let gq: Vec<_> = qp.stages.iter().map(|s| s.qv).chain(core::iter::once(qp.qvn)).collect();
    let gr: Vec<_> = qp.stages.iter().map(|s| s.rv).collect();
    let cs: Vec<_> = qp.stages.iter().map(|s| s.c).collect();
    let vectors = vector_pass(qp, &fact, &gq, &gr, &cs, &values);
    Some(ActiveSetSystem { fact, vectors, sides })
}

/// Evaluates the active-set system at `x_init` and accepts the result only
/// if it satisfies the bounds and multiplier signs within `tol`.
fn active_set_solution<const NX: usize, const NU: usize>(
    qp: &OcpQp<NX, NU>,
    sys: &ActiveSetSystem<NX, NU>,
    x_init: &SVector<f64, NX>,
    tol: f64,
) -> Option<QpSolution<NX, NU>> {
    let n_stages = qp.horizon();
    let cs: Vec<_> = qp.stages.iter().map(|s| s.c).collect();
    let traj = forward_pass(qp, &sys.fact, &sys.vectors, &cs, x_init);
    let mut u_mult = vec![SVector::<f64, NU>::zeros(); n_stages];
    for n in 0..n_stages {
        let st = &qp.stages[n];
        let grad = st.r * traj.us[n] + st.s * traj.xs[n] + st.rv + st.b.transpose() * traj.pis[n + 1];
        for j in 0..NU {
            match sys.sides[n][j] {
                1 => {
                    let m = -grad[j];
                    if m < -tol {
                        return None;
                    }
                    u_mult[n][j] = m.max(0.0);
                }
                -1 => {
                    let m = -grad[j];
                    if m > tol {
                        return None;
                    }
                    u_mult[n][j] = m.min(0.0);
                }
                2 => u_mult[n][j] = -grad[j],
                _ => {
                    if traj.us[n][j] < st.u_lo[j] - tol || traj.us[n][j] > st.u_hi[j] + tol {
                        return None;
                    }
                }
            }
        }
    }
    for n in 1..=n_stages {
        let (lo, hi) = qp.x_bounds(n);
        for i in 0..NX {
            if traj.xs[n][i] < lo[i] - tol || traj.xs[n][i] > hi[i] + tol {
                return None;
            }
        }
    }
    let x_mult = vec![SVector::<f64, NX>::zeros(); n_stages + 1];
    let kkt = kkt_of(qp, &traj, &x_mult, &u_mult, x_init);
    Some(QpSolution {
        xs: traj.xs,
        us: traj.us,
        pis: traj.pis,
        x_mult,
        u_mult,
        status: QpStatus::Solved,
        iterations: 0,
        kkt,
    })
}

fn ip_solution<const NX: usize, const NU: usize>(
    qp: &OcpQp<NX, NU>,
    ip: IpResult<NX, NU>,
    x_init: &SVector<f64, NX>,
) -> QpSolution<NX, NU> {
    let x_mult: Vec<_> =
        ip.xb.iter().enumerate().map(|(n, b)| if n == 0 { SVector::zeros() } else { b.net() }).collect();
    let u_mult: Vec<_> = ip.ub.iter().map(|b| b.net()).collect();
    let kkt = kkt_of(qp, &ip.traj, &x_mult, &u_mult, x_init);
    QpSolution {
        xs: ip.traj.xs,
        us: ip.traj.us,
        pis: ip.traj.pis,
        x_mult,
        u_mult,
        status: ip.status,
        iterations: ip.iterations,
        kkt,
    }
}

fn infeasible<const NX: usize, const NU: usize>(qp: &OcpQp<NX, NU>, x_init: &SVector<f64, NX>) -> QpSolution<NX, NU> {
    let n = qp.horizon();
    let mut xs = vec![SVector::zeros(); n + 1];
    xs[0] = *x_init;
    QpSolution {
        xs,
        us: vec![SVector::zeros(); n],
        pis: vec![SVector::zeros(); n + 1],
        x_mult: vec![SVector::zeros(); n + 1],
        u_mult: vec![SVector::zeros(); n],
        status: QpStatus::Infeasible,
        iterations: 0,
        kkt: KktResiduals { inequality: f64::INFINITY, ..KktResiduals::default() },
    }
}

/// Tolerance used when accepting an active-set refinement.
fn refine_tol(tol: f64) -> f64 {
    (tol * 1e-3).max(1e-9)
}

/// Solves `qp` from its own `x_init`.
pub fn qp_solve<const NX: usize, const NU: usize>(qp: &OcpQp<NX, NU>, settings: &QpSettings) -> QpSolution<NX, NU> {
    if qp.bounds_conflict() {
        return infeasible(qp, &qp.x_init);
    }
    let ip = interior_point(qp, &qp.x_init, settings);
    if ip.status == QpStatus::Infeasible {
        return ip_solution(qp, ip, &qp.x_init);
    }
    let iterations = ip.iterations;
    if let Some(sys) = active_set_system(qp, &ip) {
        if let Some(mut sol) = active_set_solution(qp, &sys, &qp.x_init, refine_tol(settings.tol)) {
            sol.iterations = iterations;
            return sol;
        }
    }
    ip_solution(qp, ip, &qp.x_init)
}

/// A QP whose data is final except for the initial state.
///
/// Preparation runs the interior-point method at the nominal `x_init` and
/// factorizes the active-set system; [`PreparedQp::feedback`] then only needs
/// a forward sweep as long as the active set does not change.
#[derive(Debug, Clone)]
pub struct PreparedQp<const NX: usize, const NU: usize> {
    qp: OcpQp<NX, NU>,
    settings: QpSettings,
    system: Option<ActiveSetSystem<NX, NU>>,
    nominal_iterations: usize,
    conflict: bool,
}

impl<const NX: usize, const NU: usize> PreparedQp<NX, NU> {
    pub fn new(qp: OcpQp<NX, NU>, settings: QpSettings) -> Self {
        if qp.bounds_conflict() {
            return Self { qp, settings, system: None, nominal_iterations: 0, conflict: true };
        }
        let ip = interior_point(&qp, &qp.x_init, &settings);
        let nominal_iterations = ip.iterations;
        let system = if ip.status == QpStatus::Infeasible { None } else { active_set_system(&qp, &ip) };
        Self { qp, settings, system, nominal_iterations, conflict: false }
    }

    pub fn qp(&self) -> &OcpQp<NX, NU> {
        &self.qp
    }

    /// Whether the fast path is available.
    pub fn has_active_set(&self) -> bool {
        self.system.is_some()
    }

    pub fn feedback(&self, x_init: &SVector<f64, NX>) -> QpSolution<NX, NU> {
        if self.conflict {
            return infeasible(&self.qp, x_init);
        }
        if let Some(sys) = &self.system {
            if let Some(mut sol) = active_set_solution(&self.qp, sys, x_init, refine_tol(self.settings.tol)) {
                sol.iterations = self.nominal_iterations;
                return sol;
            }
        }
        let ip = interior_point(&self.qp, x_init, &self.settings);
        if ip.status != QpStatus::Infeasible {
            if let Some(sys) = active_set_system(&self.qp, &ip) {
                if let Some(mut sol) = active_set_solution(&self.qp, &sys, x_init, refine_tol(self.settings.tol)) {
                    sol.iterations = ip.iterations;
                    return sol;
                }
            }
        }
        ip_solution(&self.qp, ip, x_init)
    }
}
