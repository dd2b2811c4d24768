//! Newton-type solvers for the multiple-shooting OCP.
//!
//! All backends work on a [`Solution`]: `N + 1` states, `N` inputs of the
//! active joint, and the equality/bound multipliers of the NLP. Solver
//! failures are reported through [`Status`], never through errors.

mod ddp;
pub mod qp;
mod sqp;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::ocp::{stage_derivatives_vec, terminal_derivatives_vec, DiscreteModel, Ocp, ShootingGrid};

pub use ddp::ddp_solve;
pub use qp::{qp_solve, KktResiduals, OcpQp, PreparedQp, QpMode, QpSettings, QpSolution, QpStage, QpStatus};
pub use sqp::{rti_feedback, rti_prepare, sqp_solve, RtiPrepared};

/// The structured QP produced by [`linearize`], posed in the step
/// `(dx, du)` around the linearization point.
pub type QpData = OcpQp<4, 1>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    Sqp,
    SqpRti,
    Ddp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    MaxIter,
    Infeasible,
    Timeout,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIter => "max_iter",
            Status::Infeasible => "infeasible",
            Status::Timeout => "timeout",
        }
    }

    /// Whether the returned iterate may be applied.
    pub fn is_usable(self) -> bool {
        !matches!(self, Status::Infeasible)
    }
}

/// Step acceptance of the full SQP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Globalization {
    /// Backtracking on the L1 merit function.
    MeritBacktracking,
    /// Always take the full step.
    FullStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub backend: Backend,
    pub max_iter: usize,
    pub kkt_tol: f64,
    pub qp_tol: f64,
    pub qp_mode: QpMode,
    /// Seconds; checked between iterations.
    pub max_solve_time: f64,
    /// Baseline Levenberg-Marquardt damping added to the Hessian diagonal.
    pub levenberg_marquardt: f64,
    pub globalization: Globalization,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub backtrack_factor: f64,
    pub min_step: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            backend: Backend::SqpRti,
            max_iter: 500,
            kkt_tol: 1e-6,
            qp_tol: 1e-3,
            qp_mode: QpMode::Robust,
            max_solve_time: 1.0,
            levenberg_marquardt: 1e-8,
            globalization: Globalization::MeritBacktracking,
            armijo: 1e-4,
            backtrack_factor: 0.5,
            min_step: 1e-6,
        }
    }
}

impl SolverSettings {
    pub(crate) fn qp_settings(&self) -> QpSettings {
        QpSettings { tol: self.qp_tol, max_iter: 50, mode: self.qp_mode }
    }
}

/// Multipliers of the NLP, same sign conventions as [`QpSolution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    /// `pis[0]` belongs to the initial-state constraint, `pis[n + 1]` to the
    /// dynamics of interval `n`.
    pub pis: Vec<Vector4<f64>>,
    pub x_bounds: Vec<Vector4<f64>>,
    pub u_bounds: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(n: usize) -> Self {
        Self { pis: vec![Vector4::zeros(); n + 1], x_bounds: vec![Vector4::zeros(); n + 1], u_bounds: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub xs: Vec<Vector4<f64>>,
    pub us: Vec<f64>,
    pub status: Status,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub prepare_time: f64,
    pub feedback_time: f64,
    pub total_time: f64,
    pub multipliers: Multipliers,
    /// SQP: merit before and after every accepted step, at the same penalty.
    /// DDP: cost before and after every accepted step.
    pub trace: Vec<(f64, f64)>,
}

impl Solution {
    /// Unsolved guess from explicit trajectories.
    pub fn guess(xs: Vec<Vector4<f64>>, us: Vec<f64>) -> Self {
        let n = us.len();
        assert_eq!(xs.len(), n + 1, "a guess needs one more state than inputs");
        Self {
            xs,
            us,
            status: Status::MaxIter,
            kkt_residual: f64::INFINITY,
            iterations: 0,
            prepare_time: 0.0,
            feedback_time: 0.0,
            total_time: 0.0,
            multipliers: Multipliers::zeros(n),
            trace: Vec::new(),
        }
    }

    /// Dynamically consistent guess obtained by simulating `us` from `ocp.x0`.
    pub fn from_rollout<M: DiscreteModel>(ocp: &Ocp<M>, us: Vec<f64>) -> Self {
        let xs = ocp.rollout(&ocp.x0, &us);
        Self::guess(xs, us)
    }

    pub fn horizon_len(&self) -> usize {
        self.us.len()
    }

    /// Largest dynamics defect `|F(x_n, u_n) - x_{n+1}|`.
    pub fn max_defect<M: DiscreteModel>(&self, ocp: &Ocp<M>) -> f64 {
        (0..self.us.len())
            .map(|n| (ocp.model.step(&self.xs[n], self.us[n], ocp.grid.dts[n]) - self.xs[n + 1]).amax())
            .fold(0.0, f64::max)
    }
}

/// Linearizes the NLP at `guess` with the baseline damping of
/// [`SolverSettings::default`].
pub fn linearize<M: DiscreteModel>(ocp: &Ocp<M>, guess: &Solution) -> QpData {
    linearize_with(ocp, guess, SolverSettings::default().levenberg_marquardt)
}

/// Linearization with an explicit Levenberg-Marquardt damping `reg`.
pub fn linearize_with<M: DiscreteModel>(ocp: &Ocp<M>, guess: &Solution, reg: f64) -> QpData {
    let n_stages = ocp.horizon_len();
    assert_eq!(guess.us.len(), n_stages, "guess does not match the shooting grid");
    let b = &ocp.bounds;
    let mut stages = Vec::with_capacity(n_stages);
    for n in 0..n_stages {
        let x = &guess.xs[n];
        let u = guess.us[n];
        let (next, a, bu) = ocp.model.step_with_sensitivities(x, u, ocp.grid.dts[n]);
        let d = stage_derivatives_vec(x, u, n, &ocp.cost);
        let mut st = QpStage::<4, 1>::empty();
        st.a = a;
        st.b = bu;
        st.c = next - guess.xs[n + 1];
        st.q = d.hxx + nalgebra::Matrix4::identity() * reg;
        st.s = d.hux;
        st.r[(0, 0)] = d.huu + reg;
        st.qv = d.gx;
        st.rv[0] = d.gu;
        st.u_lo[0] = b.u_lo - u;
        st.u_hi[0] = b.u_hi - u;
        for i in 0..4 {
            st.x_lo[i] = b.x_lo[i] - x[i];
            st.x_hi[i] = b.x_hi[i] - x[i];
        }
        stages.push(st);
    }
    let xn = &guess.xs[n_stages];
    let (gn, hn) = terminal_derivatives_vec(xn, &ocp.cost, ocp.model.params());
    let mut xn_lo = Vector4::zeros();
    let mut xn_hi = Vector4::zeros();
    for i in 0..4 {
        xn_lo[i] = b.x_lo[i].max(b.xf_lo[i]) - xn[i];
        xn_hi[i] = b.x_hi[i].min(b.xf_hi[i]) - xn[i];
    }
    OcpQp { stages, qn: hn + nalgebra::Matrix4::identity() * reg, qvn: gn, xn_lo, xn_hi, x_init: ocp.x0 - guess.xs[0] }
}

/// First-order optimality of the NLP at `sol`, using the gradients and
/// sensitivities stored in `qp = linearize(ocp, sol)`.
pub fn nlp_kkt(qp: &QpData, sol: &Solution) -> KktResiduals {
    let n_stages = sol.us.len();
    let m = &sol.multipliers;
    let mut k = KktResiduals::default();
    for n in 0..n_stages {
        let st = &qp.stages[n];
        let su = st.rv[0] + (st.b.transpose() * m.pis[n + 1])[0] + m.u_bounds[n];
        k.stationarity = k.stationarity.max(su.abs());
        if n > 0 {
            let sx = st.qv + st.a.transpose() * m.pis[n + 1] - m.pis[n] + m.x_bounds[n];
            k.stationarity = k.stationarity.max(sx.amax());
        }
        k.equality = k.equality.max(st.c.amax());
    }
    let sx = qp.qvn - m.pis[n_stages] + m.x_bounds[n_stages];
    k.stationarity = k.stationarity.max(sx.amax());
    k.equality = k.equality.max(qp.x_init.amax());

    // Bounds are stored relative to the linearization point, so the current
    // value is 0 and the slack to each bound is its magnitude.
    let mut check = |lo: f64, hi: f64, mult: f64| {
        k.inequality = k.inequality.max(lo).max(-hi);
        let c = if mult > 0.0 {
            if hi.is_finite() {
                mult * hi.abs()
            } else {
                mult
            }
        } else if mult < 0.0 {
            if lo.is_finite() {
                -mult * lo.abs()
            } else {
                -mult
            }
        } else {
            0.0
        };
        k.complementarity = k.complementarity.max(c);
    };
    for n in 0..n_stages {
        let st = &qp.stages[n];
        check(st.u_lo[0], st.u_hi[0], m.u_bounds[n]);
        if n > 0 {
            for i in 0..4 {
                check(st.x_lo[i], st.x_hi[i], m.x_bounds[n][i]);
            }
        }
    }
    for i in 0..4 {
        check(qp.xn_lo[i], qp.xn_hi[i], m.x_bounds[n_stages][i]);
    }
    k
}

/// Shifts a solution one node to the left: the last state is duplicated and
/// the last input set to zero. Multipliers are shifted the same way.
pub fn shift_warm_start(prev: &Solution, grid: &ShootingGrid) -> Solution {
    let n = prev.us.len();
    assert_eq!(n, grid.len(), "solution does not match the shooting grid");
    let mut xs = prev.xs.clone();
    let mut us = prev.us.clone();
    if n > 0 {
        xs.remove(0);
        xs.push(xs[n - 1]);
        us.remove(0);
        us.push(0.0);
    }
    let mut m = prev.multipliers.clone();
    if n > 0 {
        m.pis.remove(0);
        m.pis.push(Vector4::zeros());
        m.x_bounds.remove(0);
        m.x_bounds.push(Vector4::zeros());
        m.u_bounds.remove(0);
        m.u_bounds.push(0.0);
    }
    let mut guess = Solution::guess(xs, us);
    guess.multipliers = m;
    guess
}

/// Advances a solution by `dt` seconds along its own grid: states are
/// interpolated linearly between nodes, inputs are piecewise constant.
/// Beyond the horizon the last state is held and the input is zero.
pub fn time_shift_warm_start(prev: &Solution, grid: &ShootingGrid, dt: f64) -> Solution {
    let n = prev.us.len();
    assert_eq!(n, grid.len(), "solution does not match the shooting grid");
    let times = grid.node_times();
    // Rounding in the cumulative node times must not push a sample into the
    // previous interval.
    let eps = 1e-9 * grid.horizon;
    let locate = |t: f64| -> Option<(usize, f64)> {
        if t + eps >= grid.horizon || n == 0 {
            return None;
        }
        let mut k = 0;
        while k + 1 < n && times[k + 1] <= t + eps {
            k += 1;
        }
        Some((k, ((t - times[k]) / grid.dts[k]).clamp(0.0, 1.0)))
    };
    let xs = times
        .iter()
        .map(|t| match locate(t + dt) {
            Some((k, s)) => prev.xs[k] * (1.0 - s) + prev.xs[k + 1] * s,
            None => prev.xs[n],
        })
        .collect();
    let us = times[..n]
        .iter()
        .map(|t| match locate(t + dt) {
            Some((k, _)) => prev.us[k],
            None => 0.0,
        })
        .collect();
    let mut guess = Solution::guess(xs, us);
    guess.multipliers.pis = times
        .iter()
        .map(|t| match locate(t + dt) {
            Some((k, s)) => prev.multipliers.pis[k] * (1.0 - s) + prev.multipliers.pis[k + 1] * s,
            None => prev.multipliers.pis[n],
        })
        .collect();
    guess
}

/// Dispatches to the backend selected in `settings`. For the RTI backend this
/// performs one prepare and feedback at `ocp.x0`.
pub fn solve<M: DiscreteModel>(
    ocp: &Ocp<M>,
    guess: &Solution,
    settings: &SolverSettings,
    clock: &dyn Clock,
) -> Solution {
    match settings.backend {
        Backend::Sqp => sqp_solve(ocp, guess, settings, clock),
        Backend::Ddp => ddp_solve(ocp, guess, settings, clock),
        Backend::SqpRti => {
            let prepared = rti_prepare(ocp, guess, settings, clock);
            rti_feedback(&prepared, &crate::dynamics::State::from_vector(&ocp.x0), clock)
        }
    }
}
