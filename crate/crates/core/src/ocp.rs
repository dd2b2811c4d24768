//! The discrete-time optimal control problem solved at every controller cycle.
//!
//! Multiple shooting: the decision variables are the node states `x[0..=N]`
//! and the active-joint torques `u[0..N]`, linked by `x[n+1] = F_n(x[n], u[n])`
//! where `F_n` integrates the model over the `n`-th grid interval. All costs
//! are weighted least squares so a Gauss-Newton Hessian is available.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix4, RowVector4, SMatrix, SVector, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{energy_gradient, energy_of, state_derivative, state_jacobians, wrap_angle, ModelParams, State};
use crate::error::OcpError;

// Test builds link std, whose inherent float methods shadow the trait.
#[allow(unused_imports)]
use num_traits::Float;

/// Interval lengths of the shooting grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingGrid {
    pub dts: Vec<f64>,
    pub horizon: f64,
}

impl ShootingGrid {
    /// Number of shooting intervals `N`.
    pub fn len(&self) -> usize {
        self.dts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dts.is_empty()
    }

    /// Time of every node, `N + 1` entries starting at 0.
    pub fn node_times(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.dts.len() + 1);
        let mut acc = 0.0;
        t.push(acc);
        for dt in &self.dts {
            acc += dt;
            t.push(acc);
        }
        t
    }
}

/// Uniform grid `dt = T / N`, or intervals growing linearly with the node
/// index, `dt_n = c (n + 1)` with `c = 2T / (N (N + 1))`.
pub fn build_grid(n: usize, horizon: f64, nonuniform: bool) -> Result<ShootingGrid, OcpError> {
    if n < 1 {
        return Err(OcpError::NoIntervals(n));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(OcpError::NonPositiveHorizon(horizon));
    }
    let dts = if nonuniform {
        let c = 2.0 * horizon / (n * (n + 1)) as f64;
        (0..n).map(|i| c * (i + 1) as f64).collect()
    } else {
        vec![horizon / n as f64; n]
    };
    Ok(ShootingGrid { dts, horizon })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostVariant {
    /// Weighted squared deviation of the raw state.
    Quadratic,
    /// Angles replaced by `(cos, sin)` pairs; invariant to full turns.
    EmbeddedAngle,
    /// Embedded-angle stages, terminal cost on the energy error plus velocities.
    EnergyTerminal,
}

/// Stage and terminal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    /// Diagonal stage weights on `(q1, q2, qd1, qd2)`.
    pub q: [f64; 4],
    /// Weight on the active torque.
    pub r: f64,
    pub qf: [f64; 4],
    pub target: State,
    pub variant: CostVariant,
    /// Per-stage multipliers, one per shooting interval.
    pub node_scaling: Vec<f64>,
    /// Weight of the squared energy error in the energy terminal cost.
    pub energy_weight: f64,
}

impl CostConfig {
    /// Weights used in the reference experiments: angles 100, velocities 10,
    /// terminal angles 1e4, terminal velocities 100, torque 1e-6.
    pub fn reference(n: usize) -> Self {
        Self {
            q: [100.0, 100.0, 10.0, 10.0],
            r: 1e-6,
            qf: [10000.0, 10000.0, 100.0, 100.0],
            target: State::UPRIGHT,
            variant: CostVariant::Quadratic,
            node_scaling: vec![1.0; n],
            energy_weight: 100.0,
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), OcpError> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !self.q.iter().copied().all(ok) {
            return Err(OcpError::InvalidWeight { name: "Q" });
        }
        if !self.qf.iter().copied().all(ok) {
            return Err(OcpError::InvalidWeight { name: "Qf" });
        }
        if !ok(self.r) {
            return Err(OcpError::InvalidWeight { name: "R" });
        }
        if !ok(self.energy_weight) {
            return Err(OcpError::InvalidWeight { name: "energy_weight" });
        }
        if self.node_scaling.len() != n {
            return Err(OcpError::ScalingLength { got: self.node_scaling.len(), expected: n });
        }
        if !self.node_scaling.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(OcpError::NonPositiveScaling);
        }
        Ok(())
    }
}

/// Box limits on inputs and states. Infinite entries are inactive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub u_lo: f64,
    pub u_hi: f64,
    pub x_lo: [f64; 4],
    pub x_hi: [f64; 4],
    pub xf_lo: [f64; 4],
    pub xf_hi: [f64; 4],
}

impl Bounds {
    /// Torque limit on the input, velocity limit on the stage states, no
    /// angle limits and no terminal limits.
    pub fn from_model(p: &ModelParams) -> Self {
        let inf = f64::INFINITY;
        Self {
            u_lo: -p.tau_max,
            u_hi: p.tau_max,
            x_lo: [-inf, -inf, -p.v_max, -p.v_max],
            x_hi: [inf, inf, p.v_max, p.v_max],
            xf_lo: [-inf; 4],
            xf_hi: [inf; 4],
        }
    }

    pub fn validate(&self) -> Result<(), OcpError> {
        if self.u_lo > self.u_hi {
            return Err(OcpError::InvertedBounds { name: "u" });
        }
        if self.x_lo.iter().zip(&self.x_hi).any(|(l, h)| l > h) {
            return Err(OcpError::InvertedBounds { name: "x" });
        }
        if self.xf_lo.iter().zip(&self.xf_hi).any(|(l, h)| l > h) {
            return Err(OcpError::InvertedBounds { name: "x_f" });
        }
        Ok(())
    }
}

/// `(cos q1, sin q1, cos q2, sin q2, qd1, qd2)`.
pub fn embed_angles(x: &State) -> SVector<f64, 6> {
    SVector::<f64, 6>::from([x.q1.cos(), x.q1.sin(), x.q2.cos(), x.q2.sin(), x.qd1, x.qd2])
}

const RES: usize = 7;
type Residual = SVector<f64, RES>;
type ResidualJacobian = SMatrix<f64, RES, 4>;

/// Residual, its weights and its state Jacobian for the state part of a cost.
/// Rows 0..6 carry state terms, row 6 is reserved for the input.
fn state_residual(
    x: &Vector4<f64>,
    target: &Vector4<f64>,
    weights: &[f64; 4],
    embedded: bool,
) -> (Residual, Residual, ResidualJacobian) {
    let mut r = Residual::zeros();
    let mut w = Residual::zeros();
    let mut j = ResidualJacobian::zeros();
    if embedded {
        for joint in 0..2 {
            // Wrapping first makes shifted copies of an angle evaluate identically.
            let q = wrap_angle(x[joint]);
            let (s, c) = (q.sin(), q.cos());
            let (st, ct) = (target[joint].sin(), target[joint].cos());
            r[2 * joint] = c - ct;
            r[2 * joint + 1] = s - st;
            j[(2 * joint, joint)] = -s;
            j[(2 * joint + 1, joint)] = c;
            w[2 * joint] = weights[joint];
            w[2 * joint + 1] = weights[joint];
        }
        for v in 0..2 {
            r[4 + v] = x[2 + v] - target[2 + v];
            j[(4 + v, 2 + v)] = 1.0;
            w[4 + v] = weights[2 + v];
        }
    } else {
        for i in 0..4 {
            r[i] = x[i] - target[i];
            j[(i, i)] = 1.0;
            w[i] = weights[i];
        }
    }
    (r, w, j)
}

fn energy_residual(
    x: &Vector4<f64>,
    target: &Vector4<f64>,
    cfg: &CostConfig,
    p: &ModelParams,
) -> (Residual, Residual, ResidualJacobian) {
    let mut r = Residual::zeros();
    let mut w = Residual::zeros();
    let mut j = ResidualJacobian::zeros();
    r[0] = energy_of(x, p) - energy_of(target, p);
    w[0] = cfg.energy_weight;
    j.set_row(0, &energy_gradient(x, p).transpose());
    for v in 0..2 {
        r[1 + v] = x[2 + v] - target[2 + v];
        j[(1 + v, 2 + v)] = 1.0;
        w[1 + v] = cfg.qf[2 + v];
    }
    (r, w, j)
}

fn stage_embedded(cfg: &CostConfig) -> bool {
    !matches!(cfg.variant, CostVariant::Quadratic)
}

/// Exact gradient and Gauss-Newton Hessian of a stage cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageDerivatives {
    pub gx: Vector4<f64>,
    pub gu: f64,
    pub hxx: Matrix4<f64>,
    pub hux: RowVector4<f64>,
    pub huu: f64,
}

/// `0.5 * s_n * (sum_i w_i r_i(x)^2 + R u^2)`.
pub fn stage_cost(x: &State, u: f64, n: usize, cfg: &CostConfig) -> f64 {
    stage_cost_vec(&x.to_vector(), u, n, cfg)
}

pub(crate) fn stage_cost_vec(x: &Vector4<f64>, u: f64, n: usize, cfg: &CostConfig) -> f64 {
    let (r, w, _) = state_residual(x, &cfg.target.to_vector(), &cfg.q, stage_embedded(cfg));
    let state_part: f64 = r.iter().zip(w.iter()).map(|(r, w)| w * r * r).sum();
    0.5 * cfg.node_scaling[n] * (state_part + cfg.r * u * u)
}

pub fn cost_derivatives(x: &State, u: f64, n: usize, cfg: &CostConfig) -> StageDerivatives {
    stage_derivatives_vec(&x.to_vector(), u, n, cfg)
}

pub(crate) fn stage_derivatives_vec(x: &Vector4<f64>, u: f64, n: usize, cfg: &CostConfig) -> StageDerivatives {
    let s = cfg.node_scaling[n];
    let (r, w, j) = state_residual(x, &cfg.target.to_vector(), &cfg.q, stage_embedded(cfg));
    let wr = r.component_mul(&w) * s;
    let wj = SMatrix::<f64, RES, 4>::from_fn(|i, k| j[(i, k)] * w[i] * s);
    StageDerivatives {
        gx: j.transpose() * wr,
        gu: s * cfg.r * u,
        hxx: j.transpose() * wj,
        hux: RowVector4::zeros(),
        huu: s * cfg.r,
    }
}

/// Terminal cost; `p` is only consulted by the energy variant.
pub fn terminal_cost(x: &State, cfg: &CostConfig, p: &ModelParams) -> f64 {
    terminal_cost_vec(&x.to_vector(), cfg, p)
}

fn terminal_residual(x: &Vector4<f64>, cfg: &CostConfig, p: &ModelParams) -> (Residual, Residual, ResidualJacobian) {
    let target = cfg.target.to_vector();
    match cfg.variant {
        CostVariant::Quadratic => state_residual(x, &target, &cfg.qf, false),
        CostVariant::EmbeddedAngle => state_residual(x, &target, &cfg.qf, true),
        CostVariant::EnergyTerminal => energy_residual(x, &target, cfg, p),
    }
}

pub(crate) fn terminal_cost_vec(x: &Vector4<f64>, cfg: &CostConfig, p: &ModelParams) -> f64 {
    let (r, w, _) = terminal_residual(x, cfg, p);
    0.5 * r.iter().zip(w.iter()).map(|(r, w)| w * r * r).sum::<f64>()
}

/// Gradient and Gauss-Newton Hessian of the terminal cost.
pub fn terminal_derivatives(x: &State, cfg: &CostConfig, p: &ModelParams) -> (Vector4<f64>, Matrix4<f64>) {
    terminal_derivatives_vec(&x.to_vector(), cfg, p)
}

pub(crate) fn terminal_derivatives_vec(
    x: &Vector4<f64>,
    cfg: &CostConfig,
    p: &ModelParams,
) -> (Vector4<f64>, Matrix4<f64>) {
    let (r, w, j) = terminal_residual(x, cfg, p);
    let wj = SMatrix::<f64, RES, 4>::from_fn(|i, k| j[(i, k)] * w[i]);
    (j.transpose() * r.component_mul(&w), j.transpose() * wj)
}

/// Velocity scale over which the modeled dead-zone of a compensated joint
/// blends into viscous friction.
const DEAD_ZONE_KNEE: f64 = 0.25;

fn softplus(z: f64, s: f64) -> (f64, f64) {
    let sig = 1.0 / (1.0 + (-z / s).exp());
    (z.max(0.0) + s * (-z.abs() / s).exp().ln_1p(), sig)
}

/// Compensation torque as seen by the OCP.
///
/// The exact law `min(budget, |F|) tanh(qd / eps)` leaves a residual friction
/// with a narrow spike around zero velocity, which the Gauss-Newton steps
/// cannot follow. The OCP instead assumes the residual is a smooth dead-zone:
/// zero while the budget covers Coulomb friction, viscous beyond the velocity
/// at which it runs out. Returns the torque and its derivative.
pub fn modeled_compensation(qd: f64, joint: usize, budget: f64, p: &ModelParams) -> (f64, f64) {
    let eps = p.friction_smoothing;
    let (b, cf) = if joint == 0 { (p.b1, p.cf1) } else { (p.b2, p.cf2) };
    let f = b * qd + cf * (qd / eps).tanh();
    let df = b + cf * (1.0 - (qd / eps).tanh().powi(2)) / eps;
    let (net, dnet) = if budget <= cf {
        let t = (qd / eps).tanh();
        (b * qd + (cf - budget) * t, b + (cf - budget) * (1.0 - t * t) / eps)
    } else if b <= 0.0 {
        (0.0, 0.0)
    } else {
        let v0 = (budget - cf) / b;
        let (hi, dhi) = softplus(qd - v0, DEAD_ZONE_KNEE);
        let (lo, dlo) = softplus(-qd - v0, DEAD_ZONE_KNEE);
        (b * (hi - lo), b * (dhi + dlo))
    };
    (f - net, df - dnet)
}

/// Discrete model used inside the OCP: the active joint takes the decision
/// input, the passive joint receives the friction compensation torque, and
/// every interval is integrated with RK4 sub-steps no longer than
/// `max_substep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingModel {
    pub params: ModelParams,
    pub compensation_budget: f64,
    pub max_substep: f64,
}

impl ShootingModel {
    pub fn new(params: ModelParams, compensation_budget: f64, max_substep: f64) -> Result<Self, OcpError> {
        params.validate()?;
        if !(max_substep > 0.0 && max_substep.is_finite()) {
            return Err(OcpError::NonPositiveIntegratorStep(max_substep));
        }
        if !(compensation_budget >= 0.0 && compensation_budget.is_finite()) {
            return Err(OcpError::InvalidWeight { name: "friction_compensation_on_inactive_joint" });
        }
        Ok(Self { params, compensation_budget, max_substep })
    }

    fn torques(&self, x: &Vector4<f64>, u: f64) -> (Vector2<f64>, f64) {
        let active = self.params.robot.active_joint();
        let passive = self.params.robot.inactive_joint();
        let (comp, dcomp) = modeled_compensation(x[2 + passive], passive, self.compensation_budget, &self.params);
        let mut tau = Vector2::zeros();
        tau[active] = u;
        tau[passive] = comp;
        (tau, dcomp)
    }

    pub fn rhs(&self, x: &Vector4<f64>, u: f64) -> Vector4<f64> {
        let (tau, _) = self.torques(x, u);
        state_derivative(x, &tau, &self.params)
    }

    /// Continuous-time Jacobians with respect to the state and the active torque.
    pub fn rhs_jacobians(&self, x: &Vector4<f64>, u: f64) -> (Vector4<f64>, Matrix4<f64>, Vector4<f64>) {
        let (tau, dcomp) = self.torques(x, u);
        let f = state_derivative(x, &tau, &self.params);
        let (mut a, b) = state_jacobians(x, &tau, &self.params);
        let active = self.params.robot.active_joint();
        let passive = self.params.robot.inactive_joint();
        let col = b.column(passive) * dcomp;
        for i in 0..4 {
            a[(i, 2 + passive)] += col[i];
        }
        (f, a, b.column(active).into_owned())
    }

    pub fn substeps(&self, dt: f64) -> usize {
        ((dt / self.max_substep).ceil() as usize).max(1)
    }

    /// Integrates one shooting interval.
    pub fn step(&self, x: &Vector4<f64>, u: f64, dt: f64) -> Vector4<f64> {
        let m = self.substeps(dt);
        let h = dt / m as f64;
        let mut x = *x;
        for _ in 0..m {
            x = crate::dynamics::rk4(|v| self.rhs(v, u), &x, h);
        }
        x
    }

    /// Integrates one shooting interval and returns the exact derivatives of
    /// the discrete map with respect to the start state and the input.
    pub fn step_with_sensitivities(
        &self,
        x: &Vector4<f64>,
        u: f64,
        dt: f64,
    ) -> (Vector4<f64>, Matrix4<f64>, Vector4<f64>) {
        let m = self.substeps(dt);
        let h = dt / m as f64;
        let mut x = *x;
        let mut sx = Matrix4::identity();
        let mut su = Vector4::zeros();
        let eye = Matrix4::identity();
        for _ in 0..m {
            let (k1, a1, b1) = self.rhs_jacobians(&x, u);
            let (k2, a2, b2) = self.rhs_jacobians(&(x + k1 * (0.5 * h)), u);
            let (k3, a3, b3) = self.rhs_jacobians(&(x + k2 * (0.5 * h)), u);
            let (k4, a4, b4) = self.rhs_jacobians(&(x + k3 * h), u);

            let dk1x = a1;
            let dk2x = a2 * (eye + dk1x * (0.5 * h));
            let dk3x = a3 * (eye + dk2x * (0.5 * h));
            let dk4x = a4 * (eye + dk3x * h);
            let dk1u = b1;
            let dk2u = a2 * dk1u * (0.5 * h) + b2;
            let dk3u = a3 * dk2u * (0.5 * h) + b3;
            let dk4u = a4 * dk3u * h + b4;

            let step_x = eye + (dk1x + (dk2x + dk3x) * 2.0 + dk4x) * (h / 6.0);
            let step_u = (dk1u + (dk2u + dk3u) * 2.0 + dk4u) * (h / 6.0);
            x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            su = step_x * su + step_u;
            sx = step_x * sx;
        }
        (x, sx, su)
    }
}

/// Discrete-time dynamics with exact first-order sensitivities.
pub trait DiscreteModel {
    fn step(&self, x: &Vector4<f64>, u: f64, dt: f64) -> Vector4<f64>;
    /// Next state and its derivatives with respect to `x` and `u`.
    fn step_with_sensitivities(&self, x: &Vector4<f64>, u: f64, dt: f64) -> (Vector4<f64>, Matrix4<f64>, Vector4<f64>);
    /// Physical parameters, consulted by the energy terminal cost.
    fn params(&self) -> &ModelParams;
}

impl DiscreteModel for ShootingModel {
    fn step(&self, x: &Vector4<f64>, u: f64, dt: f64) -> Vector4<f64> {
        ShootingModel::step(self, x, u, dt)
    }

    fn step_with_sensitivities(&self, x: &Vector4<f64>, u: f64, dt: f64) -> (Vector4<f64>, Matrix4<f64>, Vector4<f64>) {
        ShootingModel::step_with_sensitivities(self, x, u, dt)
    }

    fn params(&self) -> &ModelParams {
        &self.params
    }
}

/// A fully specified OCP instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ocp<M = ShootingModel> {
    pub model: M,
    pub grid: ShootingGrid,
    pub cost: CostConfig,
    pub bounds: Bounds,
    /// Value of the initial-state constraint `x[0] = x0`.
    pub x0: Vector4<f64>,
}

impl<M: DiscreteModel> Ocp<M> {
    pub fn new(model: M, grid: ShootingGrid, cost: CostConfig, bounds: Bounds, x0: State) -> Result<Self, OcpError> {
        cost.validate(grid.len())?;
        bounds.validate()?;
        Ok(Self { model, grid, cost, bounds, x0: x0.to_vector() })
    }

    pub fn horizon_len(&self) -> usize {
        self.grid.len()
    }

    /// Simulates the shooting model from `x0` under `us`.
    pub fn rollout(&self, x0: &Vector4<f64>, us: &[f64]) -> Vec<Vector4<f64>> {
        let mut xs = Vec::with_capacity(us.len() + 1);
        xs.push(*x0);
        for (n, u) in us.iter().enumerate() {
            let next = self.model.step(&xs[n], *u, self.grid.dts[n]);
            xs.push(next);
        }
        xs
    }

    pub fn objective(&self, xs: &[Vector4<f64>], us: &[f64]) -> f64 {
        let n = self.horizon_len();
        let stages: f64 = (0..n).map(|k| stage_cost_vec(&xs[k], us[k], k, &self.cost)).sum();
        stages + terminal_cost_vec(&xs[n], &self.cost, self.model.params())
    }
}
