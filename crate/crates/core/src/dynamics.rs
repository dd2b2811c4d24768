//! Planar double pendulum model.
//!
//! Angles follow the convention `q = [0, 0]` upright: `q1` is the absolute
//! angle of link 1 from the upward vertical and `q2` the angle of link 2
//! relative to link 1. The hanging equilibrium is `[pi, 0]`.
//!
//! The equations of motion are
//!
//! ```text
//! M(q) qdd + C(q, qd) qd = tau_g(q) + tau - F(qd)
//! ```
//!
//! where `F` is viscous plus tanh-smoothed Coulomb friction.

use core::f64::consts::PI;

use nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

// Test builds link std, whose inherent float methods shadow the trait.
#[allow(unused_imports)]
use num_traits::Float;

/// Which joint carries the motor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Robot {
    /// Motor at the elbow (joint 2).
    Acrobot,
    /// Motor at the shoulder (joint 1).
    Pendubot,
}

impl Robot {
    pub fn active_joint(self) -> usize {
        match self {
            Robot::Pendubot => 0,
            Robot::Acrobot => 1,
        }
    }

    pub fn inactive_joint(self) -> usize {
        1 - self.active_joint()
    }

    pub fn name(self) -> &'static str {
        match self {
            Robot::Acrobot => "acrobot",
            Robot::Pendubot => "pendubot",
        }
    }
}

impl core::str::FromStr for Robot {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "acrobot" => Ok(Robot::Acrobot),
            "pendubot" => Ok(Robot::Pendubot),
            _ => Err(ModelError::UnknownRobot),
        }
    }
}

/// Physical parameters of the double pendulum.
///
/// Defaults describe a lab-scale pendulum; they are configuration values,
/// not identified hardware parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    /// Joint-to-COM distances.
    pub r1: f64,
    pub r2: f64,
    /// Inertias about the link COM.
    pub i1: f64,
    pub i2: f64,
    /// Viscous friction [N m s / rad].
    pub b1: f64,
    pub b2: f64,
    /// Coulomb friction magnitude [N m].
    pub cf1: f64,
    pub cf2: f64,
    pub g: f64,
    pub robot: Robot,
    pub tau_max: f64,
    pub v_max: f64,
    /// Width of the tanh used in place of `sign(qd)` [rad/s].
    pub friction_smoothing: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            m1: 0.5,
            m2: 0.6,
            l1: 0.3,
            l2: 0.2,
            r1: 0.275,
            r2: 0.166,
            i1: 0.0475,
            i2: 0.0208,
            b1: 0.08,
            b2: 0.08,
            cf1: 0.093,
            cf2: 0.093,
            g: 9.81,
            robot: Robot::Pendubot,
            tau_max: 6.0,
            v_max: 30.0,
            friction_smoothing: 1e-2,
        }
    }
}

impl ModelParams {
    pub fn with_robot(mut self, robot: Robot) -> Self {
        self.robot = robot;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("r1", self.r1),
            ("r2", self.r2),
            ("I1", self.i1),
            ("I2", self.i2),
            ("tau_max", self.tau_max),
            ("v_max", self.v_max),
            ("friction_smoothing", self.friction_smoothing),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::NotPositive { name, value });
            }
        }
        let non_negative = [("b1", self.b1), ("b2", self.b2), ("cf1", self.cf1), ("cf2", self.cf2), ("g", self.g)];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ModelError::Negative { name, value });
            }
        }
        if self.r1 > self.l1 {
            return Err(ModelError::ComOutsideLink { link: 1 });
        }
        if self.r2 > self.l2 {
            return Err(ModelError::ComOutsideLink { link: 2 });
        }
        Ok(())
    }

    fn coupling(&self) -> f64 {
        self.m2 * self.l1 * self.r2
    }
}

/// Joint angles and velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub q1: f64,
    pub q2: f64,
    pub qd1: f64,
    pub qd2: f64,
}

impl State {
    pub const UPRIGHT: State = State { q1: 0.0, q2: 0.0, qd1: 0.0, qd2: 0.0 };
    pub const HANGING: State = State { q1: PI, q2: 0.0, qd1: 0.0, qd2: 0.0 };

    pub fn new(q1: f64, q2: f64, qd1: f64, qd2: f64) -> Self {
        Self { q1, q2, qd1, qd2 }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.q1, self.q2, self.qd1, self.qd2)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.q1.is_finite() && self.q2.is_finite() && self.qd1.is_finite() && self.qd2.is_finite()
    }
}

/// Torques at the two joints.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointTorque {
    pub u1: f64,
    pub u2: f64,
}

impl JointTorque {
    pub const ZERO: JointTorque = JointTorque { u1: 0.0, u2: 0.0 };

    pub fn new(u1: f64, u2: f64) -> Self {
        Self { u1, u2 }
    }

    /// Torque `u` on the active joint of `robot`, zero elsewhere.
    pub fn actuated(robot: Robot, u: f64) -> Self {
        let mut t = Self::ZERO;
        t.set(robot.active_joint(), u);
        t
    }

    pub fn get(&self, joint: usize) -> f64 {
        if joint == 0 {
            self.u1
        } else {
            self.u2
        }
    }

    pub fn set(&mut self, joint: usize, value: f64) {
        if joint == 0 {
            self.u1 = value;
        } else {
            self.u2 = value;
        }
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.u1, self.u2)
    }
}

pub fn mass_matrix(q: &Vector2<f64>, p: &ModelParams) -> Matrix2<f64> {
    let c2 = q[1].cos();
    let k = p.coupling();
    let m22 = p.i2 + p.m2 * p.r2 * p.r2;
    let m12 = m22 + k * c2;
    let m11 = p.i1 + p.m1 * p.r1 * p.r1 + p.i2 + p.m2 * (p.l1 * p.l1 + p.r2 * p.r2) + 2.0 * k * c2;
    Matrix2::new(m11, m12, m12, m22)
}

pub fn coriolis_matrix(q: &Vector2<f64>, qd: &Vector2<f64>, p: &ModelParams) -> Matrix2<f64> {
    let h = p.coupling() * q[1].sin();
    Matrix2::new(-h * qd[1], -h * (qd[0] + qd[1]), h * qd[0], 0.0)
}

/// Generalized gravity torque `-dV/dq`.
pub fn gravity_vector(q: &Vector2<f64>, p: &ModelParams) -> Vector2<f64> {
    let s1 = q[0].sin();
    let s12 = (q[0] + q[1]).sin();
    let t2 = p.m2 * p.g * p.r2 * s12;
    Vector2::new(p.g * (p.m1 * p.r1 + p.m2 * p.l1) * s1 + t2, t2)
}

/// `tanh(v / eps)`, the differentiable stand-in for `sign(v)`.
pub fn smooth_sign(v: f64, eps: f64) -> f64 {
    (v / eps).tanh()
}

fn smooth_sign_derivative(v: f64, eps: f64) -> f64 {
    let t = (v / eps).tanh();
    (1.0 - t * t) / eps
}

/// Friction torque opposing motion: `b qd + cf tanh(qd / eps)` per joint.
pub fn friction_torque(qd: &Vector2<f64>, p: &ModelParams) -> Vector2<f64> {
    let eps = p.friction_smoothing;
    Vector2::new(p.b1 * qd[0] + p.cf1 * smooth_sign(qd[0], eps), p.b2 * qd[1] + p.cf2 * smooth_sign(qd[1], eps))
}

/// Diagonal of `dF/dqd`.
pub fn friction_derivative(qd: &Vector2<f64>, p: &ModelParams) -> Vector2<f64> {
    let eps = p.friction_smoothing;
    Vector2::new(p.b1 + p.cf1 * smooth_sign_derivative(qd[0], eps), p.b2 + p.cf2 * smooth_sign_derivative(qd[1], eps))
}

/// Friction compensation a passive joint can exert: `min(budget, |F_i|) tanh(qd / eps)`.
///
/// Returns the torque and its derivative with respect to `qd`.
pub fn compensation_torque(qd: f64, joint: usize, budget: f64, p: &ModelParams) -> (f64, f64) {
    let eps = p.friction_smoothing;
    let (b, cf) = if joint == 0 { (p.b1, p.cf1) } else { (p.b2, p.cf2) };
    let f = b * qd + cf * smooth_sign(qd, eps);
    let df = b + cf * smooth_sign_derivative(qd, eps);
    let s = smooth_sign(qd, eps);
    let ds = smooth_sign_derivative(qd, eps);
    if f.abs() < budget {
        let sign = if f < 0.0 { -1.0 } else { 1.0 };
        (f.abs() * s, sign * df * s + f.abs() * ds)
    } else {
        (budget * s, budget * ds)
    }
}

fn split(x: &Vector4<f64>) -> (Vector2<f64>, Vector2<f64>) {
    (Vector2::new(x[0], x[1]), Vector2::new(x[2], x[3]))
}

fn solve2(m: &Matrix2<f64>, b: &Vector2<f64>) -> Vector2<f64> {
    // M is symmetric positive definite; Cramer's rule is exact enough for 2x2.
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Vector2::new((m[(1, 1)] * b[0] - m[(0, 1)] * b[1]) / det, (m[(0, 0)] * b[1] - m[(1, 0)] * b[0]) / det)
}

fn inverse2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det
}

/// State derivative for joint torque vector `tau` (both joints).
pub fn state_derivative(x: &Vector4<f64>, tau: &Vector2<f64>, p: &ModelParams) -> Vector4<f64> {
    let (q, qd) = split(x);
    let m = mass_matrix(&q, p);
    let rhs = gravity_vector(&q, p) + tau - coriolis_matrix(&q, &qd, p) * qd - friction_torque(&qd, p);
    let qdd = solve2(&m, &rhs);
    Vector4::new(qd[0], qd[1], qdd[0], qdd[1])
}

pub fn forward_dynamics(x: &State, u: &JointTorque, p: &ModelParams) -> Vector4<f64> {
    state_derivative(&x.to_vector(), &u.to_vector(), p)
}

/// Analytic Jacobians of [`state_derivative`] with respect to the state and
/// to both joint torques. The column of the active joint is the input
/// matrix of the underactuated system.
pub fn state_jacobians(x: &Vector4<f64>, tau: &Vector2<f64>, p: &ModelParams) -> (Matrix4<f64>, Matrix4x2<f64>) {
    let (q, qd) = split(x);
    let k = p.coupling();
    let (s2, c2) = (q[1].sin(), q[1].cos());
    let c1 = q[0].cos();
    let c12 = (q[0] + q[1]).cos();

    let m = mass_matrix(&q, p);
    let minv = inverse2(&m);
    let h = coriolis_matrix(&q, &qd, p) * qd;
    let rhs = gravity_vector(&q, p) + tau - h - friction_torque(&qd, p);
    let qdd = minv * rhs;

    // d(tau_g)/dq
    let g12 = p.m2 * p.g * p.r2 * c12;
    let dg = Matrix2::new(p.g * (p.m1 * p.r1 + p.m2 * p.l1) * c1 + g12, g12, g12, g12);
    // h = C qd only depends on q2 through sin(q2)
    let dh_dq2 = Vector2::new(-k * c2 * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]), k * c2 * qd[0] * qd[0]);
    let dh_dqd = Matrix2::new(-2.0 * k * s2 * qd[1], -2.0 * k * s2 * (qd[0] + qd[1]), 2.0 * k * s2 * qd[0], 0.0);
    // dM/dq2 applied to qdd
    let dm_qdd = Vector2::new(-2.0 * k * s2 * qdd[0] - k * s2 * qdd[1], -k * s2 * qdd[0]);

    let mut d_rhs_dq = dg;
    d_rhs_dq[(0, 1)] -= dh_dq2[0] + dm_qdd[0];
    d_rhs_dq[(1, 1)] -= dh_dq2[1] + dm_qdd[1];
    let dfric = friction_derivative(&qd, p);
    let mut d_rhs_dqd = -dh_dqd;
    d_rhs_dqd[(0, 0)] -= dfric[0];
    d_rhs_dqd[(1, 1)] -= dfric[1];

    let dqdd_dq = minv * d_rhs_dq;
    let dqdd_dqd = minv * d_rhs_dqd;

    let mut a = Matrix4::zeros();
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    a.fixed_view_mut::<2, 2>(2, 0).copy_from(&dqdd_dq);
    a.fixed_view_mut::<2, 2>(2, 2).copy_from(&dqdd_dqd);
    let mut b = Matrix4x2::zeros();
    b.fixed_view_mut::<2, 2>(2, 0).copy_from(&minv);
    (a, b)
}

pub fn dynamics_jacobians(x: &State, u: &JointTorque, p: &ModelParams) -> (Matrix4<f64>, Matrix4x2<f64>) {
    state_jacobians(&x.to_vector(), &u.to_vector(), p)
}

/// Potential energy with the hanging rest configuration as reference.
pub fn potential_energy(q: &Vector2<f64>, p: &ModelParams) -> f64 {
    let h1 = p.r1 * q[0].cos();
    let h2 = p.l1 * q[0].cos() + p.r2 * (q[0] + q[1]).cos();
    let hanging = p.m1 * p.r1 + p.m2 * (p.l1 + p.r2);
    p.g * (p.m1 * h1 + p.m2 * h2 + hanging)
}

pub fn energy_of(x: &Vector4<f64>, p: &ModelParams) -> f64 {
    let (q, qd) = split(x);
    0.5 * qd.dot(&(mass_matrix(&q, p) * qd)) + potential_energy(&q, p)
}

/// Gradient of [`energy_of`] with respect to the state.
pub fn energy_gradient(x: &Vector4<f64>, p: &ModelParams) -> Vector4<f64> {
    let (q, qd) = split(x);
    let k = p.coupling();
    let s2 = q[1].sin();
    // d/dq2 of 0.5 qd' M qd
    let dke_dq2 = -k * s2 * (qd[0] * qd[0] + qd[0] * qd[1]);
    let tau_g = gravity_vector(&q, p);
    let mqd = mass_matrix(&q, p) * qd;
    Vector4::new(-tau_g[0], dke_dq2 - tau_g[1], mqd[0], mqd[1])
}

pub fn total_energy(x: &State, p: &ModelParams) -> f64 {
    energy_of(&x.to_vector(), p)
}

/// Height of the end effector above the shoulder pivot.
pub fn tip_height(x: &State, p: &ModelParams) -> f64 {
    p.l1 * x.q1.cos() + p.l2 * (x.q1 + x.q2).cos()
}

/// One classical Runge-Kutta step of `f` with the input held constant.
pub fn rk4<F>(f: F, x: &Vector4<f64>, dt: f64) -> Vector4<f64>
where
    F: Fn(&Vector4<f64>) -> Vector4<f64>,
{
    let k1 = f(x);
    let k2 = f(&(x + k1 * (0.5 * dt)));
    let k3 = f(&(x + k2 * (0.5 * dt)));
    let k4 = f(&(x + k3 * dt));
    x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0)
}

pub fn integrate_step(x: &State, u: &JointTorque, dt: f64, p: &ModelParams) -> Result<State, ModelError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ModelError::NonPositiveStep(dt));
    }
    let tau = u.to_vector();
    let next = rk4(|v| state_derivative(v, &tau, p), &x.to_vector(), dt);
    Ok(State::from_vector(&next))
}

/// Maps an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let turns = ((theta - PI) / (2.0 * PI)).ceil();
    let wrapped = theta - 2.0 * PI * turns;
    // Rounding can land a hair outside the interval.
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

pub fn wrap_state(x: &State) -> State {
    State { q1: wrap_angle(x.q1), q2: wrap_angle(x.q2), ..*x }
}
