use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix4, RowVector4, Vector4};

use super::{Solution, SolverSettings, Status};
use crate::clock::Clock;
use crate::ocp::{stage_derivatives_vec, terminal_derivatives_vec, DiscreteModel, Ocp, StageDerivatives};

const MAX_REGULARIZATION: f64 = 1e10;

/// Relative cost change below which a line search cannot tell progress from
/// roundoff; such steps are taken in full.
const MERIT_RESOLUTION: f64 = 1e4 * f64::EPSILON;

struct Expansion {
    a: Vec<Matrix4<f64>>,
    b: Vec<Vector4<f64>>,
    stage: Vec<StageDerivatives>,
    gn: Vector4<f64>,
    hn: Matrix4<f64>,
}

fn expand<M: DiscreteModel>(ocp: &Ocp<M>, xs: &[Vector4<f64>], us: &[f64]) -> Expansion {
    let n_stages = us.len();
    let mut a = Vec::with_capacity(n_stages);
    let mut b = Vec::with_capacity(n_stages);
    let mut stage = Vec::with_capacity(n_stages);
    for n in 0..n_stages {
        let (_, an, bn) = ocp.model.step_with_sensitivities(&xs[n], us[n], ocp.grid.dts[n]);
        a.push(an);
        b.push(bn);
        stage.push(stage_derivatives_vec(&xs[n], us[n], n, &ocp.cost));
    }
    let (gn, hn) = terminal_derivatives_vec(&xs[n_stages], &ocp.cost, ocp.model.params());
    Expansion { a, b, stage, gn, hn }
}

fn at_upper(u: f64, hi: f64) -> bool {
    u >= hi - 1e-12 * (1.0 + hi.abs())
}

fn at_lower(u: f64, lo: f64) -> bool {
    u <= lo + 1e-12 * (1.0 + lo.abs())
}

/// Adjoint states and the projected single-shooting gradient.
fn adjoint<M: DiscreteModel>(ocp: &Ocp<M>, e: &Expansion, us: &[f64]) -> (Vec<Vector4<f64>>, Vec<f64>, f64) {
    let n_stages = us.len();
    let mut lam = vec![Vector4::zeros(); n_stages + 1];
    let mut grad = vec![0.0; n_stages];
    lam[n_stages] = e.gn;
    let mut worst: f64 = 0.0;
    for n in (0..n_stages).rev() {
        let g = e.stage[n].gu + e.b[n].dot(&lam[n + 1]);
        grad[n] = g;
        let blocked = (at_upper(us[n], ocp.bounds.u_hi) && g < 0.0) || (at_lower(us[n], ocp.bounds.u_lo) && g > 0.0);
        let projected = if blocked { 0.0 } else { g };
        worst = worst.max(projected.abs());
        lam[n] = e.stage[n].gx + e.a[n].transpose() * lam[n + 1];
    }
    (lam, grad, worst)
}

struct Policy {
    k: Vec<f64>,
    gain: Vec<RowVector4<f64>>,
    /// First- and second-order terms of the predicted decrease.
    d1: f64,
    d2: f64,
}

fn backward<M: DiscreteModel>(ocp: &Ocp<M>, e: &Expansion, us: &[f64], reg: f64) -> Option<Policy> {
    let n_stages = us.len();
    let mut vx = e.gn;
    let mut vxx = e.hn;
    let mut k = vec![0.0; n_stages];
    let mut gain = vec![RowVector4::zeros(); n_stages];
    let (mut d1, mut d2) = (0.0, 0.0);
    for n in (0..n_stages).rev() {
        let (a, b, s) = (&e.a[n], &e.b[n], &e.stage[n]);
        let qx = s.gx + a.transpose() * vx;
        let qu = s.gu + b.dot(&vx);
        let vb = vxx * b;
        let qxx = s.hxx + a.transpose() * vxx * a;
        let quu = s.huu + b.dot(&vb) + reg;
        let qux = s.hux + vb.transpose() * a;
        if !(quu > 0.0) || !quu.is_finite() {
            return None;
        }
        let step = -qu / quu;
        let clamped =
            (at_upper(us[n], ocp.bounds.u_hi) && step > 0.0) || (at_lower(us[n], ocp.bounds.u_lo) && step < 0.0);
        if clamped {
            vx = qx;
            vxx = qxx;
        } else {
            let kn = -qux / quu;
            vx = qx + kn.transpose() * (quu * step) + kn.transpose() * qu + qux.transpose() * step;
            let v = qxx + kn.transpose() * quu * kn + kn.transpose() * qux + qux.transpose() * kn;
            vxx = 0.5 * (v + v.transpose());
            k[n] = step;
            gain[n] = kn;
            d1 += step * qu;
            d2 += 0.5 * step * step * quu;
        }
    }
    Some(Policy { k, gain, d1, d2 })
}

fn forward<M: DiscreteModel>(
    ocp: &Ocp<M>,
    xs: &[Vector4<f64>],
    us: &[f64],
    p: &Policy,
    alpha: f64,
) -> (Vec<Vector4<f64>>, Vec<f64>) {
    let n_stages = us.len();
    let mut new_x = Vec::with_capacity(n_stages + 1);
    let mut new_u = Vec::with_capacity(n_stages);
    let mut x = ocp.x0;
    for n in 0..n_stages {
        let u = (us[n] + alpha * p.k[n] + (p.gain[n] * (x - xs[n]))[0]).clamp(ocp.bounds.u_lo, ocp.bounds.u_hi);
        new_x.push(x);
        new_u.push(u);
        x = ocp.model.step(&x, u, ocp.grid.dts[n]);
    }
    new_x.push(x);
    (new_x, new_u)
}

/// iLQR: Gauss-Newton value expansion, Levenberg-Marquardt damping on the
/// input Hessian, backtracking forward passes with input clamping.
///
/// Only the guess inputs are used; states come from simulating them.
/// Converges when the projected gradient of the single-shooting cost is
/// below `kkt_tol`, which is also what `kkt_residual` reports.
pub fn ddp_solve<M: DiscreteModel>(
    ocp: &Ocp<M>,
    guess: &Solution,
    settings: &SolverSettings,
    clock: &dyn Clock,
) -> Solution {
    let start = clock.now();
    let mut us: Vec<f64> = guess.us.iter().map(|u| u.clamp(ocp.bounds.u_lo, ocp.bounds.u_hi)).collect();
    let mut xs = ocp.rollout(&ocp.x0, &us);
    let mut cost = ocp.objective(&xs, &us);
    let mut reg = settings.levenberg_marquardt;
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut lam;
    let mut grad;
    let mut kkt;

    let status = loop {
        let t0 = clock.now();
        let e = expand(ocp, &xs, &us);
        (lam, grad, kkt) = adjoint(ocp, &e, &us);
        if kkt <= settings.kkt_tol {
            break Status::Converged;
        }
        if iterations >= settings.max_iter {
            break Status::MaxIter;
        }
        if t0 - start > settings.max_solve_time {
            break Status::Timeout;
        }
        iterations += 1;
        let Some(policy) = backward(ocp, &e, &us, reg) else {
            reg *= 10.0;
            if reg > MAX_REGULARIZATION {
                break Status::MaxIter;
            }
            continue;
        };
        if -(policy.d1 + policy.d2) <= MERIT_RESOLUTION * (1.0 + cost.abs()) {
            // The cost is flat to working precision; judge the step by the
            // projected gradient instead.
            let mut alpha = 1.0;
            while alpha >= settings.min_step {
                let (nx, nu) = forward(ocp, &xs, &us, &policy, alpha);
                if adjoint(ocp, &expand(ocp, &nx, &nu), &nu).2 < kkt {
                    cost = ocp.objective(&nx, &nu);
                    (xs, us) = (nx, nu);
                    break;
                }
                alpha *= settings.backtrack_factor;
            }
            if alpha < settings.min_step {
                reg *= 10.0;
                if reg > MAX_REGULARIZATION {
                    break Status::MaxIter;
                }
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= settings.min_step {
            let (nx, nu) = forward(ocp, &xs, &us, &policy, alpha);
            let c = ocp.objective(&nx, &nu);
            let predicted = alpha * policy.d1 + alpha * alpha * policy.d2;
            if c.is_finite() && c <= cost + settings.armijo * predicted.min(0.0) && c <= cost {
                trace.push((cost, c));
                xs = nx;
                us = nu;
                cost = c;
                accepted = true;
                break;
            }
            alpha *= settings.backtrack_factor;
        }
        if accepted {
            reg = (reg * 0.1).max(settings.levenberg_marquardt);
        } else {
            reg *= 10.0;
            if reg > MAX_REGULARIZATION {
                break Status::MaxIter;
            }
        }
    };

    let mut sol = Solution::guess(xs, us);
    for (n, g) in grad.iter().enumerate() {
        let u = sol.us[n];
        if (at_upper(u, ocp.bounds.u_hi) && *g < 0.0) || (at_lower(u, ocp.bounds.u_lo) && *g > 0.0) {
            sol.multipliers.u_bounds[n] = -g;
        }
    }
    sol.multipliers.pis = lam;
    sol.status = status;
    sol.kkt_residual = kkt;
    sol.iterations = iterations;
    sol.trace = trace;
    sol.total_time = clock.now() - start;
    sol.prepare_time = sol.total_time;
    sol
}
