use alloc::vec::Vec;

use nalgebra::Vector4;

use super::qp::{KktResiduals, PreparedQp, QpSolution, QpStatus};
use super::{linearize_with, nlp_kkt, Globalization, QpData, Solution, SolverSettings, Status};
use crate::clock::Clock;
use crate::dynamics::State;
use crate::ocp::{DiscreteModel, Ocp};

/// Damping beyond which a failing QP is given up.
const MAX_REGULARIZATION: f64 = 1e4;

/// Relative merit change below which a line search cannot tell progress from
/// roundoff; such steps are taken in full.
const MERIT_RESOLUTION: f64 = 1e4 * f64::EPSILON;

/// Takes a step of length `alpha` and blends the multipliers accordingly.
fn apply_step(sol: &Solution, qs: &QpSolution<4, 1>, alpha: f64) -> Solution {
    let m = &sol.multipliers;
    let blend4 = |old: &[Vector4<f64>], new: &[Vector4<f64>]| -> Vec<Vector4<f64>> {
        old.iter().zip(new).map(|(o, n)| o * (1.0 - alpha) + n * alpha).collect()
    };
    let mut out = Solution::guess(
        sol.xs.iter().zip(&qs.xs).map(|(x, d)| x + d * alpha).collect(),
        sol.us.iter().zip(&qs.us).map(|(u, d)| u + d[0] * alpha).collect(),
    );
    out.multipliers.pis = blend4(&m.pis, &qs.pis);
    out.multipliers.x_bounds = blend4(&m.x_bounds, &qs.x_mult);
    out.multipliers.u_bounds =
        m.u_bounds.iter().zip(&qs.u_mult).map(|(o, n)| o * (1.0 - alpha) + n[0] * alpha).collect();
    out
}

fn step_is_finite(qs: &QpSolution<4, 1>) -> bool {
    qs.xs.iter().all(|x| x.iter().all(|v| v.is_finite()))
        && qs.us.iter().all(|u| u[0].is_finite())
        && qs.pis.iter().all(|p| p.iter().all(|v| v.is_finite()))
}

fn bound_violation(v: f64, lo: f64, hi: f64) -> f64 {
    (lo - v).max(0.0) + (v - hi).max(0.0)
}

/// Constraint violation in the L1 norm: dynamics defects, initial-state
/// mismatch and bound violations.
fn infeasibility<M: DiscreteModel>(ocp: &Ocp<M>, sol: &Solution) -> f64 {
    let b = &ocp.bounds;
    let n_stages = sol.us.len();
    let mut v: f64 = (ocp.x0 - sol.xs[0]).abs().sum();
    for n in 0..n_stages {
        let next = ocp.model.step(&sol.xs[n], sol.us[n], ocp.grid.dts[n]);
        v += (next - sol.xs[n + 1]).abs().sum();
        v += bound_violation(sol.us[n], b.u_lo, b.u_hi);
    }
    for n in 1..=n_stages {
        for i in 0..4 {
            let (lo, hi) = if n == n_stages {
                (b.x_lo[i].max(b.xf_lo[i]), b.x_hi[i].min(b.xf_hi[i]))
            } else {
                (b.x_lo[i], b.x_hi[i])
            };
            v += bound_violation(sol.xs[n][i], lo, hi);
        }
    }
    v
}

fn merit<M: DiscreteModel>(ocp: &Ocp<M>, sol: &Solution, penalty: f64) -> f64 {
    ocp.objective(&sol.xs, &sol.us) + penalty * infeasibility(ocp, sol)
}

/// Directional derivative of the cost along a QP step.
fn cost_slope(qp: &QpData, qs: &QpSolution<4, 1>) -> f64 {
    let n_stages = qp.horizon();
    let mut d = qp.qvn.dot(&qs.xs[n_stages]);
    for (n, st) in qp.stages.iter().enumerate() {
        d += st.qv.dot(&qs.xs[n]) + st.rv[0] * qs.us[n][0];
    }
    d
}

fn max_multiplier(qs: &QpSolution<4, 1>) -> f64 {
    let pi = qs.pis.iter().map(|p| p.amax()).fold(0.0, f64::max);
    let xm = qs.x_mult.iter().map(|p| p.amax()).fold(0.0, f64::max);
    let um = qs.u_mult.iter().map(|p| p.amax()).fold(0.0, f64::max);
    pi.max(xm).max(um)
}

/// Full SQP with a Gauss-Newton Hessian, backtracking on an L1 merit
/// function (or full steps, see [`Globalization`]).
pub fn sqp_solve<M: DiscreteModel>(
    ocp: &Ocp<M>,
    guess: &Solution,
    settings: &SolverSettings,
    clock: &dyn Clock,
) -> Solution {
    let start = clock.now();
    let mut sol = guess.clone();
    sol.trace.clear();
    let mut prepare_time = 0.0;
    let mut feedback_time = 0.0;
    let mut penalty: f64 = 0.0;
    let mut reg = settings.levenberg_marquardt;
    let mut iterations = 0;
    let qp_settings = settings.qp_settings();

    let status = loop {
        let t0 = clock.now();
        let qp = linearize_with(ocp, &sol, reg);
        sol.kkt_residual = nlp_kkt(&qp, &sol).max();
        if sol.kkt_residual <= settings.kkt_tol {
            break Status::Converged;
        }
        if iterations >= settings.max_iter {
            break Status::MaxIter;
        }
        if t0 - start > settings.max_solve_time {
            break Status::Timeout;
        }
        let prepared = PreparedQp::new(qp, qp_settings);
        let t1 = clock.now();
        let qs = prepared.feedback(&prepared.qp().x_init);
        let t2 = clock.now();
        prepare_time += t1 - t0;
        feedback_time += t2 - t1;
        iterations += 1;

        if qs.status == QpStatus::Infeasible || !step_is_finite(&qs) {
            reg *= 10.0;
            if reg > MAX_REGULARIZATION {
                break Status::Infeasible;
            }
            continue;
        }
        match settings.globalization {
            Globalization::FullStep => sol = apply_step(&sol, &qs, 1.0),
            Globalization::MeritBacktracking => {
                penalty = penalty.max(1.1 * max_multiplier(&qs) + 1e-6);
                let phi0 = merit(ocp, &sol, penalty);
                let slope = (cost_slope(prepared.qp(), &qs) - penalty * infeasibility(ocp, &sol)).min(0.0);
                if -slope <= MERIT_RESOLUTION * (1.0 + phi0.abs()) {
                    // The merit is flat to working precision; judge the step
                    // by the optimality residual instead.
                    let mut alpha = 1.0;
                    while alpha >= settings.min_step {
                        let trial = apply_step(&sol, &qs, alpha);
                        if nlp_kkt(&linearize_with(ocp, &trial, reg), &trial).max() < sol.kkt_residual {
                            let trace = core::mem::take(&mut sol.trace);
                            sol = trial;
                            sol.trace = trace;
                            break;
                        }
                        alpha *= settings.backtrack_factor;
                    }
                    if alpha < settings.min_step {
                        break Status::MaxIter;
                    }
                    continue;
                }
                let mut alpha = 1.0;
                let mut accepted = None;
                while alpha >= settings.min_step {
                    let trial = apply_step(&sol, &qs, alpha);
                    let phi = merit(ocp, &trial, penalty);
                    if phi.is_finite() && phi <= phi0 + settings.armijo * alpha * slope {
                        accepted = Some((trial, phi));
                        break;
                    }
                    alpha *= settings.backtrack_factor;
                }
                match accepted {
                    Some((trial, phi)) => {
                        let trace = core::mem::take(&mut sol.trace);
                        sol = trial;
                        sol.trace = trace;
                        sol.trace.push((phi0, phi));
                        reg = (reg * 0.1).max(settings.levenberg_marquardt);
                    }
                    None => {
                        reg *= 10.0;
                        if reg > MAX_REGULARIZATION {
                            break Status::MaxIter;
                        }
                    }
                }
            }
        }
    };
    sol.status = status;
    sol.iterations = iterations;
    sol.prepare_time = prepare_time;
    sol.feedback_time = feedback_time;
    sol.total_time = clock.now() - start;
    sol
}

/// Everything of an RTI iteration that does not depend on the initial state.
#[derive(Debug, Clone)]
pub struct RtiPrepared {
    guess: Solution,
    qp: PreparedQp<4, 1>,
    /// Optimality of the guess, excluding the initial-state mismatch.
    kkt: KktResiduals,
    prepare_time: f64,
}

impl RtiPrepared {
    /// The linearization point.
    pub fn guess(&self) -> &Solution {
        &self.guess
    }

    pub fn prepare_time(&self) -> f64 {
        self.prepare_time
    }
}

/// Preparation phase: linearization at `guess`, QP factorization and
/// active-set identification at the nominal initial state `ocp.x0`.
pub fn rti_prepare<M: DiscreteModel>(
    ocp: &Ocp<M>,
    guess: &Solution,
    settings: &SolverSettings,
    clock: &dyn Clock,
) -> RtiPrepared {
    let t0 = clock.now();
    let mut qp = linearize_with(ocp, guess, settings.levenberg_marquardt);
    let nominal = qp.x_init;
    qp.x_init = Vector4::zeros();
    let kkt = nlp_kkt(&qp, guess);
    qp.x_init = nominal;
    let prepared = PreparedQp::new(qp, settings.qp_settings());
    let mut g = guess.clone();
    g.trace.clear();
    RtiPrepared { guess: g, qp: prepared, kkt, prepare_time: clock.now() - t0 }
}

/// Feedback phase: completes the QP for the measured `x0` and applies the
/// full step.
pub fn rti_feedback(prepared: &RtiPrepared, x0: &State, clock: &dyn Clock) -> Solution {
    let t0 = clock.now();
    let dx0 = x0.to_vector() - prepared.guess.xs[0];
    let qs = prepared.qp.feedback(&dx0);
    let infeasible = qs.status == QpStatus::Infeasible || !step_is_finite(&qs);
    let mut sol = if infeasible { prepared.guess.clone() } else { apply_step(&prepared.guess, &qs, 1.0) };
    let mut kkt = prepared.kkt;
    kkt.equality = kkt.equality.max(dx0.amax());
    sol.kkt_residual = kkt.max();
    sol.status = if infeasible { Status::Infeasible } else { Status::Converged };
    sol.iterations = 1;
    sol.prepare_time = prepared.prepare_time;
    sol.feedback_time = clock.now() - t0;
    sol.total_time = sol.prepare_time + sol.feedback_time;
    sol
}
