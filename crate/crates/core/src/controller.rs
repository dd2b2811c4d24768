//! Receding-horizon control loop around the OCP solvers.
//!
//! Every MPC update solves the OCP from the measured state and applies the
//! first input. With the RTI backend the update runs the feedback phase on the
//! linearization prepared in the previous cycle and then prepares the next
//! one from the time-shifted solution. Between updates the input is held, or
//! tracked by a PID loop when `pd_tracking` is on.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, NullClock};
use crate::dynamics::{compensation_torque, wrap_angle, JointTorque, ModelParams, Robot, State};
use crate::error::ControllerError;
use crate::ocp::{build_grid, Bounds, CostConfig, CostVariant, Ocp, ShootingModel};
use crate::solver::{
    ddp_solve, rti_feedback, rti_prepare, sqp_solve, time_shift_warm_start, Backend, QpMode, RtiPrepared, Solution,
    SolverSettings, Status,
};

// Test builds link std, whose inherent float methods shadow the trait.
#[allow(unused_imports)]
use num_traits::Float;

/// Controller configuration. Field names follow the configuration keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerOptions {
    /// Number of shooting intervals.
    #[serde(rename = "N_horizon")]
    pub n_horizon: usize,
    /// Length of the prediction window [s].
    pub prediction_horizon: f64,
    /// Iteration limit of full SQP/DDP solves and of each warm-start run.
    #[serde(rename = "Nlp_max_iter")]
    pub nlp_max_iter: usize,
    pub max_solve_time: f64,
    pub solver_type: Backend,
    pub wrap_angle: bool,
    pub warm_start: bool,
    /// Per-node stage cost multipliers; empty means all ones.
    pub scaling: Vec<f64>,
    pub nonuniform_grid: bool,
    pub use_energy_for_terminal_cost: bool,
    /// Stage cost on `(cos, sin)` of the angles instead of the raw angles.
    pub embed_angles: bool,
    pub fallback_on_solver_fail: bool,
    /// Torque budget of the passive joint for cancelling its friction [N m].
    pub friction_compensation_on_inactive_joint: f64,
    pub mpc_cycle_dt: f64,
    pub pd_tracking: bool,
    pub outer_cycle_dt: f64,
    #[serde(rename = "pd_KP")]
    pub pd_kp: Option<f64>,
    #[serde(rename = "pd_KD")]
    pub pd_kd: Option<f64>,
    #[serde(rename = "pd_KI")]
    pub pd_ki: Option<f64>,
    #[serde(rename = "Q")]
    pub q: [f64; 4],
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "Qf")]
    pub qf: [f64; 4],
    pub energy_weight: f64,
    pub qp_solver_tolerance: f64,
    pub qp_mode: QpMode,
    /// Longest RK4 step inside a shooting interval [s].
    pub integrator_substep: f64,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        let cost = CostConfig::reference(20);
        Self {
            n_horizon: 20,
            prediction_horizon: 0.5,
            nlp_max_iter: 500,
            max_solve_time: 1.0,
            solver_type: Backend::SqpRti,
            wrap_angle: true,
            warm_start: true,
            scaling: Vec::new(),
            nonuniform_grid: false,
            use_energy_for_terminal_cost: false,
            embed_angles: false,
            fallback_on_solver_fail: false,
            friction_compensation_on_inactive_joint: 0.5,
            mpc_cycle_dt: 0.01,
            pd_tracking: false,
            outer_cycle_dt: 0.001,
            pd_kp: None,
            pd_kd: None,
            pd_ki: None,
            q: cost.q,
            r: cost.r,
            qf: cost.qf,
            energy_weight: cost.energy_weight,
            qp_solver_tolerance: 1e-3,
            qp_mode: QpMode::Robust,
            integrator_substep: 0.005,
        }
    }
}

fn invalid(name: &'static str, reason: &'static str) -> ControllerError {
    ControllerError::InvalidOption { name, reason }
}

fn positive(name: &'static str, v: f64) -> Result<(), ControllerError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, "must be positive"))
    }
}

impl ControllerOptions {
    /// Starting point for `robot`. The Pendubot uses the defaults. The
    /// Acrobot has to pump energy through the elbow over several swings, and
    /// the default angle weights pin it to the bottom: it gets the
    /// turn-invariant cost with light stage weights instead.
    pub fn for_robot(robot: Robot) -> Self {
        match robot {
            Robot::Pendubot => Self::default(),
            Robot::Acrobot => Self { embed_angles: true, q: [1.0, 1.0, 0.1, 0.1], ..Self::default() },
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.n_horizon < 1 {
            return Err(invalid("N_horizon", "must be at least 1"));
        }
        positive("prediction_horizon", self.prediction_horizon)?;
        positive("max_solve_time", self.max_solve_time)?;
        positive("mpc_cycle_dt", self.mpc_cycle_dt)?;
        positive("outer_cycle_dt", self.outer_cycle_dt)?;
        positive("qp_solver_tolerance", self.qp_solver_tolerance)?;
        positive("integrator_substep", self.integrator_substep)?;
        if self.nlp_max_iter < 1 {
            return Err(invalid("Nlp_max_iter", "must be at least 1"));
        }
        if !self.scaling.is_empty() && self.scaling.len() != self.n_horizon {
            return Err(invalid("scaling", "needs one entry per shooting interval"));
        }
        if self.scaling.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(invalid("scaling", "entries must be positive"));
        }
        let budget = self.friction_compensation_on_inactive_joint;
        if !(budget >= 0.0 && budget.is_finite()) {
            return Err(invalid("friction_compensation_on_inactive_joint", "must be non-negative"));
        }
        if self.pd_tracking {
            if self.outer_cycle_dt > self.mpc_cycle_dt {
                return Err(invalid("outer_cycle_dt", "must not exceed mpc_cycle_dt with pd_tracking"));
            }
            for (name, gain) in [("pd_KP", self.pd_kp), ("pd_KD", self.pd_kd), ("pd_KI", self.pd_ki)] {
                match gain {
                    None => return Err(invalid(name, "required when pd_tracking is enabled")),
                    Some(g) if !g.is_finite() => return Err(invalid(name, "must be finite")),
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    pub fn cost_variant(&self) -> CostVariant {
        if self.use_energy_for_terminal_cost {
            CostVariant::EnergyTerminal
        } else if self.embed_angles {
            CostVariant::EmbeddedAngle
        } else {
            CostVariant::Quadratic
        }
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            backend: self.solver_type,
            max_iter: self.nlp_max_iter,
            qp_tol: self.qp_solver_tolerance,
            qp_mode: self.qp_mode,
            max_solve_time: self.max_solve_time,
            ..SolverSettings::default()
        }
    }

    /// Interval at which [`Controller::compute_control`] expects to be called.
    pub fn call_period(&self) -> f64 {
        if self.pd_tracking {
            self.outer_cycle_dt
        } else {
            self.mpc_cycle_dt
        }
    }

    /// The OCP the controller solves, with `x0` as initial state.
    pub fn build_ocp(&self, params: &ModelParams, target: &State, x0: State) -> Result<Ocp, ControllerError> {
        self.validate()?;
        let n = self.n_horizon;
        let model = ShootingModel::new(*params, self.friction_compensation_on_inactive_joint, self.integrator_substep)?;
        let grid = build_grid(n, self.prediction_horizon, self.nonuniform_grid)?;
        let cost = CostConfig {
            q: self.q,
            r: self.r,
            qf: self.qf,
            target: *target,
            variant: self.cost_variant(),
            node_scaling: if self.scaling.is_empty() { vec![1.0; n] } else { self.scaling.clone() },
            energy_weight: self.energy_weight,
        };
        Ok(Ocp::new(model, grid, cost, Bounds::from_model(params), x0)?)
    }
}

/// PID gains acting on the active joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
}

/// `u_ff + KP e + KI ∫e + KD ė` on the active joint, with `e` the wrapped
/// angle error and `ė` the velocity error of `x_ref` against `x_meas`.
///
/// The integrator only accumulates while the output stays within
/// `±tau_max`; past that it is pulled back so the output sits on the limit.
pub fn pid_adjust(
    integral: &mut f64,
    active: usize,
    x_meas: &State,
    x_ref: &State,
    u_ff: f64,
    gains: &PidGains,
    dt_outer: f64,
    tau_max: f64,
) -> f64 {
    let (r, m) = (x_ref.to_vector(), x_meas.to_vector());
    let e = wrap_angle(r[active] - m[active]);
    let ed = r[2 + active] - m[2 + active];
    *integral += e * dt_outer;
    let without_i = u_ff + gains.kp * e + gains.kd * ed;
    let mut u = without_i + gains.ki * *integral;
    if u.abs() > tau_max && gains.ki != 0.0 {
        let limit = tau_max.copysign(u);
        *integral = (limit - without_i) / gains.ki;
        u = without_i + gains.ki * *integral;
    }
    u
}

/// Torque the passive joint spends on cancelling its own friction, aligned
/// with its velocity and at most `budget` in magnitude.
pub fn friction_compensation(qd: &[f64; 2], inactive: usize, budget: f64, params: &ModelParams) -> f64 {
    compensation_torque(qd[inactive], inactive, budget, params).0
}

/// Mutable part of the controller.
#[derive(Debug, Clone)]
pub struct ControllerState {
    /// Last usable solution; its inputs are the fallback buffer.
    pub stored_solution: Solution,
    /// Linearization prepared for the next RTI feedback.
    pub prepared: Option<RtiPrepared>,
    pub pid_integrator: f64,
    pub cycle_count: u64,
    pub last_applied_u: f64,
}

impl ControllerState {
    pub fn new(stored_solution: Solution) -> Self {
        Self { stored_solution, prepared: None, pid_integrator: 0.0, cycle_count: 0, last_applied_u: 0.0 }
    }

    /// Pops the head of the stored inputs and appends a zero.
    pub fn fallback_step(&mut self) -> f64 {
        let s = &mut self.stored_solution;
        let n = s.us.len();
        if n == 0 {
            return 0.0;
        }
        let u = s.us.remove(0);
        s.us.push(0.0);
        s.xs.remove(0);
        s.xs.push(s.xs[n - 1]);
        u
    }

    pub fn buffer(&self) -> &[f64] {
        &self.stored_solution.us
    }
}

/// What happened in one call to [`Controller::compute_control`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleTelemetry {
    pub t: f64,
    /// Whether this call ran the solver; otherwise the last update is held.
    pub mpc_update: bool,
    pub status: Status,
    pub kkt: f64,
    pub iterations: usize,
    pub prepare_time: f64,
    pub feedback_time: f64,
    /// Wall time of the whole call.
    pub cycle_time: f64,
    pub failed: bool,
    pub used_fallback: bool,
    /// Active-joint torque before the final clamp.
    pub u_unclamped: f64,
}

#[derive(Debug, Clone, Copy)]
struct Held {
    u_ff: f64,
    x_ref: State,
}

/// Receding-horizon controller for one plant.
#[derive(Debug, Clone)]
pub struct Controller<C: Clock = NullClock> {
    options: ControllerOptions,
    params: ModelParams,
    ocp: Ocp,
    settings: SolverSettings,
    state: ControllerState,
    held: Option<Held>,
    next_update: f64,
    telemetry: Option<CycleTelemetry>,
    forced_failures: usize,
    clock: C,
}

fn shift_turns(v: &mut Vector4<f64>, turns: [f64; 2]) {
    v[0] += 2.0 * PI * turns[0];
    v[1] += 2.0 * PI * turns[1];
}

/// Adds whole turns to every node so that the first state's angles lie in
/// `(-pi, pi]`.
fn wrap_solution(sol: &mut Solution) {
    let x0 = sol.xs[0];
    let turns = [(wrap_angle(x0[0]) - x0[0]) / (2.0 * PI), (wrap_angle(x0[1]) - x0[1]) / (2.0 * PI)];
    let turns = [turns[0].round(), turns[1].round()];
    if turns != [0.0, 0.0] {
        sol.xs.iter_mut().for_each(|x| shift_turns(x, turns));
    }
}

/// Frequencies [Hz] of the sinusoidal input sequences tried by the warm start.
const PROBE_FREQUENCIES: [f64; 3] = [1.0, 1.5, 2.0];

/// Initial input sequences: zero, then full-torque sinusoids of both signs.
pub fn probe_inputs(ocp: &Ocp) -> Vec<Vec<f64>> {
    let n = ocp.horizon_len();
    let times = ocp.grid.node_times();
    let amplitude = ocp.bounds.u_hi.min(-ocp.bounds.u_lo);
    let mut out = vec![vec![0.0; n]];
    for f in PROBE_FREQUENCIES {
        for sign in [1.0, -1.0] {
            out.push(times[..n].iter().map(|t| sign * amplitude * (2.0 * PI * f * t).sin()).collect());
        }
    }
    out
}

/// Runs SQP from every [`probe_inputs`] rollout and keeps the usable result
/// with the lowest objective. The zero-input rollout wins ties and is the
/// answer when nothing else is usable.
pub fn warm_start_guess<C: Clock>(ocp: &Ocp, settings: &SolverSettings, clock: &C) -> Solution {
    let mut best: Option<(f64, Solution)> = None;
    for us in probe_inputs(ocp) {
        let sol = sqp_solve(ocp, &Solution::from_rollout(ocp, us), settings, clock);
        if !sol.status.is_usable() {
            continue;
        }
        let obj = ocp.objective(&sol.xs, &sol.us);
        if obj.is_finite() && best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, sol));
        }
    }
    best.map_or_else(|| Solution::from_rollout(ocp, vec![0.0; ocp.horizon_len()]), |(_, s)| s)
}

impl Controller<NullClock> {
    /// Controller for a plant starting at rest in the hanging position.
    pub fn new(options: ControllerOptions, params: ModelParams, target: State) -> Result<Self, ControllerError> {
        Self::with_clock(options, params, target, State::HANGING, NullClock)
    }
}

impl<C: Clock> Controller<C> {
    /// Builds the OCP and the initial guess for a plant starting at `x0`.
    ///
    /// The guess is the zero-input rollout from `x0`, or with `warm_start`
    /// the result of [`warm_start_guess`] with up to `Nlp_max_iter` SQP
    /// iterations per start.
    pub fn with_clock(
        options: ControllerOptions,
        params: ModelParams,
        target: State,
        x0: State,
        clock: C,
    ) -> Result<Self, ControllerError> {
        params.validate()?;
        let mut x0 = x0;
        if options.wrap_angle {
            x0.q1 = wrap_angle(x0.q1);
            x0.q2 = wrap_angle(x0.q2);
        }
        let ocp = options.build_ocp(&params, &target, x0)?;
        let settings = options.solver_settings();
        let n = options.n_horizon;
        let guess = if options.warm_start {
            let init = SolverSettings { backend: Backend::Sqp, max_iter: options.nlp_max_iter, ..settings.clone() };
            warm_start_guess(&ocp, &init, &clock)
        } else {
            Solution::from_rollout(&ocp, vec![0.0; n])
        };
        let mut guess = guess;
        guess.trace.clear();
        let mut state = ControllerState::new(guess.clone());
        if options.solver_type == Backend::SqpRti {
            state.prepared = Some(rti_prepare(&ocp, &guess, &settings, &clock));
        }
        Ok(Self {
            options,
            params,
            ocp,
            settings,
            state,
            held: None,
            next_update: f64::NEG_INFINITY,
            telemetry: None,
            forced_failures: 0,
            clock,
        })
    }

    pub fn options(&self) -> &ControllerOptions {
        &self.options
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn ocp(&self) -> &Ocp {
        &self.ocp
    }

    /// Telemetry of the most recent call.
    pub fn telemetry(&self) -> Option<&CycleTelemetry> {
        self.telemetry.as_ref()
    }

    /// Treats the next `n` solver runs as failed regardless of their outcome.
    pub fn inject_failures(&mut self, n: usize) {
        self.forced_failures = n;
    }

    /// Guess for the solve at the next update.
    fn next_guess(&self, sol: &Solution) -> Solution {
        let mut g = time_shift_warm_start(sol, &self.ocp.grid, self.options.mpc_cycle_dt);
        if self.options.wrap_angle {
            wrap_solution(&mut g);
        }
        g
    }

    /// Measurement on the angle branch of `reference`, so that a wrapped
    /// measurement stays continuous with the guess.
    fn align(&self, x: &State, reference: &Vector4<f64>) -> Vector4<f64> {
        let mut v = x.to_vector();
        if self.options.wrap_angle {
            for i in 0..2 {
                v[i] = wrap_angle(v[i]);
                v[i] = reference[i] + wrap_angle(v[i] - reference[i]);
            }
        }
        v
    }

    fn run_solver(&mut self, x: &State) -> (Solution, f64, f64) {
        match self.options.solver_type {
            Backend::SqpRti => {
                let prepared = match self.state.prepared.take() {
                    Some(p) => p,
                    None => rti_prepare(&self.ocp, &self.state.stored_solution, &self.settings, &self.clock),
                };
                let aligned = self.align(x, &prepared.guess().xs[0]);
                let sol = rti_feedback(&prepared, &State::from_vector(&aligned), &self.clock);
                let feedback_time = sol.feedback_time;
                let basis = if sol.status.is_usable() { &sol } else { prepared.guess() };
                let next = self.next_guess(basis);
                let t0 = self.clock.now();
                self.ocp.x0 = next.xs[0];
                self.state.prepared = Some(rti_prepare(&self.ocp, &next, &self.settings, &self.clock));
                let prepare_time = self.clock.now() - t0;
                (sol, prepare_time, feedback_time)
            }
            Backend::Sqp | Backend::Ddp => {
                let guess = self.next_guess_for_full_solve();
                let aligned = self.align(x, &guess.xs[0]);
                self.ocp.x0 = aligned;
                let sol = if self.options.solver_type == Backend::Sqp {
                    sqp_solve(&self.ocp, &guess, &self.settings, &self.clock)
                } else {
                    ddp_solve(&self.ocp, &guess, &self.settings, &self.clock)
                };
                let (p, f) = (sol.prepare_time, sol.feedback_time);
                (sol, p, f)
            }
        }
    }

    fn next_guess_for_full_solve(&self) -> Solution {
        if self.state.cycle_count == 0 {
            let mut g = self.state.stored_solution.clone();
            if self.options.wrap_angle {
                wrap_solution(&mut g);
            }
            g
        } else {
            self.next_guess(&self.state.stored_solution)
        }
    }

    /// Solver run, fallback handling and bookkeeping of one MPC update.
    /// Returns the active torque and the state to track until the next one.
    fn mpc_update(&mut self, x: &State, t: f64) -> (f64, State, CycleTelemetry) {
        let t0 = self.clock.now();
        let (sol, prepare_time, feedback_time) = self.run_solver(x);
        let forced = if self.forced_failures > 0 {
            self.forced_failures -= 1;
            true
        } else {
            false
        };
        let finite =
            sol.us.first().is_some_and(|u| u.is_finite()) && sol.xs.iter().all(|x| x.iter().all(|v| v.is_finite()));
        let failed = forced || !sol.status.is_usable() || !finite;
        let mut used_fallback = false;
        let (u, x_ref) = if failed {
            if self.options.fallback_on_solver_fail {
                used_fallback = true;
                let u = self.state.fallback_step();
                (u, State::from_vector(&self.state.stored_solution.xs[0]))
            } else {
                (0.0, *x)
            }
        } else {
            let x_ref = self.reference_state(&sol);
            let mut stored = sol.clone();
            stored.trace.clear();
            self.state.stored_solution = stored;
            (sol.us[0], x_ref)
        };
        self.state.cycle_count += 1;
        let telemetry = CycleTelemetry {
            t,
            mpc_update: true,
            status: sol.status,
            kkt: sol.kkt_residual,
            iterations: sol.iterations,
            prepare_time,
            feedback_time,
            cycle_time: self.clock.now() - t0,
            failed,
            used_fallback,
            u_unclamped: u,
        };
        (u, x_ref, telemetry)
    }

    /// Predicted state one MPC cycle ahead.
    fn reference_state(&self, sol: &Solution) -> State {
        let times = self.ocp.grid.node_times();
        let t = self.options.mpc_cycle_dt.min(self.ocp.grid.horizon);
        let mut k = 0;
        while k + 1 < sol.us.len() && times[k + 1] <= t {
            k += 1;
        }
        let s = ((t - times[k]) / self.ocp.grid.dts[k]).clamp(0.0, 1.0);
        State::from_vector(&(sol.xs[k] * (1.0 - s) + sol.xs[k + 1] * s))
    }

    /// Torque command for the measurement `x_meas` taken at time `t`.
    ///
    /// Runs an MPC update when one is due (the first call always is) and
    /// otherwise holds the last input, or tracks the last predicted state
    /// with the PID loop. The active torque is clamped to the actuator
    /// limit; the passive joint only receives friction compensation.
    pub fn compute_control(&mut self, x_meas: &State, t: f64) -> Result<JointTorque, ControllerError> {
        if !x_meas.is_finite() || !t.is_finite() {
            return Err(ControllerError::NonFiniteMeasurement);
        }
        let robot = self.params.robot;
        let tau_max = self.params.tau_max;
        let due = t >= self.next_update - 1e-9 * self.options.mpc_cycle_dt;
        let (u, telemetry) = if due || self.held.is_none() {
            let (u, x_ref, telemetry) = self.mpc_update(x_meas, t);
            self.held = Some(Held { u_ff: u, x_ref });
            self.next_update = if self.next_update.is_finite() { self.next_update } else { t };
            while self.next_update <= t + 1e-9 * self.options.mpc_cycle_dt {
                self.next_update += self.options.mpc_cycle_dt;
            }
            (u, telemetry)
        } else {
            let held = self.held.expect("held input exists after the first update");
            let last = self.telemetry.expect("telemetry exists after the first update");
            (held.u_ff, CycleTelemetry { t, mpc_update: false, cycle_time: 0.0, ..last })
        };
        let mut u = u;
        if self.options.pd_tracking {
            let held = self.held.expect("held input exists after the first update");
            let gains = PidGains {
                kp: self.options.pd_kp.unwrap_or(0.0),
                kd: self.options.pd_kd.unwrap_or(0.0),
                ki: self.options.pd_ki.unwrap_or(0.0),
            };
            let mut meas = *x_meas;
            if self.options.wrap_angle {
                meas = crate::dynamics::wrap_state(&meas);
            }
            u = pid_adjust(
                &mut self.state.pid_integrator,
                robot.active_joint(),
                &meas,
                &held.x_ref,
                u,
                &gains,
                self.options.outer_cycle_dt,
                tau_max,
            );
        }
        let u_active = u.clamp(-tau_max, tau_max);
        let comp = friction_compensation(
            &[x_meas.qd1, x_meas.qd2],
            robot.inactive_joint(),
            self.options.friction_compensation_on_inactive_joint,
            &self.params,
        );
        let mut torque = JointTorque::actuated(robot, u_active);
        torque.set(robot.inactive_joint(), comp);
        self.state.last_applied_u = u_active;
        self.telemetry = Some(CycleTelemetry { u_unclamped: u, ..telemetry });
        Ok(torque)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stored(us: Vec<f64>) -> Solution {
        let n = us.len();
        Solution::guess(vec![Vector4::zeros(); n + 1], us)
    }

    #[test]
    fn fallback_replays_and_pads_with_zero() {
        let mut s = ControllerState::new(stored(vec![1.0, 2.0, 3.0]));
        assert_eq!(s.fallback_step(), 1.0);
        assert_eq!(s.buffer(), &[2.0, 3.0, 0.0]);
        assert_eq!(s.fallback_step(), 2.0);
        assert_eq!(s.fallback_step(), 3.0);
        assert_eq!(s.fallback_step(), 0.0);
        assert_eq!(s.fallback_step(), 0.0);
        assert_eq!(s.buffer(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn pid_examples() {
        let x = State::new(0.3, 0.1, 0.0, 0.0);
        let mut i = 0.0;
        let zero = PidGains { kp: 0.0, kd: 0.0, ki: 0.0 };
        let other = State::new(1.0, -1.0, 2.0, 3.0);
        assert_eq!(pid_adjust(&mut i, 0, &x, &other, 1.5, &zero, 1e-3, 6.0), 1.5);
        let mut i = 0.0;
        let gains = PidGains { kp: 3.0, kd: 1.0, ki: 2.0 };
        assert_eq!(pid_adjust(&mut i, 0, &x, &x, -0.7, &gains, 1e-3, 6.0), -0.7);
        let mut i = 0.0;
        let p = PidGains { kp: 2.0, kd: 0.0, ki: 0.0 };
        let target = State::new(0.4, 0.1, 0.0, 0.0);
        assert!((pid_adjust(&mut i, 0, &x, &target, 1.0, &p, 1e-3, 6.0) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn pid_error_is_wrapped() {
        let mut i = 0.0;
        let p = PidGains { kp: 1.0, kd: 0.0, ki: 0.0 };
        let meas = State::new(PI - 0.05, 0.0, 0.0, 0.0);
        let target = State::new(-PI + 0.05, 0.0, 0.0, 0.0);
        assert!((pid_adjust(&mut i, 0, &meas, &target, 0.0, &p, 1e-3, 6.0) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn pid_integrator_does_not_wind_up() {
        let mut i = 0.0;
        let g = PidGains { kp: 0.0, kd: 0.0, ki: 100.0 };
        let meas = State::new(0.0, 0.0, 0.0, 0.0);
        let target = State::new(1.0, 0.0, 0.0, 0.0);
        for _ in 0..10_000 {
            let u = pid_adjust(&mut i, 1 - 1, &meas, &target, 5.0, &g, 1e-3, 6.0);
            assert!(u <= 6.0 + 1e-12);
        }
        // Recovers as soon as the error flips.
        let u = pid_adjust(&mut i, 0, &target, &meas, 5.0, &g, 1e-3, 6.0);
        assert!(u < 6.0);
    }

    #[test]
    fn compensation_examples() {
        let p = ModelParams::default();
        assert_eq!(friction_compensation(&[1.0, 0.0], 1, 0.5, &p), 0.0);
        assert!((friction_compensation(&[0.0, 100.0], 1, 0.5, &p) - 0.5).abs() < 1e-12);
        assert!((friction_compensation(&[0.0, -100.0], 1, 0.5, &p) + 0.5).abs() < 1e-12);
        for v in [-3.0, -0.2, -1e-3, 1e-3, 0.2, 3.0] {
            let c = friction_compensation(&[0.0, v], 1, 0.5, &p);
            assert_eq!(c.signum(), v.signum());
            assert!(c.abs() <= 0.5);
        }
    }

    #[test]
    fn options_validation() {
        assert!(ControllerOptions::default().validate().is_ok());
        let bad = ControllerOptions { n_horizon: 0, ..Default::default() };
        assert_eq!(bad.validate(), Err(invalid("N_horizon", "must be at least 1")));
        let bad = ControllerOptions { mpc_cycle_dt: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ControllerOptions { pd_tracking: true, ..Default::default() };
        assert_eq!(bad.validate(), Err(invalid("pd_KP", "required when pd_tracking is enabled")));
        let ok = ControllerOptions {
            pd_tracking: true,
            pd_kp: Some(1.0),
            pd_kd: Some(0.1),
            pd_ki: Some(0.0),
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        let bad = ControllerOptions { outer_cycle_dt: 0.02, ..ok };
        assert!(bad.validate().is_err());
        let bad = ControllerOptions { scaling: vec![1.0; 3], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cold_start_uses_zero_input_rollout_from_hanging() {
        let options = ControllerOptions { warm_start: false, ..Default::default() };
        let c = Controller::new(options, ModelParams::default(), State::UPRIGHT).unwrap();
        let s = &c.state().stored_solution;
        assert!(s.us.iter().all(|u| *u == 0.0));
        // Hanging is an equilibrium of the compensated model.
        assert!(s.xs.iter().all(|x| (x - State::HANGING.to_vector()).amax() < 1e-12));
    }
}
