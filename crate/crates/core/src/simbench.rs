//! Closed-loop benchmark: plant simulation with disturbances, noise, delay
//! and model mismatch, plus the scores computed from it.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, NullClock};
use crate::controller::{Controller, ControllerOptions, CycleTelemetry};
use crate::dynamics::{integrate_step, tip_height, JointTorque, ModelParams, Robot, State};
use crate::error::{ControllerError, SimError};
use crate::solver::Status;

// Test builds link std, whose inherent float methods shadow the trait.
#[allow(unused_imports)]
use num_traits::Float;

/// Plant integration step [s].
pub const PLANT_DT: f64 = 1e-3;

/// Magnitude beyond which a diverging plant state is clamped.
const STATE_LIMIT: f64 = 1e4;

/// Torque pulse added to the plant input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub start: f64,
    pub joint: usize,
    /// [N m]
    pub torque: f64,
    pub duration: f64,
}

impl Disturbance {
    pub fn active_at(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

/// Three 0.1 s pulses of 5 N m at 15, 30 and 45 s on the active joint,
/// alternating in sign.
pub fn default_disturbances(robot: Robot) -> Vec<Disturbance> {
    [(15.0, 5.0), (30.0, -5.0), (45.0, 5.0)]
        .into_iter()
        .map(|(start, torque)| Disturbance { start, joint: robot.active_joint(), torque, duration: 0.1 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub duration: f64,
    /// Model the controller is built on.
    pub params: ModelParams,
    /// Parameters of the simulated plant; `None` means `params`.
    pub plant: Option<ModelParams>,
    pub controller: ControllerOptions,
    pub disturbances: Vec<Disturbance>,
    /// Std of the Gaussian noise on each measured velocity [rad/s].
    pub velocity_noise: f64,
    /// Std of the Gaussian noise on the commanded active torque [N m].
    pub torque_noise: f64,
    /// Measurement delay [s], rounded to plant steps.
    pub delay: f64,
    pub seed: u64,
    pub initial_state: State,
    pub target: State,
    /// Tip height above the pivot, as a fraction of `l1 + l2`, that counts
    /// as up.
    pub up_fraction: f64,
    /// Continuous time up that counts as a successful swing-up [s].
    pub hold_time: f64,
    /// Keep every n-th plant step in the trajectory.
    pub record_every: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            duration: 60.0,
            params: ModelParams::default(),
            plant: None,
            controller: ControllerOptions::default(),
            disturbances: Vec::new(),
            velocity_noise: 0.0,
            torque_noise: 0.0,
            delay: 0.0,
            seed: 0,
            initial_state: State::HANGING,
            target: State::UPRIGHT,
            up_fraction: 0.9,
            hold_time: 2.0,
            record_every: 1,
        }
    }
}

fn invalid(name: &'static str, reason: &'static str) -> SimError {
    SimError::InvalidSetting { name, reason }
}

fn non_negative(name: &'static str, v: f64) -> Result<(), SimError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, "must be non-negative"))
    }
}

impl EpisodeConfig {
    /// Undisturbed episode for `robot` with default parameters and the
    /// robot's controller preset.
    pub fn nominal(robot: Robot) -> Self {
        Self {
            params: ModelParams::default().with_robot(robot),
            controller: ControllerOptions::for_robot(robot),
            ..Self::default()
        }
    }

    /// [`EpisodeConfig::nominal`] with the default disturbance schedule.
    pub fn disturbed(robot: Robot) -> Self {
        Self { disturbances: default_disturbances(robot), ..Self::nominal(robot) }
    }

    pub fn plant_params(&self) -> ModelParams {
        self.plant.unwrap_or(self.params)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", "must be positive"));
        }
        non_negative("delay", self.delay)?;
        non_negative("velocity_noise", self.velocity_noise)?;
        non_negative("torque_noise", self.torque_noise)?;
        non_negative("hold_time", self.hold_time)?;
        if !(self.up_fraction > 0.0 && self.up_fraction < 1.0) {
            return Err(invalid("up_fraction", "must lie strictly between 0 and 1"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "must be at least 1"));
        }
        if !self.initial_state.is_finite() || !self.target.is_finite() {
            return Err(invalid("initial_state", "must be finite"));
        }
        for d in &self.disturbances {
            if d.joint > 1 {
                return Err(invalid("disturbances", "joint must be 0 or 1"));
            }
            if !(d.start.is_finite() && d.torque.is_finite() && d.duration >= 0.0 && d.duration.is_finite()) {
                return Err(invalid("disturbances", "entries must be finite with non-negative duration"));
            }
        }
        self.params.validate()?;
        self.plant_params().validate()?;
        if self.plant_params().robot != self.params.robot {
            return Err(invalid("plant", "must be the same robot as the controller model"));
        }
        self.controller.validate()?;
        let period = self.controller.call_period();
        let ratio = period / PLANT_DT;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio || ratio.round() < 1.0 {
            return Err(invalid("mpc_cycle_dt", "must be a whole number of plant steps"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / PLANT_DT).round() as usize
    }

    pub fn delay_steps(&self) -> usize {
        (self.delay / PLANT_DT).round() as usize
    }
}

/// Anything that turns a measurement into joint torques.
pub trait Policy {
    fn command(&mut self, x: &State, t: f64) -> Result<JointTorque, ControllerError>;

    /// Telemetry of the last call, if it ran a solver.
    fn telemetry(&self) -> Option<CycleTelemetry> {
        None
    }
}

impl<C: Clock> Policy for Controller<C> {
    fn command(&mut self, x: &State, t: f64) -> Result<JointTorque, ControllerError> {
        self.compute_control(x, t)
    }

    fn telemetry(&self) -> Option<CycleTelemetry> {
        Controller::telemetry(self).copied()
    }
}

/// Applies no torque at all.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroTorque;

impl Policy for ZeroTorque {
    fn command(&mut self, _: &State, _: f64) -> Result<JointTorque, ControllerError> {
        Ok(JointTorque::ZERO)
    }
}

/// Plays back a fixed sequence of torques, one per plant step, then zero.
#[derive(Debug, Clone, Default)]
pub struct Playback {
    pub torques: Vec<JointTorque>,
    next: usize,
}

impl Playback {
    pub fn new(torques: Vec<JointTorque>) -> Self {
        Self { torques, next: 0 }
    }
}

impl Policy for Playback {
    fn command(&mut self, _: &State, _: f64) -> Result<JointTorque, ControllerError> {
        let u = self.torques.get(self.next).copied().unwrap_or(JointTorque::ZERO);
        self.next += 1;
        Ok(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: State,
    pub u_cmd: JointTorque,
    pub u_applied: JointTorque,
    pub tip_height: f64,
    pub up: bool,
    /// Status of the most recent solver run.
    pub solver_status: Option<Status>,
    /// Wall time of the control call at this step, zero between calls.
    pub solve_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub robot: Robot,
    pub duration: f64,
    pub dt: f64,
    pub samples: Vec<Sample>,
    /// [s]
    pub uptime: f64,
    pub score: f64,
    pub swingup_success: bool,
    /// Longest continuous stretch in the goal region [s].
    pub longest_hold: f64,
    /// Per disturbance: time from its start until the plant is back in the
    /// goal region for a full hold, if that happens before the next one.
    pub recoveries: Vec<Option<f64>>,
    pub telemetry: Vec<CycleTelemetry>,
    pub failed_cycles: usize,
    /// Steps on which the plant state had to be clamped.
    pub diverged_steps: usize,
    /// Set when the controller rejected a measurement; the plant kept
    /// receiving zero torque from then on.
    pub controller_error: Option<String>,
}

impl EpisodeReport {
    /// Whether the plant recovered from every scheduled disturbance.
    pub fn recovered_from_all(&self) -> bool {
        self.recoveries.iter().all(Option::is_some)
    }
}

pub fn performance_score(report: &EpisodeReport) -> f64 {
    report.uptime / report.duration
}

pub fn swingup_success(report: &EpisodeReport) -> bool {
    report.swingup_success
}

fn clamp_state(x: &State) -> (State, bool) {
    let fix = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-STATE_LIMIT, STATE_LIMIT) };
    let y = State::new(fix(x.q1), fix(x.q2), fix(x.qd1), fix(x.qd2));
    (y, y != *x)
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("standard deviation was validated")
}

/// Runs one episode with the MPC controller on the nominal model, timing
/// the solver with `clock`.
pub fn simulate_episode_with_clock<C: Clock>(cfg: &EpisodeConfig, clock: C) -> Result<EpisodeReport, SimError> {
    cfg.validate()?;
    let mut controller =
        Controller::with_clock(cfg.controller.clone(), cfg.params, cfg.target, cfg.initial_state, clock)?;
    simulate_with_policy(cfg, &mut controller)
}

/// Runs one episode with the MPC controller. Timings are not measured, so
/// the result depends on `cfg` only.
pub fn simulate_episode(cfg: &EpisodeConfig) -> Result<EpisodeReport, SimError> {
    simulate_episode_with_clock(cfg, NullClock)
}

/// Runs one episode with an arbitrary policy, called every
/// `cfg.controller.call_period()`.
pub fn simulate_with_policy<P: Policy>(cfg: &EpisodeConfig, policy: &mut P) -> Result<EpisodeReport, SimError> {
    cfg.validate()?;
    let plant = cfg.plant_params();
    let robot = plant.robot;
    let steps = cfg.steps();
    let decimation = (cfg.controller.call_period() / PLANT_DT).round() as usize;
    let delay = cfg.delay_steps();
    let threshold = cfg.up_fraction * (plant.l1 + plant.l2);
    let hold_steps = (cfg.hold_time / PLANT_DT).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let velocity_noise = normal(cfg.velocity_noise);
    let torque_noise = normal(cfg.torque_noise);

    let mut x = cfg.initial_state;
    let mut history: VecDeque<State> = VecDeque::with_capacity(delay + 1);
    let mut u_cmd = JointTorque::ZERO;
    let mut noise = 0.0;
    let mut status = None;
    let mut report = EpisodeReport {
        robot,
        duration: steps as f64 * PLANT_DT,
        dt: PLANT_DT,
        samples: Vec::with_capacity(steps / cfg.record_every + 1),
        uptime: 0.0,
        score: 0.0,
        swingup_success: false,
        longest_hold: 0.0,
        recoveries: Vec::new(),
        telemetry: Vec::new(),
        failed_cycles: 0,
        diverged_steps: 0,
        controller_error: None,
    };
    let mut up_flags = Vec::with_capacity(steps);

    for n in 0..steps {
        let t = n as f64 * PLANT_DT;
        if history.len() == delay + 1 {
            history.pop_front();
        }
        history.push_back(x);
        let mut solve_time = 0.0;
        if n % decimation == 0 && report.controller_error.is_none() {
            // Oldest entry is the state `delay` steps back, or the initial
            // state early on.
            let mut y = history[0];
            if cfg.velocity_noise > 0.0 {
                y.qd1 += velocity_noise.sample(&mut rng);
                y.qd2 += velocity_noise.sample(&mut rng);
            }
            match policy.command(&y, t) {
                Ok(u) => u_cmd = u,
                Err(e) => {
                    report.controller_error = Some(alloc::format!("{e}"));
                    u_cmd = JointTorque::ZERO;
                }
            }
            if let Some(tel) = policy.telemetry() {
                solve_time = tel.cycle_time;
                if tel.mpc_update && tel.t == t {
                    status = Some(tel.status);
                    report.failed_cycles += tel.failed as usize;
                    report.telemetry.push(tel);
                }
            }
            noise = if cfg.torque_noise > 0.0 { torque_noise.sample(&mut rng) } else { 0.0 };
        }
        let active = robot.active_joint();
        let mut u = u_cmd;
        u.set(active, u.get(active) + noise);
        for d in cfg.disturbances.iter().filter(|d| d.active_at(t)) {
            u.set(d.joint, u.get(d.joint) + d.torque);
        }
        let u_applied =
            JointTorque::new(u.u1.clamp(-plant.tau_max, plant.tau_max), u.u2.clamp(-plant.tau_max, plant.tau_max));

        let h = tip_height(&x, &plant);
        let up = h > threshold;
        up_flags.push(up);
        if n % cfg.record_every == 0 {
            report.samples.push(Sample {
                t,
                x,
                u_cmd,
                u_applied,
                tip_height: h,
                up,
                solver_status: status,
                solve_time,
            });
        }

        let next = integrate_step(&x, &u_applied, PLANT_DT, &plant)?;
        let (next, clamped) = clamp_state(&next);
        report.diverged_steps += clamped as usize;
        x = next;
    }

    let up_steps = up_flags.iter().filter(|u| **u).count();
    report.uptime = up_steps as f64 * PLANT_DT;
    report.score = report.uptime / report.duration;
    let mut run = 0usize;
    let mut longest = 0usize;
    for &u in &up_flags {
        run = if u { run + 1 } else { 0 };
        longest = longest.max(run);
    }
    report.longest_hold = longest as f64 * PLANT_DT;
    report.swingup_success = longest >= hold_steps.max(1);
    report.recoveries = recoveries(&up_flags, &cfg.disturbances, hold_steps.max(1));
    Ok(report)
}

/// For each disturbance, the delay from its start until the first step
/// that begins a hold of `hold` consecutive up steps, searching from the end
/// of the pulse up to the start of the next disturbance (or the end).
fn recoveries(up: &[bool], disturbances: &[Disturbance], hold: usize) -> Vec<Option<f64>> {
    let mut starts: Vec<f64> = disturbances.iter().map(|d| d.start).collect();
    starts.sort_by(f64::total_cmp);
    disturbances
        .iter()
        .map(|d| {
            let from = ((d.start + d.duration) / PLANT_DT).ceil().max(0.0) as usize;
            let until = starts
                .iter()
                .find(|s| **s > d.start)
                .map_or(up.len(), |s| ((s / PLANT_DT).round() as usize).min(up.len()));
            let mut run = 0;
            for (n, &u) in up.iter().enumerate().take(until).skip(from) {
                run = if u { run + 1 } else { 0 };
                if run == hold {
                    return Some((n + 1 - hold) as f64 * PLANT_DT - d.start);
                }
            }
            None
        })
        .collect()
}

/// Plant parameter varied on a parameter-scaling axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameter {
    M1,
    M2,
    L1,
    L2,
    R1,
    R2,
    I1,
    I2,
    B1,
    B2,
    Cf1,
    Cf2,
}

impl Parameter {
    pub const ALL: [Parameter; 12] = [
        Parameter::M1,
        Parameter::M2,
        Parameter::L1,
        Parameter::L2,
        Parameter::R1,
        Parameter::R2,
        Parameter::I1,
        Parameter::I2,
        Parameter::B1,
        Parameter::B2,
        Parameter::Cf1,
        Parameter::Cf2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Parameter::M1 => "m1",
            Parameter::M2 => "m2",
            Parameter::L1 => "l1",
            Parameter::L2 => "l2",
            Parameter::R1 => "r1",
            Parameter::R2 => "r2",
            Parameter::I1 => "I1",
            Parameter::I2 => "I2",
            Parameter::B1 => "b1",
            Parameter::B2 => "b2",
            Parameter::Cf1 => "cf1",
            Parameter::Cf2 => "cf2",
        }
    }

    /// `p` with this parameter multiplied by `factor`. A link length carries
    /// its COM distance along when the COM would otherwise end up outside
    /// the link.
    pub fn scale(self, p: &ModelParams, factor: f64) -> ModelParams {
        let mut q = *p;
        match self {
            Parameter::M1 => q.m1 *= factor,
            Parameter::M2 => q.m2 *= factor,
            Parameter::L1 => {
                q.l1 *= factor;
                q.r1 = q.r1.min(q.l1);
            }
            Parameter::L2 => {
                q.l2 *= factor;
                q.r2 = q.r2.min(q.l2);
            }
            Parameter::R1 => q.r1 = (q.r1 * factor).min(q.l1),
            Parameter::R2 => q.r2 = (q.r2 * factor).min(q.l2),
            Parameter::I1 => q.i1 *= factor,
            Parameter::I2 => q.i2 *= factor,
            Parameter::B1 => q.b1 *= factor,
            Parameter::B2 => q.b2 *= factor,
            Parameter::Cf1 => q.cf1 *= factor,
            Parameter::Cf2 => q.cf2 *= factor,
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "parameter")]
pub enum Axis {
    ParamScaling(Parameter),
    VelocityNoise,
    TorqueNoise,
    TimeDelay,
}

impl Axis {
    pub fn name(self) -> String {
        match self {
            Axis::ParamScaling(p) => alloc::format!("param_scaling:{}", p.name()),
            Axis::VelocityNoise => "velocity_noise".into(),
            Axis::TorqueNoise => "torque_noise".into(),
            Axis::TimeDelay => "time_delay".into(),
        }
    }

    /// `base` with this axis set to `value`. Only the plant changes.
    pub fn apply(self, base: &EpisodeConfig, value: f64) -> EpisodeConfig {
        let mut cfg = base.clone();
        match self {
            Axis::ParamScaling(p) => cfg.plant = Some(p.scale(&base.plant_params(), value)),
            Axis::VelocityNoise => cfg.velocity_noise = value,
            Axis::TorqueNoise => cfg.torque_noise = value,
            Axis::TimeDelay => cfg.delay = value,
        }
        cfg
    }
}

/// Sweep values of the robustness suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxesSpec {
    pub parameters: Vec<Parameter>,
    pub param_scaling: Vec<f64>,
    pub velocity_noise: Vec<f64>,
    pub torque_noise: Vec<f64>,
    pub time_delay: Vec<f64>,
}

impl Default for AxesSpec {
    fn default() -> Self {
        Self {
            parameters: Parameter::ALL.to_vec(),
            param_scaling: alloc::vec![0.75, 0.9, 1.0, 1.1, 1.25],
            velocity_noise: alloc::vec![0.0, 0.05, 0.1, 0.25, 0.5],
            torque_noise: alloc::vec![0.0, 0.1, 0.25, 0.5, 1.0],
            time_delay: alloc::vec![0.0, 0.005, 0.01, 0.015, 0.02, 0.025],
        }
    }
}

impl AxesSpec {
    /// Every axis with its sweep values, in report order.
    pub fn axes(&self) -> Vec<(Axis, Vec<f64>)> {
        let mut out: Vec<(Axis, Vec<f64>)> =
            self.parameters.iter().map(|p| (Axis::ParamScaling(*p), self.param_scaling.clone())).collect();
        out.push((Axis::VelocityNoise, self.velocity_noise.clone()));
        out.push((Axis::TorqueNoise, self.torque_noise.clone()));
        out.push((Axis::TimeDelay, self.time_delay.clone()));
        out
    }

    /// All episodes of the suite, flattened in report order.
    pub fn runs(&self, base: &EpisodeConfig) -> Vec<(Axis, f64, EpisodeConfig)> {
        self.axes()
            .into_iter()
            .flat_map(|(axis, values)| values.into_iter().map(move |v| (axis, v, axis.apply(base, v))))
            .collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.param_scaling.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(invalid("param_scaling", "factors must be positive"));
        }
        for (name, values) in [
            ("velocity_noise", &self.velocity_noise),
            ("torque_noise", &self.torque_noise),
            ("time_delay", &self.time_delay),
        ] {
            for v in values {
                non_negative(name, *v)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisResult {
    pub axis: Axis,
    pub name: String,
    pub values: Vec<f64>,
    pub success: Vec<bool>,
    /// Performance score of each run.
    pub scores: Vec<f64>,
    /// Fraction of successful runs.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub robot: Robot,
    pub axes: Vec<AxisResult>,
}

impl RobustnessReport {
    /// Groups per-run outcomes, given in the order of [`AxesSpec::runs`].
    pub fn assemble(robot: Robot, spec: &AxesSpec, outcomes: &[(bool, f64)]) -> Self {
        let mut rest = outcomes;
        let axes = spec
            .axes()
            .into_iter()
            .map(|(axis, values)| {
                let (mine, tail) = rest.split_at(values.len());
                rest = tail;
                let success: Vec<bool> = mine.iter().map(|o| o.0).collect();
                let score = if success.is_empty() {
                    0.0
                } else {
                    success.iter().filter(|s| **s).count() as f64 / success.len() as f64
                };
                AxisResult {
                    axis,
                    name: axis.name(),
                    values,
                    success,
                    scores: mine.iter().map(|o| o.1).collect(),
                    score,
                }
            })
            .collect();
        Self { robot, axes }
    }
}

/// Runs every sweep value of every axis one after the other.
pub fn robustness_suite(base: &EpisodeConfig, spec: &AxesSpec) -> Result<RobustnessReport, SimError> {
    base.validate()?;
    spec.validate()?;
    let outcomes = spec
        .runs(base)
        .iter()
        .map(|(_, _, cfg)| simulate_episode(cfg).map(|r| (r.swingup_success, r.score)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RobustnessReport::assemble(base.params.robot, spec, &outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report_with_uptime(uptime: f64, duration: f64) -> EpisodeReport {
        EpisodeReport {
            robot: Robot::Pendubot,
            duration,
            dt: PLANT_DT,
            samples: Vec::new(),
            uptime,
            score: uptime / duration,
            swingup_success: false,
            longest_hold: 0.0,
            recoveries: Vec::new(),
            telemetry: Vec::new(),
            failed_cycles: 0,
            diverged_steps: 0,
            controller_error: None,
        }
    }

    #[test]
    fn score_arithmetic() {
        // Reported scores are truncated, not rounded: 46.176 / 60 = 0.7696.
        let trunc3 = |v: f64| (v * 1000.0).floor() / 1000.0;
        assert_eq!(trunc3(performance_score(&report_with_uptime(46.176, 60.0))), 0.769);
        assert_eq!(trunc3(performance_score(&report_with_uptime(30.484, 60.0))), 0.508);
        assert_eq!(performance_score(&report_with_uptime(60.0, 60.0)), 1.0);
    }

    #[test]
    fn recoveries_search_between_pulses() {
        let mut up = alloc::vec![false; 100];
        for u in &mut up[20..30] {
            *u = true;
        }
        let d = |start: f64| Disturbance { start, joint: 0, torque: 1.0, duration: 0.002 };
        let r = recoveries(&up, &[d(0.010), d(0.040)], 5);
        assert_eq!(r.len(), 2);
        assert!((r[0].unwrap() - 0.010).abs() < 1e-12);
        assert_eq!(r[1], None);
    }

    #[test]
    fn length_scaling_keeps_com_on_link() {
        let p = ModelParams::default();
        let q = Parameter::L1.scale(&p, 0.75);
        assert!(q.validate().is_ok());
        assert_eq!(q.r1, q.l1);
        assert_eq!(Parameter::M2.scale(&p, 1.25).m2, p.m2 * 1.25);
    }

    #[test]
    fn runs_follow_axes_order() {
        let spec = AxesSpec::default();
        let runs = spec.runs(&EpisodeConfig::default());
        assert_eq!(runs.len(), 12 * 5 + 5 + 5 + 6);
        assert_eq!(runs[0].0, Axis::ParamScaling(Parameter::M1));
        assert_eq!(runs.last().unwrap().1, 0.025);
    }
}
