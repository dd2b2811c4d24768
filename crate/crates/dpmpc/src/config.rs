//! INI run configuration.
//!
//! Three sections: `[model]` maps onto [`ModelParams`], `[controller]` onto
//! [`ControllerOptions`] and `[benchmark]` onto the episode and sweep
//! settings. Keys in `[controller]` override the preset of the selected
//! robot, so switching robots later keeps them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use dpmpc_core::controller::ControllerOptions;
use dpmpc_core::simbench::{AxesSpec, Disturbance, EpisodeConfig, Parameter};
use dpmpc_core::solver::{Backend, QpMode};
use dpmpc_core::{ModelParams, Robot, SimError, State};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown section `[{name}]`")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key `{key}` in section [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: key `{key}` set twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {reason}")]
    Value { line: usize, key: String, reason: String },
    #[error(transparent)]
    Invalid(#[from] SimError),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Which joint a disturbance pulse hits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseJoint {
    Active,
    Passive,
}

/// `[benchmark]` section.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub duration: f64,
    pub seed: u64,
    pub velocity_noise: f64,
    pub torque_noise: f64,
    pub delay: f64,
    pub up_fraction: f64,
    pub hold_time: f64,
    pub record_every: usize,
    pub initial_state: State,
    pub target: State,
    /// Pulse start times; the sign alternates starting positive.
    pub disturbance_times: Vec<f64>,
    pub disturbance_magnitude: f64,
    pub disturbance_duration: f64,
    pub disturbance_joint: PulseJoint,
    pub sweeps: AxesSpec,
    pub out_dir: PathBuf,
}

impl Default for Benchmark {
    fn default() -> Self {
        let ep = EpisodeConfig::default();
        Self {
            duration: ep.duration,
            seed: ep.seed,
            velocity_noise: ep.velocity_noise,
            torque_noise: ep.torque_noise,
            delay: ep.delay,
            up_fraction: ep.up_fraction,
            hold_time: ep.hold_time,
            record_every: ep.record_every,
            initial_state: ep.initial_state,
            target: ep.target,
            disturbance_times: Vec::new(),
            disturbance_magnitude: 5.0,
            disturbance_duration: 0.1,
            disturbance_joint: PulseJoint::Active,
            sweeps: AxesSpec::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelParams,
    pub controller: ControllerOptions,
    pub benchmark: Benchmark,
    /// Raw `[controller]` entries, replayed on top of a new robot preset.
    overrides: BTreeMap<String, (usize, String)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelParams::default();
        Self {
            controller: ControllerOptions::for_robot(model.robot),
            model,
            benchmark: Benchmark::default(),
            overrides: BTreeMap::new(),
        }
    }
}

impl PartialEq for RunConfig {
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model && self.controller == other.controller && self.benchmark == other.benchmark
    }
}

struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

fn split_ini(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut section: Option<String> = None;
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax { line, message: "unterminated section header".into() })?
                .trim();
            if !matches!(name, "model" | "controller" | "benchmark") {
                return Err(ConfigError::UnknownSection { line, name: name.into() });
            }
            section = Some(name.into());
            continue;
        }
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, message: format!("expected `key = value`, got `{s}`") })?;
        let section =
            section.clone().ok_or_else(|| ConfigError::Syntax { line, message: "key outside of a section".into() })?;
        let key = key.trim().to_string();
        if out.iter().any(|e| e.section == section && e.key == key) {
            return Err(ConfigError::Duplicate { line, key });
        }
        out.push(Entry { section, key, value: value.trim().to_string(), line });
    }
    Ok(out)
}

struct Field<'a> {
    key: &'a str,
    value: &'a str,
    line: usize,
}

impl Field<'_> {
    fn err(&self, reason: impl Into<String>) -> ConfigError {
        ConfigError::Value { line: self.line, key: self.key.into(), reason: reason.into() }
    }

    fn f64(&self) -> Result<f64, ConfigError> {
        self.value.parse().map_err(|_| self.err(format!("`{}` is not a number", self.value)))
    }

    fn usize(&self) -> Result<usize, ConfigError> {
        self.value.parse().map_err(|_| self.err(format!("`{}` is not a non-negative integer", self.value)))
    }

    fn bool(&self) -> Result<bool, ConfigError> {
        match self.value {
            "true" => Ok(true),
            "false" => Ok(false),
            v => Err(self.err(format!("`{v}` is not true or false"))),
        }
    }

    fn opt_f64(&self) -> Result<Option<f64>, ConfigError> {
        if self.value.eq_ignore_ascii_case("none") {
            Ok(None)
        } else {
            self.f64().map(Some)
        }
    }

    fn list(&self) -> Result<Vec<f64>, ConfigError> {
        if self.value.is_empty() {
            return Ok(Vec::new());
        }
        self.value
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| self.err(format!("`{}` is not a number", s.trim()))))
            .collect()
    }

    fn array<const N: usize>(&self) -> Result<[f64; N], ConfigError> {
        let v = self.list()?;
        v.try_into().map_err(|v: Vec<f64>| self.err(format!("expected {N} values, got {}", v.len())))
    }

    fn state(&self) -> Result<State, ConfigError> {
        let [q1, q2, qd1, qd2] = self.array::<4>()?;
        Ok(State::new(q1, q2, qd1, qd2))
    }

    fn robot(&self) -> Result<Robot, ConfigError> {
        parse_robot(self.value).ok_or_else(|| self.err("expected acrobot or pendubot"))
    }
}

pub fn parse_robot(s: &str) -> Option<Robot> {
    match s.to_ascii_lowercase().as_str() {
        "acrobot" => Some(Robot::Acrobot),
        "pendubot" => Some(Robot::Pendubot),
        _ => None,
    }
}

fn parse_parameter(name: &str) -> Option<Parameter> {
    Parameter::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(name))
}

fn unknown(section: &str, f: &Field) -> ConfigError {
    ConfigError::UnknownKey { line: f.line, section: section.into(), key: f.key.into() }
}

fn set_model(p: &mut ModelParams, f: &Field) -> Result<(), ConfigError> {
    let slot = match f.key {
        "robot" => {
            p.robot = f.robot()?;
            return Ok(());
        }
        "m1" => &mut p.m1,
        "m2" => &mut p.m2,
        "l1" => &mut p.l1,
        "l2" => &mut p.l2,
        "r1" => &mut p.r1,
        "r2" => &mut p.r2,
        "I1" => &mut p.i1,
        "I2" => &mut p.i2,
        "b1" => &mut p.b1,
        "b2" => &mut p.b2,
        "cf1" => &mut p.cf1,
        "cf2" => &mut p.cf2,
        "g" => &mut p.g,
        "tau_max" => &mut p.tau_max,
        "v_max" => &mut p.v_max,
        "friction_smoothing" => &mut p.friction_smoothing,
        _ => return Err(unknown("model", f)),
    };
    *slot = f.f64()?;
    Ok(())
}

fn set_controller(c: &mut ControllerOptions, f: &Field) -> Result<(), ConfigError> {
    match f.key {
        "N_horizon" => c.n_horizon = f.usize()?,
        "prediction_horizon" => c.prediction_horizon = f.f64()?,
        "Nlp_max_iter" => c.nlp_max_iter = f.usize()?,
        "max_solve_time" => c.max_solve_time = f.f64()?,
        "solver_type" => {
            c.solver_type = match f.value.to_ascii_uppercase().as_str() {
                "SQP" => Backend::Sqp,
                "SQP_RTI" | "SQP-RTI" => Backend::SqpRti,
                "DDP" => Backend::Ddp,
                _ => return Err(f.err("expected SQP, SQP_RTI or DDP")),
            }
        }
        "wrap_angle" => c.wrap_angle = f.bool()?,
        "warm_start" => c.warm_start = f.bool()?,
        "scaling" => c.scaling = f.list()?,
        "nonuniform_grid" => c.nonuniform_grid = f.bool()?,
        "use_energy_for_terminal_cost" => c.use_energy_for_terminal_cost = f.bool()?,
        "embed_angles" => c.embed_angles = f.bool()?,
        "fallback_on_solver_fail" => c.fallback_on_solver_fail = f.bool()?,
        "friction_compensation_on_inactive_joint" => c.friction_compensation_on_inactive_joint = f.f64()?,
        "mpc_cycle_dt" => c.mpc_cycle_dt = f.f64()?,
        "pd_tracking" => c.pd_tracking = f.bool()?,
        "outer_cycle_dt" => c.outer_cycle_dt = f.f64()?,
        "pd_KP" => c.pd_kp = f.opt_f64()?,
        "pd_KD" => c.pd_kd = f.opt_f64()?,
        "pd_KI" => c.pd_ki = f.opt_f64()?,
        "Q" => c.q = f.array()?,
        "R" => c.r = f.f64()?,
        "Qf" => c.qf = f.array()?,
        "energy_weight" => c.energy_weight = f.f64()?,
        "qp_solver_tolerance" => c.qp_solver_tolerance = f.f64()?,
        "hpipm_mode" | "hpipbm_mode" => {
            c.qp_mode = match f.value.to_ascii_uppercase().as_str() {
                "ROBUST" => QpMode::Robust,
                "SPEED" => QpMode::Speed,
                _ => return Err(f.err("expected ROBUST or SPEED")),
            }
        }
        // Only one QP solver exists; the key is accepted for compatibility.
        "qp_solver" => {
            if !f.value.eq_ignore_ascii_case("PARTIAL_CONDENSING_HPIPM") {
                return Err(f.err("only PARTIAL_CONDENSING_HPIPM is available"));
            }
        }
        "integrator_substep" => c.integrator_substep = f.f64()?,
        _ => return Err(unknown("controller", f)),
    }
    Ok(())
}

fn set_benchmark(b: &mut Benchmark, f: &Field) -> Result<(), ConfigError> {
    match f.key {
        "duration" => b.duration = f.f64()?,
        "seed" => b.seed = f.value.parse().map_err(|_| f.err("expected an unsigned integer"))?,
        "velocity_noise" => b.velocity_noise = f.f64()?,
        "torque_noise" => b.torque_noise = f.f64()?,
        "delay" => b.delay = f.f64()?,
        "up_fraction" => b.up_fraction = f.f64()?,
        "hold_time" => b.hold_time = f.f64()?,
        "record_every" => b.record_every = f.usize()?,
        "initial_state" => b.initial_state = f.state()?,
        "target" => b.target = f.state()?,
        "disturbance_times" => b.disturbance_times = f.list()?,
        "disturbance_magnitude" => b.disturbance_magnitude = f.f64()?,
        "disturbance_duration" => b.disturbance_duration = f.f64()?,
        "disturbance_joint" => {
            b.disturbance_joint = match f.value {
                "active" => PulseJoint::Active,
                "passive" => PulseJoint::Passive,
                _ => return Err(f.err("expected active or passive")),
            }
        }
        "parameters" => {
            b.sweeps.parameters = if f.value.is_empty() {
                Vec::new()
            } else {
                f.value
                    .split(',')
                    .map(|s| {
                        parse_parameter(s.trim()).ok_or_else(|| f.err(format!("unknown parameter `{}`", s.trim())))
                    })
                    .collect::<Result<_, _>>()?
            }
        }
        "param_scaling" => b.sweeps.param_scaling = f.list()?,
        "velocity_noise_sweep" => b.sweeps.velocity_noise = f.list()?,
        "torque_noise_sweep" => b.sweeps.torque_noise = f.list()?,
        "time_delay_sweep" => b.sweeps.time_delay = f.list()?,
        "out_dir" => b.out_dir = PathBuf::from(f.value),
        _ => return Err(unknown("benchmark", f)),
    }
    Ok(())
}

/// Parses and validates a configuration. Missing keys take their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let entries = split_ini(text)?;
    for e in entries.iter().filter(|e| e.section == "model") {
        set_model(&mut cfg.model, &Field { key: &e.key, value: &e.value, line: e.line })?;
    }
    for e in entries.iter().filter(|e| e.section == "controller") {
        cfg.overrides.insert(e.key.clone(), (e.line, e.value.clone()));
    }
    cfg.rebuild_controller()?;
    for e in entries.iter().filter(|e| e.section == "benchmark") {
        set_benchmark(&mut cfg.benchmark, &Field { key: &e.key, value: &e.value, line: e.line })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn fmt_state(s: &State) -> String {
    fmt_list(&[s.q1, s.q2, s.qd1, s.qd2])
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |g| g.to_string())
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        parse_config(&std::fs::read_to_string(path)?)
    }

    fn rebuild_controller(&mut self) -> Result<(), ConfigError> {
        let mut c = ControllerOptions::for_robot(self.model.robot);
        for (key, (line, value)) in &self.overrides {
            set_controller(&mut c, &Field { key, value, line: *line })?;
        }
        self.controller = c;
        Ok(())
    }

    /// Switches robots. Explicit `[controller]` keys survive; everything
    /// else falls back to the new robot's preset.
    pub fn set_robot(&mut self, robot: Robot) -> Result<(), ConfigError> {
        self.model.robot = robot;
        self.rebuild_controller()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.episode().validate()?;
        self.benchmark.sweeps.validate()?;
        Ok(())
    }

    pub fn disturbances(&self) -> Vec<Disturbance> {
        let b = &self.benchmark;
        let joint = match b.disturbance_joint {
            PulseJoint::Active => self.model.robot.active_joint(),
            PulseJoint::Passive => self.model.robot.inactive_joint(),
        };
        b.disturbance_times
            .iter()
            .enumerate()
            .map(|(i, &start)| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                Disturbance { start, joint, torque: sign * b.disturbance_magnitude, duration: b.disturbance_duration }
            })
            .collect()
    }

    pub fn episode(&self) -> EpisodeConfig {
        let b = &self.benchmark;
        EpisodeConfig {
            duration: b.duration,
            params: self.model,
            plant: None,
            controller: self.controller.clone(),
            disturbances: self.disturbances(),
            velocity_noise: b.velocity_noise,
            torque_noise: b.torque_noise,
            delay: b.delay,
            seed: b.seed,
            initial_state: b.initial_state,
            target: b.target,
            up_fraction: b.up_fraction,
            hold_time: b.hold_time,
            record_every: b.record_every,
        }
    }

    /// Canonical text form: every key, in a fixed order.
    pub fn serialize(&self) -> String {
        let p = &self.model;
        let c = &self.controller;
        let b = &self.benchmark;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("[model]\nrobot", p.robot.name().to_ascii_lowercase());
        for (k, v) in [
            ("m1", p.m1),
            ("m2", p.m2),
            ("l1", p.l1),
            ("l2", p.l2),
            ("r1", p.r1),
            ("r2", p.r2),
            ("I1", p.i1),
            ("I2", p.i2),
            ("b1", p.b1),
            ("b2", p.b2),
            ("cf1", p.cf1),
            ("cf2", p.cf2),
            ("g", p.g),
            ("tau_max", p.tau_max),
            ("v_max", p.v_max),
            ("friction_smoothing", p.friction_smoothing),
        ] {
            kv(k, v.to_string());
        }
        kv("\n[controller]\nN_horizon", c.n_horizon.to_string());
        kv("prediction_horizon", c.prediction_horizon.to_string());
        kv("Nlp_max_iter", c.nlp_max_iter.to_string());
        kv("max_solve_time", c.max_solve_time.to_string());
        let solver = match c.solver_type {
            Backend::Sqp => "SQP",
            Backend::SqpRti => "SQP_RTI",
            Backend::Ddp => "DDP",
        };
        kv("solver_type", solver.into());
        kv("wrap_angle", c.wrap_angle.to_string());
        kv("warm_start", c.warm_start.to_string());
        kv("scaling", fmt_list(&c.scaling));
        kv("nonuniform_grid", c.nonuniform_grid.to_string());
        kv("use_energy_for_terminal_cost", c.use_energy_for_terminal_cost.to_string());
        kv("embed_angles", c.embed_angles.to_string());
        kv("fallback_on_solver_fail", c.fallback_on_solver_fail.to_string());
        kv("friction_compensation_on_inactive_joint", c.friction_compensation_on_inactive_joint.to_string());
        kv("mpc_cycle_dt", c.mpc_cycle_dt.to_string());
        kv("pd_tracking", c.pd_tracking.to_string());
        kv("outer_cycle_dt", c.outer_cycle_dt.to_string());
        kv("pd_KP", fmt_opt(c.pd_kp));
        kv("pd_KD", fmt_opt(c.pd_kd));
        kv("pd_KI", fmt_opt(c.pd_ki));
        kv("Q", fmt_list(&c.q));
        kv("R", c.r.to_string());
        kv("Qf", fmt_list(&c.qf));
        kv("energy_weight", c.energy_weight.to_string());
        kv("qp_solver_tolerance", c.qp_solver_tolerance.to_string());
        let mode = match c.qp_mode {
            QpMode::Robust => "ROBUST",
            QpMode::Speed => "SPEED",
        };
        kv("hpipm_mode", mode.into());
        kv("integrator_substep", c.integrator_substep.to_string());
        kv("\n[benchmark]\nduration", b.duration.to_string());
        kv("seed", b.seed.to_string());
        kv("velocity_noise", b.velocity_noise.to_string());
        kv("torque_noise", b.torque_noise.to_string());
        kv("delay", b.delay.to_string());
        kv("up_fraction", b.up_fraction.to_string());
        kv("hold_time", b.hold_time.to_string());
        kv("record_every", b.record_every.to_string());
        kv("initial_state", fmt_state(&b.initial_state));
        kv("target", fmt_state(&b.target));
        kv("disturbance_times", fmt_list(&b.disturbance_times));
        kv("disturbance_magnitude", b.disturbance_magnitude.to_string());
        kv("disturbance_duration", b.disturbance_duration.to_string());
        let joint = match b.disturbance_joint {
            PulseJoint::Active => "active",
            PulseJoint::Passive => "passive",
        };
        kv("disturbance_joint", joint.into());
        kv("parameters", b.sweeps.parameters.iter().map(|p| p.name()).collect::<Vec<_>>().join(", "));
        kv("param_scaling", fmt_list(&b.sweeps.param_scaling));
        kv("velocity_noise_sweep", fmt_list(&b.sweeps.velocity_noise));
        kv("torque_noise_sweep", fmt_list(&b.sweeps.torque_noise));
        kv("time_delay_sweep", fmt_list(&b.sweeps.time_delay));
        kv("out_dir", b.out_dir.display().to_string());
        s
    }
}
