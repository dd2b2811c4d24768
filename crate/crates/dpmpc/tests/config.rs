use dpmpc::config::{parse_config, ConfigError, PulseJoint, RunConfig};
use dpmpc_core::controller::ControllerOptions;
use dpmpc_core::simbench::Parameter;
use dpmpc_core::solver::{Backend, QpMode};
use dpmpc_core::{ControllerError, Robot, SimError};
use proptest::prelude::*;

#[test]
fn empty_file_gives_defaults() {
    let cfg = parse_config("").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.model.robot, Robot::Pendubot);
    let c = &cfg.controller;
    assert_eq!(*c, ControllerOptions::default());
    assert_eq!(c.n_horizon, 20);
    assert_eq!(c.prediction_horizon, 0.5);
    assert_eq!(c.nlp_max_iter, 500);
    assert_eq!(c.max_solve_time, 1.0);
    assert_eq!(c.solver_type, Backend::SqpRti);
    assert!(c.warm_start && c.wrap_angle);
    assert!(!c.fallback_on_solver_fail && !c.pd_tracking && !c.nonuniform_grid);
    assert_eq!(c.friction_compensation_on_inactive_joint, 0.5);
    assert_eq!(c.mpc_cycle_dt, 0.01);
    assert_eq!(c.outer_cycle_dt, 0.001);
    assert_eq!((c.pd_kp, c.pd_kd, c.pd_ki), (None, None, None));
    assert_eq!(cfg.benchmark.duration, 60.0);
}

#[test]
fn solver_type_spellings() {
    for (text, backend) in
        [("SQP_RTI", Backend::SqpRti), ("SQP-RTI", Backend::SqpRti), ("SQP", Backend::Sqp), ("DDP", Backend::Ddp)]
    {
        let cfg = parse_config(&format!("[controller]\nsolver_type = {text}\n")).unwrap();
        assert_eq!(cfg.controller.solver_type, backend);
        let again = parse_config(&cfg.serialize()).unwrap();
        assert_eq!(again.controller.solver_type, backend);
    }
}

#[test]
fn table_one_run_values() {
    let text = "\
[controller]
Nlp_max_iter = 40
fallback_on_solver_fail = true
hpipbm_mode = ROBUST
max_solve_time = 0.01
mpc_cycle_dt = 0.001
prediction_horizon = 0.5
qp_solver = PARTIAL_CONDENSING_HPIPM
qp_solver_tolerance = 0.001
solver_type = SQP_RTI
warm_start = true
";
    let c = parse_config(text).unwrap().controller;
    assert_eq!(c.nlp_max_iter, 40);
    assert!(c.fallback_on_solver_fail);
    assert_eq!(c.qp_mode, QpMode::Robust);
    assert_eq!(c.max_solve_time, 0.01);
    assert_eq!(c.mpc_cycle_dt, 0.001);
}

#[test]
fn zero_horizon_is_rejected() {
    let err = parse_config("[controller]\nN_horizon = 0\n").unwrap_err();
    assert!(matches!(
        err,
        ConfigError::Invalid(SimError::Controller(ControllerError::InvalidOption { name: "N_horizon", .. }))
    ));
    assert!(err.to_string().contains("N_horizon"));
}

#[test]
fn unknown_key_names_key_and_line() {
    let err = parse_config("[model]\nm1 = 0.5\n\n[controller]\nhorizon = 3\n").unwrap_err();
    match err {
        ConfigError::UnknownKey { line, ref key, ref section } => {
            assert_eq!((line, key.as_str(), section.as_str()), (5, "horizon", "controller"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("`horizon`"));
}

#[test]
fn malformed_input_is_reported_with_line() {
    let cases = [
        ("[solver]\n", 1),
        ("m1 = 3\n", 1),
        ("[model]\nm1 3\n", 2),
        ("[model]\nm1 = heavy\n", 2),
        ("[controller]\nwarm_start = yes\n", 2),
        ("[controller]\nQ = 1, 2, 3\n", 2),
        ("[model]\nm1 = 1\nm1 = 2\n", 3),
        ("[benchmark]\nparameters = m1, m3\n", 2),
    ];
    for (text, line) in cases {
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().starts_with(&format!("line {line}:")), "{text:?} -> {err}");
    }
}

#[test]
fn validation_errors_name_the_setting() {
    for (text, name) in [
        ("[model]\nm2 = -1\n", "m2"),
        ("[benchmark]\ndelay = -0.1\n", "delay"),
        ("[controller]\npd_tracking = true\npd_KP = 1\npd_KD = none\npd_KI = 0\n", "pd_KD"),
        ("[benchmark]\ntime_delay_sweep = 0, -1\n", "time_delay"),
    ] {
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains(name), "{err}");
    }
}

#[test]
fn controller_keys_survive_a_robot_switch() {
    let mut cfg = parse_config("[controller]\nN_horizon = 30\n").unwrap();
    cfg.set_robot(Robot::Acrobot).unwrap();
    assert_eq!(cfg.controller.n_horizon, 30);
    assert_eq!(cfg.controller.q, ControllerOptions::for_robot(Robot::Acrobot).q);
    assert_eq!(cfg.model.robot, Robot::Acrobot);
    let from_file = parse_config("[model]\nrobot = acrobot\n").unwrap();
    assert_eq!(from_file.controller, ControllerOptions::for_robot(Robot::Acrobot));
}

#[test]
fn disturbance_schedule_alternates_sign_on_chosen_joint() {
    let cfg = parse_config("[model]\nrobot = acrobot\n[benchmark]\ndisturbance_times = 15, 30, 45\n").unwrap();
    let d = cfg.disturbances();
    assert_eq!(d.iter().map(|d| d.torque).collect::<Vec<_>>(), [5.0, -5.0, 5.0]);
    assert!(d.iter().all(|d| d.joint == 1 && d.duration == 0.1));
    let mut cfg = cfg;
    cfg.benchmark.disturbance_joint = PulseJoint::Passive;
    assert!(cfg.disturbances().iter().all(|d| d.joint == 0));
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        prop_oneof![Just(Robot::Acrobot), Just(Robot::Pendubot)],
        (0.1f64..2.0, 0.1f64..1.0, 1usize..40, prop_oneof![Just("SQP"), Just("SQP_RTI"), Just("DDP")]),
        (any::<bool>(), any::<bool>(), proptest::option::of(-10.0f64..10.0), 0.0f64..1.0),
        (1u64..u64::MAX, 1.0f64..100.0, proptest::collection::vec(0.0f64..60.0, 0..4), 1usize..10),
        proptest::sample::subsequence(Parameter::ALL.to_vec(), 0..=12),
        proptest::collection::vec(0.5f64..1.5, 0..6),
    )
        .prop_map(
            |(robot, (m1, horizon, n, solver), (wrap, fallback, kp, vn), (seed, dur, times, every), params, scales)| {
                let text = format!(
                    "[model]\nrobot = {}\nm1 = {m1}\n[controller]\nprediction_horizon = {horizon}\nN_horizon = {n}\n\
                 solver_type = {solver}\nwrap_angle = {wrap}\nfallback_on_solver_fail = {fallback}\npd_KP = {}\n\
                 [benchmark]\nseed = {seed}\nduration = {dur}\nvelocity_noise = {vn}\ndisturbance_times = {}\n\
                 record_every = {every}\nparameters = {}\nparam_scaling = {}\n",
                    robot.name(),
                    kp.map_or("none".to_string(), |k: f64| k.to_string()),
                    times.iter().map(f64::to_string).collect::<Vec<_>>().join(", "),
                    params.iter().map(|p| p.name()).collect::<Vec<_>>().join(","),
                    scales.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
                );
                parse_config(&text).unwrap()
            },
        )
}

proptest! {
    #[test]
    fn serialization_round_trips(cfg in arb_config()) {
        let text = cfg.serialize();
        let parsed = parse_config(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(parsed.serialize(), text);
    }
}
