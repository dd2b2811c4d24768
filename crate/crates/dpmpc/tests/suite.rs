use dpmpc::io::write_atomic;
use dpmpc::suite::robustness_suite_parallel;
use dpmpc_core::clock::NullClock;
use dpmpc_core::simbench::{robustness_suite, AxesSpec, EpisodeConfig, Parameter};
use dpmpc_core::Robot;

#[test]
fn parallel_suite_matches_sequential() {
    let base = EpisodeConfig { duration: 3.0, ..EpisodeConfig::nominal(Robot::Pendubot) };
    let spec = AxesSpec {
        parameters: vec![Parameter::M2, Parameter::Cf2],
        param_scaling: vec![0.9, 1.1],
        velocity_noise: vec![0.0, 0.1],
        torque_noise: vec![0.5],
        time_delay: vec![0.0, 0.01],
    };
    let par = robustness_suite_parallel(&base, &spec, || NullClock).unwrap();
    let seq = robustness_suite(&base, &spec).unwrap();
    assert_eq!(par, seq);
    assert_eq!(par.axes.iter().map(|a| a.values.len()).sum::<usize>(), 9);
}

#[test]
fn invalid_sweep_is_rejected_before_running() {
    let base = EpisodeConfig::nominal(Robot::Pendubot);
    let spec = AxesSpec { param_scaling: vec![0.0], ..AxesSpec::default() };
    assert!(robustness_suite_parallel(&base, &spec, || NullClock).is_err());
}

#[test]
fn atomic_write_replaces_whole_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("x.json");
    write_atomic(&path, b"first version, longer").unwrap();
    write_atomic(&path, b"second").unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"second");
    assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
}
