use dpmpc_core::dynamics::{
    coriolis_matrix, energy_gradient, energy_of, forward_dynamics, friction_torque, gravity_vector, integrate_step,
    mass_matrix, potential_energy, state_derivative, state_jacobians, tip_height,
};
use dpmpc_core::{JointTorque, ModelParams, Robot, State};
use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn frictionless() -> ModelParams {
    ModelParams { b1: 0.0, b2: 0.0, cf1: 0.0, cf2: 0.0, ..ModelParams::default() }
}

fn random_point(rng: &mut StdRng) -> (Vector4<f64>, Vector2<f64>) {
    let x = Vector4::new(
        rng.random_range(-4.0..4.0),
        rng.random_range(-4.0..4.0),
        rng.random_range(-8.0..8.0),
        rng.random_range(-8.0..8.0),
    );
    (x, Vector2::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)))
}

/// COM positions from the kinematics, angles measured from upright.
fn com_positions(q: &Vector2<f64>, p: &ModelParams) -> [Vector2<f64>; 2] {
    let a12 = q[0] + q[1];
    [
        Vector2::new(p.r1 * q[0].sin(), p.r1 * q[0].cos()),
        Vector2::new(p.l1 * q[0].sin() + p.r2 * a12.sin(), p.l1 * q[0].cos() + p.r2 * a12.cos()),
    ]
}

/// Mass matrix assembled from numerically differentiated COM Jacobians.
fn mass_matrix_oracle(q: &Vector2<f64>, p: &ModelParams) -> Matrix2<f64> {
    let h = 1e-6;
    let mut jac = [Matrix2::zeros(); 2];
    for j in 0..2 {
        let mut e = Vector2::zeros();
        e[j] = h;
        let (fwd, bwd) = (com_positions(&(q + e), p), com_positions(&(q - e), p));
        for link in 0..2 {
            jac[link].set_column(j, &((fwd[link] - bwd[link]) / (2.0 * h)));
        }
    }
    // Link 1 turns at qd1, link 2 at qd1 + qd2.
    let w1 = Matrix2::new(1.0, 0.0, 0.0, 0.0);
    let w2 = Matrix2::new(1.0, 1.0, 1.0, 1.0);
    jac[0].transpose() * jac[0] * p.m1 + jac[1].transpose() * jac[1] * p.m2 + w1 * p.i1 + w2 * p.i2
}

#[test]
fn mass_matrix_matches_kinematic_assembly() {
    let p = ModelParams::default();
    let mut rng = StdRng::seed_from_u64(1);
    for _ in 0..50 {
        let (x, _) = random_point(&mut rng);
        let q = Vector2::new(x[0], x[1]);
        let d = mass_matrix(&q, &p) - mass_matrix_oracle(&q, &p);
        assert!(d.amax() < 1e-8, "{d}");
    }
}

#[test]
fn gravity_is_minus_potential_gradient() {
    let p = ModelParams::default();
    let mut rng = StdRng::seed_from_u64(2);
    let h = 1e-6;
    for _ in 0..50 {
        let (x, _) = random_point(&mut rng);
        let q = Vector2::new(x[0], x[1]);
        let g = gravity_vector(&q, &p);
        for j in 0..2 {
            let mut e = Vector2::zeros();
            e[j] = h;
            let fd = -(potential_energy(&(q + e), &p) - potential_energy(&(q - e), &p)) / (2.0 * h);
            assert!((g[j] - fd).abs() < 1e-7);
        }
    }
}

#[test]
fn jacobians_match_central_differences() {
    let mut rng = StdRng::seed_from_u64(3);
    let p = ModelParams::default();
    let h = 1e-6;
    for _ in 0..100 {
        let (x, tau) = random_point(&mut rng);
        let (a, b) = state_jacobians(&x, &tau, &p);
        let mut fd_a = Matrix4::zeros();
        for j in 0..4 {
            let mut e = Vector4::zeros();
            e[j] = h;
            let col = (state_derivative(&(x + e), &tau, &p) - state_derivative(&(x - e), &tau, &p)) / (2.0 * h);
            fd_a.set_column(j, &col);
        }
        let rel = (a - fd_a).norm() / fd_a.norm();
        assert!(rel < 1e-6, "A relative error {rel} at {x}");
        for j in 0..2 {
            let mut e = Vector2::zeros();
            e[j] = h;
            let fd = (state_derivative(&x, &(tau + e), &p) - state_derivative(&x, &(tau - e), &p)) / (2.0 * h);
            let rel = (b.column(j) - fd).norm() / fd.norm();
            assert!(rel < 1e-6, "B column {j} relative error {rel}");
        }
    }
}

#[test]
fn accelerations_satisfy_equation_of_motion() {
    let mut rng = StdRng::seed_from_u64(4);
    for robot in [Robot::Acrobot, Robot::Pendubot] {
        let p = ModelParams::default().with_robot(robot);
        for _ in 0..100 {
            let (x, tau) = random_point(&mut rng);
            let s = State::from_vector(&x);
            let xd = forward_dynamics(&s, &JointTorque::new(tau[0], tau[1]), &p);
            let (q, qd) = (Vector2::new(x[0], x[1]), Vector2::new(x[2], x[3]));
            let qdd = Vector2::new(xd[2], xd[3]);
            let residual = mass_matrix(&q, &p) * qdd + coriolis_matrix(&q, &qd, &p) * qd - gravity_vector(&q, &p)
                + friction_torque(&qd, &p)
                - tau;
            assert!(residual.amax() < 1e-10, "{residual}");
            assert_eq!(Vector2::new(xd[0], xd[1]), qd);
        }
    }
}

#[test]
fn mass_matrix_rate_minus_twice_coriolis_is_skew() {
    let p = ModelParams::default();
    let mut rng = StdRng::seed_from_u64(5);
    let h = 1e-6;
    for _ in 0..50 {
        let (x, _) = random_point(&mut rng);
        let (q, qd) = (Vector2::new(x[0], x[1]), Vector2::new(x[2], x[3]));
        let m_dot = (mass_matrix(&(q + qd * h), &p) - mass_matrix(&(q - qd * h), &p)) / (2.0 * h);
        let n = m_dot - coriolis_matrix(&q, &qd, &p) * 2.0;
        assert!((n + n.transpose()).amax() < 1e-6, "{n}");
    }
}

#[test]
fn energy_gradient_matches_central_differences() {
    let p = ModelParams::default();
    let mut rng = StdRng::seed_from_u64(6);
    let h = 1e-6;
    for _ in 0..50 {
        let (x, _) = random_point(&mut rng);
        let g = energy_gradient(&x, &p);
        for j in 0..4 {
            let mut e = Vector4::zeros();
            e[j] = h;
            let fd = (energy_of(&(x + e), &p) - energy_of(&(x - e), &p)) / (2.0 * h);
            assert!((g[j] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }
}

#[test]
fn power_balance() {
    // dE/dt = qd . (tau - F)
    let p = ModelParams::default();
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..50 {
        let (x, tau) = random_point(&mut rng);
        let xd = state_derivative(&x, &tau, &p);
        let qd = Vector2::new(x[2], x[3]);
        let power = qd.dot(&(tau - friction_torque(&qd, &p)));
        let de = energy_gradient(&x, &p).dot(&xd);
        assert!((de - power).abs() < 1e-9 * (1.0 + power.abs()), "{de} vs {power}");
    }
}

#[test]
fn frictionless_passive_motion_conserves_energy() {
    let p = frictionless();
    for x0 in [State::new(2.0, 0.5, 0.0, 0.0), State::new(0.3, -1.0, 2.0, -3.0), State::new(3.0, 0.0, 1.0, 1.0)] {
        let e0 = energy_of(&x0.to_vector(), &p);
        let mut x = x0;
        for _ in 0..10_000 {
            x = integrate_step(&x, &JointTorque::ZERO, 1e-3, &p).unwrap();
        }
        let drift = (energy_of(&x.to_vector(), &p) - e0).abs() / e0.abs();
        assert!(drift < 1e-4, "relative drift {drift}");
    }
}

#[test]
fn friction_only_removes_energy() {
    let p = ModelParams::default();
    let mut x = State::new(1.0, 2.0, 3.0, -2.0);
    let mut e = total_energy_of(&x, &p);
    for _ in 0..5000 {
        x = integrate_step(&x, &JointTorque::ZERO, 1e-3, &p).unwrap();
        let next = total_energy_of(&x, &p);
        assert!(next <= e + 1e-9, "{next} > {e}");
        e = next;
    }
}

fn total_energy_of(x: &State, p: &ModelParams) -> f64 {
    energy_of(&x.to_vector(), p)
}

#[test]
fn rk4_global_error_is_fourth_order() {
    let p = frictionless();
    let x0 = State::new(2.5, 0.4, 0.0, 0.0);
    let run = |dt: f64, steps: usize| {
        let mut x = x0;
        for _ in 0..steps {
            x = integrate_step(&x, &JointTorque::new(0.3, 0.0), dt, &p).unwrap();
        }
        x.to_vector()
    };
    let reference = run(1.0 / 12800.0, 12800);
    let coarse = (run(1.0 / 100.0, 100) - reference).norm();
    let fine = (run(1.0 / 200.0, 200) - reference).norm();
    let ratio = coarse / fine;
    assert!((12.0..20.0).contains(&ratio), "error ratio {ratio}");
}

#[test]
fn upright_energy_raises_each_com_by_twice_its_height() {
    let p = ModelParams::default();
    let expected = 2.0 * p.g * (p.m1 * p.r1 + p.m2 * (p.l1 + p.r2));
    assert!((total_energy_of(&State::UPRIGHT, &p) - expected).abs() < 1e-12);
    assert_eq!(total_energy_of(&State::HANGING, &p), 0.0);
    assert_eq!(tip_height(&State::UPRIGHT, &p), p.l1 + p.l2);
    assert!((tip_height(&State::HANGING, &p) + p.l1 + p.l2).abs() < 1e-15);
}

proptest! {
    #[test]
    fn dynamics_are_periodic_in_both_angles(
        q1 in -3.0f64..3.0, q2 in -3.0f64..3.0, qd1 in -5.0f64..5.0, qd2 in -5.0f64..5.0,
        k1 in -2i32..=2, k2 in -2i32..=2, u in -6.0f64..6.0,
    ) {
        let p = ModelParams::default();
        let tau = Vector2::new(u, 0.0);
        let x = Vector4::new(q1, q2, qd1, qd2);
        let shifted = Vector4::new(
            q1 + 2.0 * core::f64::consts::PI * k1 as f64,
            q2 + 2.0 * core::f64::consts::PI * k2 as f64,
            qd1,
            qd2,
        );
        let d = state_derivative(&x, &tau, &p) - state_derivative(&shifted, &tau, &p);
        prop_assert!(d.amax() < 1e-9);
    }
}
