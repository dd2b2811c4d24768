#[path = "common/qp_oracle.rs"]
mod qp_oracle;

use dpmpc_core::solver::qp::{qp_solve, PreparedQp, QpMode, QpSettings, QpStatus};
use proptest::prelude::*;
use qp_oracle::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn matches_dense_enumeration_single_input(seed in any::<u64>(), n in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Keep the number of bounded variables small enough to enumerate.
        let state_nodes: Vec<usize> = (1..=n).filter(|_| rng.random_bool(0.5)).take(9 - n).collect();
        let qp = random_qp::<3, 1>(&mut rng, n, true, &state_nodes);
        compare_with_oracle(&qp);
    }

    #[test]
    fn matches_dense_enumeration_two_inputs(seed in any::<u64>(), n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qp = random_qp::<4, 2>(&mut rng, n, true, &[n]);
        compare_with_oracle(&qp);
    }
}

#[test]
fn unconstrained_matches_riccati_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..20 {
        let n = 1 + trial % 8;
        let qp = random_qp::<4, 1>(&mut rng, n, false, &[]);
        let (xs, us) = riccati_oracle(&qp);
        let sol = qp_solve(&qp, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Solved);
        for (a, b) in xs.iter().zip(&sol.xs) {
            assert!((a - b).amax() < 1e-8 * (1.0 + a.amax()), "state mismatch {}", (a - b).amax());
        }
        for (a, b) in us.iter().zip(&sol.us) {
            assert!((a - b).amax() < 1e-8 * (1.0 + a.amax()));
        }
        check_kkt(&qp, &sol, 1e-8);
    }
}

#[test]
fn fully_clamped_inputs_give_zero_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut qp = random_qp::<4, 1>(&mut rng, 5, false, &[]);
    for st in &mut qp.stages {
        st.u_lo[0] = 0.0;
        st.u_hi[0] = 0.0;
    }
    let sol = qp_solve(&qp, &QpSettings::default());
    assert_eq!(sol.status, QpStatus::Solved);
    assert!(sol.us.iter().all(|u| u[0] == 0.0 || u[0].abs() < 1e-12));
}

#[test]
fn speed_mode_agrees_with_robust_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let qp = random_qp::<3, 1>(&mut rng, 4, true, &[2]);
        let a = qp_solve(&qp, &tight());
        let b = qp_solve(&qp, &QpSettings { mode: QpMode::Speed, ..tight() });
        assert_eq!(a.status, QpStatus::Solved);
        assert_eq!(b.status, QpStatus::Solved);
        let err = flatten(&a).iter().zip(&flatten(&b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6);
    }
}

#[test]
fn prepared_feedback_tracks_initial_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..10 {
        let qp = random_qp::<4, 1>(&mut rng, 6, true, &[]);
        let prepared = PreparedQp::new(qp.clone(), tight());
        for _ in 0..5 {
            let x0 = qp.x_init + random_matrix::<4, 1>(&mut rng, 0.5);
            let mut shifted = qp.clone();
            shifted.x_init = x0;
            let direct = qp_solve(&shifted, &tight());
            let fast = prepared.feedback(&x0);
            assert_eq!(fast.status, QpStatus::Solved);
            let err = flatten(&direct).iter().zip(&flatten(&fast)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "{err}");
        }
    }
}
