//! Independent oracles for box-constrained OCP-structured QPs, shared by
//! the QP tests and the acceptance run.
#![allow(dead_code)]

use dpmpc_core::solver::qp::{qp_solve, OcpQp, QpMode, QpSettings, QpSolution, QpStage, QpStatus};
use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn tight() -> QpSettings {
    QpSettings { tol: 1e-10, max_iter: 100, mode: QpMode::Robust }
}

pub fn random_matrix<const R: usize, const C: usize>(rng: &mut ChaCha8Rng, scale: f64) -> SMatrix<f64, R, C> {
    SMatrix::from_fn(|_, _| rng.random_range(-scale..scale))
}

/// Random strictly convex problem. Returns it together with a feasible input
/// sequence so bounds can be placed around a reachable trajectory.
pub fn random_qp<const NX: usize, const NU: usize>(
    rng: &mut ChaCha8Rng,
    n: usize,
    input_bounds: bool,
    state_bound_nodes: &[usize],
) -> OcpQp<NX, NU> {
    let x_init = random_matrix::<NX, 1>(rng, 2.0);
    let mut stages = Vec::new();
    let mut x = x_init;
    let mut reference = vec![x];
    for _ in 0..n {
        let mut st = QpStage::<NX, NU>::empty();
        st.a = SMatrix::identity() + random_matrix(rng, 0.4);
        st.b = random_matrix(rng, 1.0);
        st.c = random_matrix(rng, 0.3);
        // Joint Hessian L'L + 0.1 I split into its blocks.
        let l = DMatrix::from_fn(NX + NU, NX + NU, |_, _| rng.random_range(-1.0..1.0));
        let w = l.transpose() * &l + DMatrix::identity(NX + NU, NX + NU) * 0.1;
        st.q = SMatrix::from_fn(|i, j| w[(i, j)]);
        st.r = SMatrix::from_fn(|i, j| w[(NX + i, NX + j)]);
        st.s = SMatrix::from_fn(|i, j| w[(NX + i, j)]);
        st.qv = random_matrix(rng, 3.0);
        st.rv = random_matrix(rng, 3.0);
        let u_ref = random_matrix::<NU, 1>(rng, 0.5);
        if input_bounds {
            for j in 0..NU {
                st.u_lo[j] = u_ref[j] - rng.random_range(0.05..1.0);
                st.u_hi[j] = u_ref[j] + rng.random_range(0.05..1.0);
            }
        }
        x = st.a * x + st.b * u_ref + st.c;
        reference.push(x);
        stages.push(st);
    }
    let ln = random_matrix::<NX, NX>(rng, 1.0);
    let mut qp = OcpQp {
        stages,
        qn: ln.transpose() * ln + SMatrix::identity() * 0.1,
        qvn: random_matrix(rng, 3.0),
        xn_lo: SVector::repeat(f64::NEG_INFINITY),
        xn_hi: SVector::repeat(f64::INFINITY),
        x_init,
    };
    for &k in state_bound_nodes {
        let lo = reference[k][0] - rng.random_range(0.05..1.0);
        let hi = reference[k][0] + rng.random_range(0.05..1.0);
        if k == n {
            qp.xn_lo[0] = lo;
            qp.xn_hi[0] = hi;
        } else {
            qp.stages[k].x_lo[0] = lo;
            qp.stages[k].x_hi[0] = hi;
        }
    }
    qp
}

/// Dense oracle: eliminate nothing, write the QP over
/// `z = (u_0 .. u_{N-1}, x_1 .. x_N)`, and enumerate every assignment of the
/// bounded variables to {free, lower, upper}. The optimum of a strictly
/// convex QP is the best primal-feasible face minimizer.
pub fn dense_oracle<const NX: usize, const NU: usize>(qp: &OcpQp<NX, NU>) -> Option<(Vec<f64>, f64)> {
    let n = qp.stages.len();
    let nz = n * NU + n * NX;
    let ui = |k: usize, j: usize| k * NU + j;
    let xi = |k: usize, i: usize| n * NU + (k - 1) * NX + i;
    let mut h = DMatrix::<f64>::zeros(nz, nz);
    let mut g = DVector::<f64>::zeros(nz);
    let mut e = DMatrix::<f64>::zeros(n * NX, nz);
    let mut rhs = DVector::<f64>::zeros(n * NX);
    let x0 = qp.x_init;

    for (k, st) in qp.stages.iter().enumerate() {
        for a in 0..NU {
            for b in 0..NU {
                h[(ui(k, a), ui(k, b))] += st.r[(a, b)];
            }
            g[ui(k, a)] += st.rv[a];
        }
        if k == 0 {
            let su = st.s * x0;
            for a in 0..NU {
                g[ui(0, a)] += su[a];
            }
        } else {
            for a in 0..NX {
                for b in 0..NX {
                    h[(xi(k, a), xi(k, b))] += st.q[(a, b)];
                }
                g[xi(k, a)] += st.qv[a];
                for b in 0..NU {
                    h[(ui(k, b), xi(k, a))] += st.s[(b, a)];
                    h[(xi(k, a), ui(k, b))] += st.s[(b, a)];
                }
            }
        }
        // x_{k+1} - A x_k - B u_k = c (+ A x_0 when k = 0)
        for i in 0..NX {
            let row = k * NX + i;
            e[(row, xi(k + 1, i))] = 1.0;
            for j in 0..NU {
                e[(row, ui(k, j))] = -st.b[(i, j)];
            }
            if k == 0 {
                rhs[row] = st.c[i] + (st.a * x0)[i];
            } else {
                for j in 0..NX {
                    e[(row, xi(k, j))] = -st.a[(i, j)];
                }
                rhs[row] = st.c[i];
            }
        }
    }
    for a in 0..NX {
        for b in 0..NX {
            h[(xi(n, a), xi(n, b))] += qp.qn[(a, b)];
        }
        g[xi(n, a)] += qp.qvn[a];
    }

    let mut bounded = Vec::new();
    for (k, st) in qp.stages.iter().enumerate() {
        for j in 0..NU {
            if st.u_lo[j].is_finite() || st.u_hi[j].is_finite() {
                bounded.push((ui(k, j), st.u_lo[j], st.u_hi[j]));
            }
        }
        if k > 0 {
            for i in 0..NX {
                if st.x_lo[i].is_finite() || st.x_hi[i].is_finite() {
                    bounded.push((xi(k, i), st.x_lo[i], st.x_hi[i]));
                }
            }
        }
    }
    for i in 0..NX {
        if qp.xn_lo[i].is_finite() || qp.xn_hi[i].is_finite() {
            bounded.push((xi(n, i), qp.xn_lo[i], qp.xn_hi[i]));
        }
    }

    let objective = |z: &DVector<f64>| 0.5 * z.dot(&(&h * z)) + g.dot(z);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let combos = 3usize.pow(bounded.len() as u32);
    for mut code in 0..combos {
        let mut fixed = Vec::new();
        for &(idx, lo, hi) in &bounded {
            match code % 3 {
                1 if lo.is_finite() => fixed.push((idx, lo)),
                2 if hi.is_finite() => fixed.push((idx, hi)),
                0 => {}
                _ => {
                    fixed.clear();
                    fixed.push((usize::MAX, 0.0));
                    break;
                }
            }
            code /= 3;
        }
        if fixed.first().is_some_and(|f| f.0 == usize::MAX) {
            continue;
        }
        let m = n * NX + fixed.len();
        let dim = nz + m;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);
        kkt.view_mut((0, 0), (nz, nz)).copy_from(&h);
        kkt.view_mut((nz, 0), (n * NX, nz)).copy_from(&e);
        kkt.view_mut((0, nz), (nz, n * NX)).copy_from(&e.transpose());
        b.rows_mut(0, nz).copy_from(&(-&g));
        b.rows_mut(nz, n * NX).copy_from(&rhs);
        for (r, &(idx, val)) in fixed.iter().enumerate() {
            kkt[(nz + n * NX + r, idx)] = 1.0;
            kkt[(idx, nz + n * NX + r)] = 1.0;
            b[nz + n * NX + r] = val;
        }
        let Some(sol) = kkt.clone().lu().solve(&b) else { continue };
        if (&kkt * &sol - &b).amax() > 1e-8 {
            continue;
        }
        let z = sol.rows(0, nz).into_owned();
        if bounded.iter().any(|&(idx, lo, hi)| z[idx] < lo - 1e-9 || z[idx] > hi + 1e-9) {
            continue;
        }
        let f = objective(&z);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((z.iter().copied().collect(), f));
        }
    }
    best
}

pub fn flatten<const NX: usize, const NU: usize>(sol: &QpSolution<NX, NU>) -> Vec<f64> {
    let mut z = Vec::new();
    for u in &sol.us {
        z.extend(u.iter());
    }
    for x in sol.xs.iter().skip(1) {
        z.extend(x.iter());
    }
    z
}

/// Stationarity, primal feasibility and complementarity recomputed from the
/// returned multipliers.
pub fn check_kkt<const NX: usize, const NU: usize>(qp: &OcpQp<NX, NU>, sol: &QpSolution<NX, NU>, tol: f64) {
    let n = qp.stages.len();
    for k in 0..n {
        let st = &qp.stages[k];
        let (x, u) = (sol.xs[k], sol.us[k]);
        let gu = st.r * u + st.s * x + st.rv + st.b.transpose() * sol.pis[k + 1] + sol.u_mult[k];
        assert!(gu.amax() <= tol, "input stationarity {}", gu.amax());
        if k > 0 {
            let gx = st.q * x + st.s.transpose() * u + st.qv + st.a.transpose() * sol.pis[k + 1] - sol.pis[k]
                + sol.x_mult[k];
            assert!(gx.amax() <= tol, "state stationarity {}", gx.amax());
        }
        let defect = st.a * x + st.b * u + st.c - sol.xs[k + 1];
        assert!(defect.amax() <= tol);
        for j in 0..NU {
            assert!(u[j] >= st.u_lo[j] - tol && u[j] <= st.u_hi[j] + tol);
            let m = sol.u_mult[k][j];
            if m > tol {
                assert!((st.u_hi[j] - u[j]).abs() * m <= tol);
            }
            if m < -tol {
                assert!((u[j] - st.u_lo[j]).abs() * -m <= tol);
            }
        }
    }
    let gx = qp.qn * sol.xs[n] + qp.qvn - sol.pis[n] + sol.x_mult[n];
    assert!(gx.amax() <= tol);
    assert!((sol.xs[0] - qp.x_init).amax() <= tol);
}

/// Objective terms that depend only on the fixed initial state.
pub fn const_part<const NX: usize, const NU: usize>(qp: &OcpQp<NX, NU>) -> f64 {
    let st = &qp.stages[0];
    let x = qp.x_init;
    0.5 * x.dot(&(st.q * x)) + st.qv.dot(&x)
}

/// Textbook discrete Riccati recursion for the unconstrained problem.
pub fn riccati_oracle<const NX: usize, const NU: usize>(
    qp: &OcpQp<NX, NU>,
) -> (Vec<SVector<f64, NX>>, Vec<SVector<f64, NU>>) {
    let n = qp.stages.len();
    let mut p = qp.qn;
    let mut pv = qp.qvn;
    let mut gains = Vec::new();
    for st in qp.stages.iter().rev() {
        let w = p * st.c + pv;
        let quu = st.r + st.b.transpose() * p * st.b;
        let qux = st.s + st.b.transpose() * p * st.a;
        let qxx = st.q + st.a.transpose() * p * st.a;
        let qu = st.rv + st.b.transpose() * w;
        let qx = st.qv + st.a.transpose() * w;
        let inv = quu.try_inverse().unwrap();
        let k = -inv * qux;
        let kf = -inv * qu;
        p = qxx + qux.transpose() * k;
        p = 0.5 * (p + p.transpose());
        pv = qx + qux.transpose() * kf;
        gains.push((k, kf));
    }
    gains.reverse();
    let mut xs = vec![qp.x_init];
    let mut us = Vec::new();
    for k in 0..n {
        let u = gains[k].0 * xs[k] + gains[k].1;
        let st = &qp.stages[k];
        xs.push(st.a * xs[k] + st.b * u + st.c);
        us.push(u);
    }
    (xs, us)
}

pub fn compare_with_oracle<const NX: usize, const NU: usize>(qp: &OcpQp<NX, NU>) {
    let (z, f) = dense_oracle(qp).expect("instance is feasible by construction");
    let sol = qp_solve(qp, &tight());
    assert_eq!(sol.status, QpStatus::Solved);
    let got = flatten(&sol);
    let err = z.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "deviation {err} from dense optimum");
    assert!((qp.objective(&sol.xs, &sol.us) - (f + const_part(qp))).abs() < 1e-6 * (1.0 + f.abs()));
    check_kkt(qp, &sol, 1e-7);
}
