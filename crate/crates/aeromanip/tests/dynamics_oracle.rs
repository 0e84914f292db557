//! Newton-Euler dynamics checked against the independent Lagrangian oracle.

mod common;

use aeromanip::dynamics::{decompose, inverse_dynamics};
use aeromanip::model::RobotParams;
use aeromanip::{GeneralizedState, Mat8, Vec8};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn oracle_gravity_matches_total_weight_when_level() {
    let p = RobotParams::default();
    let g = common::oracle_gravity(&Vec8::zeros(), &p);
    assert!((g[2] - p.total_mass() * p.g_r).abs() < 1e-9);
    assert!(g[0].abs() < 1e-9 && g[1].abs() < 1e-9);
}

#[test]
fn newton_euler_matches_lagrangian_on_random_states() {
    let p = RobotParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let s = common::random_state(&mut rng);
        let (tau, _) = inverse_dynamics(&s, &p);
        let oracle = common::oracle_inverse_dynamics(&s.q, &s.qd, &s.qdd, &p);
        let rel = (tau - oracle).norm() / (1.0 + oracle.norm());
        assert!(rel < 1e-8, "relative error {rel:.3e} at state {:?}", s.q);
    }
}

#[test]
fn static_joint_torques_and_base_wrench_match_oracle() {
    let p = RobotParams::default();
    let mut s = GeneralizedState::zero();
    s.q[3] = 0.4;
    s.q[4] = 0.3;
    s.q[5] = -0.2;
    s.q[6] = 0.9;
    s.q[7] = -0.7;
    let (tau, wrench) = inverse_dynamics(&s, &p);
    let g = common::oracle_gravity(&s.q, &p);
    assert!((tau - g).norm() < 1e-8);

    // Statics: the arm transmits exactly its own weight, vertically, at any
    // attitude, and the oracle's attitude rows encode the coupling moment.
    let arm_w = (p.m0 + p.m1 + p.m2) * p.g_r;
    assert!((wrench.f_mq - aeromanip::Vec3::new(0.0, 0.0, -arm_w)).norm() < 1e-8);

    let r_b = aeromanip::kinematics::rot_body(&s.euler());
    let t_b = aeromanip::kinematics::euler_rate_transform_unchecked(&s.euler());
    let t_tilde = r_b.transpose() * t_b;
    let rows = aeromanip::Vec3::new(g[3], g[4], g[5]);
    let m_mq_b = -t_tilde.transpose().lu().solve(&rows).unwrap();
    assert!((wrench.m_mq_b - m_mq_b).norm() < 1e-8);
}

#[test]
fn mass_matrix_symmetric_and_positive_definite_sweep() {
    let p = RobotParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let s = common::random_state(&mut rng);
        let dec = decompose(&s.q, &s.qd, &p);
        let asym = (dec.m - dec.m.transpose()).abs().max();
        assert!(asym < 1e-10, "asymmetry {asym:.3e}");
        assert!(
            dec.m.cholesky().is_some(),
            "mass matrix not positive definite at {:?}",
            s.q
        );
    }
}

#[test]
fn mdot_minus_two_c_is_skew_for_christoffel_factorization() {
    let p = RobotParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mfun = |q: &Vec8| decompose(q, &Vec8::zeros(), &p).m;
    for _ in 0..25 {
        let s = common::random_state(&mut rng);
        let c = common::christoffel_matrix(&mfun, &s.q, &s.qd);
        let mdot = common::mdot_along(&mfun, &s.q, &s.qd);
        let w: Mat8 = mdot - 2.0 * c;
        let v = common::random_state(&mut rng).qd;
        let quad = (v.transpose() * w * v)[0].abs();
        assert!(quad < 1e-8 * v.norm_squared(), "quadratic form {quad:.3e}");
    }
}

#[test]
fn coriolis_oracle_consistent_with_library_cqd() {
    let p = RobotParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let mut s = common::random_state(&mut rng);
        s.qdd = Vec8::zeros();
        let dec = decompose(&s.q, &s.qd, &p);
        let mut c_qd = common::oracle_coriolis_matrix(&s.q, &s.qd, &p) * s.qd;
        c_qd[6] += p.b1 * s.qd[6];
        c_qd[7] += p.b2 * s.qd[7];
        assert!((dec.cqd - c_qd).norm() < 1e-8 * (1.0 + c_qd.norm()));
    }
}
