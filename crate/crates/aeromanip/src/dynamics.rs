//! Coupled rigid-body dynamics: recursive Newton-Euler over the arm, the
//! vehicle's rigid-body rows closed with the interaction wrench, and the
//! probing-based M/C/G decomposition used by the simulator and controllers.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::kinematics::{
    arm_frames, euler_rate_transform_dot, euler_rate_transform_unchecked, rot_body,
};
use crate::model::{control_matrix, input_map, ActuatorInput, RobotParams};
use crate::{
    Error, GeneralizedForce, GeneralizedState, Mat3, Mat8, Result, Vec2, Vec3, Vec6, Vec8, IQ_PH,
    IQ_PSI, IQ_TH, IQ_TH1, IQ_TH2, IQ_X, IQ_Y, IQ_Z,
};

/// Body-frame motion of the vehicle used to seed the arm recursion. The
/// linear acceleration is the true coordinate acceleration; gravity enters
/// the recursion per link.
#[derive(Debug, Clone, Copy)]
pub struct BaseMotion {
    pub omega: Vec3,
    pub omega_dot: Vec3,
    pub v_dot: Vec3,
}

impl BaseMotion {
    pub fn stationary() -> Self {
        Self {
            omega: Vec3::zeros(),
            omega_dot: Vec3::zeros(),
            v_dot: Vec3::zeros(),
        }
    }

    /// Base motion implied by a full generalized state.
    pub fn from_state(s: &GeneralizedState) -> Self {
        let phi = s.euler();
        let phid = s.euler_rates();
        let phidd = Vec3::new(s.qdd[IQ_PSI], s.qdd[IQ_TH], s.qdd[IQ_PH]);
        let r_b = rot_body(&phi);
        let t_b = euler_rate_transform_unchecked(&phi);
        let td_b = euler_rate_transform_dot(&phi, &phid);
        Self {
            omega: r_b.transpose() * (t_b * phid),
            omega_dot: r_b.transpose() * (t_b * phidd + td_b * phid),
            v_dot: r_b.transpose() * Vec3::new(s.qdd[IQ_X], s.qdd[IQ_Y], s.qdd[IQ_Z]),
        }
    }
}

/// Wrench the arm applies to the vehicle, transported to the body origin.
#[derive(Debug, Clone, Copy)]
pub struct InteractionWrench {
    /// Force in the inertial frame.
    pub f_mq: Vec3,
    /// Force in the body frame.
    pub f_mq_b: Vec3,
    /// Moment about the body origin, in the body frame.
    pub m_mq_b: Vec3,
}

impl InteractionWrench {
    pub fn zero() -> Self {
        Self {
            f_mq: Vec3::zeros(),
            f_mq_b: Vec3::zeros(),
            m_mq_b: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RneOutput {
    /// Joint torques, viscous friction included.
    pub tau_m: Vec2,
    pub wrench: InteractionWrench,
}

/// Newton-Euler pass over the bracket and both links.
///
/// Outward: propagate angular velocity/acceleration and linear acceleration
/// from the base through the fixed bracket joint and the two revolute joints.
/// Inward: accumulate joint forces and moments, subtracting each link's
/// weight in its own frame. The bracket is a point mass halfway down its
/// length; the links are thin rods with the tabulated transverse inertias.
pub fn rne_manipulator(s: &GeneralizedState, base: &BaseMotion, p: &RobotParams) -> RneOutput {
    let fr = arm_frames(s.q[IQ_TH1], s.q[IQ_TH2], p);
    let r_b0: Mat3 = fr.a_b0.fixed_view::<3, 3>(0, 0).into_owned();
    let r_b1: Mat3 = fr.a_b1.fixed_view::<3, 3>(0, 0).into_owned();
    let r_b2: Mat3 = fr.a_b2.fixed_view::<3, 3>(0, 0).into_owned();
    let r_01 = r_b0.transpose() * r_b1;
    let r_12 = r_b1.transpose() * r_b2;

    let r_b = rot_body(&s.euler());
    let g_w = Vec3::new(0.0, 0.0, -p.g_r);
    let g0 = (r_b * r_b0).transpose() * g_w;
    let g1 = (r_b * r_b1).transpose() * g_w;
    let g2 = (r_b * r_b2).transpose() * g_w;

    // Joint-to-joint and joint-to-CoM offsets in each link's own frame.
    let r0 = Vec3::new(0.0, p.l0, 0.0);
    let r1 = Vec3::new(p.l1, 0.0, 0.0);
    let r2 = Vec3::new(p.l2, 0.0, 0.0);
    let rc0 = Vec3::new(0.0, -p.l0 / 2.0, 0.0);
    let rc1 = Vec3::new(-p.l1 / 2.0, 0.0, 0.0);
    let rc2 = p.r_c2();
    let ic1 = Mat3::from_diagonal(&Vec3::new(0.0, p.i1, p.i1));
    let ic2 = Mat3::from_diagonal(&Vec3::new(0.0, p.i2, p.i2));

    let z = Vec3::z();
    let th1d = s.qd[IQ_TH1];
    let th2d = s.qd[IQ_TH2];

    let w0 = r_b0.transpose() * base.omega;
    let wd0 = r_b0.transpose() * base.omega_dot;
    let vd0 = r_b0.transpose() * base.v_dot + wd0.cross(&r0) + w0.cross(&w0.cross(&r0));
    let vdc0 = vd0 + wd0.cross(&rc0) + w0.cross(&w0.cross(&rc0));

    let w1 = r_01.transpose() * (w0 + th1d * z);
    let wd1 = r_01.transpose() * (wd0 + s.qdd[IQ_TH1] * z + w0.cross(&(th1d * z)));
    let vd1 = r_01.transpose() * vd0 + wd1.cross(&r1) + w1.cross(&w1.cross(&r1));
    let vdc1 = vd1 + wd1.cross(&rc1) + w1.cross(&w1.cross(&rc1));

    let w2 = r_12.transpose() * (w1 + th2d * z);
    let wd2 = r_12.transpose() * (wd1 + s.qdd[IQ_TH2] * z + w1.cross(&(th2d * z)));
    let vd2 = r_12.transpose() * vd1 + wd2.cross(&r2) + w2.cross(&w2.cross(&r2));
    let vdc2 = vd2 + wd2.cross(&rc2) + w2.cross(&w2.cross(&rc2));

    let f2 = p.m2 * (vdc2 - g2);
    let n2 = ic2 * wd2 + w2.cross(&(ic2 * w2)) + (r2 + rc2).cross(&f2);

    let f2_in1 = r_12 * f2;
    let n2_in1 = r_12 * n2;
    let f1 = f2_in1 + p.m1 * (vdc1 - g1);
    let n1 = n2_in1
        + ic1 * wd1
        + w1.cross(&(ic1 * w1))
        + (r1 + rc1).cross(&f1)
        - rc1.cross(&f2_in1);

    let f1_in0 = r_01 * f1;
    let n1_in0 = r_01 * n1;
    let f0 = f1_in0 + p.m0 * (vdc0 - g0);
    let n0 = n1_in0 + (r0 + rc0).cross(&f0) - rc0.cross(&f1_in0);

    let tau_m = Vec2::new(
        n1_in0.dot(&z) + p.b1 * th1d,
        n2_in1.dot(&z) + p.b2 * th2d,
    );
    let f_mq_b = -(r_b0 * f0);
    let m_mq_b = -(r_b0 * n0);
    RneOutput {
        tau_m,
        wrench: InteractionWrench {
            f_mq: r_b * f_mq_b,
            f_mq_b,
            m_mq_b,
        },
    }
}

/// Generalized force that produces the accelerations in `s`, together with
/// the arm-vehicle interaction wrench evaluated at the same state.
pub fn inverse_dynamics(
    s: &GeneralizedState,
    p: &RobotParams,
) -> (GeneralizedForce, InteractionWrench) {
    let base = BaseMotion::from_state(s);
    let rne = rne_manipulator(s, &base, p);

    let phi = s.euler();
    let r_b = rot_body(&phi);
    let t_b = euler_rate_transform_unchecked(&phi);
    let t_tilde = r_b.transpose() * t_b;
    let i_f = Mat3::from_diagonal(&Vec3::new(p.ix, p.iy, p.iz));

    let pdd = Vec3::new(s.qdd[IQ_X], s.qdd[IQ_Y], s.qdd[IQ_Z]);
    let trans = p.m * pdd + Vec3::new(0.0, 0.0, p.m * p.g_r) - rne.wrench.f_mq;
    let rot = t_tilde.transpose()
        * (i_f * base.omega_dot + base.omega.cross(&(i_f * base.omega)) - rne.wrench.m_mq_b);

    let mut tau = Vec8::zeros();
    tau.fixed_rows_mut::<3>(0).copy_from(&trans);
    tau.fixed_rows_mut::<3>(3).copy_from(&rot);
    tau[IQ_TH1] = rne.tau_m[0];
    tau[IQ_TH2] = rne.tau_m[1];
    (tau, rne.wrench)
}

/// Inertia matrix, lumped velocity force, gravity force, and the interaction
/// wrench at zero acceleration.
#[derive(Debug, Clone)]
pub struct DynamicsDecomposition {
    pub m: Mat8,
    /// C(q, q̇)q̇ plus viscous joint friction.
    pub cqd: Vec8,
    pub g: Vec8,
    pub interaction: InteractionWrench,
}

/// Extract M, Cq̇ and G by probing the inverse dynamics: gravity at rest,
/// velocity force at zero acceleration, inertia columns from unit
/// accelerations at rest.
pub fn decompose(q: &Vec8, qd: &Vec8, p: &RobotParams) -> DynamicsDecomposition {
    let rest = GeneralizedState {
        q: *q,
        qd: Vec8::zeros(),
        qdd: Vec8::zeros(),
    };
    let (g, _) = inverse_dynamics(&rest, p);

    let moving = GeneralizedState {
        q: *q,
        qd: *qd,
        qdd: Vec8::zeros(),
    };
    let (cg, interaction) = inverse_dynamics(&moving, p);

    let mut m = Mat8::zeros();
    for k in 0..8 {
        let mut probe = rest;
        probe.qdd[k] = 1.0;
        let (col, _) = inverse_dynamics(&probe, p);
        m.set_column(k, &(col - g));
    }
    DynamicsDecomposition {
        m,
        cqd: cg - g,
        g,
        interaction,
    }
}

static COND_WARNED: AtomicBool = AtomicBool::new(false);

/// Accelerations produced by a generalized force and external load,
/// q̈ = M⁻¹(τ − Cq̇ − G − d_ex). Warns once if M is badly conditioned
/// (coordinate singularity near ±90° pitch).
pub fn forward_dynamics(
    q: &Vec8,
    qd: &Vec8,
    tau: &GeneralizedForce,
    d_ex: &GeneralizedForce,
    p: &RobotParams,
) -> Vec8 {
    let dec = decompose(q, qd, p);
    let eigs = dec.m.symmetric_eigenvalues();
    let (emin, emax) = (eigs.min(), eigs.max());
    if (emin <= 0.0 || emax / emin > 1e8) && !COND_WARNED.swap(true, Ordering::Relaxed) {
        eprintln!(
            "warning: inertia matrix condition {:.3e} exceeds 1e8; attitude near coordinate singularity",
            emax / emin
        );
    }
    let rhs = tau - dec.cqd - dec.g - d_ex;
    match dec.m.cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => dec.m.lu().solve(&rhs).unwrap_or_else(Vec8::zeros),
    }
}

/// Accelerations from actuator commands, including the rotor gyroscopic
/// moment implied by the commanded thrusts.
pub fn full_forward_dynamics(
    q: &Vec8,
    qd: &Vec8,
    u: &ActuatorInput,
    d_ex: &GeneralizedForce,
    p: &RobotParams,
) -> Vec8 {
    let s = GeneralizedState {
        q: *q,
        qd: *qd,
        qdd: Vec8::zeros(),
    };
    let mut tau = input_map(&s, u, p);

    let phi = s.euler();
    let r_b = rot_body(&phi);
    let t_b = euler_rate_transform_unchecked(&phi);
    let t_tilde = r_b.transpose() * t_b;
    let w_b = t_tilde * s.euler_rates();
    let ob = u.omega_bar(p);
    let m_gyro = Vec3::new(-p.i_r * ob * w_b[1], p.i_r * ob * w_b[0], 0.0);
    let tau_gyro = t_tilde.transpose() * m_gyro;
    for (i, row) in [IQ_PSI, IQ_TH, IQ_PH].into_iter().enumerate() {
        tau[row] += tau_gyro[i];
    }
    forward_dynamics(q, qd, &tau, d_ex, p)
}

/// Thrust, body moments and the signed rotor-speed sum for the vehicle rows.
#[derive(Debug, Clone, Copy)]
pub struct BodyInputs {
    pub thrust: f64,
    /// Moments about the body x, y, z axes.
    pub tau_a: Vec3,
    pub omega_bar: f64,
}

impl BodyInputs {
    pub fn zero() -> Self {
        Self {
            thrust: 0.0,
            tau_a: Vec3::zeros(),
            omega_bar: 0.0,
        }
    }

    /// Body inputs generated by actuator commands; moment signs follow the
    /// allocation matrix convention.
    pub fn from_actuators(u: &ActuatorInput, p: &RobotParams) -> Self {
        let body = control_matrix(p) * u.as_vector();
        Self {
            thrust: body[2],
            tau_a: Vec3::new(body[3], body[4], body[5]),
            omega_bar: u.omega_bar(p),
        }
    }
}

/// Vehicle equations of motion in component form. Returns
/// (ẍ, ÿ, z̈, ψ̈, θ̈, φ̈) for the given thrust, body moments, gyroscopic
/// speed sum and interaction wrench. The Euler-angle blocks keep the
/// published small-angle structure; the simulator integrates the consistent
/// generalized form instead.
pub fn quadrotor_eom(
    s: &GeneralizedState,
    inp: &BodyInputs,
    wrench: &InteractionWrench,
    p: &RobotParams,
) -> Vec6 {
    let (psi, th, ph) = (s.q[IQ_PSI], s.q[IQ_TH], s.q[IQ_PH]);
    let (s_psi, c_psi) = psi.sin_cos();
    let (s_th, c_th) = th.sin_cos();
    let (s_ph, c_ph) = ph.sin_cos();
    let (psid, thd, phd) = (s.qd[IQ_PSI], s.qd[IQ_TH], s.qd[IQ_PH]);
    let t = inp.thrust;

    let xdd = (t * (c_psi * s_th * c_ph + s_psi * s_ph) + wrench.f_mq[0]) / p.m;
    let ydd = (t * (s_psi * s_th * c_ph - c_psi * s_ph) + wrench.f_mq[1]) / p.m;
    let zdd = -p.g_r + (t * c_th * c_ph + wrench.f_mq[2]) / p.m;
    let phdd = (thd * phd * (p.iy - p.iz) - p.i_r * thd * inp.omega_bar
        + inp.tau_a[0]
        + wrench.m_mq_b[0])
        / p.ix;
    let thdd = (psid * phd * (p.iz - p.ix) + p.i_r * phd * inp.omega_bar
        + inp.tau_a[1]
        + wrench.m_mq_b[1])
        / p.iy;
    let psidd = (thd * phd * (p.ix - p.iy) + inp.tau_a[2] + wrench.m_mq_b[2]) / p.iz;
    Vec6::new(xdd, ydd, zdd, psidd, thdd, phdd)
}

/// Residuals of the two acceleration constraints induced by the underactuated
/// thrust direction, with the auxiliary accelerations that enter them.
#[derive(Debug, Clone, Copy)]
pub struct NonholonomicResidual {
    pub r: Vec2,
    pub xf_dd: f64,
    pub yf_dd: f64,
    pub zf_dd: f64,
}

fn thrust_frame_accels(s: &GeneralizedState, p: &RobotParams) -> Result<(f64, f64, f64)> {
    let base = BaseMotion::from_state(s);
    let rne = rne_manipulator(s, &base, p);
    let f = rne.wrench.f_mq;
    let xf_dd = s.qdd[IQ_X] - f[0] / p.m;
    let yf_dd = s.qdd[IQ_Y] - f[1] / p.m;
    let zf_dd = s.qdd[IQ_Z] + p.g_r - f[2] / p.m;
    if zf_dd <= 0.0 {
        return Err(Error::ThrustDirection(zf_dd));
    }
    Ok((xf_dd, yf_dd, zf_dd))
}

/// Pitch and roll implied by the translational accelerations: the thrust
/// axis must carry the mass-normalized acceleration left over after the
/// arm reaction, so two of the attitude angles are functions of the rest of
/// the trajectory. Force terms are evaluated at the supplied state, which is
/// the linearization point for the fixed-point refinement used upstream.
pub fn nonholonomic_solve(s: &GeneralizedState, p: &RobotParams) -> Result<(f64, f64)> {
    let (xf_dd, yf_dd, zf_dd) = thrust_frame_accels(s, p)?;
    let psi = s.q[IQ_PSI];
    let (s_psi, c_psi) = psi.sin_cos();
    let norm = (xf_dd * xf_dd + yf_dd * yf_dd + zf_dd * zf_dd).sqrt();
    let arg = (xf_dd * s_psi - yf_dd * c_psi) / norm;
    if arg.abs() > 1.0 {
        return Err(Error::ConstraintInfeasible(arg));
    }
    let phi = arg.asin();
    let theta = (xf_dd * c_psi + yf_dd * s_psi).atan2(zf_dd);
    Ok((theta, phi))
}

/// Constraint residuals for a candidate (θ, φ) at the supplied state.
pub fn nonholonomic_residual(
    s: &GeneralizedState,
    theta: f64,
    phi: f64,
    p: &RobotParams,
) -> Result<NonholonomicResidual> {
    let (xf_dd, yf_dd, zf_dd) = thrust_frame_accels(s, p)?;
    let psi = s.q[IQ_PSI];
    let (s_psi, c_psi) = psi.sin_cos();
    let norm = (xf_dd * xf_dd + yf_dd * yf_dd + zf_dd * zf_dd).sqrt();
    let r = Vec2::new(
        phi.sin() - (xf_dd * s_psi - yf_dd * c_psi) / norm,
        theta.tan() - (xf_dd * c_psi + yf_dd * s_psi) / zf_dd,
    );
    Ok(NonholonomicResidual {
        r,
        xf_dd,
        yf_dd,
        zf_dd,
    })
}

/// Kinetic plus gravitational potential energy of the full assembly.
pub fn mechanical_energy(q: &Vec8, qd: &Vec8, p: &RobotParams) -> f64 {
    let dec = decompose(q, qd, p);
    let kinetic = 0.5 * (qd.transpose() * dec.m * qd)[0];

    let fr = arm_frames(q[IQ_TH1], q[IQ_TH2], p);
    let r_b = rot_body(&Vec3::new(q[IQ_PSI], q[IQ_TH], q[IQ_PH]));
    let p_b = Vec3::new(q[IQ_X], q[IQ_Y], q[IQ_Z]);
    let com = |a: &crate::Mat4, local: Vec3| -> Vec3 {
        let h = a * nalgebra::Vector4::new(local[0], local[1], local[2], 1.0);
        p_b + r_b * Vec3::new(h[0], h[1], h[2])
    };
    let c0 = com(&fr.a_b0, Vec3::new(0.0, -p.l0 / 2.0, 0.0));
    let c1 = com(&fr.a_b1, Vec3::new(-p.l1 / 2.0, 0.0, 0.0));
    let c2 = com(&fr.a_b2, p.r_c2());
    let potential =
        p.g_r * (p.m * p_b[2] + p.m0 * c0[2] + p.m1 * c1[2] + p.m2 * c2[2]);
    kinetic + potential
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ForceLimits;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn p() -> RobotParams {
        RobotParams::default()
    }

    #[test]
    fn static_weightless_arm_transmits_nothing() {
        let mut p = p();
        p.g_r = 0.0;
        let mut s = GeneralizedState::zero();
        s.q[IQ_TH1] = 0.8;
        s.q[IQ_TH2] = -0.3;
        let out = rne_manipulator(&s, &BaseMotion::stationary(), &p);
        assert!(out.tau_m.norm() < 1e-14);
        assert!(out.wrench.f_mq.norm() < 1e-14);
        assert!(out.wrench.m_mq_b.norm() < 1e-14);
    }

    #[test]
    fn static_interaction_force_is_arm_weight() {
        let p = p();
        let s = GeneralizedState::zero();
        let out = rne_manipulator(&s, &BaseMotion::stationary(), &p);
        let expected = -(p.m0 + p.m1 + p.m2) * p.g_r;
        assert_relative_eq!(out.wrench.f_mq[2], expected, epsilon = 1e-12);
        assert!(out.wrench.f_mq.fixed_rows::<2>(0).norm() < 1e-12);
        assert_relative_eq!(out.wrench.f_mq.norm(), 1.93257, epsilon = 1e-5);
    }

    #[test]
    fn tilted_static_interaction_force_stays_vertical() {
        let p = p();
        let mut s = GeneralizedState::zero();
        s.q[IQ_PSI] = 0.7;
        s.q[IQ_TH] = 0.4;
        s.q[IQ_PH] = -0.3;
        s.q[IQ_TH1] = 1.1;
        let (_, wrench) = inverse_dynamics(&s, &p);
        assert!(wrench.f_mq.fixed_rows::<2>(0).norm() < 1e-12);
        assert_relative_eq!(
            wrench.f_mq[2],
            -(p.m0 + p.m1 + p.m2) * p.g_r,
            epsilon = 1e-12
        );
    }

    #[test]
    fn free_fall_accelerates_all_coordinates_straight_down() {
        let p = p();
        let mut s = GeneralizedState::zero();
        s.q[IQ_TH1] = 0.5;
        s.q[IQ_TH2] = 0.4;
        let u = ActuatorInput::new([0.0; 4], [0.0; 2]);
        let qdd = full_forward_dynamics(&s.q, &s.qd, &u, &Vec8::zeros(), &p);
        let mut expected = Vec8::zeros();
        expected[IQ_Z] = -p.g_r;
        assert!((qdd - expected).norm() < 1e-10, "qdd = {qdd:?}");
    }

    #[test]
    fn hover_allocation_balances_gravity() {
        let p = p();
        let q = Vec8::zeros();
        let dec = decompose(&q, &Vec8::zeros(), &p);
        let s = GeneralizedState::zero();
        let b = crate::model::input_matrix(&s, &p);
        let b6 = b.fixed_rows::<6>(2).into_owned();
        let rhs = dec.g.fixed_rows::<6>(2).into_owned();
        let sol = b6.lu().solve(&rhs).expect("allocation solvable");
        assert!(dec.g.fixed_rows::<2>(0).norm() < 1e-12);
        let u = ActuatorInput::new([sol[0], sol[1], sol[2], sol[3]], [sol[4], sol[5]]);
        let lim = ForceLimits::default();
        for f in u.f {
            assert!(f > lim.f_min && f < lim.f_max);
        }
        let qdd = full_forward_dynamics(&q, &Vec8::zeros(), &u, &Vec8::zeros(), &p);
        assert!(qdd.norm() < 1e-9, "qdd = {qdd:?}");
    }

    #[test]
    fn inverse_then_forward_reproduces_accelerations() {
        let p = p();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut s = GeneralizedState::zero();
            use rand::Rng;
            let ranges: [f64; 8] = [2.0, 2.0, 2.0, 2.5, 1.2, 1.2, 2.5, 2.5];
            for k in 0..8 {
                s.q[k] = rng.random_range(-ranges[k]..ranges[k]);
                s.qd[k] = rng.random_range(-2.0..2.0);
                s.qdd[k] = rng.random_range(-5.0..5.0);
            }
            let (tau, _) = inverse_dynamics(&s, &p);
            let qdd = forward_dynamics(&s.q, &s.qd, &tau, &Vec8::zeros(), &p);
            let rel = (qdd - s.qdd).norm() / (1.0 + s.qdd.norm());
            assert!(rel < 1e-8, "relative error {rel:.3e}");
        }
    }

    #[test]
    fn velocity_force_vanishes_at_rest() {
        let p = p();
        let mut q = Vec8::zeros();
        q[IQ_TH] = 0.3;
        q[IQ_TH1] = 1.0;
        let dec = decompose(&q, &Vec8::zeros(), &p);
        assert!(dec.cqd.norm() == 0.0);
    }

    #[test]
    fn gravity_translational_rows_equal_total_weight_at_any_attitude() {
        let p = p();
        for (psi, th, ph) in [(0.0, 0.0, 0.0), (1.2, 0.8, -0.5), (-2.0, -1.0, 0.9)] {
            let mut q = Vec8::zeros();
            q[IQ_PSI] = psi;
            q[IQ_TH] = th;
            q[IQ_PH] = ph;
            q[IQ_TH1] = 0.6;
            q[IQ_TH2] = -1.1;
            let dec = decompose(&q, &Vec8::zeros(), &p);
            assert!(dec.g.fixed_rows::<2>(0).norm() < 1e-12);
            assert_relative_eq!(dec.g[IQ_Z], p.total_mass() * p.g_r, epsilon = 1e-10);
            assert_relative_eq!(dec.g[IQ_Z], 11.743, epsilon = 2e-3);
        }
    }

    #[test]
    fn roll_moment_produces_published_roll_acceleration() {
        let p = p();
        let s = GeneralizedState::zero();
        let inp = BodyInputs {
            thrust: 0.0,
            tau_a: Vec3::new(0.01, 0.0, 0.0),
            omega_bar: 0.0,
        };
        let acc = quadrotor_eom(&s, &inp, &InteractionWrench::zero(), &p);
        assert_relative_eq!(acc[5], 0.7567, epsilon = 1e-4);
        assert_relative_eq!(acc[2], -p.g_r, epsilon = 1e-12);
    }

    #[test]
    fn hover_thrust_cancels_vertical_acceleration() {
        let p = p();
        let s = GeneralizedState::zero();
        let wrench = rne_manipulator(&s, &BaseMotion::stationary(), &p).wrench;
        let inp = BodyInputs {
            thrust: p.total_mass() * p.g_r,
            tau_a: Vec3::zeros(),
            omega_bar: 0.0,
        };
        let acc = quadrotor_eom(&s, &inp, &wrench, &p);
        assert!(acc[2].abs() < 1e-12);
    }

    #[test]
    fn free_fall_eom_without_arm_forces() {
        let p = p();
        let s = GeneralizedState::zero();
        let acc = quadrotor_eom(&s, &BodyInputs::zero(), &InteractionWrench::zero(), &p);
        assert_relative_eq!(acc[2], -p.g_r, epsilon = 1e-12);
        assert!(acc.fixed_rows::<2>(0).norm() < 1e-12);
    }

    #[test]
    fn nonholonomic_hover_gives_level_attitude() {
        let p = p();
        let s = GeneralizedState::zero();
        let (theta, phi) = nonholonomic_solve(&s, &p).unwrap();
        assert!(theta.abs() < 1e-12 && phi.abs() < 1e-12);
    }

    #[test]
    fn nonholonomic_lateral_g_demands_quarter_pitch() {
        let mut p = p();
        p.m0 = 0.0;
        p.m1 = 0.0;
        p.m2 = 0.0;
        let mut s = GeneralizedState::zero();
        s.qdd[IQ_X] = p.g_r;
        let (theta, phi) = nonholonomic_solve(&s, &p).unwrap();
        assert_relative_eq!(theta, std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        assert!(phi.abs() < 1e-12);
    }

    #[test]
    fn nonholonomic_solution_zeroes_residuals() {
        let p = p();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        use rand::Rng;
        for _ in 0..20 {
            let mut s = GeneralizedState::zero();
            for k in 0..8 {
                s.q[k] = rng.random_range(-1.0..1.0);
                s.qd[k] = rng.random_range(-1.0..1.0);
            }
            s.qdd[IQ_X] = rng.random_range(-3.0..3.0);
            s.qdd[IQ_Y] = rng.random_range(-3.0..3.0);
            s.qdd[IQ_Z] = rng.random_range(-2.0..2.0);
            let (theta, phi) = nonholonomic_solve(&s, &p).unwrap();
            let res = nonholonomic_residual(&s, theta, phi, &p).unwrap();
            assert!(res.r.norm() < 1e-10, "residual {:?}", res.r);
        }
    }

    #[test]
    fn descending_flight_path_rejected() {
        let p = p();
        let mut s = GeneralizedState::zero();
        s.qdd[IQ_Z] = -2.0 * p.g_r;
        match nonholonomic_solve(&s, &p) {
            Err(Error::ThrustDirection(z)) => assert!(z <= 0.0),
            other => panic!("expected thrust-direction error, got {other:?}"),
        }
    }

    #[test]
    fn unforced_frictionless_rollout_conserves_energy() {
        let p = p();
        let mut s = GeneralizedState::zero();
        s.qd[IQ_Z] = 2.0;
        s.qd[IQ_TH1] = 1.0;
        s.q[IQ_TH2] = 0.6;
        let dt = 1e-3;
        let e0 = mechanical_energy(&s.q, &s.qd, &p);
        let deriv = |q: &Vec8, qd: &Vec8| -> (Vec8, Vec8) {
            let u = ActuatorInput::new([0.0; 4], [0.0; 2]);
            (*qd, full_forward_dynamics(q, qd, &u, &Vec8::zeros(), &p))
        };
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let (k1q, k1v) = deriv(&s.q, &s.qd);
            let (k2q, k2v) = deriv(&(s.q + 0.5 * dt * k1q), &(s.qd + 0.5 * dt * k1v));
            let (k3q, k3v) = deriv(&(s.q + 0.5 * dt * k2q), &(s.qd + 0.5 * dt * k2v));
            let (k4q, k4v) = deriv(&(s.q + dt * k3q), &(s.qd + dt * k3v));
            s.q += dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
            s.qd += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            let e = mechanical_energy(&s.q, &s.qd, &p);
            worst = worst.max(((e - e0) / e0).abs());
        }
        assert!(worst < 1e-5, "energy drift {worst:.3e}");
    }
}
