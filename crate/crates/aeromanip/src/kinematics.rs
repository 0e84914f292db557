//! Forward kinematics, Euler-rate transforms, and the 6x8 system Jacobian
//! with its zeta/sigma partitions.
//!
//! The manipulator hangs below the vehicle. Frame 0 is fixed to the body by
//! a bracket of length `l0`; joints 1 and 2 have perpendicular axes so the
//! end-effector can be pointed anywhere in the lower hemisphere.

use crate::model::RobotParams;
use crate::{
    Error, GeneralizedState, Mat3, Mat4, Mat6, Mat6x2, Mat6x8, Result, TaskPose, Vec3, Vec6,
    IQ_TH1, IQ_TH2, SIGMA_IDX, ZETA_IDX,
};

/// Body rotation matrix from ZYX yaw-pitch-roll angles `(psi, theta, phi)`.
pub fn rot_body(phi_b: &Vec3) -> Mat3 {
    let (sps, cps) = phi_b[0].sin_cos();
    let (sth, cth) = phi_b[1].sin_cos();
    let (sph, cph) = phi_b[2].sin_cos();
    Mat3::new(
        cps * cth,
        cps * sth * sph - sps * cph,
        cps * sth * cph + sps * sph,
        sps * cth,
        sps * sth * sph + cps * cph,
        sps * sth * cph - cps * sph,
        -sth,
        cth * sph,
        cth * cph,
    )
}

/// Transform from Euler-angle rates `(psi_dot, theta_dot, phi_dot)` to the
/// world-frame angular velocity.
pub fn euler_rate_transform(phi: &Vec3) -> Result<Mat3> {
    if phi[1].cos().abs() < 1e-9 {
        return Err(Error::EulerSingular(phi[1]));
    }
    Ok(euler_rate_transform_unchecked(phi))
}

pub fn euler_rate_transform_unchecked(phi: &Vec3) -> Mat3 {
    let (sps, cps) = phi[0].sin_cos();
    let (sth, cth) = phi[1].sin_cos();
    Mat3::new(
        0.0, -sps, cps * cth, //
        0.0, cps, sps * cth, //
        1.0, 0.0, -sth,
    )
}

/// Time derivative of [`euler_rate_transform`] along the given angle rates.
pub fn euler_rate_transform_dot(phi: &Vec3, phi_dot: &Vec3) -> Mat3 {
    let (sps, cps) = phi[0].sin_cos();
    let (sth, cth) = phi[1].sin_cos();
    let (dps, dth) = (phi_dot[0], phi_dot[1]);
    Mat3::new(
        0.0,
        -cps * dps,
        -sps * cth * dps - cps * sth * dth,
        0.0,
        -sps * dps,
        cps * cth * dps - sps * sth * dth,
        0.0,
        0.0,
        -cth * dth,
    )
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Homogeneous transform from one DH row `(theta, d, a, alpha)`.
fn dh_transform(theta: f64, d: f64, a: f64, alpha: f64) -> Mat4 {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    Mat4::new(
        ct,
        -st * ca,
        st * sa,
        a * ct,
        st,
        ct * ca,
        -ct * sa,
        a * st,
        0.0,
        sa,
        ca,
        d,
        0.0,
        0.0,
        0.0,
        1.0,
    )
}

fn rot_of(a: &Mat4) -> Mat3 {
    a.fixed_view::<3, 3>(0, 0).into_owned()
}

fn pos_of(a: &Mat4) -> Vec3 {
    a.fixed_view::<3, 1>(0, 3).into_owned()
}

/// Arm geometry in the body frame for a joint configuration.
#[derive(Debug, Clone, Copy)]
pub struct ArmFrames {
    /// End-effector position in the body frame.
    pub p_eb_b: Vec3,
    /// End-effector rotation relative to the body.
    pub r_eb_b: Mat3,
    /// Joint axes (z of frames 0 and 1) in the body frame.
    pub z0_b: Vec3,
    pub z1_b: Vec3,
    /// Origins of frames 0, 1, 2 in the body frame.
    pub p0_b: Vec3,
    pub p1_b: Vec3,
    pub p2_b: Vec3,
    /// Full transforms, body to frame i.
    pub a_b0: Mat4,
    pub a_b1: Mat4,
    pub a_b2: Mat4,
}

/// DH chain evaluated at `(theta1, theta2)`.
pub fn arm_frames(theta1: f64, theta2: f64, p: &RobotParams) -> ArmFrames {
    use std::f64::consts::FRAC_PI_2;
    let a_b0 = dh_transform(-FRAC_PI_2, -p.l0, 0.0, -FRAC_PI_2);
    let a_01 = dh_transform(theta1, 0.0, p.l1, FRAC_PI_2);
    let a_12 = dh_transform(theta2, 0.0, p.l2, 0.0);
    let a_b1 = a_b0 * a_01;
    let a_b2 = a_b1 * a_12;
    ArmFrames {
        p_eb_b: pos_of(&a_b2),
        r_eb_b: rot_of(&a_b2),
        z0_b: rot_of(&a_b0).column(2).into_owned(),
        z1_b: rot_of(&a_b1).column(2).into_owned(),
        p0_b: pos_of(&a_b0),
        p1_b: pos_of(&a_b1),
        p2_b: pos_of(&a_b2),
        a_b0,
        a_b1,
        a_b2,
    }
}

/// ZYX Euler angles `(psi_e, theta_e, phi_e)` of a rotation matrix.
///
/// Returns the degenerate-branch flag; at `|r31| >= 1 - 1e-9` the yaw is
/// fixed to zero and the roll absorbs the remaining rotation.
pub fn euler_from_rotation(r: &Mat3) -> (Vec3, bool) {
    let r31 = r[(2, 0)];
    if r31.abs() >= 1.0 - 1e-9 {
        if r31 < 0.0 {
            let theta = std::f64::consts::FRAC_PI_2;
            let phi = r[(0, 1)].atan2(r[(0, 2)]);
            (Vec3::new(0.0, theta, phi), true)
        } else {
            let theta = -std::f64::consts::FRAC_PI_2;
            let phi = (-r[(0, 1)]).atan2(-r[(0, 2)]);
            (Vec3::new(0.0, theta, phi), true)
        }
    } else {
        let theta = -r31.asin();
        let cth = theta.cos();
        let psi = (r[(1, 0)] / cth).atan2(r[(0, 0)] / cth);
        let phi = (r[(2, 1)] / cth).atan2(r[(2, 2)] / cth);
        (Vec3::new(psi, theta, phi), false)
    }
}

/// End-effector pose from the full configuration.
pub fn forward_kinematics(q: &GeneralizedState, p: &RobotParams) -> TaskPose {
    let r_b = rot_body(&q.euler());
    let arm = arm_frames(q.q[IQ_TH1], q.q[IQ_TH2], p);
    let p_e = q.position() + r_b * arm.p_eb_b;
    let r_e = r_b * arm.r_eb_b;
    let (phi_e, singular) = euler_from_rotation(&r_e);
    let mut chi = Vec6::zeros();
    chi.fixed_rows_mut::<3>(0).copy_from(&p_e);
    chi.fixed_rows_mut::<3>(3).copy_from(&phi_e);
    TaskPose {
        chi_e: chi,
        chi_e_dot: None,
        singular,
    }
}

/// End-effector rotation matrix (world frame).
pub fn rot_end_effector(q: &GeneralizedState, p: &RobotParams) -> Mat3 {
    rot_body(&q.euler()) * arm_frames(q.q[IQ_TH1], q.q[IQ_TH2], p).r_eb_b
}

/// The 6x8 Jacobian mapping `qd` to end-effector linear/angular velocity,
/// plus its controlled/constrained partitions and the task Euler-rate block.
#[derive(Debug, Clone)]
pub struct JacobianSplit {
    pub j: Mat6x8,
    /// Columns for `[x y z psi theta1 theta2]`.
    pub j_zeta: Mat6,
    /// Columns for `[theta phi]`.
    pub j_sigma: Mat6x2,
    /// Block-diagonal `[I, T(phi_e)]` relating `chi_e_dot` to `v_e`.
    pub q_e: Mat6,
    /// Task-space Euler angles used to build `q_e`.
    pub phi_e: Vec3,
}

/// Geometric Jacobian of the whole system at a configuration.
pub fn system_jacobian(q: &GeneralizedState, p: &RobotParams) -> JacobianSplit {
    let phi = q.euler();
    let r_b = rot_body(&phi);
    let t_b = euler_rate_transform_unchecked(&phi);
    let arm = arm_frames(q.q[IQ_TH1], q.q[IQ_TH2], p);

    let lever = skew(&(r_b * arm.p_eb_b));
    let top_att = -lever * t_b;

    let mut j = Mat6x8::zeros();
    for i in 0..3 {
        j[(i, i)] = 1.0;
    }
    for c in 0..3 {
        for r in 0..3 {
            j[(r, 3 + c)] = top_att[(r, c)];
            j[(r + 3, 3 + c)] = t_b[(r, c)];
        }
    }
    for (col, (z, origin)) in [(arm.z0_b, arm.p0_b), (arm.z1_b, arm.p1_b)]
        .into_iter()
        .enumerate()
    {
        let lin = r_b * z.cross(&(arm.p_eb_b - origin));
        let ang = r_b * z;
        for r in 0..3 {
            j[(r, 6 + col)] = lin[r];
            j[(r + 3, 6 + col)] = ang[r];
        }
    }

    let r_e = r_b * arm.r_eb_b;
    let (phi_e, _) = euler_from_rotation(&r_e);
    let mut q_e = Mat6::identity();
    let t_e = euler_rate_transform_unchecked(&phi_e);
    for r in 0..3 {
        for c in 0..3 {
            q_e[(r + 3, c + 3)] = t_e[(r, c)];
        }
    }

    let j_zeta = Mat6::from_fn(|r, c| j[(r, ZETA_IDX[c])]);
    let j_sigma = Mat6x2::from_fn(|r, c| j[(r, SIGMA_IDX[c])]);
    JacobianSplit {
        j,
        j_zeta,
        j_sigma,
        q_e,
        phi_e,
    }
}

/// Task-space velocity `chi_e_dot = Q_e^{-1} J qd`.
pub fn task_velocity(q: &GeneralizedState, p: &RobotParams) -> Result<Vec6> {
    let split = system_jacobian(q, p);
    if split.phi_e[1].cos().abs() < 1e-9 {
        return Err(Error::TaskEulerSingular(split.phi_e[1]));
    }
    let v_e = split.j * q.qd;
    let t_e = euler_rate_transform_unchecked(&split.phi_e);
    let w = t_e
        .try_inverse()
        .ok_or(Error::TaskEulerSingular(split.phi_e[1]))?
        * v_e.fixed_rows::<3>(3).into_owned();
    let mut out = Vec6::zeros();
    out.fixed_rows_mut::<3>(0)
        .copy_from(&v_e.fixed_rows::<3>(0).into_owned());
    out.fixed_rows_mut::<3>(3).copy_from(&w);
    Ok(out)
}

/// Jacobian blocks together with their time derivatives along the current
/// motion, as needed by the task-to-joint acceleration map.
#[derive(Debug, Clone)]
pub struct JacobianWithDerivative {
    pub split: JacobianSplit,
    pub j_dot: Mat6x8,
    pub j_zeta_dot: Mat6,
    pub j_sigma_dot: Mat6x2,
    pub q_e_dot: Mat6,
}

/// Jacobian and its flow derivative at `(q, qd)`.
///
/// The derivative is a centered directional difference along `qd`; the step
/// is scaled so truncation stays far below the 1e-5 consistency tolerance.
pub fn jacobian_with_derivative(q: &GeneralizedState, p: &RobotParams) -> JacobianWithDerivative {
    let split = system_jacobian(q, p);
    let h = 1e-6 / q.qd.norm().max(1.0);
    let mut fwd = *q;
    fwd.q += q.qd * h;
    let mut bwd = *q;
    bwd.q -= q.qd * h;
    let jf = system_jacobian(&fwd, p);
    let jb = system_jacobian(&bwd, p);
    let j_dot = (jf.j - jb.j) / (2.0 * h);
    let j_zeta_dot = (jf.j_zeta - jb.j_zeta) / (2.0 * h);
    let j_sigma_dot = (jf.j_sigma - jb.j_sigma) / (2.0 * h);

    // Q_e depends on the task Euler angles; differentiate through their flow.
    let phi_e_dot = match task_velocity(q, p) {
        Ok(v) => v.fixed_rows::<3>(3).into_owned(),
        Err(_) => Vec3::zeros(),
    };
    let t_e_dot = euler_rate_transform_dot(&split.phi_e, &phi_e_dot);
    let mut q_e_dot = Mat6::zeros();
    for r in 0..3 {
        for c in 0..3 {
            q_e_dot[(r + 3, c + 3)] = t_e_dot[(r, c)];
        }
    }
    JacobianWithDerivative {
        split,
        j_dot,
        j_zeta_dot,
        j_sigma_dot,
        q_e_dot,
    }
}
