//! Cascaded flight control: the PID position loop with gravity compensation
//! and teleoperation position holding, the hybrid acceleration/velocity
//! disturbance observer with PD or impedance outer loops, attitude reference
//! extraction, and thrust/torque allocation.

use nalgebra::SVector;

use crate::kinematics::JacobianWithDerivative;
use crate::model::{input_matrix, ActuatorInput, RobotParams};
use crate::{
    gather6, Error, GeneralizedState, Mat6, Result, Vec2, Vec3, Vec6, Vec8, ZETA_IDX,
};

/// Diagonal PID gains for the translational loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: Vec3,
    pub kd: Vec3,
    pub ki: Vec3,
}

/// Simulation tuning of the position PID.
pub fn pid_sim_gains() -> PidGains {
    PidGains {
        kp: Vec3::new(2.0, 2.0, 10.0),
        kd: Vec3::new(7.0, 7.0, 10.0),
        ki: Vec3::new(0.5, 0.5, 5.0),
    }
}

/// Hardware tuning of the position PID.
pub fn pid_exp_gains() -> PidGains {
    PidGains {
        kp: Vec3::new(5.0, 5.0, 15.0),
        kd: Vec3::new(12.0, 12.0, 15.0),
        ki: Vec3::new(2.0, 2.0, 4.0),
    }
}

/// Position PID with trapezoidal integral and per-axis anti-windup clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidState {
    pub gains: PidGains,
    pub integral: Vec3,
    pub int_clamp: f64,
    prev_err: Option<Vec3>,
}

impl PidState {
    pub fn new(gains: PidGains, int_clamp: f64) -> Self {
        Self {
            gains,
            integral: Vec3::zeros(),
            int_clamp,
            prev_err: None,
        }
    }
}

/// World-frame force demand `Kp e + Kd ė + Ki ∫e + G_p`.
pub fn pid_gravity(
    s: &mut PidState,
    p_ref: &Vec3,
    pd_ref: &Vec3,
    p_meas: &Vec3,
    pd_meas: &Vec3,
    g_p: &Vec3,
    dt: f64,
) -> Vec3 {
    debug_assert!(dt > 0.0);
    let e = p_ref - p_meas;
    let ed = pd_ref - pd_meas;
    let prev = s.prev_err.unwrap_or(e);
    s.integral += (dt / 2.0) * (e + prev);
    s.integral = s.integral.map(|v| v.clamp(-s.int_clamp, s.int_clamp));
    s.prev_err = Some(e);
    s.gains.kp.component_mul(&e) + s.gains.kd.component_mul(&ed)
        + s.gains.ki.component_mul(&s.integral)
        + g_p
}

/// Pitch/roll reference implied by a world force demand at the current yaw,
/// under the small-angle thrust split
/// `[theta_r; phi_r] = (1/tau_z) [[c_psi, s_psi], [s_psi, -c_psi]] [tau_x; tau_y]`.
pub fn attitude_reference(tau: &Vec3, psi: f64) -> Result<Vec2> {
    if tau[2].abs() < 1e-6 {
        return Err(Error::DegenerateThrust(tau[2].abs()));
    }
    let (s, c) = psi.sin_cos();
    Ok(Vec2::new(c * tau[0] + s * tau[1], s * tau[0] - c * tau[1]) / tau[2])
}

/// Teleoperation position reference: while a velocity command is active the
/// reference rides the measured position; on a zero command the position at
/// that instant is latched and held. Each axis switches independently.
pub fn position_hold_reference(cmd_vel: &Vec3, p_meas: &Vec3, held: &mut Vec3) -> Vec3 {
    let mut p_ref = *held;
    for i in 0..3 {
        if cmd_vel[i] != 0.0 {
            p_ref[i] = p_meas[i];
            held[i] = p_meas[i];
        }
    }
    p_ref
}

/// Hybrid disturbance observer over all eight channels.
///
/// The translational channels (x, y, z) low-pass the residual
/// `tau - M_n * accel` directly from measured accelerations. The rotational
/// channels avoid differentiating the measured rates by filtering
/// `tau + g M_n q̇` and subtracting `g M_n q̇` outside the filter, which is
/// algebraically `Q(s)(tau - M_n s q̇)` for a first-order `Q`. Both branches
/// are discretized with the bilinear transform and have unit DC gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DObState {
    /// Diagonal nominal inertia.
    pub m_n: Vec8,
    /// Filter bandwidths per channel (rad/s).
    pub p_bw: Vec8,
    pub tau_dis_hat: Vec8,
    filt_y: Vec8,
    filt_x: Vec8,
    primed: bool,
}

/// Nominal inertia of the default observer, ordered as `q`.
pub fn dob_nominal_inertia() -> Vec8 {
    Vec8::from_column_slice(&[1.2, 1.2, 1.2, 0.02, 0.02, 0.02, 0.004, 0.0009])
}

/// Default observer bandwidths, ordered as `q`.
pub fn dob_bandwidths() -> Vec8 {
    Vec8::from_column_slice(&[10.0, 10.0, 10.0, 100.0, 100.0, 100.0, 100.0, 100.0])
}

impl DObState {
    pub fn new(m_n: Vec8, p_bw: Vec8) -> Self {
        Self {
            m_n,
            p_bw,
            tau_dis_hat: Vec8::zeros(),
            filt_y: Vec8::zeros(),
            filt_x: Vec8::zeros(),
            primed: false,
        }
    }
}

impl Default for DObState {
    fn default() -> Self {
        Self::new(dob_nominal_inertia(), dob_bandwidths())
    }
}

/// One observer step from the applied generalized force, the measured
/// translational accelerations, and the measured rotational/joint rates.
/// Returns the updated disturbance estimate.
pub fn dob_step(
    d: &mut DObState,
    tau_applied: &Vec8,
    accel_meas: &Vec3,
    vel_meas: &SVector<f64, 5>,
    dt: f64,
) -> Vec8 {
    debug_assert!(dt > 0.0);
    let mut x = Vec8::zeros();
    for i in 0..3 {
        x[i] = tau_applied[i] - d.m_n[i] * accel_meas[i];
    }
    for i in 3..8 {
        x[i] = tau_applied[i] + d.p_bw[i] * d.m_n[i] * vel_meas[i - 3];
    }
    if !d.primed {
        d.filt_x = x;
        d.primed = true;
    }
    for i in 0..8 {
        let a = d.p_bw[i] * dt;
        d.filt_y[i] = ((2.0 - a) * d.filt_y[i] + a * (x[i] + d.filt_x[i])) / (2.0 + a);
    }
    d.filt_x = x;
    d.tau_dis_hat = d.filt_y;
    for i in 3..8 {
        d.tau_dis_hat[i] -= d.p_bw[i] * d.m_n[i] * vel_meas[i - 3];
    }
    d.tau_dis_hat
}

/// Control force realizing a desired acceleration through the observer:
/// `tau = M_n q̈_des + tau_dis_hat`.
pub fn dob_apply(d: &DObState, qdd_des: &Vec8) -> Vec8 {
    d.m_n.component_mul(qdd_des) + d.tau_dis_hat
}

/// Acceleration-space PD tracking law `q̈_des = q̈_r + Kp e + Kd ė` with
/// diagonal gains.
pub fn pd_outer<const N: usize>(
    q_r: &SVector<f64, N>,
    qd_r: &SVector<f64, N>,
    qdd_r: &SVector<f64, N>,
    q: &SVector<f64, N>,
    qd: &SVector<f64, N>,
    kp: &SVector<f64, N>,
    kd: &SVector<f64, N>,
) -> SVector<f64, N> {
    qdd_r + kp.component_mul(&(q_r - q)) + kd.component_mul(&(qd_r - qd))
}

/// Outer-loop gains of the observer-based tracking controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdDobGains {
    pub m_n: Vec8,
    pub p_bw: Vec8,
    pub kp_zeta: Vec6,
    pub kd_zeta: Vec6,
    pub kp_sigma: Vec2,
    pub kd_sigma: Vec2,
}

/// Motion-control tuning of the observer cascade.
pub fn pd_dob_gains() -> PdDobGains {
    PdDobGains {
        m_n: dob_nominal_inertia(),
        p_bw: dob_bandwidths(),
        kp_zeta: Vec6::new(3.0, 3.0, 10.0, 3.0, 3.0, 3.0),
        kd_zeta: Vec6::new(1.5, 1.5, 5.0, 3.0, 3.0, 3.0),
        kp_sigma: Vec2::new(10.0, 10.0),
        kd_sigma: Vec2::new(7.0, 7.0),
    }
}

/// Desired task-space impedance and the free-space tracking gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceGains {
    pub m_cd: Vec6,
    pub s_cd: Vec6,
    pub d_cd: Vec6,
    pub k_pe: Vec6,
    pub k_de: Vec6,
}

/// Interaction-control tuning: desired impedance, free-space PD, and the
/// pitch/roll regulator used alongside them.
pub fn ftrls_dob_gains() -> (PdDobGains, ImpedanceGains) {
    let mut pd = pd_dob_gains();
    pd.kp_sigma = Vec2::new(20.0, 20.0);
    pd.kd_sigma = Vec2::new(20.0, 20.0);
    let imp = ImpedanceGains {
        m_cd: Vec6::repeat(2.0),
        s_cd: Vec6::new(20.0, 20.0, 20.0, 50.0, 50.0, 50.0),
        d_cd: Vec6::new(15.0, 15.0, 15.0, 100.0, 100.0, 100.0),
        k_pe: Vec6::new(25.0, 25.0, 150.0, 200.0, 200.0, 500.0),
        k_de: Vec6::new(15.0, 15.0, 100.0, 100.0, 500.0, 100.0),
    };
    (pd, imp)
}

/// Task-space acceleration demand: in contact the impedance law
/// `χ̈_des = χ̈_r + M_cd⁻¹(S_cd e + D_cd ė - F̂_e)`, in free space a PD
/// tracking law on the same references.
#[allow(clippy::too_many_arguments)]
pub fn impedance_outer(
    chi_r: &Vec6,
    chi_dot_r: &Vec6,
    chi_ddot_r: &Vec6,
    chi: &Vec6,
    chi_dot: &Vec6,
    f_e_hat: &Vec6,
    g: &ImpedanceGains,
    in_contact: bool,
) -> Vec6 {
    let e = chi_r - chi;
    let ed = chi_dot_r - chi_dot;
    if in_contact {
        let spring = g.s_cd.component_mul(&e) + g.d_cd.component_mul(&ed) - f_e_hat;
        chi_ddot_r + spring.component_div(&g.m_cd)
    } else {
        chi_ddot_r + g.k_pe.component_mul(&e) + g.k_de.component_mul(&ed)
    }
}

/// Condition-number ceiling of the controlled Jacobian block.
const JZETA_COND_MAX: f64 = 1e6;

/// Map a task-space acceleration demand into the controlled coordinates:
/// `ζ̈_des = J_ζ⁻¹ (Q_e χ̈_des + Q̇_e χ̇_e,r - J̇_ζ ζ̇ - J_σ σ̈_b - J̇_σ σ̇_b)`.
pub fn task_to_joint(
    chi_ddot_des: &Vec6,
    chi_dot_ref: &Vec6,
    state: &GeneralizedState,
    sigma_ddot: &Vec2,
    sigma_dot: &Vec2,
    kin: &JacobianWithDerivative,
) -> Result<Vec6> {
    let j_zeta = kin.split.j_zeta;
    let svd = j_zeta.svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > JZETA_COND_MAX {
        return Err(Error::SingularJacobian(cond));
    }
    let zeta_dot = gather6(&state.qd, &ZETA_IDX);
    let rhs = kin.split.q_e * chi_ddot_des + kin.q_e_dot * chi_dot_ref
        - kin.j_zeta_dot * zeta_dot
        - kin.split.j_sigma * sigma_ddot
        - kin.j_sigma_dot * sigma_dot;
    j_zeta
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularJacobian(cond))
}

/// Pitch/roll regulator `σ̈_des = Kp (σ_r - σ) - Kd σ̇`.
pub fn sigma_controller(
    sigma_ref: &Vec2,
    sigma: &Vec2,
    sigma_dot: &Vec2,
    kp: &Vec2,
    kd: &Vec2,
) -> Vec2 {
    kp.component_mul(&(sigma_ref - sigma)) - kd.component_mul(sigma_dot)
}

/// Invert the actuated rows of the input matrix: the commanded generalized
/// forces on `[z, psi, theta, phi, theta1, theta2]` map to four rotor
/// thrusts and two joint torques.
pub fn allocate(
    tau_zeta: &Vec6,
    tau_sigma: &Vec2,
    q: &GeneralizedState,
    p: &RobotParams,
) -> Result<ActuatorInput> {
    let b = input_matrix(q, p);
    let b6 = Mat6::from_fn(|r, c| b[(r + 2, c)]);
    let rhs = Vec6::new(
        tau_zeta[2],
        tau_zeta[3],
        tau_sigma[0],
        tau_sigma[1],
        tau_zeta[4],
        tau_zeta[5],
    );
    let u = b6.lu().solve(&rhs).ok_or(Error::SingularAllocation)?;
    Ok(ActuatorInput::new(
        [u[0], u[1], u[2], u[3]],
        [u[4], u[5]],
    ))
}
