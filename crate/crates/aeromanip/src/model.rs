//! Physical parameters, rotor aerodynamics, actuator-to-generalized-force
//! mapping, payload re-parametrization, and coefficient fitting.

use serde::{Deserialize, Serialize};

use crate::kinematics::{euler_rate_transform_unchecked, rot_body};
use crate::{Error, GeneralizedForce, GeneralizedState, Mat8x6, Result, Vec2, Vec3};

/// All physical constants of the vehicle-manipulator system.
///
/// Lengths in m, masses in kg, inertias in N·m·s², thrust coefficients in
/// kg·m·rad⁻², drag coefficients in kg·m²·rad⁻².
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RobotParams {
    /// Quadrotor body mass.
    pub m: f64,
    /// Link masses: fixed bracket, link 1, link 2.
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    /// Link lengths.
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    /// Rotor arm length.
    pub d_q: f64,
    /// Body inertias about the body axes.
    #[serde(rename = "Ix")]
    pub ix: f64,
    #[serde(rename = "Iy")]
    pub iy: f64,
    #[serde(rename = "Iz")]
    pub iz: f64,
    /// Rotor inertia.
    #[serde(rename = "I_r")]
    pub i_r: f64,
    /// Per-rotor thrust coefficients.
    #[serde(rename = "Kf")]
    pub kf: [f64; 4],
    /// Per-rotor drag coefficients.
    #[serde(rename = "Km")]
    pub km: [f64; 4],
    /// Link inertias about their centers of mass (perpendicular axes).
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    /// Joint viscous friction.
    pub b1: f64,
    pub b2: f64,
    /// Joint motor fault factors in (0, 1].
    #[serde(rename = "Ktau1")]
    pub ktau1: f64,
    #[serde(rename = "Ktau2")]
    pub ktau2: f64,
    /// Gravity.
    pub g_r: f64,
    /// Distance of the link-2 center of mass from joint 2 along the link.
    pub d_cg2: f64,
    /// Per-rotor thrust limits.
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        let m1 = 0.055;
        let m2 = 0.112;
        let l1 = 0.070;
        let l2 = 0.085;
        Self {
            m: 1.0,
            m0: 0.030,
            m1,
            m2,
            l0: 0.030,
            l1,
            l2,
            d_q: 223.5e-3,
            ix: 13.215e-3,
            iy: 12.522e-3,
            iz: 23.527e-3,
            i_r: 33.216e-6,
            kf: [1.667e-5, 1.285e-5, 1.711e-5, 1.556e-5],
            km: [3.965e-7, 2.847e-7, 4.404e-7, 3.170e-7],
            // Thin-rod defaults: the link inertias are never tabulated.
            i1: m1 * l1 * l1 / 12.0,
            i2: m2 * l2 * l2 / 12.0,
            b1: 0.0,
            b2: 0.0,
            ktau1: 1.0,
            ktau2: 1.0,
            g_r: 9.81,
            d_cg2: l2 / 2.0,
            f_min: 0.0,
            f_max: 6.0,
        }
    }
}

impl RobotParams {
    /// Drag-to-thrust ratio of rotor `j`.
    pub fn gamma(&self, j: usize) -> f64 {
        self.km[j] / self.kf[j]
    }

    /// Total vehicle mass including the manipulator.
    pub fn total_mass(&self) -> f64 {
        self.m + self.m0 + self.m1 + self.m2
    }

    /// Center of mass of link 2 expressed in frame 2.
    pub fn r_c2(&self) -> Vec3 {
        Vec3::new(-(self.l2 - self.d_cg2), 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.m, self.m0, self.m1, self.m2, self.l0, self.l1, self.l2, self.d_q, self.ix,
            self.iy, self.iz, self.i_r, self.i1, self.i2, self.g_r,
        ];
        if positive.iter().any(|&v| v <= 0.0)
            || self.kf.iter().chain(self.km.iter()).any(|&v| v <= 0.0)
        {
            return Err(Error::Scenario(
                "masses, lengths, inertias and rotor coefficients must be positive".into(),
            ));
        }
        for kt in [self.ktau1, self.ktau2] {
            if !(kt > 0.0 && kt <= 1.0) {
                return Err(Error::Scenario("Ktau must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Actuator command: four rotor thrusts (N) and two joint torques (N·m).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActuatorInput {
    pub f: [f64; 4],
    pub tau_m: [f64; 2],
}

impl ActuatorInput {
    pub fn new(f: [f64; 4], tau_m: [f64; 2]) -> Self {
        Self { f, tau_m }
    }

    pub fn as_vector(&self) -> nalgebra::SVector<f64, 6> {
        nalgebra::SVector::<f64, 6>::from_column_slice(&[
            self.f[0],
            self.f[1],
            self.f[2],
            self.f[3],
            self.tau_m[0],
            self.tau_m[1],
        ])
    }

    pub fn total_thrust(&self) -> f64 {
        self.f.iter().sum()
    }

    /// Rotor speeds recovered from the commanded thrusts.
    pub fn rotor_speeds(&self, p: &RobotParams) -> [f64; 4] {
        let mut w = [0.0; 4];
        for j in 0..4 {
            w[j] = (self.f[j].max(0.0) / p.kf[j]).sqrt();
        }
        w
    }

    /// Net rotor speed `w1 - w2 + w3 - w4` driving the gyroscopic coupling.
    pub fn omega_bar(&self, p: &RobotParams) -> f64 {
        let w = self.rotor_speeds(p);
        w[0] - w[1] + w[2] - w[3]
    }
}

/// Point payload rigidly attached at the end-effector tip.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct PayloadSpec {
    pub m_p: f64,
}

/// Thrust produced by one rotor: `F = Kf * omega^2`.
pub fn rotor_thrust(kf: f64, omega: f64) -> Result<f64> {
    if omega < 0.0 {
        return Err(Error::NegativeRotorSpeed(omega));
    }
    Ok(kf * omega * omega)
}

/// Drag moment of one rotor: `M = Km * omega^2`.
pub fn rotor_drag_moment(km: f64, omega: f64) -> Result<f64> {
    if omega < 0.0 {
        return Err(Error::NegativeRotorSpeed(omega));
    }
    Ok(km * omega * omega)
}

/// Control matrix mapping actuator inputs to body-frame forces/moments.
///
/// Rows: force x, y, z; moment x, y, z; joint torques. Rotors 1 and 3 sit on
/// the body x axis, rotors 2 and 4 on the y axis; yaw drag alternates sign
/// with the rotor spin directions.
pub fn control_matrix(p: &RobotParams) -> Mat8x6 {
    let mut n = Mat8x6::zeros();
    for j in 0..4 {
        n[(2, j)] = 1.0;
    }
    // Moment about body x: differential thrust of the y-axis rotor pair.
    n[(3, 1)] = -p.d_q;
    n[(3, 3)] = p.d_q;
    // Moment about body y: differential thrust of the x-axis rotor pair.
    n[(4, 0)] = -p.d_q;
    n[(4, 2)] = p.d_q;
    // Moment about body z from rotor drag.
    n[(5, 0)] = p.gamma(0);
    n[(5, 1)] = -p.gamma(1);
    n[(5, 2)] = p.gamma(2);
    n[(5, 3)] = -p.gamma(3);
    n[(6, 4)] = p.ktau1;
    n[(7, 5)] = p.ktau2;
    n
}

/// Full input matrix `B = H(q) * N` from actuator inputs to generalized
/// forces on `q`.
pub fn input_matrix(q: &GeneralizedState, p: &RobotParams) -> Mat8x6 {
    let phi = q.euler();
    let r_b = rot_body(&phi);
    let t_b = euler_rate_transform_unchecked(&phi);
    let tr = t_b.transpose() * r_b;
    let n = control_matrix(p);
    let mut b = Mat8x6::zeros();
    for col in 0..6 {
        let f = Vec3::new(n[(0, col)], n[(1, col)], n[(2, col)]);
        let m = Vec3::new(n[(3, col)], n[(4, col)], n[(5, col)]);
        let fw = r_b * f;
        let mw = tr * m;
        for r in 0..3 {
            b[(r, col)] = fw[r];
            b[(r + 3, col)] = mw[r];
        }
        b[(6, col)] = n[(6, col)];
        b[(7, col)] = n[(7, col)];
    }
    b
}

/// Generalized force produced by an actuator command at the given attitude.
pub fn input_map(q: &GeneralizedState, u: &ActuatorInput, p: &RobotParams) -> GeneralizedForce {
    input_matrix(q, p) * u.as_vector()
}

/// Fold a point payload at the end-effector into the link-2 parameters.
pub fn apply_payload(p: &RobotParams, pl: &PayloadSpec) -> RobotParams {
    if pl.m_p == 0.0 {
        return *p;
    }
    let mut out = *p;
    let m2n = p.m2 + pl.m_p;
    let d_new = (p.m2 * p.d_cg2 + pl.m_p * p.l2) / m2n;
    out.i2 = p.i2 + p.m2 * (d_new - p.d_cg2).powi(2) + pl.m_p * (p.l2 - d_new).powi(2);
    out.m2 = m2n;
    out.d_cg2 = d_new;
    out
}

/// Least-squares fit of `F = Kf w^2` and `M = Km w^2` through the origin.
///
/// Returns `(kf, km, rmse_f, rmse_m)`.
pub fn fit_rotor_coefficients(samples: &[(f64, f64, f64)]) -> Result<(f64, f64, f64, f64)> {
    let sxx: f64 = samples.iter().map(|s| s.0.powi(4)).sum();
    if samples.len() < 2 || sxx == 0.0 {
        return Err(Error::SingularFit);
    }
    let sxf: f64 = samples.iter().map(|s| s.0 * s.0 * s.1).sum();
    let sxm: f64 = samples.iter().map(|s| s.0 * s.0 * s.2).sum();
    let kf = sxf / sxx;
    let km = sxm / sxx;
    let n = samples.len() as f64;
    let rmse_f = (samples
        .iter()
        .map(|s| (s.1 - kf * s.0 * s.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let rmse_m = (samples
        .iter()
        .map(|s| (s.2 - km * s.0 * s.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok((kf, km, rmse_f, rmse_m))
}

/// Actuator envelope: rotor thrust range, joint torque magnitudes, and the
/// released floor for the underactuated x/y force channels.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ForceLimits {
    pub f_min: f64,
    pub f_max: f64,
    pub tau_m1_max: f64,
    pub tau_m2_max: f64,
    pub tau_xy_floor: f64,
}

impl Default for ForceLimits {
    fn default() -> Self {
        Self {
            f_min: 0.0,
            f_max: 6.0,
            tau_m1_max: 0.7,
            tau_m2_max: 0.4,
            tau_xy_floor: 0.5,
        }
    }
}

impl ForceLimits {
    pub fn joint_bound(&self, j: usize) -> f64 {
        if j == 0 {
            self.tau_m1_max
        } else {
            self.tau_m2_max
        }
    }
}

/// Gravity-compensation force for hover: world-frame weight of the whole
/// system.
pub fn hover_weight(p: &RobotParams) -> Vec3 {
    Vec3::new(0.0, 0.0, p.total_mass() * p.g_r)
}

/// Joint torque command adjusted for the configured fault factors, useful
/// when driving the joints open-loop.
pub fn joint_passthrough(tau_cmd: &Vec2, p: &RobotParams) -> Vec2 {
    Vec2::new(tau_cmd[0] / p.ktau1, tau_cmd[1] / p.ktau2)
}
