//! Simulation and control toolkit for a quadrotor carrying a 2-DOF serial
//! manipulator with perpendicular joint axes.
//!
//! The generalized coordinate vector is
//! `q = [x y z psi theta phi theta1 theta2]` where `(x, y, z)` is the vehicle
//! position in the world frame, `(psi, theta, phi)` are ZYX yaw/pitch/roll
//! angles of the body, and `(theta1, theta2)` are the manipulator joint
//! angles. Task-space poses are `chi_e = [xe ye ze psie thetae phie]`: the
//! end-effector position plus its own ZYX Euler angles.
//!
//! The controlled subvector is `zeta = [x y z psi theta1 theta2]`; the body
//! pitch/roll pair `sigma_b = [theta phi]` is determined by the nonholonomic
//! constraints of underactuated flight and tracked by an inner loop.

pub mod control;
pub mod dynamics;
pub mod environment;
pub mod estimation;
pub mod invkin;
pub mod kinematics;
pub mod model;
pub mod mpc;
pub mod sim;

use nalgebra as na;

pub type Vec2 = na::Vector2<f64>;
pub type Vec3 = na::Vector3<f64>;
pub type Vec4 = na::Vector4<f64>;
pub type Vec6 = na::Vector6<f64>;
pub type Vec8 = na::SVector<f64, 8>;
pub type Mat3 = na::Matrix3<f64>;
pub type Mat4 = na::Matrix4<f64>;
pub type Mat6 = na::Matrix6<f64>;
pub type Mat8 = na::SMatrix<f64, 8, 8>;
pub type Mat6x8 = na::SMatrix<f64, 6, 8>;
pub type Mat6x2 = na::SMatrix<f64, 6, 2>;
pub type Mat8x6 = na::SMatrix<f64, 8, 6>;

/// Indices into `q` (and `qd`, `qdd`, generalized forces).
pub const IQ_X: usize = 0;
pub const IQ_Y: usize = 1;
pub const IQ_Z: usize = 2;
pub const IQ_PSI: usize = 3;
pub const IQ_TH: usize = 4;
pub const IQ_PH: usize = 5;
pub const IQ_TH1: usize = 6;
pub const IQ_TH2: usize = 7;

/// Columns of `q` forming the controlled vector `zeta = [x y z psi th1 th2]`.
pub const ZETA_IDX: [usize; 6] = [IQ_X, IQ_Y, IQ_Z, IQ_PSI, IQ_TH1, IQ_TH2];
/// Columns of `q` forming `sigma_b = [theta phi]`.
pub const SIGMA_IDX: [usize; 2] = [IQ_TH, IQ_PH];

/// Full kinematic state: coordinates with first and second derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedState {
    pub q: Vec8,
    pub qd: Vec8,
    pub qdd: Vec8,
}

impl GeneralizedState {
    pub fn zero() -> Self {
        Self {
            q: Vec8::zeros(),
            qd: Vec8::zeros(),
            qdd: Vec8::zeros(),
        }
    }

    pub fn from_q(q: Vec8) -> Self {
        Self {
            q,
            qd: Vec8::zeros(),
            qdd: Vec8::zeros(),
        }
    }

    /// Euler angle triple (psi, theta, phi) of the body.
    pub fn euler(&self) -> Vec3 {
        Vec3::new(self.q[IQ_PSI], self.q[IQ_TH], self.q[IQ_PH])
    }

    pub fn euler_rates(&self) -> Vec3 {
        Vec3::new(self.qd[IQ_PSI], self.qd[IQ_TH], self.qd[IQ_PH])
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.q[IQ_X], self.q[IQ_Y], self.q[IQ_Z])
    }

    pub fn zeta(&self) -> Vec6 {
        gather6(&self.q, &ZETA_IDX)
    }

    pub fn sigma(&self) -> Vec2 {
        Vec2::new(self.q[IQ_TH], self.q[IQ_PH])
    }
}

/// End-effector pose (position + ZYX Euler angles) with optional rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskPose {
    pub chi_e: Vec6,
    pub chi_e_dot: Option<Vec6>,
    /// True when the Euler extraction hit the `theta_e = ±pi/2` branch.
    pub singular: bool,
}

/// Generalized force vector paired with `q`.
pub type GeneralizedForce = Vec8;

pub fn gather6(v: &Vec8, idx: &[usize; 6]) -> Vec6 {
    Vec6::from_fn(|i, _| v[idx[i]])
}

pub fn scatter6(dst: &mut Vec8, idx: &[usize; 6], v: &Vec6) {
    for (k, &i) in idx.iter().enumerate() {
        dst[i] = v[k];
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(2.0 * std::f64::consts::PI);
    if x > std::f64::consts::PI {
        x -= 2.0 * std::f64::consts::PI;
    }
    x
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rotor speed must be nonnegative, got {0}")]
    NegativeRotorSpeed(f64),
    #[error("coefficient fit is singular: no nonzero rotor speeds")]
    SingularFit,
    #[error("Euler-rate transform singular at theta = {0}")]
    EulerSingular(f64),
    #[error("task Euler transform singular at theta_e = {0}")]
    TaskEulerSingular(f64),
    #[error("orientation unreachable: discriminant {0} < 0")]
    UnreachableOrientation(f64),
    #[error("degenerate geometry in orientation inversion")]
    DegenerateGeometry,
    #[error("thrust direction ill-posed: zf_dd = {0} <= 0")]
    ThrustDirection(f64),
    #[error("nonholonomic constraint infeasible: |sin phi| argument {0} > 1")]
    ConstraintInfeasible(f64),
    #[error("attitude reference degenerate: |tau_z| = {0} too small")]
    DegenerateThrust(f64),
    #[error("controlled Jacobian near-singular: cond = {0:.3e}")]
    SingularJacobian(f64),
    #[error("allocation matrix singular at current attitude")]
    SingularAllocation,
    #[error("inverse kinematics diverged: |sigma_b| reached {0:.3} rad")]
    IkDivergence(f64),
    #[error("pitch/roll fixed point stalled, residual {0:.3e}")]
    ConstraintFixedPoint(f64),
    #[error("constraint window infeasible: {0}")]
    InfeasibleWindow(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
