//! Sensor processing (sonar tilt compensation, position observer) and
//! recursive least-squares identification of the lumped dynamic parameters,
//! the environment stiffness/damping, and the wind coefficients.

use std::sync::OnceLock;

use nalgebra::{SMatrix, SVector};

use crate::dynamics::inverse_dynamics;
use crate::kinematics::{rot_body, system_jacobian};
use crate::model::RobotParams;
use crate::{GeneralizedForce, GeneralizedState, Vec3, Vec6, Vec8};

/// Altitude from a raw sonar range: the beam is fixed to the body, so the
/// reading is foreshortened by pitch and roll.
pub fn compensate_sonar(s_z: f64, phi: f64, theta: f64) -> f64 {
    debug_assert!(s_z >= 0.0, "sonar range must be nonnegative");
    s_z * phi.cos() * theta.cos()
}

/// Observer gain placing the error dynamics at the characteristic polynomial
/// `s^3 + 18.01 s^2 + 45.18 s + 0.45`.
pub const LUENBERGER_GAIN: [f64; 3] = [18.01, 45.18, 0.45];

/// Single-axis position observer with states
/// `[position, velocity, acceleration bias]`.
///
/// The world-frame acceleration is the input; position fixes arrive much
/// slower than the propagation rate. A correction at a fix instant uses the
/// time elapsed since the previous fix as its integration step, so the
/// duty-cycled gain averages out to the continuous design value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LuenbergerFilter {
    pub x: Vec3,
    pub l: Vec3,
    since_fix: f64,
}

impl LuenbergerFilter {
    pub fn new(x0: Vec3) -> Self {
        Self {
            x: x0,
            l: Vec3::from_column_slice(&LUENBERGER_GAIN),
            since_fix: 0.0,
        }
    }

    pub fn position(&self) -> f64 {
        self.x[0]
    }

    pub fn velocity(&self) -> f64 {
        self.x[1]
    }
}

/// One Euler step of the observer: propagate
/// `d/dt [p, v, b] = [v, b + u, 0]`, then, if a position fix is present,
/// apply the output-error correction. Between fixes the correction is zero.
pub fn luenberger_step(f: &mut LuenbergerFilter, u_acc: f64, y_pos: Option<f64>, dt: f64) {
    debug_assert!(dt > 0.0);
    let x = f.x;
    f.x[0] += dt * x[1];
    f.x[1] += dt * (x[2] + u_acc);
    f.since_fix += dt;
    if let Some(y) = y_pos {
        let err = y - f.x[0];
        f.x += f.l * (f.since_fix * err);
        f.since_fix = 0.0;
    }
}

/// Body-frame accelerometer reading mapped to world-frame coordinate
/// acceleration (gravity removed).
pub fn world_accel(phi_b: &Vec3, acc_body: &Vec3, g_r: f64) -> Vec3 {
    rot_body(phi_b) * acc_body - Vec3::new(0.0, 0.0, g_r)
}

/// Three-axis position observer fed by the accelerometer at the propagation
/// rate and by position fixes at the (much slower) sensor rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionObserver {
    pub axes: [LuenbergerFilter; 3],
}

impl PositionObserver {
    pub fn new(p0: Vec3) -> Self {
        Self {
            axes: [
                LuenbergerFilter::new(Vec3::new(p0[0], 0.0, 0.0)),
                LuenbergerFilter::new(Vec3::new(p0[1], 0.0, 0.0)),
                LuenbergerFilter::new(Vec3::new(p0[2], 0.0, 0.0)),
            ],
        }
    }

    pub fn step(&mut self, world_acc: &Vec3, fix: Option<Vec3>, dt: f64) {
        for (i, ax) in self.axes.iter_mut().enumerate() {
            luenberger_step(ax, world_acc[i], fix.map(|p| p[i]), dt);
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.axes[0].x[0], self.axes[1].x[0], self.axes[2].x[0])
    }

    pub fn velocity(&self) -> Vec3 {
        Vec3::new(self.axes[0].x[1], self.axes[1].x[1], self.axes[2].x[1])
    }
}

/// Number of lumped internal parameters.
pub const NH_I: usize = 24;
/// Number of environment parameters (stiffness/damping per task axis).
pub const NH_L: usize = 12;
/// Number of wind pressure coefficients.
pub const NH_W: usize = 4;
/// Total parameter count.
pub const NH_S: usize = NH_I + NH_L + NH_W;

pub type HVector = SVector<f64, NH_S>;
pub type YsMatrix = SMatrix<f64, 8, NH_S>;
pub type YeMatrix = SMatrix<f64, 6, NH_L>;

/// Lumped internal parameter vector
/// `[m1, m2, m, I1, I2, Ix, l0 m1, l0 m2, l1 m1, l1 m2, l2 m1, l2 m2,
///   l0² m1, l0² m2, l1² m1, l1² m2, l2² m1, l2² m2,
///   l0 l1 m1, l0 l1 m2, l1 l2 m1, l1 l2 m2, l0 l2 m1, l0 l2 m2]`.
pub fn internal_parameters(p: &RobotParams) -> SVector<f64, NH_I> {
    let (m1, m2, l0, l1, l2) = (p.m1, p.m2, p.l0, p.l1, p.l2);
    SVector::<f64, NH_I>::from_column_slice(&[
        m1,
        m2,
        p.m,
        p.i1,
        p.i2,
        p.ix,
        l0 * m1,
        l0 * m2,
        l1 * m1,
        l1 * m2,
        l2 * m1,
        l2 * m2,
        l0 * l0 * m1,
        l0 * l0 * m2,
        l1 * l1 * m1,
        l1 * l1 * m2,
        l2 * l2 * m1,
        l2 * l2 * m2,
        l0 * l1 * m1,
        l0 * l1 * m2,
        l1 * l2 * m1,
        l1 * l2 * m2,
        l0 * l2 * m1,
        l0 * l2 * m2,
    ])
}

/// Environment parameters interleaved as
/// `[S_c1, D_c1, S_c2, D_c2, ..., S_c6, D_c6]`.
pub fn contact_parameters(s_c: &Vec6, d_c: &Vec6) -> SVector<f64, NH_L> {
    let mut h = SVector::<f64, NH_L>::zeros();
    for i in 0..6 {
        h[2 * i] = s_c[i];
        h[2 * i + 1] = d_c[i];
    }
    h
}

/// Full parameter vector `[internal; contact; wind]`.
pub fn stack_parameters(
    h_i: &SVector<f64, NH_I>,
    h_l: &SVector<f64, NH_L>,
    h_w: &SVector<f64, NH_W>,
) -> HVector {
    let mut h = HVector::zeros();
    h.fixed_rows_mut::<NH_I>(0).copy_from(h_i);
    h.fixed_rows_mut::<NH_L>(NH_I).copy_from(h_l);
    h.fixed_rows_mut::<NH_W>(NH_I + NH_L).copy_from(h_w);
    h
}

/// Regressor evaluated at one sample: `Y_s = [Y_i | Y_l | Y_w]` (8x40) plus
/// the task-space block `Y_e` (6x12) used to read the estimated contact
/// wrench back out.
#[derive(Debug, Clone)]
pub struct RegressorRow {
    pub y_s: YsMatrix,
    pub y_e: YeMatrix,
    /// True when the contact deviation inputs were supplied; the estimator
    /// holds the environment parameters (and their covariance) otherwise.
    pub contact_active: bool,
}

// Nodes and inverted Vandermonde matrices for the quadratic length
// dependence of each link-mass family. The degree-2 principal lattices are
// unisolvent, so the coefficient extraction is exact.
const M1_NODES: [(f64, f64); 6] = [
    (0.0, 0.0),
    (1.0, 0.0),
    (0.0, 1.0),
    (2.0, 0.0),
    (0.0, 2.0),
    (1.0, 1.0),
];
const M2_NODES: [(f64, f64, f64); 10] = [
    (0.0, 0.0, 0.0),
    (1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 0.0, 1.0),
    (2.0, 0.0, 0.0),
    (0.0, 2.0, 0.0),
    (0.0, 0.0, 2.0),
    (1.0, 1.0, 0.0),
    (0.0, 1.0, 1.0),
    (1.0, 0.0, 1.0),
];

struct VandermondeTables {
    v6_inv: SMatrix<f64, 6, 6>,
    v10_inv: SMatrix<f64, 10, 10>,
}

fn vandermonde_tables() -> &'static VandermondeTables {
    static TABLES: OnceLock<VandermondeTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let v6 = SMatrix::<f64, 6, 6>::from_fn(|r, c| {
            let (a, b) = M1_NODES[r];
            [1.0, a, b, a * a, b * b, a * b][c]
        });
        let v10 = SMatrix::<f64, 10, 10>::from_fn(|r, c| {
            let (a, b, d) = M2_NODES[r];
            [
                1.0,
                a,
                b,
                d,
                a * a,
                b * b,
                d * d,
                a * b,
                b * d,
                a * d,
            ][c]
        });
        VandermondeTables {
            v6_inv: v6.try_inverse().expect("unisolvent node set"),
            v10_inv: v10.try_inverse().expect("unisolvent node set"),
        }
    })
}

fn probe_tau(q: &Vec8, qd: &Vec8, qdd: &Vec8, p: &RobotParams) -> Vec8 {
    let s = GeneralizedState {
        q: *q,
        qd: *qd,
        qdd: *qdd,
    };
    inverse_dynamics(&s, p).0
}

/// Columns of `h_i` per monomial for the link-1 family
/// `{1, l0, l1, l0², l1², l0 l1}`.
const M1_COLS: [usize; 6] = [0, 6, 8, 12, 14, 18];
/// Columns for the link-2 family
/// `{1, l0, l1, l2, l0², l1², l2², l0 l1, l1 l2, l0 l2}`.
const M2_COLS: [usize; 10] = [1, 7, 9, 11, 13, 15, 17, 19, 21, 23];

/// Internal-dynamics regressor `Y_i` (8x24) such that `Y_i h_i` reproduces
/// the rigid-body force `M q̈ + C q̇ + G` at the nominal geometry.
///
/// The columns are extracted by probing the inverse dynamics with modified
/// parameter sets: each link-mass family is a quadratic polynomial in the
/// link lengths, sampled on an unisolvent lattice and separated through the
/// inverted Vandermonde matrix. Two lumped conventions keep the 24-column
/// format exact at the true parameters: the fixed bracket mass rides on the
/// base-mass column at its nominal mass ratio, and the y/z body inertias
/// ride on the `Ix` column at their nominal ratios.
pub fn internal_regressor(q: &Vec8, qd: &Vec8, qdd: &Vec8, p: &RobotParams) -> SMatrix<f64, 8, NH_I> {
    let tables = vandermonde_tables();
    let mut y = SMatrix::<f64, 8, NH_I>::zeros();

    // Bare skeleton: every mass and inertia silenced, friction off.
    let hollow = RobotParams {
        m: 0.0,
        m0: 0.0,
        m1: 0.0,
        m2: 0.0,
        ix: 0.0,
        iy: 0.0,
        iz: 0.0,
        i1: 0.0,
        i2: 0.0,
        b1: 0.0,
        b2: 0.0,
        ..*p
    };

    // Base-mass column, with the bracket folded in at its nominal ratio.
    let tau_m = probe_tau(q, qd, qdd, &RobotParams { m: 1.0, ..hollow });
    let tau_m0 = probe_tau(q, qd, qdd, &RobotParams { m0: 1.0, ..hollow });
    y.set_column(2, &(tau_m + (p.m0 / p.m) * tau_m0));

    // Joint-axis inertias are scalar factors of fixed unit tensors.
    y.set_column(3, &probe_tau(q, qd, qdd, &RobotParams { i1: 1.0, ..hollow }));
    y.set_column(4, &probe_tau(q, qd, qdd, &RobotParams { i2: 1.0, ..hollow }));

    // Body inertia column: all three moments at their nominal structure,
    // normalized by the x moment.
    let tau_if = probe_tau(
        q,
        qd,
        qdd,
        &RobotParams {
            ix: p.ix,
            iy: p.iy,
            iz: p.iz,
            ..hollow
        },
    );
    y.set_column(5, &(tau_if / p.ix));

    // Link-1 mass family: quadratic in (l0, l1).
    let mut samples1 = [Vec8::zeros(); 6];
    for (k, &(a, b)) in M1_NODES.iter().enumerate() {
        samples1[k] = probe_tau(
            q,
            qd,
            qdd,
            &RobotParams {
                m1: 1.0,
                l0: a,
                l1: b,
                ..hollow
            },
        );
    }
    for row in 0..8 {
        let vals = SVector::<f64, 6>::from_fn(|k, _| samples1[k][row]);
        let coeffs = tables.v6_inv * vals;
        for (m, &col) in M1_COLS.iter().enumerate() {
            y[(row, col)] = coeffs[m];
        }
    }

    // Link-2 mass family: quadratic in (l0, l1, l2) with the center-of-mass
    // offset held at its nominal value.
    let mut samples2 = [Vec8::zeros(); 10];
    for (k, &(a, b, d)) in M2_NODES.iter().enumerate() {
        samples2[k] = probe_tau(
            q,
            qd,
            qdd,
            &RobotParams {
                m2: 1.0,
                l0: a,
                l1: b,
                l2: d,
                ..hollow
            },
        );
    }
    for row in 0..8 {
        let vals = SVector::<f64, 10>::from_fn(|k, _| samples2[k][row]);
        let coeffs = tables.v10_inv * vals;
        for (m, &col) in M2_COLS.iter().enumerate() {
            y[(row, col)] = coeffs[m];
        }
    }

    y
}

/// Task-space contact regressor: row `i` holds the pose deviation and rate
/// of axis `i` in the stiffness/damping column pair of that axis.
pub fn contact_regressor(chi_dev: &Vec6, chi_dot: &Vec6) -> YeMatrix {
    let mut y_e = YeMatrix::zeros();
    for i in 0..6 {
        y_e[(i, 2 * i)] = chi_dev[i];
        y_e[(i, 2 * i + 1)] = chi_dot[i];
    }
    y_e
}

/// Wind regressor: only the horizontal force rows are loaded, through the
/// altitude-squared pressure terms.
pub fn wind_regressor(z: f64, theta: f64, phi: f64) -> SMatrix<f64, 8, NH_W> {
    let mut y_w = SMatrix::<f64, 8, NH_W>::zeros();
    let z2 = z * z;
    y_w[(0, 0)] = z2 * theta.sin();
    y_w[(0, 1)] = z2 * theta.cos();
    y_w[(1, 2)] = z2 * phi.sin();
    y_w[(1, 3)] = z2 * phi.cos();
    y_w
}

/// Full regressor at one sample. `contact` carries the end-effector pose
/// deviation from the latched interaction start and the task rate; pass
/// `None` in free space, which zeroes the environment block.
pub fn build_regressor(
    q: &Vec8,
    qd: &Vec8,
    qdd: &Vec8,
    contact: Option<(Vec6, Vec6)>,
    p: &RobotParams,
) -> RegressorRow {
    let mut y_s = YsMatrix::zeros();
    y_s.fixed_columns_mut::<NH_I>(0)
        .copy_from(&internal_regressor(q, qd, qdd, p));

    let (y_e, contact_active) = match contact {
        Some((dev, rate)) => (contact_regressor(&dev, &rate), true),
        None => (YeMatrix::zeros(), false),
    };
    let s = GeneralizedState {
        q: *q,
        qd: *qd,
        qdd: Vec8::zeros(),
    };
    let j = system_jacobian(&s, p).j;
    y_s.fixed_columns_mut::<NH_L>(NH_I)
        .copy_from(&(j.transpose() * y_e));

    y_s.fixed_columns_mut::<NH_W>(NH_I + NH_L)
        .copy_from(&wind_regressor(q[crate::IQ_Z], q[crate::IQ_TH], q[crate::IQ_PH]));

    RegressorRow {
        y_s,
        y_e,
        contact_active,
    }
}

/// Recursive least-squares state with a variable forgetting factor.
#[derive(Debug, Clone)]
pub struct FtrlsState {
    pub h_hat: HVector,
    /// Inverse covariance, propagated directly; the gain solve goes through
    /// its Cholesky factor.
    pub r_inv: SMatrix<f64, NH_S, NH_S>,
    pub eta_min: f64,
    pub gamma_g: f64,
    /// Initial covariance scale, also the reset target.
    pub r0: f64,
    /// Number of times the covariance lost positive definiteness and was
    /// reset to the scaled identity.
    pub pd_resets: u32,
}

impl FtrlsState {
    /// Start from the nominal internal parameters with unknown environment
    /// and wind, and covariance `R = r0 I`.
    pub fn new(p: &RobotParams, r0: f64, eta_min: f64, gamma_g: f64) -> Self {
        let h_i = internal_parameters(p);
        let h_hat = stack_parameters(&h_i, &SVector::zeros(), &SVector::zeros());
        Self {
            h_hat,
            r_inv: SMatrix::identity() / r0,
            eta_min,
            gamma_g,
            r0,
            pd_resets: 0,
        }
    }

    pub fn contact_block(&self) -> SVector<f64, NH_L> {
        self.h_hat.fixed_rows::<NH_L>(NH_I).into_owned()
    }

    pub fn wind_block(&self) -> SVector<f64, NH_W> {
        self.h_hat.fixed_rows::<NH_W>(NH_I + NH_L).into_owned()
    }
}

/// Forgetting factor `eta_min + (1 - eta_min) 2^(-round(gamma ||e||²))`,
/// where the rounding is half-away-from-zero. Zero error gives 1; the
/// factor steps down toward `eta_min` as the error grows.
pub fn forgetting_factor(tau_err_sq: f64, eta_min: f64, gamma_g: f64) -> f64 {
    let n = (gamma_g * tau_err_sq).round();
    eta_min + (1.0 - eta_min) * 2f64.powf(-n)
}

/// Outputs of one estimator step.
#[derive(Debug, Clone)]
pub struct FtrlsOutput {
    /// Estimated environment force pulled back to the generalized
    /// coordinates.
    pub tau_l_hat: GeneralizedForce,
    /// Estimated task-space contact wrench.
    pub f_e_hat: Vec6,
    pub eta: f64,
    /// Covariance was reset to the scaled identity this step.
    pub reset: bool,
}

/// One Euler step of the estimator:
/// `h ← h + dt R Yᵀ(τ - Y h)` and `R⁻¹ ← R⁻¹ + dt(-η R⁻¹ + YᵀY)`.
///
/// While the contact inputs are inactive the environment columns of `Y` are
/// zero, so their parameters receive no update; their covariance rows are
/// held as well, since decaying them would inflate the environment gain
/// without bound during long free-flight stretches. A covariance that loses
/// positive definiteness is reset to the scaled identity and counted.
pub fn ftrls_step(
    s: &mut FtrlsState,
    reg: &RegressorRow,
    tau: &GeneralizedForce,
    dt: f64,
) -> FtrlsOutput {
    let tau_err = tau - reg.y_s * s.h_hat;
    let eta = forgetting_factor(tau_err.norm_squared(), s.eta_min, s.gamma_g);

    let mut reset = false;
    let gain_rhs = reg.y_s.transpose() * tau_err;
    match s.r_inv.cholesky() {
        Some(ch) => {
            s.h_hat += dt * ch.solve(&gain_rhs);
        }
        None => {
            s.r_inv = SMatrix::identity() / s.r0;
            s.pd_resets += 1;
            reset = true;
            s.h_hat += dt * s.r0 * gain_rhs;
        }
    }

    let prev = s.r_inv;
    let mut next = prev + dt * (-eta * prev + reg.y_s.transpose() * reg.y_s);
    if !reg.contact_active {
        for i in NH_I..NH_I + NH_L {
            for j in 0..NH_S {
                next[(i, j)] = prev[(i, j)];
                next[(j, i)] = prev[(j, i)];
            }
        }
    }
    s.r_inv = 0.5 * (next + next.transpose());

    let h_l = s.contact_block();
    FtrlsOutput {
        tau_l_hat: reg.y_s.fixed_columns::<NH_L>(NH_I) * h_l,
        f_e_hat: reg.y_e * h_l,
        eta,
        reset,
    }
}

/// Contact threshold test: any estimated force component above 0.1 N or any
/// moment component above 0.01 N·m.
pub fn contact_detector(f_e_hat: &Vec6) -> bool {
    (0..3).any(|i| f_e_hat[i].abs() > 0.1) || (3..6).any(|i| f_e_hat[i].abs() > 0.01)
}
