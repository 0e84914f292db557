//! Receding-horizon control of the observer-linearized channels: Laguerre
//! parametrization of the input derivative, recursively assembled prediction
//! cost, mapping of rotor/joint limits to per-channel force bounds, and
//! Hildreth's multiplier iteration for the constrained window.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::model::{ForceLimits, RobotParams};
use crate::{Error, GeneralizedState, Result, Vec8, IQ_PH, IQ_PSI, IQ_TH};

/// Orthonormal Laguerre system `X(t) = e^{A_u t} X(0)` describing the
/// control derivative over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct LaguerreBasis {
    pub s_u: f64,
    pub n_u: usize,
    pub a_u: DMatrix<f64>,
    pub x0: DVector<f64>,
}

impl LaguerreBasis {
    pub fn new(s_u: f64, n_u: usize) -> Self {
        assert!(s_u > 0.0 && n_u >= 1, "basis needs s_u > 0 and n_u >= 1");
        let a_u = DMatrix::from_fn(n_u, n_u, |r, c| {
            if r == c {
                -s_u
            } else if r > c {
                -2.0 * s_u
            } else {
                0.0
            }
        });
        let x0 = DVector::from_element(n_u, (2.0 * s_u).sqrt());
        Self { s_u, n_u, a_u, x0 }
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        debug_assert!(t >= 0.0);
        (self.a_u.clone() * t).exp() * &self.x0
    }
}

/// Per-channel tuning. `q_w` weights the predicted output error, `r_w` the
/// control derivative; the horizon follows the integrating-plant rule
/// `T_p ≈ 10/s_u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcTuning {
    pub s_u: f64,
    pub n_u: usize,
    pub t_p: f64,
    pub h: f64,
    pub q_w: f64,
    pub r_w: f64,
    pub k_max: usize,
}

/// Tuning of the position/yaw/joint channels.
pub fn zeta_tuning() -> MpcTuning {
    MpcTuning {
        s_u: 2.0,
        n_u: 3,
        t_p: 5.0,
        h: 0.01,
        q_w: 1.0,
        r_w: 1.0,
        k_max: 38,
    }
}

/// Tuning of the pitch/roll channels.
///
/// The `10/s_u` horizon rule assumes the basis pole sits near the
/// closed-loop bandwidth. These weights settle near 1.5 rad/s, so a 1 s
/// window leaves the receding-horizon law unstable on the augmented triple
/// chain; 4 s puts the gain at its stability-margin peak (slowest pole
/// near -1.1 rad/s, about 3x faster than the position channels).
pub fn sigma_tuning() -> MpcTuning {
    MpcTuning {
        s_u: 10.0,
        n_u: 6,
        t_p: 4.0,
        h: 0.01,
        q_w: 2.0,
        r_w: 0.2,
        k_max: 38,
    }
}

/// Augmented SISO model over the state `[rate, accel, output error]`: the
/// input enters through the acceleration derivative and the error
/// integrates the rate.
pub fn augmented_model() -> (Matrix3<f64>, Vector3<f64>) {
    let a_a = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
    let b_a = Vector3::new(0.0, 1.0, 0.0);
    (a_a, b_a)
}

/// One-step cross block `Φ(h)ᵀ = ∫₀ʰ e^{A_a (h-γ)} B_a X(γ)ᵀ dγ` evaluated
/// exactly through the block-matrix exponential
/// `exp([[A_a, B_a X(0)ᵀ], [0, A_uᵀ]] h)`.
pub fn phi_first_step(
    basis: &LaguerreBasis,
    a_a: &Matrix3<f64>,
    b_a: &Vector3<f64>,
    h: f64,
) -> DMatrix<f64> {
    let n_u = basis.n_u;
    let mut m = DMatrix::zeros(3 + n_u, 3 + n_u);
    m.view_mut((0, 0), (3, 3)).copy_from(a_a);
    m.view_mut((0, 3), (3, n_u))
        .copy_from(&(b_a * basis.x0.transpose()));
    m.view_mut((3, 3), (n_u, n_u))
        .copy_from(&basis.a_u.transpose());
    let e = (m * h).exp();
    e.view((0, 3), (3, n_u)).into_owned()
}

/// `Φ(kh)ᵀ` for `k = 0..=n_steps` by the semigroup recursion
/// `Φ(kh)ᵀ = e^{A_a h} Φ((k-1)h)ᵀ + Φ(h)ᵀ e^{A_uᵀ (k-1) h}`.
pub fn phi_table(
    basis: &LaguerreBasis,
    a_a: &Matrix3<f64>,
    b_a: &Vector3<f64>,
    h: f64,
    n_steps: usize,
) -> Vec<DMatrix<f64>> {
    let phi1 = phi_first_step(basis, a_a, b_a, h);
    let e_ah = DMatrix::from_column_slice(3, 3, (a_a * h).exp().as_slice());
    let e_aut_h = (basis.a_u.transpose() * h).exp();
    let mut table = Vec::with_capacity(n_steps + 1);
    table.push(DMatrix::zeros(3, basis.n_u));
    let mut e_aut_pow = DMatrix::identity(basis.n_u, basis.n_u);
    for k in 1..=n_steps {
        let prev = &table[k - 1];
        table.push(&e_ah * prev + &phi1 * &e_aut_pow);
        e_aut_pow *= &e_aut_h;
    }
    table
}

/// Trapezoid assembly of the window cost
/// `Ω = Σ Φ Q Φᵀ h + R` and `Ψ = Σ Φ Q e^{A_a kh} h`. The left endpoint
/// vanishes (`Φ(0) = 0`), the right one enters at half weight.
pub fn build_prediction(
    basis: &LaguerreBasis,
    a_a: &Matrix3<f64>,
    b_a: &Vector3<f64>,
    q_mpc: &Matrix3<f64>,
    r_w: f64,
    h: f64,
    n_steps: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let phis = phi_table(basis, a_a, b_a, h, n_steps);
    let e_ah = (a_a * h).exp();
    let q_d = DMatrix::from_column_slice(3, 3, q_mpc.as_slice());
    let mut omega = DMatrix::identity(basis.n_u, basis.n_u) * r_w;
    let mut psi = DMatrix::zeros(basis.n_u, 3);
    let mut e_a_pow = Matrix3::identity();
    for (k, phi_t) in phis.iter().enumerate().skip(1) {
        e_a_pow *= e_ah;
        let w = if k == n_steps { 0.5 * h } else { h };
        let weighted = phi_t.transpose() * &q_d;
        omega += &weighted * phi_t * w;
        psi += weighted * DMatrix::from_column_slice(3, 3, e_a_pow.as_slice()) * w;
    }
    omega = (&omega + omega.transpose()) * 0.5;
    (omega, psi)
}

/// One SISO predictive channel with precomputed cost matrices and the
/// running control value it integrates.
#[derive(Debug, Clone)]
pub struct MpcChannel {
    pub tuning: MpcTuning,
    pub basis: LaguerreBasis,
    pub omega: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    /// Receding-horizon feedback row: `u̇ = -k_du · x_a` when unconstrained.
    pub k_du: Vector3<f64>,
    pub u_prev: f64,
    chol: Cholesky<f64, Dyn>,
}

impl MpcChannel {
    pub fn new(tuning: MpcTuning) -> Self {
        let n_steps = (tuning.t_p / tuning.h).round() as usize;
        assert!(
            (tuning.t_p / tuning.h - n_steps as f64).abs() < 1e-9 && n_steps > 0,
            "quadrature step must divide the horizon"
        );
        let basis = LaguerreBasis::new(tuning.s_u, tuning.n_u);
        let (a_a, b_a) = augmented_model();
        let q_mpc = Matrix3::from_diagonal(&Vector3::new(0.0, 0.0, tuning.q_w));
        let (omega, psi) =
            build_prediction(&basis, &a_a, &b_a, &q_mpc, tuning.r_w, tuning.h, n_steps);
        let chol = Cholesky::new(omega.clone()).expect("window cost must be positive definite");
        let y = chol.solve(&psi);
        let k_row = basis.x0.transpose() * y;
        let k_du = Vector3::new(k_row[(0, 0)], k_row[(0, 1)], k_row[(0, 2)]);
        Self {
            tuning,
            basis,
            omega,
            psi,
            k_du,
            u_prev: 0.0,
            chol,
        }
    }

    pub fn reset(&mut self, u0: f64) {
        self.u_prev = u0;
    }
}

/// Minimizer of the window cost with constraints inactive:
/// `η = -Ω⁻¹ Ψ x_a`.
pub fn unconstrained_gain(c: &MpcChannel, x_a: &Vector3<f64>) -> DVector<f64> {
    -c.chol.solve(&(&c.psi * x_a))
}

/// Outcome of the multiplier iteration. `residual` is the largest remaining
/// constraint violation of the returned point.
#[derive(Debug, Clone)]
pub struct HildrethSolution {
    pub eta: DVector<f64>,
    pub lambda: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Hildreth's element-wise dual iteration for
/// `min ½ηᵀΩη + ηᵀf  s.t.  Mη ≤ γ` with `f = Ψ x_a`:
/// `λᵢ ← max(0, -(eᵢ + Σ_{j≠i} hᵢⱼ λⱼ)/hᵢᵢ)` over `H = MΩ⁻¹Mᵀ`,
/// `E = γ + MΩ⁻¹f`, then `η* = -Ω⁻¹(f + Mᵀλ*)`.
pub fn hildreth_solve(
    omega: &DMatrix<f64>,
    f: &DVector<f64>,
    m_c: &DMatrix<f64>,
    gamma_c: &DVector<f64>,
    k_max: usize,
) -> HildrethSolution {
    assert!(k_max >= 1);
    let chol = Cholesky::new(omega.clone()).expect("quadratic term must be positive definite");
    let eta0 = -chol.solve(f);
    let m = m_c.nrows();
    if m == 0 || (m_c * &eta0 - gamma_c).max() <= 0.0 {
        return HildrethSolution {
            eta: eta0,
            lambda: DVector::zeros(m),
            residual: 0.0,
            iterations: 0,
        };
    }
    let h = m_c * chol.solve(&m_c.transpose());
    let e = gamma_c + m_c * chol.solve(f);
    let mut lambda: DVector<f64> = DVector::zeros(m);
    let mut iterations = 0;
    for _ in 0..k_max {
        iterations += 1;
        let mut sweep_change = 0.0f64;
        for i in 0..m {
            let hii = h[(i, i)];
            if hii <= 1e-14 {
                continue;
            }
            let mut s = e[i];
            for j in 0..m {
                if j != i {
                    s += h[(i, j)] * lambda[j];
                }
            }
            let next = (-s / hii).max(0.0);
            sweep_change = sweep_change.max((next - lambda[i]).abs());
            lambda[i] = next;
        }
        if sweep_change < 1e-13 {
            break;
        }
    }
    let eta = -chol.solve(&(f + m_c.transpose() * &lambda));
    let residual = (m_c * &eta - gamma_c).max().max(0.0);
    HildrethSolution {
        eta,
        lambda,
        residual,
        iterations,
    }
}

/// One receding-horizon step. `x_a = [rate error, acceleration, position
/// error]`; `u_limits` bounds the integrated control over the window
/// (already shifted into this channel's coordinates). The first-sample
/// amplitude constraint `u_prev + X(0)ᵀη dt ∈ [lo, hi]` enters the QP; only
/// the first instant of the optimal trajectory is applied.
pub fn mpc_step(
    c: &mut MpcChannel,
    x_a: &Vector3<f64>,
    u_limits: Option<(f64, f64)>,
    dt: f64,
) -> Result<f64> {
    debug_assert!(dt > 0.0);
    let f = &c.psi * x_a;
    let eta = match u_limits {
        None => -c.chol.solve(&f),
        Some((lo, hi)) => {
            if lo > hi {
                return Err(Error::InfeasibleWindow(format!(
                    "control bounds crossed: [{lo:.4}, {hi:.4}]"
                )));
            }
            let cu = c.basis.x0.transpose() * dt;
            let mut m_c = DMatrix::zeros(2, c.basis.n_u);
            m_c.row_mut(0).copy_from(&cu);
            m_c.row_mut(1).copy_from(&(-cu));
            let gamma = DVector::from_column_slice(&[hi - c.u_prev, c.u_prev - lo]);
            hildreth_solve(&c.omega, &f, &m_c, &gamma, c.tuning.k_max).eta
        }
    };
    c.u_prev += c.basis.x0.dot(&eta) * dt;
    Ok(c.u_prev)
}

/// Generalized-force bounds per channel, ordered as `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauBounds {
    pub min: Vec8,
    pub max: Vec8,
}

/// Map the rotor/joint envelope to bounds on the generalized forces. Each
/// coupled channel is solved from the rotor mixing with the other torques
/// substituted by their previous values, or previous plus last increment
/// when `predictive`. The x/y force bounds follow the thrust tilt split
/// with the released floor. Bounds are held zero-order over the window.
pub fn map_actuator_limits(
    tau_prev: &Vec8,
    delta_tau_prev: &Vec8,
    q: &GeneralizedState,
    p: &RobotParams,
    lim: &ForceLimits,
    predictive: bool,
) -> Result<TauBounds> {
    let sub = |i: usize| {
        if predictive {
            tau_prev[i] + delta_tau_prev[i]
        } else {
            tau_prev[i]
        }
    };
    let g = [p.gamma(0), p.gamma(1), p.gamma(2), p.gamma(3)];
    let dq = p.d_q;
    let (tz, tpsi, tth, tph) = (sub(2), sub(3), sub(4), sub(5));
    let (fl, fu) = (lim.f_min, lim.f_max);

    // Thrust-sum channel: each rotor row solved for tau_z.
    let z_off = [
        -tpsi / g[0] + 2.0 * tth / dq,
        tpsi / g[1] - 2.0 * tph / dq,
        -tpsi / g[2] - 2.0 * tth / dq,
        tpsi / g[3] + 2.0 * tph / dq,
    ];
    let tz_min = z_off.iter().map(|o| 4.0 * fl + o).fold(f64::NEG_INFINITY, f64::max);
    let tz_max = z_off.iter().map(|o| 4.0 * fu + o).fold(f64::INFINITY, f64::min);

    // Yaw channel.
    let psi_min = [
        g[0] * (4.0 * fl - tz + 2.0 * tth / dq),
        g[1] * (-4.0 * fu + tz + 2.0 * tph / dq),
        g[2] * (4.0 * fl - tz - 2.0 * tth / dq),
        g[3] * (-4.0 * fu + tz - 2.0 * tph / dq),
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    let psi_max = [
        g[0] * (4.0 * fu - tz + 2.0 * tth / dq),
        g[1] * (-4.0 * fl + tz + 2.0 * tph / dq),
        g[2] * (4.0 * fu - tz - 2.0 * tth / dq),
        g[3] * (-4.0 * fl + tz - 2.0 * tph / dq),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);

    // Pitch channel from the front/back rotor pair.
    let th_min = (2.0 * dq * (-fu + tz / 4.0 + tpsi / (4.0 * g[0])))
        .max(2.0 * dq * (fl - tz / 4.0 - tpsi / (4.0 * g[2])));
    let th_max = (2.0 * dq * (-fl + tz / 4.0 + tpsi / (4.0 * g[0])))
        .min(2.0 * dq * (fu - tz / 4.0 - tpsi / (4.0 * g[2])));

    // Roll channel from the left/right rotor pair.
    let ph_min = (2.0 * dq * (fl - tz / 4.0 + tpsi / (4.0 * g[1])))
        .max(2.0 * dq * (-fu + tz / 4.0 - tpsi / (4.0 * g[3])));
    let ph_max = (2.0 * dq * (fu - tz / 4.0 + tpsi / (4.0 * g[1])))
        .min(2.0 * dq * (-fl + tz / 4.0 - tpsi / (4.0 * g[3])));

    // Horizontal forces ride the thrust through the small-tilt split; the
    // floor keeps the interval open when the tilt coefficients vanish.
    let (psi_a, th_a, ph_a) = (q.q[IQ_PSI], q.q[IQ_TH], q.q[IQ_PH]);
    let cx = th_a * psi_a.cos() + ph_a * psi_a.sin();
    let cy = th_a * psi_a.sin() - ph_a * psi_a.cos();
    let split = |c: f64| {
        if c >= 0.0 {
            (c * tz_min, c * tz_max)
        } else {
            (c * tz_max, c * tz_min)
        }
    };
    let (x_min, x_max) = split(cx);
    let (y_min, y_max) = split(cy);
    let x_min = x_min.min(-lim.tau_xy_floor);
    let x_max = x_max.max(lim.tau_xy_floor);
    let y_min = y_min.min(-lim.tau_xy_floor);
    let y_max = y_max.max(lim.tau_xy_floor);

    let min = Vec8::from_column_slice(&[
        x_min,
        y_min,
        tz_min,
        psi_min,
        th_min,
        ph_min,
        -lim.tau_m1_max,
        -lim.tau_m2_max,
    ]);
    let max = Vec8::from_column_slice(&[
        x_max,
        y_max,
        tz_max,
        psi_max,
        th_max,
        ph_max,
        lim.tau_m1_max,
        lim.tau_m2_max,
    ]);
    for i in 0..8 {
        if min[i] > max[i] {
            return Err(Error::InfeasibleWindow(format!(
                "channel {i}: bounds [{:.4}, {:.4}] crossed at tau_prev = {:?}",
                min[i],
                max[i],
                tau_prev.as_slice()
            )));
        }
    }
    Ok(TauBounds { min, max })
}

/// Shift force bounds into control-acceleration bounds:
/// `u ∈ [(τ_min - τ̂_dis)/M_n, (τ_max - τ̂_dis)/M_n]`.
pub fn mpc_input_bounds(tb: &TauBounds, tau_dis_hat: &Vec8, m_n: &Vec8) -> (Vec8, Vec8) {
    let lo = (tb.min - tau_dis_hat).component_div(m_n);
    let hi = (tb.max - tau_dis_hat).component_div(m_n);
    (lo, hi)
}
