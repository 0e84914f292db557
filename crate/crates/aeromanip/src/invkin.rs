//! Trajectory inverse kinematics: three-case orientation inversion, the
//! closed-form position inverse, and the causal fixed-point sweep that
//! couples both with the underactuation constraints.
//!
//! The vehicle contributes only yaw to the reachable end-effector
//! orientations once pitch and roll are claimed by the thrust direction, so
//! the orientation inverse solves for (ψ, θ₁, θ₂) at held (θ, φ) and the
//! constraint solver refreshes (θ, φ) from the implied accelerations.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::{Read, Write};

use crate::dynamics::nonholonomic_solve;
use crate::kinematics::{arm_frames, rot_body, rot_end_effector};
use crate::model::RobotParams;
use crate::{
    scatter6, wrap_angle, Error, GeneralizedState, Mat3, Result, Vec2, Vec3, Vec6,
    SIGMA_IDX, ZETA_IDX,
};

/// Which of the two roots of the θ₁ half-angle quadratic is in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IkCase {
    General,
    Theta1Zero,
    Theta1Pi,
}

/// One inverse-kinematics solution: vehicle coordinates plus joint angles.
#[derive(Debug, Clone, Copy)]
pub struct IkSolution {
    /// [x y z ψ θ₁ θ₂]
    pub zeta: Vec6,
    pub case_id: IkCase,
    pub branch: Branch,
}

/// Below this value of sin²(φ+θ₁) + sin²θ·cos²(φ+θ₁) the yaw equations are
/// too ill-conditioned to split ψ from θ₂; the aligned-axis fallback is used.
/// The threshold is generous because the split's sensitivity to pitch/roll
/// grows like the inverse tool tilt near alignment, which feeds back into the
/// trajectory sweep's pitch/roll iteration; at 1e-2 that loop stays firmly
/// contractive while the pinned-yaw fallback still reproduces the commanded
/// rotation to well under a tenth of a degree.
const PSI_ALIGN_TOL: f64 = 1e-2;
const DEGENERATE_TOL: f64 = 1e-12;

/// Orientations are reachable only while |r33| <= |cos theta|, so the held
/// pitch/roll make the discriminant dip slightly negative whenever they lag
/// the reference. Clamping projects onto the nearest reachable orientation;
/// the threshold keeps the projection error well under a milliradian, and
/// anything below it is reported as unreachable.
const DISC_CLAMP: f64 = 1e-5;

fn theta1_root(r33: f64, sigma_b: &Vec2, branch: Branch) -> Result<f64> {
    let (theta, phi) = (sigma_b[0], sigma_b[1]);
    let a1 = phi.cos() * theta.cos();
    let b1 = -phi.sin() * theta.cos();
    let mut disc = 4.0 * (b1 * b1 + a1 * a1 - r33 * r33);
    if disc < 0.0 {
        if disc < -DISC_CLAMP {
            return Err(Error::UnreachableOrientation(disc));
        }
        disc = 0.0;
    }
    let root = disc.sqrt();
    let num = match branch {
        Branch::Plus => -2.0 * b1 + root,
        Branch::Minus => -2.0 * b1 - root,
    };
    let den = 2.0 * (-a1 - r33);
    if num.abs() < DEGENERATE_TOL && den.abs() < DEGENERATE_TOL {
        return Ok(PI);
    }
    Ok(wrap_angle(2.0 * num.atan2(den)))
}

/// Pick the root whose θ₁ is closest to the supplied configuration.
pub fn select_branch(r_e: &Mat3, sigma_b: &Vec2, theta1_current: f64) -> Result<Branch> {
    let r33 = r_e[(2, 2)];
    let plus = theta1_root(r33, sigma_b, Branch::Plus)?;
    let minus = theta1_root(r33, sigma_b, Branch::Minus)?;
    let dist = |a: f64| wrap_angle(a - theta1_current).abs();
    if dist(plus) <= dist(minus) {
        Ok(Branch::Plus)
    } else {
        Ok(Branch::Minus)
    }
}

/// Roots whose reconstruction errors differ by less than this both solve the
/// commanded orientation; continuity with the previous sample breaks the tie.
const BRANCH_FIT_TIE: f64 = 1e-9;

/// How far a branch's orientation solution is from actually reproducing the
/// commanded rotation. Near the aligned set the pinned-yaw fallback fits one
/// root well and the other only up to a half-turn, which θ₁ continuity alone
/// cannot see: right after a reachability-clamped stretch both roots sit next
/// to each other even though their (ψ, θ₂) pairs have already separated.
fn branch_fit(
    r_e: &Mat3,
    sigma_b: &Vec2,
    branch: Branch,
    p: &RobotParams,
) -> Result<(f64, f64, f64, f64)> {
    let (psi, th1, th2, _) = inverse_orientation_routed(r_e, sigma_b, branch, None)?;
    let mut s = GeneralizedState::zero();
    s.q[crate::IQ_PSI] = psi;
    s.q[crate::IQ_TH] = sigma_b[0];
    s.q[crate::IQ_PH] = sigma_b[1];
    s.q[crate::IQ_TH1] = th1;
    s.q[crate::IQ_TH2] = th2;
    Ok((psi, th1, th2, (rot_end_effector(&s, p) - r_e).norm()))
}

/// Per-step root choice: best reconstruction first, continuity of the full
/// (ψ, θ₁, θ₂) triple with the committed previous sample as the tie-break.
fn select_branch_tracking(
    r_e: &Mat3,
    sigma_b: &Vec2,
    prev: &Vec6,
    p: &RobotParams,
) -> Result<Branch> {
    let (psi_p, th1_p, th2_p, err_p) = branch_fit(r_e, sigma_b, Branch::Plus, p)?;
    let (psi_m, th1_m, th2_m, err_m) = branch_fit(r_e, sigma_b, Branch::Minus, p)?;
    if (err_p - err_m).abs() > BRANCH_FIT_TIE {
        return Ok(if err_p < err_m {
            Branch::Plus
        } else {
            Branch::Minus
        });
    }
    let dist = |psi: f64, th1: f64, th2: f64| {
        wrap_angle(psi - prev[3]).abs()
            + wrap_angle(th1 - prev[4]).abs()
            + wrap_angle(th2 - prev[5]).abs()
    };
    if dist(psi_p, th1_p, th2_p) <= dist(psi_m, th1_m, th2_m) {
        Ok(Branch::Plus)
    } else {
        Ok(Branch::Minus)
    }
}

/// Orientation inverse at held pitch/roll: returns (ψ, θ₁, θ₂, case).
///
/// θ₁ comes from the half-angle quadratic on the (3,3) element; ψ and θ₂
/// follow from 2×2 solves on the third column and third row. The yaw solve
/// degenerates when the yaw and joint-2 axes align, which happens when
/// sin(φ + θ₁) and sin θ vanish together; only θ₂ ± ψ is observable there,
/// so ψ is set to zero and θ₂ absorbs the whole rotation.
pub fn inverse_orientation(
    r_e: &Mat3,
    sigma_b: &Vec2,
    branch: Branch,
) -> Result<(f64, f64, f64, IkCase)> {
    inverse_orientation_routed(r_e, sigma_b, branch, None)
}

/// `route` pins the extraction path: Some(true) forces the aligned-axis
/// fallback, Some(false) the general split, None decides by conditioning.
/// Difference stencils pin it so all samples go through the same formulas.
fn inverse_orientation_routed(
    r_e: &Mat3,
    sigma_b: &Vec2,
    branch: Branch,
    route: Option<bool>,
) -> Result<(f64, f64, f64, IkCase)> {
    let (theta, phi) = (sigma_b[0], sigma_b[1]);
    let (s_th, c_th) = theta.sin_cos();
    let (s_ph, c_ph) = phi.sin_cos();
    let r13 = r_e[(0, 2)];
    let r23 = r_e[(1, 2)];
    let r31 = r_e[(2, 0)];
    let r32 = r_e[(2, 1)];
    let r11 = r_e[(0, 0)];
    let r12 = r_e[(0, 1)];

    let theta1 = theta1_root(r_e[(2, 2)], sigma_b, branch)?;
    let (s1, c1) = theta1.sin_cos();

    let a2 = c_ph * s1 + s_ph * c1;
    let b2 = c_ph * s_th * c1 - s_ph * s_th * s1;
    let den_psi = a2 * a2 + b2 * b2;

    if route.unwrap_or(den_psi < PSI_ALIGN_TOL) {
        // Aligned axes: ψ := 0 and θ₂ carries the vertical rotation. The
        // coefficients extend the θ₁ ∈ {0, π} special case to the solved θ₁.
        let a4 = c_th;
        let b4 = -s_th * (phi + theta1).sin();
        let den = a4 * a4 + b4 * b4;
        if den < DEGENERATE_TOL {
            return Err(Error::DegenerateGeometry);
        }
        let s2 = (a4 * r11 - b4 * r12) / den;
        let c2 = (a4 * r12 + b4 * r11) / den;
        let theta2 = s2.atan2(c2);
        let case = if c1 > 0.0 {
            IkCase::Theta1Zero
        } else {
            IkCase::Theta1Pi
        };
        return Ok((0.0, theta1, theta2, case));
    }

    if den_psi < DEGENERATE_TOL {
        return Err(Error::DegenerateGeometry);
    }
    let s_psi = (a2 * r13 + b2 * r23) / den_psi;
    let c_psi = (b2 * r13 - a2 * r23) / den_psi;
    let psi = s_psi.atan2(c_psi);

    let a3 = c_ph * c_th * s1 + c_th * s_ph * c1;
    let b3 = -s_th;
    let den_th2 = a3 * a3 + b3 * b3;
    if den_th2 < DEGENERATE_TOL {
        return Err(Error::DegenerateGeometry);
    }
    let s2 = (a3 * r32 - s_th * r31) / den_th2;
    let c2 = -(a3 * r31 + s_th * r32) / den_th2;
    let theta2 = s2.atan2(c2);

    Ok((psi, theta1, theta2, IkCase::General))
}

/// Base position that places the end effector at `p_e`.
pub fn inverse_position(p_e: &Vec3, r_b: &Mat3, p_eb_b: &Vec3) -> Vec3 {
    p_e - r_b * p_eb_b
}

/// Full pose inverse at held pitch/roll.
pub fn solve_pose(
    chi_e: &Vec6,
    sigma_b: &Vec2,
    branch: Branch,
    p: &RobotParams,
) -> Result<IkSolution> {
    solve_pose_routed(chi_e, sigma_b, branch, None, p)
}

fn solve_pose_routed(
    chi_e: &Vec6,
    sigma_b: &Vec2,
    branch: Branch,
    route: Option<bool>,
    p: &RobotParams,
) -> Result<IkSolution> {
    let phi_e = Vec3::new(chi_e[3], chi_e[4], chi_e[5]);
    let r_e = rot_body(&phi_e);
    let (psi, theta1, theta2, case_id) =
        inverse_orientation_routed(&r_e, sigma_b, branch, route)?;
    let r_b = rot_body(&Vec3::new(psi, sigma_b[0], sigma_b[1]));
    let fr = arm_frames(theta1, theta2, p);
    let p_b = inverse_position(&Vec3::new(chi_e[0], chi_e[1], chi_e[2]), &r_b, &fr.p_eb_b);
    Ok(IkSolution {
        zeta: Vec6::new(p_b[0], p_b[1], p_b[2], psi, theta1, theta2),
        case_id,
        branch,
    })
}

/// One output sample of the trajectory inverse kinematics. Angles are
/// unwrapped along the trajectory so the difference quotients stay smooth.
#[derive(Debug, Clone, Copy)]
pub struct IkTrajectoryPoint {
    pub t: f64,
    pub zeta: Vec6,
    pub zeta_dot: Vec6,
    pub zeta_ddot: Vec6,
    pub sigma_b: Vec2,
    pub sigma_b_dot: Vec2,
    pub sigma_b_ddot: Vec2,
    pub case_id: IkCase,
    pub branch: Branch,
}

#[derive(Debug, Clone, Copy)]
pub struct IkOptions {
    /// Under-relax the pitch/roll update by 0.5 for stiff references.
    pub under_relax: bool,
    /// Divergence threshold: error out when |θ| or |φ| passes π/2 − margin.
    pub sigma_margin: f64,
    /// θ₁ of the starting configuration, used to pick the quadratic root.
    pub initial_theta1: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            under_relax: false,
            sigma_margin: 0.02,
            initial_theta1: 0.0,
        }
    }
}

/// Causal second-order difference quotients over the last three samples.
pub fn backward_derivatives(x: f64, x1: f64, x2: f64, dt: f64) -> (f64, f64) {
    (
        (3.0 * x - 4.0 * x1 + x2) / (2.0 * dt),
        (x - 2.0 * x1 + x2) / (dt * dt),
    )
}

fn unwrap_near(prev: f64, x: f64) -> f64 {
    x + TAU * ((prev - x) / TAU).round()
}

// The pitch/roll fixed point usually contracts within a handful of sweeps,
// but the contraction factor approaches one as the trajectory nears the
// divergence guard, so the iteration cap is generous. The tolerance sits well
// above the trig roundoff floor and far below any physical angle scale.
const SIGMA_FP_TOL: f64 = 1e-9;
const SIGMA_FP_MAX_ITERS: usize = 400;

/// Pose solutions for the current difference stencil, all at one trial
/// pitch/roll, plus the difference quotients they imply.
struct StencilEval {
    zeta: Vec6,
    zeta_dot: Vec6,
    zeta_ddot: Vec6,
    case_id: IkCase,
}

/// Solve the stencil `chi[i-2..=i]` at a common σ and difference it.
///
/// Freezing σ across the stencil keeps the quotients free of the σ update
/// itself: a backward difference of the solved history would multiply any
/// per-step σ perturbation by 1/Δt² and feed it back through the interaction
/// wrench, which diverges from roundoff within a handful of steps. The
/// attitude rates are treated as quasi-static in the same spirit.
fn eval_stencil(
    chi_ref: &[Vec6],
    i: usize,
    sigma: &Vec2,
    branch: Branch,
    prev_zeta: Option<&Vec6>,
    dt: f64,
    p: &RobotParams,
) -> Result<StencilEval> {
    let sol = solve_pose(&chi_ref[i], sigma, branch, p)?;
    let mut zeta = sol.zeta;
    if let Some(prev) = prev_zeta {
        for k in 3..6 {
            zeta[k] = unwrap_near(prev[k], zeta[k]);
        }
    }
    let route = Some(sol.case_id != IkCase::General);
    let resolve = |j: usize| -> Result<Vec6> {
        let mut z = solve_pose_routed(&chi_ref[j], sigma, branch, route, p)?.zeta;
        for k in 3..6 {
            z[k] = unwrap_near(zeta[k], z[k]);
        }
        Ok(z)
    };
    let (zeta_dot, zeta_ddot) = if i >= 2 {
        let x1 = resolve(i - 1)?;
        let x2 = resolve(i - 2)?;
        let mut d = Vec6::zeros();
        let mut dd = Vec6::zeros();
        for k in 0..6 {
            let (dk, ddk) = backward_derivatives(zeta[k], x1[k], x2[k], dt);
            d[k] = dk;
            dd[k] = ddk;
        }
        (d, dd)
    } else if i == 1 {
        ((zeta - resolve(0)?) / dt, Vec6::zeros())
    } else {
        (Vec6::zeros(), Vec6::zeros())
    };
    Ok(StencilEval {
        zeta,
        zeta_dot,
        zeta_ddot,
        case_id: sol.case_id,
    })
}

/// Sweep a sampled end-effector reference through the inverse kinematics.
///
/// Per step: invert the six algebraic pose equations for ζ, differentiate
/// numerically, and refresh pitch/roll from the acceleration constraints,
/// iterating the pitch/roll value to self-consistency before moving on; σ̇
/// and σ̈ then come from differencing the committed σ sequence. The
/// quadratic root is re-selected each step by θ₁ continuity, so it can only
/// flip where the two roots meet, at θ₁ crossings of 0 or π.
pub fn ik_trajectory(
    chi_ref: &[Vec6],
    dt: f64,
    opts: &IkOptions,
    p: &RobotParams,
) -> Result<Vec<IkTrajectoryPoint>> {
    if !(dt > 0.0) {
        return Err(Error::Scenario("ik trajectory needs dt > 0".into()));
    }
    let mut out = Vec::with_capacity(chi_ref.len());
    let mut sigma = Vec2::zeros();
    let mut hist: Vec<Vec6> = Vec::with_capacity(chi_ref.len());
    let mut sig_hist: Vec<Vec2> = Vec::with_capacity(chi_ref.len());

    for (i, chi) in chi_ref.iter().enumerate() {
        let r_e = rot_body(&Vec3::new(chi[3], chi[4], chi[5]));
        let br = match hist.last() {
            Some(prev) => select_branch_tracking(&r_e, &sigma, prev, p)?,
            None => select_branch(&r_e, &sigma, opts.initial_theta1)?,
        };

        let prev_zeta = hist.last().copied();
        let mut eval = eval_stencil(chi_ref, i, &sigma, br, prev_zeta.as_ref(), dt, p)?;
        let mut converged = false;
        let mut residual = 0.0;
        for _ in 0..SIGMA_FP_MAX_ITERS {
            let mut s = GeneralizedState::zero();
            scatter6(&mut s.q, &ZETA_IDX, &eval.zeta);
            scatter6(&mut s.qd, &ZETA_IDX, &eval.zeta_dot);
            scatter6(&mut s.qdd, &ZETA_IDX, &eval.zeta_ddot);
            for (j, &idx) in SIGMA_IDX.iter().enumerate() {
                s.q[idx] = sigma[j];
            }
            let (theta, phi) = nonholonomic_solve(&s, p)?;
            let target = Vec2::new(theta, phi);
            let next = if opts.under_relax {
                0.5 * (sigma + target)
            } else {
                target
            };
            residual = (next - sigma).amax();
            sigma = next;
            if sigma.amax() > FRAC_PI_2 - opts.sigma_margin {
                return Err(Error::IkDivergence(sigma.amax()));
            }
            eval = eval_stencil(chi_ref, i, &sigma, br, prev_zeta.as_ref(), dt, p)?;
            if residual < SIGMA_FP_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::ConstraintFixedPoint(residual));
        }

        let zeta = eval.zeta;
        let (sigma_dot, sigma_ddot) = if i >= 2 {
            let (s1, s2) = (sig_hist[i - 1], sig_hist[i - 2]);
            let mut d = Vec2::zeros();
            let mut dd = Vec2::zeros();
            for k in 0..2 {
                let (dk, ddk) = backward_derivatives(sigma[k], s1[k], s2[k], dt);
                d[k] = dk;
                dd[k] = ddk;
            }
            (d, dd)
        } else if i == 1 {
            ((sigma - sig_hist[0]) / dt, Vec2::zeros())
        } else {
            (Vec2::zeros(), Vec2::zeros())
        };

        // Output rates track the committed histories, σ evolution included.
        let (zeta_dot, zeta_ddot) = if i >= 2 {
            let (x1, x2) = (hist[i - 1], hist[i - 2]);
            let mut d = Vec6::zeros();
            let mut dd = Vec6::zeros();
            for k in 0..6 {
                let (dk, ddk) = backward_derivatives(zeta[k], x1[k], x2[k], dt);
                d[k] = dk;
                dd[k] = ddk;
            }
            (d, dd)
        } else if i == 1 {
            ((zeta - hist[0]) / dt, Vec6::zeros())
        } else {
            (Vec6::zeros(), Vec6::zeros())
        };

        hist.push(zeta);
        sig_hist.push(sigma);
        out.push(IkTrajectoryPoint {
            t: i as f64 * dt,
            zeta,
            zeta_dot,
            zeta_ddot,
            sigma_b: sigma,
            sigma_b_dot: sigma_dot,
            sigma_b_ddot: sigma_ddot,
            case_id: eval.case_id,
            branch: br,
        });
    }
    Ok(out)
}

/// Reference table: column of times plus six task-space columns.
pub fn read_reference_csv<R: Read>(reader: R) -> Result<(Vec<f64>, Vec<Vec6>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut ts = Vec::new();
    let mut chis = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() < 7 {
            return Err(Error::Scenario(format!(
                "reference row {line} has {} columns, need 7",
                rec.len()
            )));
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            rec.iter().take(7).map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                ts.push(v[0]);
                chis.push(Vec6::from_row_slice(&v[1..7]));
            }
            // A single unparsable leading row is a header.
            Err(_) if line == 0 => continue,
            Err(e) => {
                return Err(Error::Scenario(format!(
                    "reference row {line}: {e}"
                )))
            }
        }
    }
    if chis.is_empty() {
        return Err(Error::Scenario("reference table is empty".into()));
    }
    Ok((ts, chis))
}

/// Emit the solved trajectory next to its reference.
pub fn write_trajectory_csv<W: Write>(
    writer: W,
    chi_ref: &[Vec6],
    points: &[IkTrajectoryPoint],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "t", "xe_r", "ye_r", "ze_r", "psie_r", "thetae_r", "phie_r", "x", "y", "z", "psi",
        "theta1", "theta2", "theta", "phi",
    ])?;
    for (chi, pt) in chi_ref.iter().zip(points) {
        let mut row = vec![pt.t];
        row.extend(chi.iter().copied());
        row.extend(pt.zeta.iter().copied());
        row.push(pt.sigma_b[0]);
        row.push(pt.sigma_b[1]);
        wtr.write_record(row.iter().map(|v| format!("{v:.9}")))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::rot_end_effector;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_3, FRAC_PI_4};

    fn p() -> RobotParams {
        RobotParams::default()
    }

    fn state_with(psi: f64, sigma: Vec2, th1: f64, th2: f64) -> GeneralizedState {
        let mut s = GeneralizedState::zero();
        s.q[crate::IQ_PSI] = psi;
        s.q[crate::IQ_TH] = sigma[0];
        s.q[crate::IQ_PH] = sigma[1];
        s.q[crate::IQ_TH1] = th1;
        s.q[crate::IQ_TH2] = th2;
        s
    }

    #[test]
    fn orientation_round_trip_recovers_angles() {
        let p = p();
        let sigma = Vec2::new(0.25, -0.15);
        let s = state_with(0.3, sigma, FRAC_PI_3, FRAC_PI_4);
        let r_e = rot_end_effector(&s, &p);
        let br = select_branch(&r_e, &sigma, FRAC_PI_3).unwrap();
        let (psi, th1, th2, case) = inverse_orientation(&r_e, &sigma, br).unwrap();
        assert_eq!(case, IkCase::General);
        assert_relative_eq!(psi, 0.3, epsilon = 1e-9);
        assert_relative_eq!(th1, FRAC_PI_3, epsilon = 1e-9);
        assert_relative_eq!(th2, FRAC_PI_4, epsilon = 1e-9);
    }

    #[test]
    fn theta1_zero_pose_moves_yaw_into_joint_two() {
        // At level attitude the yaw and joint-2 axes coincide, so only the
        // sum psi + theta2 is observable; the solver pins psi to zero.
        let p = p();
        let sigma = Vec2::zeros();
        let s = state_with(0.4, sigma, 0.0, 0.3);
        let r_e = rot_end_effector(&s, &p);
        let br = select_branch(&r_e, &sigma, 0.0).unwrap();
        let (psi, th1, th2, case) = inverse_orientation(&r_e, &sigma, br).unwrap();
        assert_eq!(case, IkCase::Theta1Zero);
        assert_eq!(psi, 0.0);
        assert_eq!(th1, 0.0);
        assert_relative_eq!(th2, 0.7, epsilon = 1e-9);
    }

    #[test]
    fn identity_orientation_round_trip() {
        let p = p();
        let sigma = Vec2::zeros();
        let (psi, th1, th2, _) =
            inverse_orientation(&Mat3::identity(), &sigma, Branch::Plus).unwrap();
        let s = state_with(psi, sigma, th1, th2);
        let r_e = rot_end_effector(&s, &p);
        assert!((r_e - Mat3::identity()).norm() < 1e-9);
    }

    #[test]
    fn full_pose_round_trip_on_random_states() {
        let p = p();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let sigma = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let mut s = state_with(
                rng.random_range(-3.0..3.0),
                sigma,
                rng.random_range(-2.8..2.8),
                rng.random_range(-3.0..3.0),
            );
            s.q[0] = rng.random_range(-2.0..2.0);
            s.q[1] = rng.random_range(-2.0..2.0);
            s.q[2] = rng.random_range(-2.0..2.0);
            // Near-aligned yaw/joint-2 axes route to the pinned-yaw fallback,
            // which does not recover arbitrary yaws; skip those draws.
            let align = s.q[crate::IQ_PH] + s.q[crate::IQ_TH1];
            if align.sin().powi(2)
                + (s.q[crate::IQ_TH].sin() * align.cos()).powi(2)
                < 2e-2
            {
                continue;
            }
            let pose = crate::kinematics::forward_kinematics(&s, &p);
            let br = select_branch(
                &rot_body(&Vec3::new(pose.chi_e[3], pose.chi_e[4], pose.chi_e[5])),
                &sigma,
                s.q[crate::IQ_TH1],
            )
            .unwrap();
            let sol = solve_pose(&pose.chi_e, &sigma, br, &p).unwrap();
            let expected = Vec6::new(
                s.q[0],
                s.q[1],
                s.q[2],
                s.q[crate::IQ_PSI],
                s.q[crate::IQ_TH1],
                s.q[crate::IQ_TH2],
            );
            let mut err = sol.zeta - expected;
            for k in 3..6 {
                err[k] = wrap_angle(err[k]);
            }
            assert!(err.norm() < 1e-9, "residual {err:?}");
        }
    }

    #[test]
    fn inverse_position_examples() {
        let p_e = Vec3::new(1.0, -2.0, 3.0);
        assert_eq!(
            inverse_position(&p_e, &Mat3::identity(), &Vec3::zeros()),
            p_e
        );
        let p = p();
        let fr = arm_frames(FRAC_PI_2, FRAC_PI_2, &p);
        let p_b = inverse_position(
            &Vec3::new(0.085, 0.0, -0.1),
            &Mat3::identity(),
            &fr.p_eb_b,
        );
        assert!(p_b.norm() < 1e-12);
    }

    #[test]
    fn constant_hover_reference_settles_level() {
        let p = p();
        let chi = Vec6::new(0.085, -0.070, 0.470, 0.0, 0.0, 0.0);
        let refs = vec![chi; 300];
        let pts = ik_trajectory(&refs, 1e-3, &IkOptions::default(), &p).unwrap();
        let last = pts.last().unwrap();
        assert!(last.sigma_b.norm() < 1e-12);
        assert!((last.zeta - pts[0].zeta).norm() < 1e-12);
        assert_eq!(last.case_id, IkCase::Theta1Zero);
        assert_relative_eq!(last.zeta[2], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn level_orientation_with_violent_motion_is_unreachable() {
        // Holding the end effector level while demanding huge lateral
        // accelerations violates |r33| <= cos(theta): the attitude tilt the
        // accelerations require makes a level tool orientation infeasible.
        let p = p();
        let dt = 1e-3;
        let refs: Vec<Vec6> = (0..400)
            .map(|i| {
                let t = i as f64 * dt;
                Vec6::new(3.0 * (40.0 * t).sin(), 0.0, 0.5, 0.0, 0.0, 0.0)
            })
            .collect();
        match ik_trajectory(&refs, dt, &IkOptions::default(), &p) {
            Err(Error::UnreachableOrientation(d)) => assert!(d < -0.5),
            other => panic!(
                "expected unreachable orientation, got {:?}",
                other.map(|v| v.len())
            ),
        }
    }

    #[test]
    fn sustained_lateral_push_trips_divergence_guard() {
        // Roll the tool first (the tilt azimuth reachable from rest without a
        // yaw jump) so the orientation stays feasible, then push sideways hard
        // enough that the constraint-induced pitch crosses the (tightened)
        // divergence margin.
        let p = p();
        let dt = 1e-3;
        let quintic = |tau: f64| {
            let tau = tau.clamp(0.0, 1.0);
            tau.powi(3) * (10.0 - 15.0 * tau + 6.0 * tau * tau)
        };
        let refs: Vec<Vec6> = (0..1500)
            .map(|i| {
                let t = i as f64 * dt;
                let tilt = 0.5 * quintic(t);
                let x = if t > 1.0 {
                    2.5 * (t - 1.0) * (t - 1.0)
                } else {
                    0.0
                };
                Vec6::new(0.085 + x, -0.070, 0.470, 0.0, 0.0, tilt)
            })
            .collect();
        let opts = IkOptions {
            sigma_margin: 1.2,
            ..IkOptions::default()
        };
        match ik_trajectory(&refs, dt, &opts, &p) {
            Err(Error::IkDivergence(v)) => assert!(v > FRAC_PI_2 - 1.2),
            other => panic!("expected divergence, got {:?}", other.map(|v| v.len())),
        }
    }

    #[test]
    fn backward_differences_track_a_quintic() {
        let dt = 1e-3;
        let f = |t: f64| 1.0 + 2.0 * t + 0.5 * t.powi(3) - 0.2 * t.powi(5);
        let df = |t: f64| 2.0 + 1.5 * t * t - t.powi(4);
        let ddf = |t: f64| 3.0 * t - 4.0 * t.powi(3);
        let t = 0.7;
        let (d, dd) = backward_derivatives(f(t), f(t - dt), f(t - 2.0 * dt), dt);
        assert!((d - df(t)).abs() < 10.0 * dt * dt);
        assert!((dd - ddf(t)).abs() < 10.0 * dt);
    }

    #[test]
    fn trajectory_csv_has_reference_and_solution_columns() {
        let p = p();
        let chi = Vec6::new(0.085, -0.070, 0.470, 0.0, 0.0, 0.0);
        let refs = vec![chi; 5];
        let pts = ik_trajectory(&refs, 1e-3, &IkOptions::default(), &p).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &refs, &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("t,xe_r"));
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 15);
    }

    #[test]
    fn reference_csv_accepts_optional_header() {
        let table = "t,x,y,z,a,b,c\n0.0,1,2,3,0,0,0\n0.001,1,2,3,0,0,0\n";
        let (ts, chis) = read_reference_csv(table.as_bytes()).unwrap();
        assert_eq!(ts, vec![0.0, 0.001]);
        assert_eq!(chis[0], Vec6::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0));
        let headerless = "0.0,1,2,3,0,0,0\n";
        assert_eq!(read_reference_csv(headerless.as_bytes()).unwrap().0.len(), 1);
        assert!(read_reference_csv("0.0,1,2\n".as_bytes()).is_err());
    }
}
