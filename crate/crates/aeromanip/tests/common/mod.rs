//! Test oracles assembled independently of the library internals.
//!
//! The dynamics oracle builds the mass matrix, gravity vector and Christoffel
//! Coriolis matrix from first principles: hand-built frame transforms, kinetic
//! and potential energies of the four rigid bodies, and Richardson-extrapolated
//! central differences. It shares only the parameter struct and vector aliases
//! with the library, never its kinematics or dynamics routines.

#![allow(dead_code)]

use aeromanip::model::RobotParams;
use aeromanip::{GeneralizedState, Mat3, Mat8, Vec3, Vec8};
use nalgebra::{Matrix4, Vector4};
use rand::Rng;

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn dh(theta: f64, d: f64, a: f64, alpha: f64) -> Matrix4<f64> {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    Matrix4::new(
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

/// World transforms of the body frame and the three link frames.
fn frames(q: &Vec8, p: &RobotParams) -> [Matrix4<f64>; 4] {
    let r_b = rot_z(q[3]) * rot_y(q[4]) * rot_x(q[5]);
    let mut t_wb = Matrix4::identity();
    t_wb.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_b);
    t_wb.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&Vec3::new(q[0], q[1], q[2]));
    let half_pi = std::f64::consts::FRAC_PI_2;
    let t_w0 = t_wb * dh(-half_pi, -p.l0, 0.0, -half_pi);
    let t_w1 = t_w0 * dh(q[6], 0.0, p.l1, half_pi);
    let t_w2 = t_w1 * dh(q[7], 0.0, p.l2, 0.0);
    [t_wb, t_w0, t_w1, t_w2]
}

/// World positions of the four centers of mass (body, bracket, link 1, link 2).
fn com_positions(q: &Vec8, p: &RobotParams) -> [Vec3; 4] {
    let f = frames(q, p);
    let local = [
        Vector4::new(0.0, 0.0, 0.0, 1.0),
        Vector4::new(0.0, -p.l0 / 2.0, 0.0, 1.0),
        Vector4::new(-p.l1 / 2.0, 0.0, 0.0, 1.0),
        Vector4::new(-(p.l2 - p.d_cg2), 0.0, 0.0, 1.0),
    ];
    let mut out = [Vec3::zeros(); 4];
    for i in 0..4 {
        let h = f[i] * local[i];
        out[i] = Vec3::new(h[0], h[1], h[2]);
    }
    out
}

fn body_masses(p: &RobotParams) -> [f64; 4] {
    [p.m, p.m0, p.m1, p.m2]
}

/// Center-of-mass inertia tensors in the frame each body rotates with.
fn body_inertias(p: &RobotParams) -> [Mat3; 4] {
    [
        Mat3::from_diagonal(&Vec3::new(p.ix, p.iy, p.iz)),
        Mat3::zeros(),
        Mat3::from_diagonal(&Vec3::new(0.0, p.i1, p.i1)),
        Mat3::from_diagonal(&Vec3::new(0.0, p.i2, p.i2)),
    ]
}

fn unskew(w: &Mat3) -> Vec3 {
    Vec3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)])
}

const FD_H: f64 = 1e-3;

/// Richardson-extrapolated central difference of a vector function along q_k.
fn diff_vec3(f: &dyn Fn(&Vec8) -> Vec3, q: &Vec8, k: usize, h: f64) -> Vec3 {
    let eval = |step: f64| {
        let mut qp = *q;
        qp[k] += step;
        let mut qm = *q;
        qm[k] -= step;
        (f(&qp) - f(&qm)) / (2.0 * step)
    };
    (4.0 * eval(h / 2.0) - eval(h)) / 3.0
}

fn diff_mat3(f: &dyn Fn(&Vec8) -> Mat3, q: &Vec8, k: usize, h: f64) -> Mat3 {
    let eval = |step: f64| {
        let mut qp = *q;
        qp[k] += step;
        let mut qm = *q;
        qm[k] -= step;
        (f(&qp) - f(&qm)) / (2.0 * step)
    };
    (4.0 * eval(h / 2.0) - eval(h)) / 3.0
}

fn diff_scalar(f: &dyn Fn(&Vec8) -> f64, q: &Vec8, k: usize, h: f64) -> f64 {
    let eval = |step: f64| {
        let mut qp = *q;
        qp[k] += step;
        let mut qm = *q;
        qm[k] -= step;
        (f(&qp) - f(&qm)) / (2.0 * step)
    };
    (4.0 * eval(h / 2.0) - eval(h)) / 3.0
}

fn diff_mat8(f: &dyn Fn(&Vec8) -> Mat8, q: &Vec8, k: usize, h: f64) -> Mat8 {
    let eval = |step: f64| {
        let mut qp = *q;
        qp[k] += step;
        let mut qm = *q;
        qm[k] -= step;
        (f(&qp) - f(&qm)) / (2.0 * step)
    };
    (4.0 * eval(h / 2.0) - eval(h)) / 3.0
}

/// Mass matrix from the kinetic energy of the four bodies.
pub fn oracle_mass_matrix(q: &Vec8, p: &RobotParams) -> Mat8 {
    let masses = body_masses(p);
    let inertias = body_inertias(p);
    let mut m = Mat8::zeros();
    for b in 0..4 {
        let pos = |qq: &Vec8| com_positions(qq, p)[b];
        let rot = |qq: &Vec8| {
            let t = frames(qq, p)[b];
            t.fixed_view::<3, 3>(0, 0).into_owned()
        };
        let r0 = rot(q);
        let mut jv = nalgebra::SMatrix::<f64, 3, 8>::zeros();
        let mut jw = nalgebra::SMatrix::<f64, 3, 8>::zeros();
        for k in 0..8 {
            jv.set_column(k, &diff_vec3(&pos, q, k, FD_H));
            let dr = diff_mat3(&rot, q, k, FD_H);
            jw.set_column(k, &unskew(&(r0.transpose() * dr)));
        }
        m += masses[b] * jv.transpose() * jv + jw.transpose() * inertias[b] * jw;
    }
    m
}

/// Gravitational potential of the four bodies.
pub fn oracle_potential(q: &Vec8, p: &RobotParams) -> f64 {
    let masses = body_masses(p);
    let coms = com_positions(q, p);
    let mut v = 0.0;
    for b in 0..4 {
        v += masses[b] * p.g_r * coms[b][2];
    }
    v
}

pub fn oracle_gravity(q: &Vec8, p: &RobotParams) -> Vec8 {
    let pot = |qq: &Vec8| oracle_potential(qq, p);
    let mut g = Vec8::zeros();
    for k in 0..8 {
        g[k] = diff_scalar(&pot, q, k, FD_H);
    }
    g
}

/// Christoffel Coriolis matrix for an arbitrary mass-matrix function.
pub fn christoffel_matrix(mfun: &dyn Fn(&Vec8) -> Mat8, q: &Vec8, qd: &Vec8) -> Mat8 {
    let mut dm = [Mat8::zeros(); 8];
    for k in 0..8 {
        dm[k] = diff_mat8(mfun, q, k, FD_H);
    }
    let mut c = Mat8::zeros();
    for i in 0..8 {
        for j in 0..8 {
            let mut cij = 0.0;
            for k in 0..8 {
                cij += 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qd[k];
            }
            c[(i, j)] = cij;
        }
    }
    c
}

/// Mass-matrix rate along the flow q̇, for the skew-symmetry property.
pub fn mdot_along(mfun: &dyn Fn(&Vec8) -> Mat8, q: &Vec8, qd: &Vec8) -> Mat8 {
    let eval = |step: f64| (mfun(&(q + qd * step)) - mfun(&(q - qd * step))) / (2.0 * step);
    let h = FD_H / (1.0 + qd.norm());
    (4.0 * eval(h / 2.0) - eval(h)) / 3.0
}

pub fn oracle_coriolis_matrix(q: &Vec8, qd: &Vec8, p: &RobotParams) -> Mat8 {
    christoffel_matrix(&|qq: &Vec8| oracle_mass_matrix(qq, p), q, qd)
}

/// Full inverse dynamics M q̈ + C q̇ + G plus viscous joint friction.
pub fn oracle_inverse_dynamics(q: &Vec8, qd: &Vec8, qdd: &Vec8, p: &RobotParams) -> Vec8 {
    let m = oracle_mass_matrix(q, p);
    let c = oracle_coriolis_matrix(q, qd, p);
    let g = oracle_gravity(q, p);
    let mut tau = m * qdd + c * qd + g;
    tau[6] += p.b1 * qd[6];
    tau[7] += p.b2 * qd[7];
    tau
}

/// Random state with the pitch kept away from the Euler-rate singularity.
pub fn random_state(rng: &mut impl Rng) -> GeneralizedState {
    let mut s = GeneralizedState::zero();
    let ranges: [f64; 8] = [2.0, 2.0, 2.0, 2.5, 1.2, 1.2, 2.5, 2.5];
    for k in 0..8 {
        s.q[k] = rng.random_range(-ranges[k]..ranges[k]);
        s.qd[k] = rng.random_range(-2.0..2.0);
        s.qdd[k] = rng.random_range(-5.0..5.0);
    }
    s
}
