//! Wind disturbance, end-effector contact with a compliant surface, and
//! measurement-noise injection.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{GeneralizedForce, Mat6x8, Vec6, Vec8, IQ_X, IQ_Y};

/// Piecewise-constant random perturbation of the reference wind speed.
///
/// Every `1 / update_hz` seconds the speed multiplier is redrawn uniformly
/// from `[1 - amplitude, 1 + amplitude]`. Draws depend only on the seed and
/// the interval index, so a run can be replayed from any instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GustSpec {
    pub amplitude: f64,
    pub update_hz: f64,
}

impl Default for GustSpec {
    fn default() -> Self {
        Self {
            amplitude: 0.2,
            update_hz: 1.0,
        }
    }
}

/// Altitude-scaled wind acting on the vehicle body.
///
/// The wind speed grows linearly with altitude, `V_wz = V_w_z0 * z / z0`,
/// and the resulting pressure force is projected on the world x/y axes
/// through the wind direction angle `psi_w` and the body tilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindModel {
    /// Reference wind speed at altitude `z0` (m/s).
    pub v_w_z0: f64,
    /// Reference altitude (m).
    pub z0: f64,
    /// Wind direction angle (rad).
    pub psi_w: f64,
    /// Effective frontal area (m²).
    pub a_e1: f64,
    /// Effective side area (m²).
    pub a_e2: f64,
    pub gust: Option<GustSpec>,
}

impl Default for WindModel {
    fn default() -> Self {
        Self {
            v_w_z0: 2.0,
            z0: 1.0,
            psi_w: 0.0,
            a_e1: 0.16,
            a_e2: 0.032,
            gust: Some(GustSpec::default()),
        }
    }
}

/// Rate of wind-velocity-squared to pressure conversion (N·s²/m⁴).
const WIND_PRESSURE: f64 = 0.61;

impl WindModel {
    /// Wind speed at altitude `z` before any gust perturbation.
    pub fn speed_at(&self, z: f64) -> f64 {
        self.v_w_z0 * z / self.z0
    }

    /// Gust multiplier on `v_w_z0` at time `t`, drawn from the seeded
    /// stream; 1 when no gust is configured.
    pub fn gust_multiplier(&self, t: f64, seed: u64) -> f64 {
        match self.gust {
            None => 1.0,
            Some(g) => {
                let k = (t.max(0.0) * g.update_hz).floor() as u64;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k);
                1.0 + rng.random_range(-g.amplitude..=g.amplitude)
            }
        }
    }

    /// Copy of the model with the gust applied to `v_w_z0`.
    pub fn at_time(&self, t: f64, seed: u64) -> Self {
        Self {
            v_w_z0: self.v_w_z0 * self.gust_multiplier(t, seed),
            ..*self
        }
    }

    /// Direction-resolved pressure coefficients
    /// `[f_wx1, f_wx2, f_wy1, f_wy2]`: frontal/side area terms of the x and
    /// y force channels. The force itself scales these by `z²` and the tilt
    /// trigonometry.
    pub fn coefficients(&self) -> [f64; 4] {
        let s = WIND_PRESSURE * (self.v_w_z0 / self.z0).powi(2);
        let (sw, cw) = self.psi_w.sin_cos();
        [
            s * self.a_e1 * cw,
            s * self.a_e2 * cw,
            s * self.a_e1 * sw,
            s * self.a_e2 * sw,
        ]
    }
}

/// Generalized wind force at altitude `z` with body pitch `theta` and roll
/// `phi`. Only the world x/y force rows are nonzero:
/// `tau_wx = f_wx1 z² sin(theta) + f_wx2 z² cos(theta)` and the y row the
/// same with roll.
pub fn wind_force(z: f64, theta: f64, phi: f64, w: &WindModel) -> GeneralizedForce {
    debug_assert!(z >= 0.0, "altitude must be nonnegative");
    let [fx1, fx2, fy1, fy2] = w.coefficients();
    let z2 = z * z;
    let mut tau = Vec8::zeros();
    tau[IQ_X] = fx1 * z2 * theta.sin() + fx2 * z2 * theta.cos();
    tau[IQ_Y] = fy1 * z2 * phi.sin() + fy2 * z2 * phi.cos();
    tau
}

/// Half-space activation region on one task coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceTrigger {
    /// Index into `chi_e`.
    pub index: usize,
    /// Boundary value of that coordinate.
    pub bound: f64,
    /// Active side: `true` means `chi_e[index] <= bound`.
    pub below: bool,
}

impl Default for HalfSpaceTrigger {
    /// Contact whenever the end-effector drops to 10 cm altitude.
    fn default() -> Self {
        Self {
            index: 2,
            bound: 0.10,
            below: true,
        }
    }
}

impl HalfSpaceTrigger {
    pub fn contains(&self, chi_e: &Vec6) -> bool {
        if self.below {
            chi_e[self.index] <= self.bound
        } else {
            chi_e[self.index] >= self.bound
        }
    }
}

/// Spring-damper environment acting on the end-effector.
///
/// While the pose is inside the trigger half-space the environment pushes
/// back with `F_e = S_c (chi_e - chi_e_o) + D_c chi_e_dot`, where `chi_e_o`
/// is the pose latched at the start of the interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactModel {
    /// Diagonal of the 6x6 stiffness matrix.
    pub s_c: Vec6,
    /// Diagonal of the 6x6 damping matrix.
    pub d_c: Vec6,
    /// Contact reference pose, latched on activation.
    pub chi_e_o: Vec6,
    pub active: bool,
    pub trigger: HalfSpaceTrigger,
}

impl Default for ContactModel {
    fn default() -> Self {
        Self {
            s_c: Vec6::new(0.0, 0.0, 20.0, 0.0, 0.0, 0.0),
            d_c: Vec6::new(0.0, 0.0, 10.0, 0.0, 0.0, 0.0),
            chi_e_o: Vec6::zeros(),
            active: false,
            trigger: HalfSpaceTrigger::default(),
        }
    }
}

impl ContactModel {
    pub fn new(s_c: Vec6, d_c: Vec6, trigger: HalfSpaceTrigger) -> Self {
        Self {
            s_c,
            d_c,
            chi_e_o: Vec6::zeros(),
            active: false,
            trigger,
        }
    }

    /// Advance the activation latch: entering the trigger region stores the
    /// current pose as the contact reference, leaving it releases contact.
    pub fn update_latch(&mut self, chi_e: &Vec6) {
        let inside = self.trigger.contains(chi_e);
        if inside && !self.active {
            self.chi_e_o = *chi_e;
            self.active = true;
        } else if !inside {
            self.active = false;
        }
    }
}

/// Task wrench exerted by the environment and its pull-back onto the
/// generalized coordinates, `tau_l = Jᵀ F_e`. Zero when inactive.
pub fn contact_force(
    chi_e: &Vec6,
    chi_e_dot: &Vec6,
    c: &ContactModel,
    j: &Mat6x8,
) -> (Vec6, GeneralizedForce) {
    if !c.active {
        return (Vec6::zeros(), Vec8::zeros());
    }
    let f_e = (chi_e - c.chi_e_o).component_mul(&c.s_c) + chi_e_dot.component_mul(&c.d_c);
    (f_e, j.transpose() * f_e)
}

/// Additive Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: f64,
    pub sd: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            mean: 1e-3,
            sd: 5e-3,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    /// Fresh generator for this spec's seed.
    pub fn stream(&self) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Signal plus i.i.d. `N(mean, sd²)` noise per element, drawn in element
/// order from the supplied stream.
pub fn add_noise<const N: usize>(
    signal: &nalgebra::SVector<f64, N>,
    spec: &NoiseSpec,
    rng: &mut impl Rng,
) -> nalgebra::SVector<f64, N> {
    let dist = Normal::new(spec.mean, spec.sd).expect("noise sd must be nonnegative");
    signal.map(|x| x + dist.sample(rng))
}
