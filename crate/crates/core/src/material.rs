//! Non-linear softening constitutive law for bond-based peridynamics.
//!
//! A bond carries force `f = c (1 - d) s` where `s` is the bond stretch and
//! `d` is a softening parameter that grows from 0 at the elastic limit `s0`
//! to 1 at the critical stretch `sc`. The softening branch is an
//! exponentially decaying curve with a linear term that forces intersection
//! with the horizontal axis at `sc`, so the energy consumed between `s0` and
//! `sc` has a closed form. Integrating that bond energy over the half-space
//! bond family yields closed forms for the fracture energy `G_F`, which are
//! inverted here to obtain `sc` from measured material data.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaterialError {
    #[error("invalid softening law: {0}")]
    InvalidLaw(String),
    #[error("bond stiffness requires {0}")]
    InvalidStiffnessInput(String),
    #[error("elastic energy exceeds fracture energy (G_F = {gf} gives s_c <= s0 = {s0})")]
    FractureEnergyTooSmall { gf: f64, s0: f64 },
}

/// Problem type selecting the bond stiffness constant. Poisson's ratio is
/// fixed by the bond-based theory: 1/3 in plane stress, 1/4 in plane strain
/// and 3D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ProblemKind {
    PlaneStress { thickness: f64 },
    PlaneStrain { thickness: f64 },
    ThreeD,
}

/// Per-bond constitutive parameter bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SofteningLaw {
    /// Undamaged bond stiffness.
    pub c: f64,
    /// Linear-elastic stretch limit.
    pub s0: f64,
    /// Critical stretch at which the bond carries zero force.
    pub sc: f64,
    /// Rate of exponential decay of the softening branch.
    pub k: f64,
    /// Position of the transition from exponential to linear decay.
    pub alpha: f64,
}

impl SofteningLaw {
    pub fn new(c: f64, s0: f64, sc: f64, k: f64, alpha: f64) -> Result<Self, MaterialError> {
        if !(c > 0.0) {
            return Err(MaterialError::InvalidLaw(format!("c = {c} must be > 0")));
        }
        if !(s0 > 0.0 && sc > s0) {
            return Err(MaterialError::InvalidLaw(format!(
                "need 0 < s0 < sc, got s0 = {s0}, sc = {sc}"
            )));
        }
        if !(k > 0.0) {
            return Err(MaterialError::InvalidLaw(format!("k = {k} must be > 0")));
        }
        if !(alpha >= 0.0) {
            return Err(MaterialError::InvalidLaw(format!("alpha = {alpha} must be >= 0")));
        }
        Ok(Self { c, s0, sc, k, alpha })
    }
}

/// Bond stiffness constant for the given problem type.
///
/// 3D: `12E / (pi delta^4)`, plane stress: `9E / (pi t delta^3)`,
/// plane strain: `48E / (5 pi t delta^3)`.
pub fn bond_stiffness(e: f64, delta: f64, kind: ProblemKind) -> Result<f64, MaterialError> {
    if !(e > 0.0) {
        return Err(MaterialError::InvalidStiffnessInput(format!("E > 0, got {e}")));
    }
    if !(delta > 0.0) {
        return Err(MaterialError::InvalidStiffnessInput(format!("delta > 0, got {delta}")));
    }
    let thickness = match kind {
        ProblemKind::PlaneStress { thickness } | ProblemKind::PlaneStrain { thickness } => {
            if !(thickness > 0.0) {
                return Err(MaterialError::InvalidStiffnessInput(format!(
                    "thickness > 0 in 2D, got {thickness}"
                )));
            }
            thickness
        }
        ProblemKind::ThreeD => 0.0,
    };
    Ok(match kind {
        ProblemKind::ThreeD => 12.0 * e / (std::f64::consts::PI * delta.powi(4)),
        ProblemKind::PlaneStress { .. } => {
            9.0 * e / (std::f64::consts::PI * thickness * delta.powi(3))
        }
        ProblemKind::PlaneStrain { .. } => {
            48.0 * e / (5.0 * std::f64::consts::PI * thickness * delta.powi(3))
        }
    })
}

/// Dimensionless softening-area factor shared by the bond energy and the
/// fracture-energy closed forms:
/// `S(k, alpha) = (1/k - 1/(e^k - 1) + alpha/2) / (1 + alpha)`.
///
/// This is the integral of the normalised softening force over the softening
/// window, written in a form that stays accurate for both small and large `k`.
pub fn softening_shape_factor(k: f64, alpha: f64) -> f64 {
    // exp_m1 keeps 1/(e^k - 1) accurate for small k; for k > ~700 the term
    // underflows to 0, which is the correct limit.
    let inv_em1 = if k > 700.0 { 0.0 } else { 1.0 / k.exp_m1() };
    (1.0 / k - inv_em1 + 0.5 * alpha) / (1.0 + alpha)
}

/// Softening parameter `d(s)` clamped to [0, 1] outside the softening window.
pub fn damage(s: f64, law: &SofteningLaw) -> f64 {
    if s <= law.s0 {
        return 0.0;
    }
    if s >= law.sc {
        return 1.0;
    }
    let t = (s - law.s0) / (law.sc - law.s0);
    let decay = (-law.k * t).exp_m1() / (-law.k).exp_m1(); // (1 - e^{-kt}) / (1 - e^{-k})
    let bracket = 1.0 - decay + law.alpha * (1.0 - t);
    1.0 - (law.s0 / s) * bracket / (1.0 + law.alpha)
}

/// Scalar bond force. Tensile bonds soften; compressive bonds stay
/// linear-elastic with the undamaged stiffness.
pub fn bond_force_scalar(s: f64, law: &SofteningLaw) -> f64 {
    if s <= 0.0 {
        law.c * s
    } else {
        law.c * (1.0 - damage(s, law)) * s
    }
}

/// Energy required to break a bond of reference length `xi`: the closed form
/// of `integral_{s0}^{sc} f xi ds`.
pub fn bond_energy(law: &SofteningLaw, xi: f64) -> f64 {
    law.c * law.s0 * xi * (law.sc - law.s0) * softening_shape_factor(law.k, law.alpha)
}

/// Fracture energy implied by a softening law: the bond energy integrated
/// over all bonds crossing a unit fracture surface.
pub fn fracture_energy(law: &SofteningLaw, delta: f64, kind: ProblemKind) -> f64 {
    let s = softening_shape_factor(law.k, law.alpha);
    let span = law.sc - law.s0;
    match kind {
        ProblemKind::ThreeD => {
            std::f64::consts::PI * law.c * law.s0 * delta.powi(5) * span * s / 5.0
        }
        ProblemKind::PlaneStress { thickness } | ProblemKind::PlaneStrain { thickness } => {
            thickness * law.c * law.s0 * delta.powi(4) * span * s / 2.0
        }
    }
}

/// Critical stretch from the fracture energy, inverting [`fracture_energy`].
#[allow(clippy::too_many_arguments)]
pub fn critical_stretch(
    gf: f64,
    e: f64,
    delta: f64,
    s0: f64,
    k: f64,
    alpha: f64,
    kind: ProblemKind,
) -> Result<f64, MaterialError> {
    if !(gf > 0.0) {
        return Err(MaterialError::FractureEnergyTooSmall { gf, s0 });
    }
    if !(s0 > 0.0) {
        return Err(MaterialError::InvalidLaw(format!("s0 = {s0} must be > 0")));
    }
    let c = bond_stiffness(e, delta, kind)?;
    let shape = softening_shape_factor(k, alpha);
    let sc = match kind {
        ProblemKind::ThreeD => {
            s0 + 5.0 * gf / (std::f64::consts::PI * c * s0 * delta.powi(5) * shape)
        }
        ProblemKind::PlaneStress { thickness } | ProblemKind::PlaneStrain { thickness } => {
            s0 + 2.0 * gf / (thickness * c * s0 * delta.powi(4) * shape)
        }
    };
    if !(sc > s0) || !sc.is_finite() {
        return Err(MaterialError::FractureEnergyTooSmall { gf, s0 });
    }
    Ok(sc)
}
