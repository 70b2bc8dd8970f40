//! Two-body classical scattering for compactly supported repulsive
//! potentials: deflection angles by turning-point quadrature with an
//! independent trajectory-integration oracle, tabulated deflection data, the
//! collision kernel `b(w, omega)` assembled from it, and a smooth-potential
//! N-body integrator on the same state types as the event-driven engine.
//!
//! Conventions used throughout: the potential profile `phi(r)` lives in units
//! of the interaction range (support `[0, 1]`, `phi(1) = 0`), and the reduced
//! energy of a pair with relative velocity `w` is `E = |w|^2 / 4` (reduced
//! mass one half for unit particle masses).

mod deflect;
mod kernel;
mod quad;
mod smooth;

pub use deflect::{deflection_angle_ode, deflection_angle_quadrature};
pub use kernel::{cross_section_from_deflection, CrossSection, DeflectionTable};
pub use smooth::{evolve_smooth, evolve_smooth_report, SmoothReport};

use crate::core::{CoreError, RadialPotential};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Deflections below this angle count as grazing by default; the assembled
/// kernel is zeroed there because the differential cross-section of a
/// compactly supported potential is unbounded in the grazing limit.
pub const DEFAULT_CHI_MIN: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum ScatteringError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(
        "no radial turning point for rho = {rho}, energy = {energy}: the head-on \
         trajectory passes over the potential barrier"
    )]
    NoTurningPoint { rho: f64, energy: f64 },
    #[error("quadrature failed to converge: {0}")]
    QuadratureFailure(String),
    #[error("trajectory integration failed to converge: {0}")]
    OdeFailure(String),
    #[error(
        "deflection not strictly decreasing in impact parameter at energy {energy} \
         (between row {row} and the next): outside the admissible convex class"
    )]
    NonMonotone { energy: f64, row: usize },
    #[error(
        "energy drifted by {drift:.3e} relative (tolerance {tolerance:.1e}) over the \
         smooth evolution; refine the time step below {dt:.3e}"
    )]
    EnergyDrift { drift: f64, tolerance: f64, dt: f64 },
    #[error("malformed table data: {0}")]
    BadTable(String),
}

/// A radial pair potential: either the singular hard core realized by the
/// event-driven engine, or the built-in smooth repulsive family
/// `phi(r) = kappa (1 - r)^p` on `r <= 1`, zero beyond.
///
/// The exponent `p >= 2` keeps the force continuous at the range boundary,
/// and the family is convex and strictly decreasing on `(0, 1)`, which is
/// what makes the deflection strictly monotone in the impact parameter (for
/// energies below the barrier `kappa`) and the assembled cross-section
/// bounded away from grazing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PotentialSpec {
    HardSphere,
    Soft { kappa: f64, p: f64 },
}

impl PotentialSpec {
    /// Builds the smooth family member `kappa (1 - r)^p`, validating
    /// `kappa > 0` and `p >= 2`.
    pub fn soft(kappa: f64, p: f64) -> Result<Self, ScatteringError> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(ScatteringError::InvalidParam(format!(
                "stiffness must be positive and finite, got {kappa}"
            )));
        }
        if !(p.is_finite() && p >= 2.0) {
            return Err(ScatteringError::InvalidParam(format!(
                "exponent must be >= 2 so the force is continuous at the range \
                 boundary, got {p}"
            )));
        }
        Ok(Self::Soft { kappa, p })
    }

    pub fn is_hard(&self) -> bool {
        matches!(self, Self::HardSphere)
    }

    /// The barrier height `phi(0)`; infinite for the hard core.
    pub fn barrier(&self) -> f64 {
        match self {
            Self::HardSphere => f64::INFINITY,
            Self::Soft { kappa, .. } => *kappa,
        }
    }
}

impl RadialPotential for PotentialSpec {
    fn value(&self, r: f64) -> f64 {
        match self {
            Self::HardSphere => 0.0,
            Self::Soft { kappa, p } => {
                if r >= 1.0 {
                    0.0
                } else {
                    kappa * (1.0 - r.max(0.0)).powf(*p)
                }
            }
        }
    }

    fn derivative(&self, r: f64) -> f64 {
        match self {
            Self::HardSphere => 0.0,
            Self::Soft { kappa, p } => {
                if r >= 1.0 {
                    0.0
                } else {
                    -kappa * p * (1.0 - r.max(0.0)).powf(p - 1.0)
                }
            }
        }
    }

    fn is_hard_core(&self) -> bool {
        self.is_hard()
    }
}

/// Deflection angle of a hard sphere of diameter `eps`: `2 arccos(rho/eps)`
/// for impact parameters inside the core, zero for a miss.
pub fn hard_sphere_deflection(rho: f64, eps: f64) -> Result<f64, ScatteringError> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(ScatteringError::InvalidParam(format!(
            "impact parameter must be nonnegative and finite, got {rho}"
        )));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(ScatteringError::InvalidParam(format!(
            "diameter must be positive and finite, got {eps}"
        )));
    }
    if rho >= eps {
        return Ok(0.0);
    }
    Ok(2.0 * (rho / eps).acos())
}
