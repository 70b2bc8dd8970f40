//! Spatially homogeneous Boltzmann equation for a dilute gas.
//!
//! Two complementary representations of the one-particle velocity
//! distribution live here, with the collision kernels of
//! [`crate::scattering`] driving both:
//!
//! * a tensor-product velocity grid holding a nonnegative density
//!   ([`DistributionGrid`]), evolved by Picard iteration of the mild form
//!   of the equation ([`picard_iterate`]) with the collision integral
//!   discretised by direct quadrature ([`collision_operator_grid`]);
//! * a weighted particle ensemble ([`ParticleEnsemble`]), evolved by a
//!   stochastic candidate/acceptance collision process ([`dsmc_run`]).
//!
//! The two evolutions approximate the same equation, so their moment
//! trajectories and distributions can be cross-checked against each other;
//! the integration tests do exactly that.  Velocity grids are
//! two-dimensional; the particle representation works in two or three
//! dimensions.
//!
//! Conventions: distributions are probability densities in velocity
//! (unit mass), particles have unit mass, and the collision kernel is
//! integrated over the half-sphere of directions with `omega . (v1 - v) >= 0`
//! — equivalently, over the full sphere with half weight, since the
//! kernels here are even in `omega` and the velocity exchange is too.

mod dsmc;
mod grid;
mod moments;
mod operator;

pub use dsmc::{dsmc_run, DsmcReport};
pub(crate) use dsmc::random_unit;
pub use grid::{DistributionGrid, VelocityGrid};
pub use moments::{
    ensemble_moments, grid_moments, read_moment_series, write_moment_series, MomentRecord,
    MomentSummary,
};
pub use operator::{
    collision_operator_grid, picard_iterate, OperatorDefect, PicardOutcome,
    DEFAULT_OPERATOR_ANGLES,
};

use crate::core::CoreError;
use crate::vec;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Unit-vector tolerance for collision directions.
const OMEGA_UNIT_TOLERANCE: f64 = 1e-12;

/// Errors from kinetic-equation solvers.
#[derive(Debug, Error)]
pub enum KineticError {
    /// Error bubbled up from state handling.
    #[error(transparent)]
    Core(#[from] CoreError),
    /// A parameter is outside its documented domain.
    #[error("invalid kinetic parameter: {0}")]
    InvalidParam(String),
    /// A distribution failed a positivity or normalization requirement.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    /// An ensemble is too small for the requested statistical operation.
    #[error("ensemble of {size} particles is too small: {required}")]
    EnsembleTooSmall { size: usize, required: String },
    /// The collision kernel is unbounded on the requested velocity domain.
    #[error("collision kernel unbounded on the grid domain: {0}")]
    UnboundedKernel(String),
    /// A numerical procedure lost its accuracy guarantees.
    #[error("numerical failure: {0}")]
    Numeric(String),
    /// File output failed.
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Applies the elastic exchange of normal velocity components along `omega`.
///
/// Returns the outgoing pair `(v', v1')` with
/// `v' = v + (omega . (v1 - v)) omega` and
/// `v1' = v1 - (omega . (v1 - v)) omega`.
/// The map conserves momentum and kinetic energy exactly up to rounding and
/// is an involution: applying it twice with the same direction restores the
/// incoming pair.
///
/// # Errors
///
/// `omega` must be a unit vector to within `1e-12`, and all components must
/// be finite.
pub fn collision_transform<const D: usize>(
    v: [f64; D],
    v1: [f64; D],
    omega: [f64; D],
) -> Result<([f64; D], [f64; D]), KineticError> {
    if !vec::is_finite(v) || !vec::is_finite(v1) || !vec::is_finite(omega) {
        return Err(KineticError::InvalidParam(
            "collision velocities and direction must be finite".into(),
        ));
    }
    let norm = vec::norm(omega);
    if (norm - 1.0).abs() > OMEGA_UNIT_TOLERANCE {
        return Err(KineticError::InvalidParam(format!(
            "collision direction has norm {norm}, more than 1e-12 away from unit length"
        )));
    }
    let transfer = vec::dot(omega, vec::sub(v1, v));
    Ok((
        vec::axpy(v, transfer, omega),
        vec::axpy(v1, -transfer, omega),
    ))
}

/// A finite mixture of isotropic Gaussian velocity distributions.
///
/// Serves as initial data for both the grid and particle solvers: it can be
/// evaluated pointwise, averaged over grid cells, and sampled exactly.
/// Each component has a weight, an inverse temperature `beta`, and a mean
/// velocity; weights are normalized to sum to one at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "[f64; D]: Serialize",
    deserialize = "[f64; D]: Deserialize<'de>"
))]
pub struct VelocityMixture<const D: usize> {
    components: Vec<MixtureComponent<D>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "[f64; D]: Serialize",
    deserialize = "[f64; D]: Deserialize<'de>"
))]
struct MixtureComponent<const D: usize> {
    weight: f64,
    beta: f64,
    mean: [f64; D],
}

impl<const D: usize> VelocityMixture<D> {
    /// Builds a mixture from `(weight, beta, mean)` triples.
    ///
    /// # Errors
    ///
    /// Weights must be positive and finite, every `beta` must be positive
    /// and finite, and means must be finite.  At least one component is
    /// required.
    pub fn new(components: &[(f64, f64, [f64; D])]) -> Result<Self, KineticError> {
        if components.is_empty() {
            return Err(KineticError::InvalidParam(
                "a velocity mixture needs at least one component".into(),
            ));
        }
        let mut total = 0.0;
        for &(weight, beta, mean) in components {
            if !(weight > 0.0) || !weight.is_finite() {
                return Err(KineticError::InvalidParam(format!(
                    "mixture weight {weight} must be positive and finite"
                )));
            }
            if !(beta > 0.0) || !beta.is_finite() {
                return Err(KineticError::InvalidParam(format!(
                    "mixture inverse temperature {beta} must be positive and finite"
                )));
            }
            if !vec::is_finite(mean) {
                return Err(KineticError::InvalidParam(
                    "mixture mean velocity must be finite".into(),
                ));
            }
            total += weight;
        }
        Ok(Self {
            components: components
                .iter()
                .map(|&(weight, beta, mean)| MixtureComponent {
                    weight: weight / total,
                    beta,
                    mean,
                })
                .collect(),
        })
    }

    /// A single Maxwellian at inverse temperature `beta`, centred at zero.
    pub fn maxwellian(beta: f64) -> Result<Self, KineticError> {
        Self::new(&[(1.0, beta, [0.0; D])])
    }

    /// An equal-weight pair of Maxwellians centred at `mean` and `-mean`.
    pub fn symmetric_pair(beta: f64, mean: [f64; D]) -> Result<Self, KineticError> {
        Self::new(&[(0.5, beta, mean), (0.5, beta, vec::scale(mean, -1.0))])
    }

    /// Evaluates the probability density at velocity `v`.
    pub fn density(&self, v: [f64; D]) -> f64 {
        let mut f = 0.0;
        for c in &self.components {
            let norm = (c.beta / (2.0 * std::f64::consts::PI)).powi(D as i32 / 2)
                * if D % 2 == 1 {
                    (c.beta / (2.0 * std::f64::consts::PI)).sqrt()
                } else {
                    1.0
                };
            let shift = vec::sub(v, c.mean);
            f += c.weight * norm * (-0.5 * c.beta * vec::norm_sq(shift)).exp();
        }
        f
    }

    /// Draws one velocity from the mixture.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> [f64; D] {
        let mut pick = rng.gen::<f64>();
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            if pick < c.weight {
                chosen = c;
                break;
            }
            pick -= c.weight;
        }
        let sigma = (1.0 / chosen.beta).sqrt();
        let mut v = chosen.mean;
        for x in &mut v {
            let gauss: f64 = StandardNormal.sample(rng);
            *x += sigma * gauss;
        }
        v
    }

    /// Largest component spread, as an inverse temperature.
    ///
    /// Useful for choosing a grid cutoff: the slowest-decaying component
    /// has standard deviation `1/sqrt(min beta)` per axis.
    pub fn min_beta(&self) -> f64 {
        self.components.iter().map(|c| c.beta).fold(f64::INFINITY, f64::min)
    }

    /// Largest mean-velocity magnitude among the components.
    pub fn max_mean_speed(&self) -> f64 {
        self.components
            .iter()
            .map(|c| vec::norm(c.mean))
            .fold(0.0, f64::max)
    }

    /// Iterates over the `(weight, beta, mean)` triples of the mixture,
    /// with weights already normalised to sum to one.
    pub fn components(&self) -> impl Iterator<Item = (f64, f64, [f64; D])> + '_ {
        self.components.iter().map(|c| (c.weight, c.beta, c.mean))
    }
}

/// A collection of velocity samples representing a distribution with equal
/// weights `1/M`.
///
/// Moment sums over the ensemble are exact sample statistics; density-level
/// estimates (such as the entropy) additionally require at least `1000`
/// particles so that nearest-neighbour statistics are meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "[f64; D]: Serialize",
    deserialize = "[f64; D]: Deserialize<'de>"
))]
pub struct ParticleEnsemble<const D: usize> {
    velocities: Vec<[f64; D]>,
}

impl<const D: usize> ParticleEnsemble<D> {
    /// Wraps a list of velocity samples.
    ///
    /// # Errors
    ///
    /// The list must be non-empty and every velocity finite.
    pub fn new(velocities: Vec<[f64; D]>) -> Result<Self, KineticError> {
        if velocities.is_empty() {
            return Err(KineticError::EnsembleTooSmall {
                size: 0,
                required: "at least one particle".into(),
            });
        }
        if let Some(bad) = velocities.iter().find(|v| !vec::is_finite(**v)) {
            return Err(KineticError::InvalidParam(format!(
                "ensemble velocity {bad:?} is not finite"
            )));
        }
        Ok(Self { velocities })
    }

    /// Draws `count` independent velocities from a mixture.
    pub fn from_mixture<R: Rng>(
        mixture: &VelocityMixture<D>,
        count: usize,
        rng: &mut R,
    ) -> Result<Self, KineticError> {
        if count == 0 {
            return Err(KineticError::EnsembleTooSmall {
                size: 0,
                required: "at least one particle".into(),
            });
        }
        Self::new((0..count).map(|_| mixture.sample(rng)).collect())
    }

    /// Number of particles.
    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    /// Whether the ensemble is empty (never true for a constructed value).
    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    /// The velocity samples.
    pub fn velocities(&self) -> &[[f64; D]] {
        &self.velocities
    }

    pub(crate) fn velocities_mut(&mut self) -> &mut [[f64; D]] {
        &mut self.velocities
    }

    /// Largest particle speed.
    pub fn max_speed(&self) -> f64 {
        self.velocities.iter().map(|v| vec::norm(*v)).fold(0.0, f64::max)
    }
}
