//! Monte Carlo evaluation of the collision-series expansion.
//!
//! The time-dependent marginal distributions of a dilute hard-sphere gas
//! admit an expansion in the number of collisions: the term of order `k`
//! is an integral over "collision trees" — `k` adjunction times, partner
//! choices, impact directions, and partner velocities — of initial data
//! evaluated at the endpoint of a backward-in-time construction.  This
//! module samples such trees by importance sampling and evaluates the
//! terms on both sides of the kinetic limit:
//!
//! * the **Boltzmann side** transports point particles freely between
//!   adjunctions and adjoins each new partner at its progenitor's exact
//!   position (zero diameter);
//! * the **BBGKY side** gives the particles a positive diameter, adjoins
//!   each partner at contact distance, and runs the exact backward
//!   hard-sphere flow between adjunctions, so that pairs can meet again
//!   ("recollisions") and adjunctions can be blocked by the hard-core
//!   exclusion constraint.
//!
//! Both sides share one backward-construction routine; with diameter zero
//! it reduces bit-for-bit to the Boltzmann side, which is the discrete
//! form of the statement that the two expansions coincide in the scaling
//! limit.  [`recollision_statistics`] measures how quickly the recollision
//! and exclusion events lose probability as the diameter shrinks.
//!
//! All pseudo-trajectories live in unbounded space: periodic images would
//! reintroduce spurious near-returns of the free flow, while in free
//! space dispersion separates the particles and recollisions become rare
//! exactly as the diameter scaling predicts.

mod recollision;
mod series;
mod tree;

pub use recollision::{recollision_statistics, PairedComparison, RecollisionStudy};
pub use series::{
    estimate_series, read_series_records, write_series_records, OrderEstimate, SeriesConfig,
    SeriesEstimate, SeriesRecord, Side,
};
pub use tree::{
    build_pseudo_trajectory, flow_bbgky_tree, flow_boltzmann_tree, sample_tree,
    sample_tree_rooted, CollisionTree, PseudoTrajectory,
};

use crate::core::CoreError;
use crate::harddyn::HardDynError;
use crate::kinetic::KineticError;
use thiserror::Error;

/// Largest series order the estimator accepts; higher orders carry
/// importance weights whose variance grows too fast for desk-scale
/// sample counts.
pub const MAX_SERIES_ORDER: usize = 4;

/// Horizon cap for series estimation, as a fraction of the mean free
/// time: the expansion is an absolutely convergent short-time series and
/// the estimator refuses horizons where that control is lost.
pub const HORIZON_FRACTION: f64 = 0.2;

/// Errors from collision-tree sampling and evaluation.
#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Dynamics(#[from] HardDynError),
    #[error(transparent)]
    Kinetic(#[from] KineticError),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    /// A backward flow hit a pathological simultaneous contact; the
    /// sample carries no usable value and is discarded and counted.
    #[error("degenerate backward flow: {0}")]
    DegenerateSample(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Initial one-particle law evaluated pointwise in phase space.
///
/// The series endpoint is a product of this density over every particle
/// of the backward construction.
pub trait InitialData<const D: usize> {
    /// Density value at position `x`, velocity `v`.
    fn eval(&self, x: [f64; D], v: [f64; D]) -> f64;
}

impl<const D: usize, F> InitialData<D> for F
where
    F: Fn([f64; D], [f64; D]) -> f64,
{
    fn eval(&self, x: [f64; D], v: [f64; D]) -> f64 {
        self(x, v)
    }
}

/// Initial data uniform in position with a prescribed velocity law;
/// the spatial coordinate is ignored and the velocity density is taken
/// per unit volume.
#[derive(Debug, Clone)]
pub struct SpatiallyUniform<const D: usize> {
    mixture: crate::kinetic::VelocityMixture<D>,
}

impl<const D: usize> SpatiallyUniform<D> {
    pub fn new(mixture: crate::kinetic::VelocityMixture<D>) -> Self {
        Self { mixture }
    }

    pub fn mixture(&self) -> &crate::kinetic::VelocityMixture<D> {
        &self.mixture
    }
}

impl<const D: usize> InitialData<D> for SpatiallyUniform<D> {
    fn eval(&self, _x: [f64; D], v: [f64; D]) -> f64 {
        self.mixture.density(v)
    }
}

/// Surface area of the unit sphere in `D` dimensions.
pub(crate) fn sphere_surface(d: usize) -> Result<f64, HierarchyError> {
    match d {
        2 => Ok(std::f64::consts::TAU),
        3 => Ok(2.0 * std::f64::consts::TAU),
        _ => Err(HierarchyError::InvalidParam(format!(
            "dimension must be 2 or 3, got {d}"
        ))),
    }
}
