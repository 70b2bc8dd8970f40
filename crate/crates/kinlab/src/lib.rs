//! A numerical laboratory for dilute gases of elastically colliding spheres.
//!
//! The crate follows one gas from three directions and cross-checks them:
//!
//! * [`harddyn`] — exact event-driven dynamics of `N` hard spheres on the
//!   unit torus, plus smooth-potential dynamics in [`scattering`];
//! * [`kinetic`] — the homogeneous Boltzmann equation for the one-particle
//!   velocity distribution, solved on a velocity grid (Picard iteration of
//!   the mild form) and by direct simulation Monte Carlo;
//! * [`hierarchy`] — the collision-series expansion whose terms are averages
//!   over backward pseudo-trajectories, with and without a positive sphere
//!   diameter, which connects the other two levels term by term.
//!
//! [`ensemble`] closes the loop empirically: it generates many microscopic
//! replicas under the low-density scaling `N * eps^(d-1) = 1`, estimates
//! one-particle marginals, and measures their distance to the kinetic
//! solution as the scaling is refined.  [`core`] holds the shared geometry
//! and the seeded, stream-split random-number plumbing that makes every run
//! reproducible bit for bit.

pub mod core;
pub mod ensemble;
pub mod harddyn;
pub mod hierarchy;
pub mod kinetic;
pub mod scattering;
pub mod stats;
pub mod vec;
