//! Shared geometry, scaling, and reproducibility primitives.
//!
//! Everything downstream works on the unit torus `[0,1)^d` (or in free space
//! for the series pseudo-trajectories), with unit-mass particles and a sphere
//! diameter `eps` tied to the particle number by the low-density scaling
//! `N * eps^(d-1) = 1`.  This module owns the minimum-image convention, the
//! scaling bookkeeping, total-energy evaluation, and the seeded stream-split
//! random-number state that makes every simulation in the crate replayable.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::vec;

/// Largest admissible sphere diameter: below 1/4 the closest periodic image
/// of a partner at contact is unique, so minimum-image collision geometry is
/// unambiguous.
pub const MAX_DIAMETER: f64 = 0.25;

/// Relative slack on the hard-core separation `eps`; event times are solved in
/// floating point, so executed contacts may sit a few ulps inside the sphere.
pub const CORE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("particles {i} and {j} overlap: distance {dist:.6e} < diameter {diameter:.6e}")]
    Overlap {
        i: usize,
        j: usize,
        dist: f64,
        diameter: f64,
    },
}

/// Boundary condition for particle positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    /// Unit torus `[0,1)^d` with minimum-image distances.
    Torus,
    /// Unbounded domain; used by the backward pseudo-trajectory flows.
    FreeSpace,
}

/// One particle: position and velocity in `d` dimensions.
// serde has no blanket impls for const-generic arrays, so the bounds defer
// the requirement to the concrete dimensions (2 and 3) used by callers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "[f64; D]: Serialize",
    deserialize = "[f64; D]: Deserialize<'de>"
))]
pub struct PhasePoint<const D: usize> {
    pub x: [f64; D],
    pub v: [f64; D],
}

impl<const D: usize> PhasePoint<D> {
    pub fn new(x: [f64; D], v: [f64; D]) -> Self {
        Self { x, v }
    }
}

/// Component-wise wrap of a free-space coordinate onto `[0,1)`.
#[inline]
pub fn torus_wrap<const D: usize>(x: [f64; D]) -> [f64; D] {
    let mut out = [0.0; D];
    for k in 0..D {
        let mut t = x[k] - x[k].floor();
        // `x - floor(x)` can round up to exactly 1.0 for tiny negative inputs.
        if t >= 1.0 {
            t -= 1.0;
        }
        out[k] = t;
    }
    out
}

/// Reduces an arbitrary difference vector to its minimum image on the unit
/// torus, each component in `[-1/2, 1/2)`.
///
/// Accepts components of any magnitude (e.g. a displacement extrapolated over
/// several box crossings); the reduction picks the periodic copy nearest the
/// origin, which is also the copy realizing the torus distance.
#[inline]
pub fn wrap_displacement<const D: usize>(d: [f64; D]) -> [f64; D] {
    let mut out = [0.0; D];
    for k in 0..D {
        let mut t = d[k] - d[k].floor();
        if t >= 1.0 {
            t -= 1.0;
        }
        if t >= 0.5 {
            t -= 1.0;
        }
        out[k] = t;
    }
    out
}

/// Minimum-image displacement `y - x` on the unit torus, each component in
/// `[-1/2, 1/2)`.
#[inline]
pub fn torus_displacement<const D: usize>(x: [f64; D], y: [f64; D]) -> [f64; D] {
    wrap_displacement(vec::sub(y, x))
}

/// Sphere diameter for `n` particles in dimension `d` under the low-density
/// normalization `n * eps^(d-1) = 1`.
pub fn epsilon_from_n(n: usize, d: usize) -> Result<f64, CoreError> {
    if n < 2 {
        return Err(CoreError::InvalidParam(format!(
            "need at least 2 particles, got {n}"
        )));
    }
    match d {
        2 => Ok(1.0 / n as f64),
        3 => Ok(1.0 / (n as f64).sqrt()),
        _ => Err(CoreError::InvalidParam(format!(
            "dimension must be 2 or 3, got {d}"
        ))),
    }
}

/// Inverse of [`epsilon_from_n`]: the particle number whose scaling diameter
/// is `eps`, rounded to the nearest integer.
pub fn n_from_epsilon(eps: f64, d: usize) -> Result<usize, CoreError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CoreError::InvalidParam(format!(
            "diameter must be positive and finite, got {eps}"
        )));
    }
    match d {
        2 => Ok((1.0 / eps).round() as usize),
        3 => Ok((1.0 / (eps * eps)).round() as usize),
        _ => Err(CoreError::InvalidParam(format!(
            "dimension must be 2 or 3, got {d}"
        ))),
    }
}

/// Particle number, diameter, and dimension of one simulation, with the
/// low-density product `n * eps^(d-1)` kept alongside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub d: usize,
    pub n: usize,
    pub epsilon: f64,
}

impl ScalingParams {
    /// Free choice of diameter (still capped at [`MAX_DIAMETER`]).
    pub fn new(n: usize, d: usize, epsilon: f64) -> Result<Self, CoreError> {
        if n < 2 {
            return Err(CoreError::InvalidParam(format!(
                "need at least 2 particles, got {n}"
            )));
        }
        if !(d == 2 || d == 3) {
            return Err(CoreError::InvalidParam(format!(
                "dimension must be 2 or 3, got {d}"
            )));
        }
        if !(epsilon > 0.0 && epsilon <= MAX_DIAMETER) {
            return Err(CoreError::InvalidParam(format!(
                "diameter must lie in (0, {MAX_DIAMETER}], got {epsilon}"
            )));
        }
        Ok(Self { d, n, epsilon })
    }

    /// Diameter fixed by the scaling `n * eps^(d-1) = 1`.
    pub fn boltzmann_grad(n: usize, d: usize) -> Result<Self, CoreError> {
        let epsilon = epsilon_from_n(n, d)?;
        Self::new(n, d, epsilon)
    }

    /// `n * eps^(d-1)`; equals 1 to rounding for scaling-constructed params.
    pub fn density_product(&self) -> f64 {
        self.n as f64 * self.epsilon.powi(self.d as i32 - 1)
    }

    /// Whether the low-density normalization holds to `1e-12`.
    pub fn is_boltzmann_grad(&self) -> bool {
        (self.density_product() - 1.0).abs() <= 1e-12
    }
}

/// Parameters of the Gaussian envelope `exp(mu * s - beta * E)` used to weigh
/// s-particle states; `beta` is an inverse temperature, `mu` a normalization
/// offset per particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBoundParams {
    pub beta: f64,
    pub mu: f64,
}

impl GaussianBoundParams {
    pub fn new(beta: f64, mu: f64) -> Result<Self, CoreError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(CoreError::InvalidParam(format!(
                "inverse temperature must be positive, got {beta}"
            )));
        }
        if !mu.is_finite() {
            return Err(CoreError::InvalidParam(format!(
                "normalization offset must be finite, got {mu}"
            )));
        }
        Ok(Self { beta, mu })
    }
}

/// An `N`-particle microstate together with the interaction diameter and the
/// boundary condition.
///
/// Hard-sphere operations additionally require (and maintain) the separation
/// invariant: no pair closer than `diameter * (1 - CORE_TOLERANCE)`.  Smooth
/// potentials deliberately let particles penetrate the interaction range, so
/// the constructor checks only domain membership and finiteness; use
/// [`Configuration::check_hard_core`] where the hard invariant matters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "[f64; D]: Serialize",
    deserialize = "[f64; D]: Deserialize<'de>"
))]
pub struct Configuration<const D: usize> {
    pub points: Vec<PhasePoint<D>>,
    pub diameter: f64,
    pub geometry: Geometry,
}

impl<const D: usize> Configuration<D> {
    pub fn new(
        points: Vec<PhasePoint<D>>,
        diameter: f64,
        geometry: Geometry,
    ) -> Result<Self, CoreError> {
        if !(D == 2 || D == 3) {
            return Err(CoreError::InvalidParam(format!(
                "dimension must be 2 or 3, got {D}"
            )));
        }
        if !(diameter >= 0.0 && diameter.is_finite()) {
            return Err(CoreError::InvalidParam(format!(
                "diameter must be nonnegative and finite, got {diameter}"
            )));
        }
        if geometry == Geometry::Torus && diameter > MAX_DIAMETER {
            return Err(CoreError::InvalidParam(format!(
                "torus diameter must not exceed {MAX_DIAMETER}, got {diameter}"
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !(vec::is_finite(p.x) && vec::is_finite(p.v)) {
                return Err(CoreError::InvalidParam(format!(
                    "particle {i} has non-finite phase coordinates"
                )));
            }
            if geometry == Geometry::Torus {
                for k in 0..D {
                    if !(0.0..1.0).contains(&p.x[k]) {
                        return Err(CoreError::InvalidParam(format!(
                            "particle {i} position component {k} = {} outside [0,1)",
                            p.x[k]
                        )));
                    }
                }
            }
        }
        Ok(Self {
            points,
            diameter,
            geometry,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Displacement from particle `i` to particle `j` under the configured
    /// boundary condition.
    #[inline]
    pub fn displacement(&self, i: usize, j: usize) -> [f64; D] {
        match self.geometry {
            Geometry::Torus => torus_displacement(self.points[i].x, self.points[j].x),
            Geometry::FreeSpace => vec::sub(self.points[j].x, self.points[i].x),
        }
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        vec::norm(self.displacement(i, j))
    }

    /// Smallest pair distance, or `None` for fewer than two particles.
    pub fn min_pair_distance(&self) -> Option<f64> {
        let n = self.points.len();
        if n < 2 {
            return None;
        }
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.min(self.distance(i, j));
            }
        }
        Some(best)
    }

    /// Verifies the hard-core separation invariant.
    pub fn check_hard_core(&self) -> Result<(), CoreError> {
        if self.diameter == 0.0 {
            return Ok(());
        }
        let n = self.points.len();
        let floor = self.diameter * (1.0 - CORE_TOLERANCE);
        for i in 0..n {
            for j in (i + 1)..n {
                let dist = self.distance(i, j);
                if dist < floor {
                    return Err(CoreError::Overlap {
                        i,
                        j,
                        dist,
                        diameter: self.diameter,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.points.iter().map(|p| 0.5 * vec::norm_sq(p.v)).sum()
    }

    pub fn total_momentum(&self) -> [f64; D] {
        let mut p = [0.0; D];
        for pt in &self.points {
            p = vec::add(p, pt.v);
        }
        p
    }
}

/// A radial pair interaction profile `phi(r)` in units of the interaction
/// range, i.e. evaluated at `r = |x_i - x_j| / eps` and supported on `[0, 1]`.
pub trait RadialPotential {
    /// `phi(r)`; implementations return 0 for `r >= 1`.
    fn value(&self, r: f64) -> f64;

    /// `phi'(r)`; used by force evaluation.  Implementations return 0 for
    /// `r >= 1`.
    fn derivative(&self, r: f64) -> f64;

    /// Marks the singular hard-core case, where `value` is 0 outside contact
    /// and the core is impenetrable.
    fn is_hard_core(&self) -> bool {
        false
    }
}

/// Total energy: kinetic part plus the pair sum of `phi(dist / diameter)`.
///
/// For a hard-core profile the potential part is zero away from contact and
/// overlapping pairs are an error; the same overlap check protects soft
/// profiles from evaluating inside a hard configuration's forbidden zone only
/// when the profile says so.
pub fn energy<const D: usize, P: RadialPotential>(
    cfg: &Configuration<D>,
    phi: &P,
) -> Result<f64, CoreError> {
    let mut total = cfg.kinetic_energy();
    if cfg.diameter == 0.0 {
        return Ok(total);
    }
    let n = cfg.points.len();
    let floor = cfg.diameter * (1.0 - CORE_TOLERANCE);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = cfg.distance(i, j);
            if phi.is_hard_core() {
                if dist < floor {
                    return Err(CoreError::Overlap {
                        i,
                        j,
                        dist,
                        diameter: cfg.diameter,
                    });
                }
            } else {
                total += phi.value(dist / cfg.diameter);
            }
        }
    }
    Ok(total)
}

/// Draws `n` positions uniformly on the unit torus, conditioned on every pair
/// being farther apart than `eps`, by whole-configuration rejection: if any
/// pair of a draw overlaps, the entire draw is discarded and redone.
///
/// Rejecting whole configurations (rather than redrawing single points)
/// realizes exactly the product measure conditioned on the no-overlap event,
/// which keeps the accepted points exchangeable.  Each attempt is checked
/// against `max_attempts`; exceeding it signals that the packing is too dense
/// for rejection sampling (acceptance below `1/max_attempts`).
pub fn sample_nonoverlapping_positions<const D: usize, R: Rng>(
    n: usize,
    eps: f64,
    rng: &mut R,
    max_attempts: u64,
) -> Result<Vec<[f64; D]>, CoreError> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(CoreError::InvalidParam(format!(
            "diameter must be nonnegative and finite, got {eps}"
        )));
    }
    if max_attempts == 0 {
        return Err(CoreError::InvalidParam(
            "max_attempts must be positive".into(),
        ));
    }
    let eps_sq = eps * eps;
    let mut xs: Vec<[f64; D]> = Vec::with_capacity(n);
    'attempt: for _ in 0..max_attempts {
        xs.clear();
        for _ in 0..n {
            let mut x = [0.0; D];
            for c in x.iter_mut() {
                *c = rng.gen::<f64>();
            }
            xs.push(x);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let d = torus_displacement(xs[i], xs[j]);
                if vec::norm_sq(d) <= eps_sq {
                    continue 'attempt;
                }
            }
        }
        return Ok(xs);
    }
    Err(CoreError::InvalidParam(format!(
        "no overlap-free configuration in {max_attempts} attempts \
         (n = {n}, eps = {eps}); the density is outside the rejection-sampling regime"
    )))
}

/// Seed plus stream identifier for a counter-based generator.
///
/// Every stochastic routine in the crate receives one of these and derives
/// child streams with [`RngState::substream`]; the split tree, not call
/// order, determines the random numbers, so parallel schedules cannot change
/// results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

/// 64-bit finalizer with good avalanche behavior, used to spread stream tags.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Child state for the given tag; independent of any other tag's stream.
    pub fn substream(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream: mix64(self.stream ^ mix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    /// Instantiates the generator positioned at this (seed, stream) pair.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn displacement_crosses_the_seam() {
        let d = torus_displacement([0.2, 0.5], [0.8, 0.5]);
        assert!((d[0] - (-0.4)).abs() < 1e-12, "got {}", d[0]);
        assert!(d[1].abs() < 1e-15);
    }

    #[test]
    fn displacement_range_includes_negative_half_only() {
        // Antipodal separation maps to -1/2, never +1/2.
        let d = torus_displacement([0.25], [0.75]);
        assert_eq!(d[0], -0.5);
        let d = torus_displacement([0.75], [0.25]);
        assert_eq!(d[0], -0.5);
    }

    #[test]
    fn scaling_diameter_matches_dimension() {
        assert_eq!(epsilon_from_n(100, 2).unwrap(), 0.01);
        assert!((epsilon_from_n(10_000, 3).unwrap() - 0.01).abs() < 1e-15);
        assert!(epsilon_from_n(1, 2).is_err());
        assert!(epsilon_from_n(100, 4).is_err());
    }

    #[test]
    fn scaling_round_trips_exactly() {
        for n in (2..=100).chain([1_000, 65_536, 999_983, 1_000_000]) {
            for d in [2, 3] {
                let eps = epsilon_from_n(n, d).unwrap();
                assert_eq!(n_from_epsilon(eps, d).unwrap(), n, "n={n} d={d}");
            }
        }
    }

    #[test]
    fn scaling_product_is_one_to_rounding() {
        for n in [4, 16, 100, 12_345, 1_000_000] {
            for d in [2, 3] {
                let eps = epsilon_from_n(n, d).unwrap();
                let prod = n as f64 * eps.powi(d as i32 - 1);
                assert!((prod - 1.0).abs() <= 4.0 * f64::EPSILON, "n={n} d={d}: {prod}");
            }
        }
    }

    #[test]
    fn scaling_constructor_enforces_cap() {
        assert!(ScalingParams::boltzmann_grad(100, 2).is_ok());
        // n = 2, d = 2 gives eps = 0.5 > 1/4.
        assert!(ScalingParams::boltzmann_grad(2, 2).is_err());
        let p = ScalingParams::boltzmann_grad(400, 2).unwrap();
        assert!(p.is_boltzmann_grad());
    }

    #[test]
    fn rejection_sampler_respects_the_core() {
        let mut rng = RngState::new(7).rng();
        let params = ScalingParams::boltzmann_grad(100, 2).unwrap();
        let xs =
            sample_nonoverlapping_positions::<2, _>(params.n, params.epsilon, &mut rng, 1000)
                .unwrap();
        assert_eq!(xs.len(), 100);
        let mut min = f64::INFINITY;
        for i in 0..xs.len() {
            for j in (i + 1)..xs.len() {
                min = min.min(vec::norm(torus_displacement(xs[i], xs[j])));
            }
        }
        assert!(min > params.epsilon, "min distance {min}");
        for x in xs {
            for c in x {
                assert!((0.0..1.0).contains(&c));
            }
        }
    }

    #[test]
    fn rejection_sampler_gives_up_on_dense_packings() {
        // 50 spheres of diameter 0.2 in the unit box: overlap is essentially
        // certain, so the acceptance budget must trip.
        let mut rng = RngState::new(8).rng();
        assert!(sample_nonoverlapping_positions::<2, _>(50, 0.2, &mut rng, 50).is_err());
    }

    struct Parabolic;
    impl RadialPotential for Parabolic {
        fn value(&self, r: f64) -> f64 {
            if r < 1.0 {
                (1.0 - r) * (1.0 - r)
            } else {
                0.0
            }
        }
        fn derivative(&self, r: f64) -> f64 {
            if r < 1.0 {
                -2.0 * (1.0 - r)
            } else {
                0.0
            }
        }
    }

    #[test]
    fn energy_two_body_at_half_range() {
        // Two resting particles at scaled separation 1/2: potential (1-1/2)^2.
        let cfg = Configuration::<2>::new(
            vec![
                PhasePoint::new([0.3, 0.5], [0.0, 0.0]),
                PhasePoint::new([0.35, 0.5], [0.0, 0.0]),
            ],
            0.1,
            Geometry::Torus,
        )
        .unwrap();
        let e = energy(&cfg, &Parabolic).unwrap();
        assert!((e - 0.25).abs() < 1e-12, "got {e}");
    }

    struct HardMarker;
    impl RadialPotential for HardMarker {
        fn value(&self, _r: f64) -> f64 {
            0.0
        }
        fn derivative(&self, _r: f64) -> f64 {
            0.0
        }
        fn is_hard_core(&self) -> bool {
            true
        }
    }

    #[test]
    fn energy_rejects_overlapping_hard_cores() {
        let cfg = Configuration::<2>::new(
            vec![
                PhasePoint::new([0.3, 0.5], [1.0, 0.0]),
                PhasePoint::new([0.35, 0.5], [0.0, 0.0]),
            ],
            0.1,
            Geometry::Torus,
        )
        .unwrap();
        assert!(matches!(
            energy(&cfg, &HardMarker),
            Err(CoreError::Overlap { .. })
        ));
    }

    #[test]
    fn energy_additive_over_distant_groups() {
        // Two pairs far apart: energies add.
        let mk = |x0: f64| {
            vec![
                PhasePoint::new([x0, 0.2], [0.4, -0.1]),
                PhasePoint::new([x0 + 0.05, 0.2], [-0.2, 0.3]),
            ]
        };
        let a = Configuration::<2>::new(mk(0.1), 0.1, Geometry::Torus).unwrap();
        let b = Configuration::<2>::new(mk(0.6), 0.1, Geometry::Torus).unwrap();
        let mut joint_pts = a.points.clone();
        joint_pts.extend_from_slice(&b.points);
        let joint = Configuration::<2>::new(joint_pts, 0.1, Geometry::Torus).unwrap();
        let ea = energy(&a, &Parabolic).unwrap();
        let eb = energy(&b, &Parabolic).unwrap();
        let ej = energy(&joint, &Parabolic).unwrap();
        assert!((ej - (ea + eb)).abs() < 1e-12);
    }

    #[test]
    fn rng_streams_replay_bit_exactly() {
        let state = RngState::new(42).substream(7);
        let mut a = state.rng();
        let mut b = state.rng();
        for _ in 0..1_000_000 {
            let x: f64 = a.gen();
            let y: f64 = b.gen();
            assert!(x == y);
        }
    }

    #[test]
    fn rng_substreams_differ() {
        let base = RngState::new(42);
        let mut a = base.substream(0).rng();
        let mut b = base.substream(1).rng();
        let xa: [f64; 4] = core::array::from_fn(|_| a.gen());
        let xb: [f64; 4] = core::array::from_fn(|_| b.gen());
        assert_ne!(xa, xb);
        // Nested splits are independent of sibling order.
        let c1 = base.substream(3).substream(5);
        let c2 = base.substream(3).substream(5);
        assert_eq!(c1, c2);
    }

    proptest! {
        #[test]
        fn displacement_antisymmetric(
            x in proptest::array::uniform2(0.0f64..1.0),
            y in proptest::array::uniform2(0.0f64..1.0),
        ) {
            let fwd = torus_displacement(x, y);
            let bwd = torus_displacement(y, x);
            for k in 0..2 {
                // Antisymmetric up to the convention at exactly half-box
                // separation, where both directions report -1/2.
                let s = fwd[k] + bwd[k];
                prop_assert!(s.abs() < 1e-15 || (s + 1.0).abs() < 1e-15);
            }
        }

        #[test]
        fn displacement_bounded_by_half_diagonal(
            x in proptest::array::uniform3(0.0f64..1.0),
            y in proptest::array::uniform3(0.0f64..1.0),
        ) {
            let d = torus_displacement(x, y);
            for k in 0..3 {
                prop_assert!((-0.5..0.5).contains(&d[k]));
            }
            prop_assert!(crate::vec::norm(d) <= 0.75f64.sqrt() + 1e-15);
        }

        #[test]
        fn wrap_lands_in_unit_cell(x in proptest::array::uniform2(-5.0f64..5.0)) {
            let w = torus_wrap(x);
            for k in 0..2 {
                prop_assert!((0.0..1.0).contains(&w[k]));
            }
        }
    }
}
