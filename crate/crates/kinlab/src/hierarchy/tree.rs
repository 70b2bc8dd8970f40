//! Collision trees, their sampling law, and backward evaluation.

use super::{sphere_surface, HierarchyError, InitialData};
use crate::core::{Configuration, Geometry, PhasePoint};
use crate::harddyn::{evolve_hard, HardDynError};
use crate::kinetic::{collision_transform, random_unit, VelocityMixture};
use crate::vec;
use rand::Rng;

/// Unit-norm slack accepted for stored adjunction directions.
const DIRECTION_TOLERANCE: f64 = 1e-12;

/// One sampled term of the collision series: the discrete data that,
/// together with root positions, determines a backward construction.
///
/// A tree over `s` root particles and `k` adjunctions stores strictly
/// decreasing adjunction times inside `(0, horizon)`, and for each
/// adjunction the progenitor index, the contact direction, the sampled
/// (pre-scattering) partner velocity, and the branch sign: `+1` when the
/// contact direction makes the partner outgoing relative to its
/// progenitor — the pair is then rotated to its pre-collisional
/// velocities — and `-1` otherwise.  The importance weight collects the
/// time-simplex volume and, per adjunction, the progenitor count, the
/// sphere surface, and the collision-kernel factor divided by the
/// proposal density of the partner velocity.
#[derive(Debug, Clone)]
pub struct CollisionTree<const D: usize> {
    roots: usize,
    horizon: f64,
    root_velocities: Vec<[f64; D]>,
    times: Vec<f64>,
    progenitors: Vec<usize>,
    directions: Vec<[f64; D]>,
    partner_velocities: Vec<[f64; D]>,
    signs: Vec<i8>,
    weight: f64,
}

impl<const D: usize> CollisionTree<D> {
    /// Validates and assembles a tree from explicit data.
    ///
    /// # Errors
    ///
    /// Times must be strictly decreasing inside `(0, horizon)`; each
    /// progenitor index must refer to a particle that exists at its
    /// adjunction; directions must be unit vectors; signs must be `+-1`;
    /// the weight must be finite and positive; all velocities finite.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: f64,
        root_velocities: Vec<[f64; D]>,
        times: Vec<f64>,
        progenitors: Vec<usize>,
        directions: Vec<[f64; D]>,
        partner_velocities: Vec<[f64; D]>,
        signs: Vec<i8>,
        weight: f64,
    ) -> Result<Self, HierarchyError> {
        let roots = root_velocities.len();
        if roots == 0 {
            return Err(HierarchyError::InvalidParam(
                "a tree needs at least one root particle".into(),
            ));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(HierarchyError::InvalidParam(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        let k = times.len();
        if progenitors.len() != k
            || directions.len() != k
            || partner_velocities.len() != k
            || signs.len() != k
        {
            return Err(HierarchyError::InvalidParam(
                "adjunction field lengths disagree".into(),
            ));
        }
        let mut previous = horizon;
        for (j, &t) in times.iter().enumerate() {
            if !(t > 0.0 && t < previous) {
                return Err(HierarchyError::InvalidParam(format!(
                    "adjunction time {j} = {t} does not lie strictly between 0 and {previous}"
                )));
            }
            previous = t;
        }
        for (j, &p) in progenitors.iter().enumerate() {
            if p >= roots + j {
                return Err(HierarchyError::InvalidParam(format!(
                    "progenitor index {p} out of range for adjunction {j} ({} particles)",
                    roots + j
                )));
            }
        }
        for (j, omega) in directions.iter().enumerate() {
            if !vec::is_finite(*omega) || (vec::norm(*omega) - 1.0).abs() > DIRECTION_TOLERANCE {
                return Err(HierarchyError::InvalidParam(format!(
                    "direction {j} is not a unit vector"
                )));
            }
        }
        if root_velocities.iter().any(|v| !vec::is_finite(*v))
            || partner_velocities.iter().any(|v| !vec::is_finite(*v))
        {
            return Err(HierarchyError::InvalidParam(
                "velocities must be finite".into(),
            ));
        }
        if signs.iter().any(|s| *s != 1 && *s != -1) {
            return Err(HierarchyError::InvalidParam(
                "branch signs must be +1 or -1".into(),
            ));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(HierarchyError::InvalidParam(format!(
                "importance weight must be positive and finite, got {weight}"
            )));
        }
        Ok(Self {
            roots,
            horizon,
            root_velocities,
            times,
            progenitors,
            directions,
            partner_velocities,
            signs,
            weight,
        })
    }

    /// Number of adjunctions `k`.
    pub fn order(&self) -> usize {
        self.times.len()
    }

    /// Number of root particles `s`.
    pub fn roots(&self) -> usize {
        self.roots
    }

    /// Evaluation time `t`; the backward construction runs from here to 0.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Root velocities fixed at sampling time.
    pub fn root_velocities(&self) -> &[[f64; D]] {
        &self.root_velocities
    }

    /// Strictly decreasing adjunction times.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Progenitor index per adjunction (into the particle list as it
    /// exists at that adjunction).
    pub fn progenitors(&self) -> &[usize] {
        &self.progenitors
    }

    /// Unit contact direction per adjunction.
    pub fn directions(&self) -> &[[f64; D]] {
        &self.directions
    }

    /// Sampled partner velocity per adjunction, before any scattering.
    pub fn partner_velocities(&self) -> &[[f64; D]] {
        &self.partner_velocities
    }

    /// Branch sign per adjunction.
    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    /// Product of the branch signs, as `+-1.0`.
    pub fn sign_product(&self) -> f64 {
        if self.signs.iter().filter(|s| **s < 0).count() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Importance weight (always positive; signs are kept separate).
    pub fn weight(&self) -> f64 {
        self.weight
    }
}

/// Samples a tree over a single root particle.  See [`sample_tree_rooted`].
pub fn sample_tree<const D: usize, R: Rng>(
    order: usize,
    horizon: f64,
    proposal_beta: f64,
    root_velocity: [f64; D],
    rng: &mut R,
) -> Result<CollisionTree<D>, HierarchyError> {
    sample_tree_rooted(&[root_velocity], order, horizon, proposal_beta, rng)
}

/// Samples a collision tree of the given order by importance sampling.
///
/// Adjunction times are sorted uniforms on `(0, horizon)` (contributing
/// the simplex volume `horizon^k / k!` to the weight); progenitors are
/// uniform over the particles existing at each adjunction; contact
/// directions are uniform on the sphere; partner velocities are drawn
/// from a centred Gaussian at inverse temperature `proposal_beta`.  The
/// collision-kernel factor `|omega . (v_partner - v_progenitor)|` over
/// the proposal density, the progenitor count, and the sphere surface
/// are folded into the weight; the branch sign is the sign of that dot
/// product, and on `+` branches the sampler's velocity bookkeeping
/// applies the elastic pre-collisional rotation so that later
/// adjunctions see the velocities the backward flow will produce.
///
/// Sampling is rejection-free: every draw yields a valid tree.
///
/// # Errors
///
/// Parameters must be finite, `horizon` and `proposal_beta` positive,
/// root velocities finite, and the dimension 2 or 3.
pub fn sample_tree_rooted<const D: usize, R: Rng>(
    root_velocities: &[[f64; D]],
    order: usize,
    horizon: f64,
    proposal_beta: f64,
    rng: &mut R,
) -> Result<CollisionTree<D>, HierarchyError> {
    let surface = sphere_surface(D)?;
    if root_velocities.is_empty() {
        return Err(HierarchyError::InvalidParam(
            "at least one root velocity is required".into(),
        ));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(HierarchyError::InvalidParam(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    let proposal = VelocityMixture::<D>::maxwellian(proposal_beta)?;

    // Sorted uniforms, strictly ordered and interior; ties and endpoint
    // hits have probability zero and are redrawn.
    let times = loop {
        let mut draw: Vec<f64> = (0..order).map(|_| rng.gen::<f64>() * horizon).collect();
        draw.sort_by(|a, b| b.partial_cmp(a).expect("uniform draws are finite"));
        let interior = draw.iter().all(|t| *t > 0.0 && *t < horizon);
        let strict = draw.windows(2).all(|w| w[0] > w[1]);
        if interior && strict {
            break draw;
        }
    };

    let mut velocities = root_velocities.to_vec();
    let mut weight = 1.0;
    for j in 1..=order {
        weight *= horizon / j as f64;
    }

    let mut progenitors = Vec::with_capacity(order);
    let mut directions = Vec::with_capacity(order);
    let mut partner_velocities = Vec::with_capacity(order);
    let mut signs = Vec::with_capacity(order);
    for _ in 0..order {
        let prog = rng.gen_range(0..velocities.len());
        let omega: [f64; D] = random_unit(rng);
        let (partner, dot) = loop {
            let candidate = proposal.sample(rng);
            let dot = vec::dot(omega, vec::sub(candidate, velocities[prog]));
            if dot != 0.0 {
                break (candidate, dot);
            }
        };
        weight *= velocities.len() as f64 * surface * dot.abs() / proposal.density(partner);
        if dot > 0.0 {
            signs.push(1);
            let (v_prog, v_new) = collision_transform(velocities[prog], partner, omega)?;
            velocities[prog] = v_prog;
            velocities.push(v_new);
        } else {
            signs.push(-1);
            velocities.push(partner);
        }
        progenitors.push(prog);
        directions.push(omega);
        partner_velocities.push(partner);
    }

    CollisionTree::new(
        horizon,
        root_velocities.to_vec(),
        times,
        progenitors,
        directions,
        partner_velocities,
        signs,
        weight,
    )
}

/// Endpoint of a backward construction: the particle states at time zero
/// together with what happened on the way.
///
/// With diameter zero both flags are false by construction: point
/// particles in free space never meet, so each pair interacts at most
/// once, at its adjunction.  When the exclusion flag is set the
/// construction stopped at the violating adjunction and `states` holds
/// the particles as of that moment; the associated series term is zero.
#[derive(Debug, Clone)]
pub struct PseudoTrajectory<const D: usize> {
    diameter: f64,
    states: Vec<PhasePoint<D>>,
    recollision: bool,
    exclusion: bool,
}

impl<const D: usize> PseudoTrajectory<D> {
    /// Sphere diameter used in the construction.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Phase points at time zero (or at the violating adjunction when the
    /// exclusion flag is set).
    pub fn states(&self) -> &[PhasePoint<D>] {
        &self.states
    }

    /// Whether any pair met at contact distance away from an adjunction
    /// instant.
    pub fn recollision(&self) -> bool {
        self.recollision
    }

    /// Whether an adjunction tried to place a partner within the contact
    /// distance of a particle other than its progenitor.
    pub fn exclusion(&self) -> bool {
        self.exclusion
    }
}

/// Runs one backward segment of length `span`, in place.
///
/// The backward flow is the time reversal of the forward hard-sphere
/// dynamics in unbounded space: velocities are negated, the event-driven
/// engine runs forward for `span`, and velocities are negated back.  Any
/// executed collision is a recollision of the construction.  Diameter
/// zero makes this exact free streaming with no events.
fn backward_segment<const D: usize>(
    points: &mut [PhasePoint<D>],
    diameter: f64,
    span: f64,
    recollision: &mut bool,
) -> Result<(), HierarchyError> {
    if span == 0.0 {
        return Ok(());
    }
    let reversed: Vec<PhasePoint<D>> = points
        .iter()
        .map(|p| PhasePoint::new(p.x, vec::scale(p.v, -1.0)))
        .collect();
    let cfg = Configuration::new(reversed, diameter, Geometry::FreeSpace)?;
    let (end, log) = evolve_hard(&cfg, span).map_err(|e| match e {
        HardDynError::TripleContact { time, a, b, c } => HierarchyError::DegenerateSample(format!(
            "simultaneous contact of particles {a}, {b}, {c} at backward time {time}"
        )),
        other => HierarchyError::Dynamics(other),
    })?;
    *recollision |= !log.is_empty();
    for (p, q) in points.iter_mut().zip(end.points) {
        *p = PhasePoint::new(q.x, vec::scale(q.v, -1.0));
    }
    Ok(())
}

/// Runs the backward construction encoded by a tree.
///
/// Starting from the root phase points at the horizon, the particles flow
/// backward between adjunction times; at each adjunction the partner is
/// placed at `diameter * omega` from its progenitor (at the progenitor's
/// exact position when the diameter is zero), the hard-core exclusion
/// against all other particles is checked, and on `+` branches the
/// progenitor/partner pair is rotated to its pre-collisional velocities.
///
/// # Errors
///
/// `root_positions` must match the tree's root count; the diameter must
/// be nonnegative and finite.  A pathological simultaneous contact in a
/// backward segment surfaces as [`HierarchyError::DegenerateSample`].
pub fn build_pseudo_trajectory<const D: usize>(
    tree: &CollisionTree<D>,
    diameter: f64,
    root_positions: &[[f64; D]],
) -> Result<PseudoTrajectory<D>, HierarchyError> {
    if root_positions.len() != tree.roots() {
        return Err(HierarchyError::InvalidParam(format!(
            "{} root positions for a tree with {} roots",
            root_positions.len(),
            tree.roots()
        )));
    }
    if !(diameter >= 0.0 && diameter.is_finite()) {
        return Err(HierarchyError::InvalidParam(format!(
            "diameter must be nonnegative and finite, got {diameter}"
        )));
    }
    if root_positions.iter().any(|x| !vec::is_finite(*x)) {
        return Err(HierarchyError::InvalidParam(
            "root positions must be finite".into(),
        ));
    }

    let mut points: Vec<PhasePoint<D>> = root_positions
        .iter()
        .zip(tree.root_velocities())
        .map(|(x, v)| PhasePoint::new(*x, *v))
        .collect();
    let mut now = tree.horizon();
    let mut recollision = false;

    for j in 0..tree.order() {
        let target = tree.times()[j];
        backward_segment(&mut points, diameter, now - target, &mut recollision)?;
        now = target;

        let prog = tree.progenitors()[j];
        let omega = tree.directions()[j];
        let partner = tree.partner_velocities()[j];
        let x_new = vec::axpy(points[prog].x, diameter, omega);
        if diameter > 0.0 {
            let blocked = points
                .iter()
                .enumerate()
                .any(|(i, p)| i != prog && vec::norm(vec::sub(p.x, x_new)) < diameter);
            if blocked {
                return Ok(PseudoTrajectory {
                    diameter,
                    states: points,
                    recollision,
                    exclusion: true,
                });
            }
        }
        if tree.signs()[j] > 0 {
            let (v_prog, v_new) = collision_transform(points[prog].v, partner, omega)?;
            points[prog] = PhasePoint::new(points[prog].x, v_prog);
            points.push(PhasePoint::new(x_new, v_new));
        } else {
            points.push(PhasePoint::new(x_new, partner));
        }
    }
    backward_segment(&mut points, diameter, now, &mut recollision)?;

    Ok(PseudoTrajectory {
        diameter,
        states: points,
        recollision,
        exclusion: false,
    })
}

/// Product of the initial density over every particle at time zero.
fn endpoint_product<const D: usize, F: InitialData<D>>(
    traj: &PseudoTrajectory<D>,
    f0: &F,
) -> f64 {
    traj.states().iter().map(|p| f0.eval(p.x, p.v)).product()
}

/// Evaluates a tree on the Boltzmann side: free backward transport,
/// partners adjoined at their progenitor's position.  Returns the signed
/// series term `sign_product * weight * product of f0 at time zero`.
pub fn flow_boltzmann_tree<const D: usize, F: InitialData<D>>(
    tree: &CollisionTree<D>,
    f0: &F,
    root_positions: &[[f64; D]],
) -> Result<f64, HierarchyError> {
    let traj = build_pseudo_trajectory(tree, 0.0, root_positions)?;
    debug_assert!(!traj.recollision() && !traj.exclusion());
    Ok(tree.sign_product() * tree.weight() * endpoint_product(&traj, f0))
}

/// Evaluates a tree on the BBGKY side at a positive diameter: partners
/// adjoined at contact distance, exact backward hard-sphere flow between
/// adjunctions.  Returns the signed term together with the recollision
/// and exclusion flags; a term blocked by exclusion is zero.
///
/// At diameter zero this is the Boltzmann-side evaluation, bit for bit.
pub fn flow_bbgky_tree<const D: usize, F: InitialData<D>>(
    tree: &CollisionTree<D>,
    diameter: f64,
    f0: &F,
    root_positions: &[[f64; D]],
) -> Result<(f64, bool, bool), HierarchyError> {
    let traj = build_pseudo_trajectory(tree, diameter, root_positions)?;
    let value = if traj.exclusion() {
        0.0
    } else {
        tree.sign_product() * tree.weight() * endpoint_product(&traj, f0)
    };
    Ok((value, traj.recollision(), traj.exclusion()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::RngState;
    use crate::stats;

    fn uniform_two_bump() -> super::super::SpatiallyUniform<2> {
        super::super::SpatiallyUniform::new(
            VelocityMixture::symmetric_pair(4.0, [1.2, 0.0]).unwrap(),
        )
    }

    #[test]
    fn order_zero_tree_is_empty_with_unit_weight() {
        let mut state = RngState::new(1).rng();
        let tree = sample_tree::<2, _>(0, 0.3, 2.0, [0.4, -0.1], &mut state).unwrap();
        assert_eq!(tree.order(), 0);
        assert_eq!(tree.roots(), 1);
        assert_eq!(tree.weight(), 1.0);
        assert_eq!(tree.sign_product(), 1.0);
        assert_eq!(tree.root_velocities(), &[[0.4, -0.1]]);
    }

    #[test]
    fn sampled_weights_are_positive_and_finite() {
        let mut rng = RngState::new(2).rng();
        for i in 0..1_000_000 {
            let order = (i % 4) + 1;
            let tree = sample_tree::<2, _>(order, 0.2, 2.0, [0.9, 0.0], &mut rng).unwrap();
            assert!(
                tree.weight().is_finite() && tree.weight() > 0.0,
                "draw {i}: weight {}",
                tree.weight()
            );
        }
    }

    #[test]
    fn order_one_time_marginal_is_uniform() {
        let mut rng = RngState::new(3).rng();
        let horizon = 0.25;
        let times: Vec<f64> = (0..4000)
            .map(|_| {
                let tree = sample_tree::<2, _>(1, horizon, 2.0, [0.5, 0.5], &mut rng).unwrap();
                tree.times()[0] / horizon
            })
            .collect();
        let d = stats::ks_uniform_statistic(&times);
        let critical = stats::ks_critical_1pct(times.len());
        assert!(
            d < critical,
            "KS statistic {d} exceeds the 1% critical value {critical}"
        );
    }

    #[test]
    fn tree_constructor_rejects_inconsistent_data() {
        let ok = CollisionTree::<2>::new(
            0.3,
            vec![[0.0, 0.0]],
            vec![0.2, 0.1],
            vec![0, 1],
            vec![[1.0, 0.0], [0.0, 1.0]],
            vec![[1.0, 1.0], [-1.0, 0.5]],
            vec![1, -1],
            2.5,
        );
        assert!(ok.is_ok());
        // Times out of order.
        assert!(CollisionTree::<2>::new(
            0.3,
            vec![[0.0, 0.0]],
            vec![0.1, 0.2],
            vec![0, 0],
            vec![[1.0, 0.0], [0.0, 1.0]],
            vec![[1.0, 1.0], [-1.0, 0.5]],
            vec![1, -1],
            2.5,
        )
        .is_err());
        // Time at the horizon.
        assert!(CollisionTree::<2>::new(
            0.3,
            vec![[0.0, 0.0]],
            vec![0.3],
            vec![0],
            vec![[1.0, 0.0]],
            vec![[1.0, 1.0]],
            vec![1],
            2.5,
        )
        .is_err());
        // Progenitor index beyond the particles existing at adjunction 0.
        assert!(CollisionTree::<2>::new(
            0.3,
            vec![[0.0, 0.0]],
            vec![0.2],
            vec![1],
            vec![[1.0, 0.0]],
            vec![[1.0, 1.0]],
            vec![1],
            2.5,
        )
        .is_err());
        // Non-unit direction.
        assert!(CollisionTree::<2>::new(
            0.3,
            vec![[0.0, 0.0]],
            vec![0.2],
            vec![0],
            vec![[1.0, 1.0]],
            vec![[1.0, 1.0]],
            vec![1],
            2.5,
        )
        .is_err());
        // Zero weight.
        assert!(CollisionTree::<2>::new(
            0.3,
            vec![[0.0, 0.0]],
            vec![0.2],
            vec![0],
            vec![[1.0, 0.0]],
            vec![[1.0, 1.0]],
            vec![1],
            0.0,
        )
        .is_err());
        // Bad sign.
        assert!(CollisionTree::<2>::new(
            0.3,
            vec![[0.0, 0.0]],
            vec![0.2],
            vec![0],
            vec![[1.0, 0.0]],
            vec![[1.0, 1.0]],
            vec![2],
            2.5,
        )
        .is_err());
    }

    #[test]
    fn sampler_signs_match_independent_replay() {
        // Replays the sampler's velocity bookkeeping from the stored tree
        // data alone and checks that each stored sign equals the sign of
        // omega . (partner - progenitor velocity) at that adjunction, and
        // that momentum and energy are conserved by each `+` rotation.
        let mut rng = RngState::new(4).rng();
        for _ in 0..500 {
            let tree = sample_tree::<2, _>(3, 0.2, 2.0, [0.7, -0.3], &mut rng).unwrap();
            let mut velocities = tree.root_velocities().to_vec();
            for j in 0..tree.order() {
                let prog = tree.progenitors()[j];
                let omega = tree.directions()[j];
                let partner = tree.partner_velocities()[j];
                let dot = vec::dot(omega, vec::sub(partner, velocities[prog]));
                let expected = if dot > 0.0 { 1 } else { -1 };
                assert_eq!(tree.signs()[j], expected, "sign mismatch at adjunction {j}");
                if dot > 0.0 {
                    let before_p = vec::add(velocities[prog], partner);
                    let before_e = vec::norm_sq(velocities[prog]) + vec::norm_sq(partner);
                    let (v_prog, v_new) =
                        collision_transform(velocities[prog], partner, omega).unwrap();
                    let after_p = vec::add(v_prog, v_new);
                    let after_e = vec::norm_sq(v_prog) + vec::norm_sq(v_new);
                    assert!(vec::norm(vec::sub(before_p, after_p)) < 1e-13);
                    assert!((before_e - after_e).abs() < 1e-12);
                    velocities[prog] = v_prog;
                    velocities.push(v_new);
                } else {
                    velocities.push(partner);
                }
            }
        }
    }

    #[test]
    fn order_zero_flow_is_pure_transport() {
        let mut rng = RngState::new(5).rng();
        let t = 0.37;
        let tree = sample_tree::<2, _>(0, t, 2.0, [1.5, -0.5], &mut rng).unwrap();
        // A spatially varying density makes the transport visible.
        let f0 = |x: [f64; 2], v: [f64; 2]| (-(x[0] * x[0] + x[1] * x[1]) - vec::norm_sq(v)).exp();
        let z_x = [0.3, 0.8];
        let expected = f0(
            [z_x[0] - t * 1.5, z_x[1] - t * (-0.5)],
            [1.5, -0.5],
        );
        let got = flow_boltzmann_tree(&tree, &f0, &[z_x]).unwrap();
        assert!(
            (got - expected).abs() <= 1e-15 * expected.abs(),
            "transport value {got} vs {expected}"
        );
        // Position-independent data sees no transport at all.
        let uniform = uniform_two_bump();
        let direct = uniform.mixture().density([1.5, -0.5]);
        let via_flow = flow_boltzmann_tree(&tree, &uniform, &[z_x]).unwrap();
        assert_eq!(via_flow, direct);
    }

    #[test]
    fn hand_built_order_one_tree_matches_manual_arithmetic() {
        // One root moving right; at time 0.1 a partner with velocity
        // (0, 1) is adjoined along the x-axis direction.  The dot product
        // omega . (partner - root) = -1 makes it a loss branch: no
        // velocity change, and the term is negative.
        let tree = CollisionTree::<2>::new(
            0.25,
            vec![[1.0, 0.0]],
            vec![0.1],
            vec![0],
            vec![[1.0, 0.0]],
            vec![[0.0, 1.0]],
            vec![-1],
            3.0,
        )
        .unwrap();
        let f0 = |x: [f64; 2], v: [f64; 2]| {
            1.0 + 0.5 * x[0] + 0.25 * x[1] + 0.125 * v[0] + 0.0625 * v[1]
        };
        // Root: backward from (2,3) at velocity (1,0): at time 0.1 it sits
        // at (2 - 0.15, 3); at time 0 at (2 - 0.25, 3) = (1.75, 3).
        // Partner: adjoined at the root's position (1.85, 3) with velocity
        // (0,1); at time 0 it sits at (1.85, 3 - 0.1) = (1.85, 2.9).
        let root_zero = f0([1.75, 3.0], [1.0, 0.0]);
        let partner_zero = f0([1.85, 2.9], [0.0, 1.0]);
        let expected = -3.0 * root_zero * partner_zero;
        let got = flow_boltzmann_tree(&tree, &f0, &[[2.0, 3.0]]).unwrap();
        assert!(
            (got - expected).abs() < 1e-12 * expected.abs(),
            "value {got} vs manual {expected}"
        );
    }

    #[test]
    fn hand_built_gain_tree_applies_the_scattering_rotation() {
        // Gain branch: partner (1, 0) against root (0, 0) along omega =
        // (1, 0) has dot = +1.  The pre-collisional rotation along x
        // swaps the x-components: root becomes (1, 0), partner (0, 0).
        let tree = CollisionTree::<2>::new(
            0.2,
            vec![[0.0, 0.0]],
            vec![0.1],
            vec![0],
            vec![[1.0, 0.0]],
            vec![[1.0, 0.0]],
            vec![1],
            2.0,
        )
        .unwrap();
        let f0 = |x: [f64; 2], v: [f64; 2]| 1.0 + x[0] + 2.0 * x[1] + 3.0 * v[0] + 4.0 * v[1];
        // Root: at rest at (5, 5) until the adjunction, then moves with
        // velocity (1, 0): position at time 0 is (5 - 0.1, 5).
        // Partner: adjoined at (5, 5), velocity (0, 0) after rotation,
        // stays at (5, 5).
        let expected = 2.0 * f0([4.9, 5.0], [1.0, 0.0]) * f0([5.0, 5.0], [0.0, 0.0]);
        let got = flow_boltzmann_tree(&tree, &f0, &[[5.0, 5.0]]).unwrap();
        assert!(
            (got - expected).abs() < 1e-12 * expected.abs(),
            "value {got} vs manual {expected}"
        );
    }

    #[test]
    fn term_sign_equals_sign_product() {
        let uniform = uniform_two_bump();
        let mut rng = RngState::new(6).rng();
        for _ in 0..2000 {
            let order = rng.gen_range(1..=3);
            let tree = sample_tree::<2, _>(order, 0.15, 2.0, [1.1, 0.2], &mut rng).unwrap();
            let value = flow_boltzmann_tree(&tree, &uniform, &[[0.0, 0.0]]).unwrap();
            if value != 0.0 {
                assert_eq!(
                    value.signum(),
                    tree.sign_product(),
                    "value sign disagrees with branch signs"
                );
            }
        }
    }

    #[test]
    fn zero_diameter_reduction_is_bitwise() {
        let uniform = uniform_two_bump();
        let mut rng = RngState::new(7).rng();
        for i in 0..1000 {
            let order = (i % 3) + 1;
            let tree = sample_tree::<2, _>(order, 0.2, 2.0, [0.8, -0.4], &mut rng).unwrap();
            let z = [[0.1 * (i % 7) as f64, -0.05 * (i % 5) as f64]];
            let boltzmann = flow_boltzmann_tree(&tree, &uniform, &z).unwrap();
            let (bbgky, recollision, exclusion) =
                flow_bbgky_tree(&tree, 0.0, &uniform, &z).unwrap();
            assert_eq!(bbgky.to_bits(), boltzmann.to_bits(), "tree {i}");
            assert!(!recollision && !exclusion, "tree {i} raised a flag");
        }
    }

    #[test]
    fn positive_diameter_offsets_the_partner_position() {
        // Same loss-branch tree as the manual test, now with diameter
        // 0.05: the partner starts at the root's position plus
        // 0.05 * omega, and the pair separates backward without events.
        let eps = 0.05;
        let tree = CollisionTree::<2>::new(
            0.25,
            vec![[1.0, 0.0]],
            vec![0.1],
            vec![0],
            vec![[1.0, 0.0]],
            vec![[0.0, 1.0]],
            vec![-1],
            3.0,
        )
        .unwrap();
        let f0 = |x: [f64; 2], v: [f64; 2]| {
            1.0 + 0.5 * x[0] + 0.25 * x[1] + 0.125 * v[0] + 0.0625 * v[1]
        };
        let root_zero = f0([1.75, 3.0], [1.0, 0.0]);
        let partner_zero = f0([1.85 + eps, 2.9], [0.0, 1.0]);
        let expected = -3.0 * root_zero * partner_zero;
        let (got, recollision, exclusion) = flow_bbgky_tree(&tree, eps, &f0, &[[2.0, 3.0]]).unwrap();
        assert!(!recollision && !exclusion);
        assert!(
            (got - expected).abs() < 1e-12 * expected.abs(),
            "value {got} vs manual {expected}"
        );
    }

    #[test]
    fn root_pair_meeting_backward_sets_the_recollision_flag() {
        // Two roots whose backward flight brings them to contact: moving
        // apart forward in time means approaching backward.  With zero
        // diameter the paths cross silently; with a positive diameter the
        // engine executes the contact and the flag is set.
        let eps = 0.1;
        let tree = CollisionTree::<2>::new(
            1.0,
            vec![[-1.0, 0.0], [1.0, 0.0]],
            vec![],
            vec![],
            vec![],
            vec![],
            vec![],
            1.0,
        )
        .unwrap();
        let roots = [[-0.6, 0.0], [0.6, 0.0]];
        let f0 = |_x: [f64; 2], v: [f64; 2]| (-vec::norm_sq(v)).exp();

        let (_, recollision, exclusion) = flow_bbgky_tree(&tree, eps, &f0, &roots).unwrap();
        assert!(recollision, "backward contact was not flagged");
        assert!(!exclusion);

        let (_, recollision0, exclusion0) = flow_bbgky_tree(&tree, 0.0, &f0, &roots).unwrap();
        assert!(!recollision0 && !exclusion0);

        // The executed contact changes the endpoint: with the bounce the
        // pair exchanges velocities instead of crossing.
        let with_bounce = build_pseudo_trajectory(&tree, eps, &roots).unwrap();
        let without = build_pseudo_trajectory(&tree, 0.0, &roots).unwrap();
        assert!(
            vec::norm(vec::sub(with_bounce.states()[0].x, without.states()[0].x)) > 0.1,
            "recollision left the endpoint unchanged"
        );
    }

    #[test]
    fn order_one_trees_never_recollide() {
        // After its adjunction a single pair separates backward forever;
        // the flag can only come from at least two adjunctions or from
        // multiple roots.
        let mut rng = RngState::new(8).rng();
        for i in 0..3000 {
            let tree = sample_tree::<2, _>(1, 0.3, 1.0, [0.5, -0.8], &mut rng).unwrap();
            let (_, recollision, _) =
                flow_bbgky_tree(&tree, 0.05, &|_x: [f64; 2], _v: [f64; 2]| 1.0, &[[0.0, 0.0]])
                    .unwrap();
            assert!(!recollision, "order-1 tree {i} flagged a recollision");
        }
    }

    #[test]
    fn blocked_adjunction_sets_the_exclusion_flag_and_zeroes_the_term() {
        // Two resting roots sit just over one diameter apart; the
        // adjunction points from root 0 straight at root 1, so the
        // partner lands within a diameter of root 1 and is blocked.
        let eps = 0.5;
        let tree = CollisionTree::<2>::new(
            0.2,
            vec![[0.0, 0.0], [0.0, 0.0]],
            vec![0.1],
            vec![0],
            vec![[1.0, 0.0]],
            vec![[-2.0, 0.0]],
            vec![-1],
            1.0,
        )
        .unwrap();
        let roots = [[0.0, 0.0], [0.6, 0.0]];
        let f0 = |_x: [f64; 2], _v: [f64; 2]| 1.0;
        let (value, _, exclusion) = flow_bbgky_tree(&tree, eps, &f0, &roots).unwrap();
        assert!(exclusion, "overlapping adjunction was not blocked");
        assert_eq!(value, 0.0);

        // The same tree with a small diameter adjoins cleanly.
        let (value_small, _, exclusion_small) =
            flow_bbgky_tree(&tree, 0.01, &f0, &roots).unwrap();
        assert!(!exclusion_small);
        assert!(value_small != 0.0);
    }

    #[test]
    fn flow_rejects_mismatched_roots_and_bad_diameter() {
        let mut rng = RngState::new(9).rng();
        let tree = sample_tree::<2, _>(1, 0.2, 2.0, [0.0, 0.0], &mut rng).unwrap();
        let f0 = |_x: [f64; 2], _v: [f64; 2]| 1.0;
        assert!(flow_boltzmann_tree(&tree, &f0, &[[0.0, 0.0], [1.0, 1.0]]).is_err());
        assert!(flow_bbgky_tree(&tree, -0.1, &f0, &[[0.0, 0.0]]).is_err());
        assert!(flow_bbgky_tree(&tree, f64::NAN, &f0, &[[0.0, 0.0]]).is_err());
        assert!(build_pseudo_trajectory(&tree, 0.1, &[[f64::INFINITY, 0.0]]).is_err());
    }

    #[test]
    fn sampler_rejects_bad_parameters() {
        let mut rng = RngState::new(10).rng();
        assert!(sample_tree::<2, _>(1, 0.0, 2.0, [0.0, 0.0], &mut rng).is_err());
        assert!(sample_tree::<2, _>(1, f64::NAN, 2.0, [0.0, 0.0], &mut rng).is_err());
        assert!(sample_tree::<2, _>(1, 0.2, 0.0, [0.0, 0.0], &mut rng).is_err());
        assert!(sample_tree_rooted::<2, _>(&[], 1, 0.2, 2.0, &mut rng).is_err());
    }
}
