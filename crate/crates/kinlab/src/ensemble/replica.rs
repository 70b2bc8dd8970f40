//! Sampling and evolution of independent replicas.

use rand::Rng;
use rayon::prelude::*;

use super::{EnsembleError, InitialLaw};
use crate::core::{
    torus_displacement, Configuration, Geometry, PhasePoint, RngState, ScalingParams,
};
use crate::harddyn::{evolve_hard, HardDynError};
use crate::{stats, vec};

/// Upper bound on whole-configuration rejection attempts.  In the dilute
/// scaling the acceptance probability stays near `exp(-c_d/2)` at every
/// `n`, so exhausting this bound signals parameters far outside the
/// regime rather than bad luck.
const MAX_SAMPLE_ATTEMPTS: u32 = 1000;

/// Fresh initial draws allowed when the flow aborts on degenerate data.
const MAX_RESEEDS: u32 = 8;

/// Draws one `n`-particle configuration from the product law conditioned
/// on pairwise separation: positions uniform on the torus, velocities
/// i.i.d. from the mixture, and the whole position draw rejected while
/// any pair sits at distance `<= eps`.
///
/// Rejecting whole configurations (rather than repairing single
/// particles) keeps the law exactly exchangeable and exactly equal to
/// the conditioned product measure.  Velocities are drawn only after
/// the positions are accepted, so the velocity law is untouched by the
/// rejection.
///
/// # Errors
///
/// `InvalidParam` when the scaling dimension disagrees with `D`;
/// `ScalingViolation` when no draw is accepted within 1000 attempts —
/// in the dilute scaling a failure rate that high means the density is
/// far outside the regime the sampler is meant for.
pub fn sample_initial<const D: usize, R: Rng>(
    params: &ScalingParams,
    law: &InitialLaw<D>,
    rng: &mut R,
) -> Result<Configuration<D>, EnsembleError> {
    let (cfg, _) = sample_initial_counted(params, law, rng)?;
    Ok(cfg)
}

/// As [`sample_initial`], also reporting how many position draws it took.
pub(crate) fn sample_initial_counted<const D: usize, R: Rng>(
    params: &ScalingParams,
    law: &InitialLaw<D>,
    rng: &mut R,
) -> Result<(Configuration<D>, u32), EnsembleError> {
    if params.d != D {
        return Err(EnsembleError::InvalidParam(format!(
            "scaling dimension {} does not match configuration dimension {D}",
            params.d
        )));
    }
    let mut positions = vec![[0.0; D]; params.n];
    for attempt in 1..=MAX_SAMPLE_ATTEMPTS {
        for x in &mut positions {
            for c in x.iter_mut() {
                *c = rng.gen::<f64>();
            }
        }
        if separated(&positions, params.epsilon) {
            let points = positions
                .iter()
                .map(|&x| PhasePoint::new(x, law.mixture().sample(rng)))
                .collect();
            let cfg = Configuration::new(points, params.epsilon, Geometry::Torus)?;
            return Ok((cfg, attempt));
        }
    }
    Err(EnsembleError::ScalingViolation(format!(
        "no overlap-free draw in {MAX_SAMPLE_ATTEMPTS} attempts at n = {}, eps = {}",
        params.n, params.epsilon
    )))
}

/// Strict pairwise separation under the torus metric.
fn separated<const D: usize>(positions: &[[f64; D]], eps: f64) -> bool {
    for (i, x) in positions.iter().enumerate() {
        for y in positions.iter().skip(i + 1) {
            if vec::norm(torus_displacement(*x, *y)) <= eps {
                return false;
            }
        }
    }
    true
}

/// One evolved member of the ensemble.
#[derive(Debug, Clone)]
pub struct Replica<const D: usize> {
    /// Configuration at the end of the evolution window.
    pub state: Configuration<D>,
    /// Collisions executed during the window.
    pub events: u64,
    /// Fresh initial draws forced by degenerate-data aborts (usually 0).
    pub reseeds: u32,
}

/// An independently sampled, independently evolved family of replicas.
///
/// Every replica consumes a generator substream derived from its index
/// alone, so the set is identical bit for bit at any worker count.
#[derive(Debug, Clone)]
pub struct ReplicaSet<const D: usize> {
    /// Scaling shared by every replica.
    pub params: ScalingParams,
    /// Length of the evolution window, in absolute time units.
    pub time: f64,
    pub replicas: Vec<Replica<D>>,
}

impl<const D: usize> ReplicaSet<D> {
    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    /// Collisions executed across the whole set.
    pub fn total_events(&self) -> u64 {
        self.replicas.iter().map(|r| r.events).sum()
    }

    /// How many replicas needed at least one fresh initial draw.
    pub fn reseeded(&self) -> usize {
        self.replicas.iter().filter(|r| r.reseeds > 0).count()
    }

    /// Empirical per-particle collision frequency `2 E / (n M t)`, or
    /// `None` over a zero-length window.
    ///
    /// Each collision interrupts two free flights, hence the factor 2.
    pub fn collision_frequency(&self) -> Option<f64> {
        if self.time > 0.0 && !self.replicas.is_empty() {
            let events = self.total_events() as f64;
            let particles = self.params.n as f64 * self.replicas.len() as f64;
            Some(2.0 * events / (particles * self.time))
        } else {
            None
        }
    }

    /// Mean kinetic energy per particle over the set, with the
    /// replica-level standard error.  The flow conserves energy, so this
    /// checks the sampled initial data against the velocity law.
    pub fn energy_per_particle(&self) -> (f64, f64) {
        let per: Vec<f64> = self
            .replicas
            .iter()
            .map(|r| r.state.kinetic_energy() / r.state.len() as f64)
            .collect();
        stats::mean_and_se(&per)
    }
}

/// Samples and evolves `count` independent replicas over a window of
/// length `time` (absolute units; `0` keeps the initial data).
///
/// A replica whose flow aborts on a measure-zero degeneracy (triple
/// contact or a numerical failure) is redrawn from a fresh substream at
/// most 8 times, with the retries recorded per replica; any other
/// failure propagates.
///
/// # Errors
///
/// `InvalidParam` for a zero replica count, a non-finite or negative
/// window, or a dimension mismatch; sampling and evolution errors as in
/// [`sample_initial`] and the flow itself.
pub fn run_replicas<const D: usize>(
    count: usize,
    params: &ScalingParams,
    law: &InitialLaw<D>,
    time: f64,
    state: &RngState,
) -> Result<ReplicaSet<D>, EnsembleError> {
    if count == 0 {
        return Err(EnsembleError::InvalidParam(
            "need at least one replica".into(),
        ));
    }
    if !(time >= 0.0 && time.is_finite()) {
        return Err(EnsembleError::InvalidParam(format!(
            "evolution window must be finite and nonnegative, got {time}"
        )));
    }
    let replicas = (0..count)
        .into_par_iter()
        .map(|index| evolve_replica(index, params, law, time, state))
        .collect::<Result<Vec<_>, EnsembleError>>()?;
    Ok(ReplicaSet {
        params: *params,
        time,
        replicas,
    })
}

fn evolve_replica<const D: usize>(
    index: usize,
    params: &ScalingParams,
    law: &InitialLaw<D>,
    time: f64,
    state: &RngState,
) -> Result<Replica<D>, EnsembleError> {
    let mut reseeds = 0u32;
    loop {
        let tag = (u64::from(reseeds) << 48) | index as u64;
        let mut rng = state.substream(tag).rng();
        let initial = sample_initial(params, law, &mut rng)?;
        if time == 0.0 {
            return Ok(Replica {
                state: initial,
                events: 0,
                reseeds,
            });
        }
        match evolve_hard(&initial, time) {
            Ok((evolved, log)) => {
                return Ok(Replica {
                    state: evolved,
                    events: log.len() as u64,
                    reseeds,
                });
            }
            Err(err @ (HardDynError::TripleContact { .. } | HardDynError::NumericFailure(_))) => {
                if reseeds >= MAX_RESEEDS {
                    return Err(EnsembleError::Dynamics(err));
                }
                reseeds += 1;
            }
            Err(other) => return Err(EnsembleError::Dynamics(other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        let law = InitialLaw::<2>::two_bump();
        let params3 = ScalingParams::new(50, 3, 0.05).unwrap();
        let state = RngState::new(3);
        let mut rng = state.rng();
        assert!(matches!(
            sample_initial::<2, _>(&params3, &law, &mut rng),
            Err(EnsembleError::InvalidParam(_))
        ));
        let params = ScalingParams::new(50, 2, 0.02).unwrap();
        assert!(matches!(
            run_replicas(0, &params, &law, 0.1, &state),
            Err(EnsembleError::InvalidParam(_))
        ));
        assert!(matches!(
            run_replicas(2, &params, &law, -0.1, &state),
            Err(EnsembleError::InvalidParam(_))
        ));
        assert!(matches!(
            run_replicas(2, &params, &law, f64::NAN, &state),
            Err(EnsembleError::InvalidParam(_))
        ));
    }

    #[test]
    fn two_particles_accept_almost_every_draw() {
        // With n = 2 and eps = 0.01 the overlap probability is
        // pi eps^2 ~ 3e-4, so the counted attempts should average very
        // close to one and the separation constraint must hold strictly.
        let law = InitialLaw::<2>::two_bump();
        let params = ScalingParams::new(2, 2, 0.01).unwrap();
        let state = RngState::new(11);
        let mut rng = state.rng();
        let mut attempts_total = 0u64;
        for _ in 0..400 {
            let (cfg, attempts) = sample_initial_counted(&params, &law, &mut rng).unwrap();
            attempts_total += u64::from(attempts);
            assert!(cfg.min_pair_distance().unwrap() > params.epsilon);
        }
        let mean_attempts = attempts_total as f64 / 400.0;
        assert!(
            mean_attempts < 1.05,
            "acceptance collapsed: {mean_attempts} attempts per draw"
        );
    }

    #[test]
    fn sampled_velocities_follow_the_mixture() {
        // Chi-squared goodness of fit for the first velocity component
        // against the mixture marginal, over bins wide enough that every
        // expected count clears 100.  Rejection acts on positions only,
        // so the velocity marginal must come out unbiased.
        let law = InitialLaw::<2>::two_bump();
        let params = ScalingParams::new(200, 2, 0.005).unwrap();
        let state = RngState::new(12);
        let set = run_replicas(50, &params, &law, 0.0, &state).unwrap();

        let edges = [
            -2.2, -1.8, -1.5, -1.2, -0.9, -0.6, -0.2, 0.2, 0.6, 0.9, 1.2, 1.5, 1.8, 2.2,
        ];
        let marginal = |v: f64| -> f64 {
            law.mixture()
                .components()
                .map(|(w, beta, mean)| {
                    let norm = (beta / (2.0 * std::f64::consts::PI)).sqrt();
                    w * norm * (-0.5 * beta * (v - mean[0]).powi(2)).exp()
                })
                .sum()
        };
        // Simpson integration of the marginal over each interior bin;
        // the two unbounded end bins split the remainder by symmetry.
        let simpson = |a: f64, b: f64| -> f64 {
            let steps = 400;
            let h = (b - a) / steps as f64;
            let mut acc = marginal(a) + marginal(b);
            for i in 1..steps {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * marginal(a + i as f64 * h);
            }
            acc * h / 3.0
        };
        let mut probs = Vec::new();
        let mut interior = 0.0;
        for pair in edges.windows(2) {
            let p = simpson(pair[0], pair[1]);
            probs.push(p);
            interior += p;
        }
        let tail = 0.5 * (1.0 - interior);
        probs.insert(0, tail);
        probs.push(tail);

        let mut counts = vec![0u64; probs.len()];
        let mut total = 0u64;
        for replica in &set.replicas {
            for point in &replica.state.points {
                let v = point.v[0];
                let bin = edges.iter().filter(|&&e| v >= e).count();
                counts[bin] += 1;
                total += 1;
            }
        }
        assert_eq!(total, 200 * 50);

        let mut chi2 = 0.0;
        for (count, p) in counts.iter().zip(&probs) {
            let expected = p * total as f64;
            assert!(expected > 100.0, "bin too thin for the test: {expected}");
            chi2 += (*count as f64 - expected).powi(2) / expected;
        }
        let critical = stats::chi2_critical_99(probs.len() - 1);
        assert!(
            chi2 < critical,
            "velocity histogram rejects the mixture: chi2 = {chi2}, critical = {critical}"
        );
    }

    #[test]
    fn evolved_sets_conserve_energy_and_reproduce() {
        let law = InitialLaw::<2>::two_bump();
        let params = ScalingParams::boltzmann_grad(64, 2).unwrap();
        let state = RngState::new(13);
        let set = run_replicas(200, &params, &law, 0.05, &state).unwrap();
        assert_eq!(set.len(), 200);
        assert_eq!(set.reseeded(), 0);
        assert!(set.total_events() > 0);
        assert!(set.collision_frequency().unwrap() > 0.0);

        // The flow conserves kinetic energy, so the per-particle mean
        // must agree with the mixture moment (2/beta + |m|^2)/2 = 0.97.
        let (mean, se) = set.energy_per_particle();
        assert!(
            (mean - 0.97).abs() <= 3.0 * se,
            "energy off: {mean} +- {se}"
        );

        // Hard-core constraint intact after evolution.
        for replica in &set.replicas {
            let floor = params.epsilon * (1.0 - 1e-9);
            assert!(replica.state.min_pair_distance().unwrap() >= floor);
        }

        // Same state, same bits.
        let again = run_replicas(200, &params, &law, 0.05, &state).unwrap();
        for (a, b) in set.replicas.iter().zip(&again.replicas) {
            assert_eq!(a.events, b.events);
            assert_eq!(a.state, b.state);
        }

        // A zero-length window keeps the initial data untouched.
        let frozen = run_replicas(20, &params, &law, 0.0, &state).unwrap();
        assert_eq!(frozen.total_events(), 0);
        assert!(frozen.collision_frequency().is_none());
    }
}
