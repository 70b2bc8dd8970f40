//! Event-driven dynamics of N hard spheres of diameter `eps`.
//!
//! Between contacts the particles stream freely; when two sphere centers
//! reach distance `eps` with approaching relative velocity, the pair
//! undergoes an instantaneous elastic reflection about the contact normal.
//! The evolution is deterministic, time-reversible, and exact up to floating
//! point: contact times are roots of per-pair quadratics, not time steps.
//!
//! The module also measures the dynamics' basic kinetic observable — the
//! mean free time in equilibrium — which downstream code uses to express
//! runs in collision-time units and to cross-check the Boltzmann collision
//! kernel's normalization against the particle system.

mod engine;

use std::io::{self, BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::core::{
    sample_nonoverlapping_positions, torus_displacement, Configuration, CoreError, Geometry,
    PhasePoint, RngState, ScalingParams, CORE_TOLERANCE,
};
use crate::vec;

/// Discriminant threshold below which a predicted contact counts as grazing
/// and is skipped: tangential contacts form a measure-zero set and resolving
/// them is numerically meaningless.
pub const GRAZING_DISCRIMINANT: f64 = 1e-14;

/// Hard cap on executed collisions per evolution; beyond this the run is
/// declared runaway and aborted.
pub const MAX_EVENTS: u64 = 100_000_000;

/// Two contacts closer in time than this window count as simultaneous; a
/// third particle at contact within the window aborts the run, since no
/// execution order of the pairwise reflections is physically meaningful.
pub const SIMULTANEITY_WINDOW: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum HardDynError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("contact normal must be unit length, got |nu| = {norm}")]
    InvalidNormal { norm: f64 },
    #[error("aborting runaway evolution after {events} collisions")]
    EventBudget { events: u64 },
    #[error(
        "triple-simultaneous contact at t = {time} between particles {a}, {b}, {c}; \
         resample the initial data"
    )]
    TripleContact {
        time: f64,
        a: usize,
        b: usize,
        c: usize,
    },
    #[error("no collisions in the measurement window; enlarge it or check the scaling")]
    NoCollisions,
    #[error("numerical failure: {0}")]
    NumericFailure(String),
}

/// One executed collision, as recorded in a [`TrajectoryLog`].
///
/// Serialized field names match the JSON Lines dump format: `t`, `i`, `j`,
/// `nu`, `v_i_pre`, `v_j_pre`, `v_i_post`, `v_j_post`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "[f64; D]: Serialize",
    deserialize = "[f64; D]: Deserialize<'de>"
))]
pub struct CollisionEvent<const D: usize> {
    #[serde(rename = "t")]
    pub time: f64,
    pub i: usize,
    pub j: usize,
    /// Unit contact normal `(x_i - x_j) / |x_i - x_j|` at contact.
    #[serde(rename = "nu")]
    pub normal: [f64; D],
    pub v_i_pre: [f64; D],
    pub v_j_pre: [f64; D],
    pub v_i_post: [f64; D],
    pub v_j_post: [f64; D],
}

/// Ordered record of the collisions executed during one evolution.
///
/// Event times are non-decreasing, and strictly increasing for generic
/// initial data; exact ties can only arise from measure-zero synthetic input,
/// in which case distinct pairs execute in ascending pair order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "[f64; D]: Serialize",
    deserialize = "[f64; D]: Deserialize<'de>"
))]
pub struct TrajectoryLog<const D: usize> {
    pub events: Vec<CollisionEvent<D>>,
}

impl<const D: usize> TrajectoryLog<D> {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Writes one JSON object per event, one event per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()>
    where
        [f64; D]: Serialize,
    {
        for ev in &self.events {
            serde_json::to_writer(&mut out, ev)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a dump produced by [`TrajectoryLog::write_jsonl`].
    pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Self>
    where
        [f64; D]: for<'de> Deserialize<'de>,
    {
        let mut events = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line)?);
        }
        Ok(Self { events })
    }
}

/// First root `t >= 0` of `|r + t w| = eps` with the pair approaching
/// (`r . w < 0`), or `None` when the pair recedes, misses, or merely grazes
/// (discriminant within [`GRAZING_DISCRIMINANT`] of zero).
///
/// A pair already inside the contact shell and approaching reports time 0.
/// The root is evaluated in the cancellation-free form
/// `(|r|^2 - eps^2) / (-r.w + sqrt(disc))`.
pub(crate) fn contact_root<const D: usize>(r: [f64; D], w: [f64; D], eps: f64) -> Option<f64> {
    let b = vec::dot(r, w);
    if b >= 0.0 {
        return None;
    }
    let wn2 = vec::norm_sq(w);
    let rn2 = vec::norm_sq(r);
    let disc = b * b - wn2 * (rn2 - eps * eps);
    if disc <= GRAZING_DISCRIMINANT {
        return None;
    }
    Some(((rn2 - eps * eps) / (-b + disc.sqrt())).max(0.0))
}

/// Earliest contact time of two spheres of diameter `eps` on the unit torus,
/// within `horizon`, or `None` if they do not meet.
///
/// The prediction trusts the minimum-image displacement only over the window
/// `(1/2 - eps)/|w|` in which no other periodic image can reach contact; a
/// longer horizon is covered by re-reducing the displacement window by
/// window, so flights that wrap around the torus are still resolved exactly.
///
/// A pair already inside the contact shell (within the hard-core tolerance)
/// and approaching reports time 0.
pub fn predict_pair_collision<const D: usize>(
    z_i: &PhasePoint<D>,
    z_j: &PhasePoint<D>,
    eps: f64,
    horizon: f64,
) -> Result<Option<f64>, HardDynError> {
    if !(eps > 0.0 && eps <= crate::core::MAX_DIAMETER) {
        return Err(HardDynError::InvalidParam(format!(
            "diameter must lie in (0, 1/4], got {eps}"
        )));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(HardDynError::InvalidParam(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    if !(vec::is_finite(z_i.x) && vec::is_finite(z_i.v) && vec::is_finite(z_j.x) && vec::is_finite(z_j.v))
    {
        return Err(HardDynError::InvalidParam(
            "phase points must be finite".into(),
        ));
    }
    let mut r = torus_displacement(z_j.x, z_i.x);
    let dist = vec::norm(r);
    if dist < eps * (1.0 - CORE_TOLERANCE) {
        return Err(HardDynError::Core(CoreError::Overlap {
            i: 0,
            j: 1,
            dist,
            diameter: eps,
        }));
    }
    let w = vec::sub(z_i.v, z_j.v);
    let wn2 = vec::norm_sq(w);
    if wn2 == 0.0 {
        return Ok(None);
    }
    let wn = wn2.sqrt();
    if dist - eps > wn * horizon {
        return Ok(None);
    }
    let window = (0.5 - eps) / wn;
    let mut elapsed = 0.0;
    loop {
        let seg = window.min(horizon - elapsed);
        if let Some(root) = contact_root(r, w, eps) {
            if root <= seg {
                return Ok(Some(elapsed + root));
            }
        }
        elapsed += seg;
        if elapsed >= horizon {
            return Ok(None);
        }
        r = crate::core::wrap_displacement(vec::axpy(r, seg, w));
    }
}

/// Elastic reflection of a pair about the unit contact normal `nu`:
/// `v_i' = v_i - (nu.(v_i - v_j)) nu` and symmetrically for `v_j`.
///
/// The shared projection is computed once, so the velocity sum is preserved
/// exactly and the kinetic energy to rounding; the map is an involution.
pub fn elastic_reflect<const D: usize>(
    v_i: [f64; D],
    v_j: [f64; D],
    nu: [f64; D],
) -> Result<([f64; D], [f64; D]), HardDynError> {
    let norm = vec::norm(nu);
    if !((norm - 1.0).abs() <= 1e-12) {
        return Err(HardDynError::InvalidNormal { norm });
    }
    if !(vec::is_finite(v_i) && vec::is_finite(v_j)) {
        return Err(HardDynError::InvalidParam(
            "velocities must be finite".into(),
        ));
    }
    let c = vec::dot(nu, vec::sub(v_i, v_j));
    let dv = vec::scale(nu, c);
    Ok((vec::sub(v_i, dv), vec::add(v_j, dv)))
}

/// Runs the event-driven hard-sphere dynamics for time `t` and returns the
/// final configuration together with the log of executed collisions.
///
/// Deterministic: the same input produces a bit-identical result and log.
/// The sphere diameter and boundary condition come from the configuration;
/// diameter 0 degenerates to exact free streaming (point particles never
/// meet with probability one, and the grazing rule removes the remaining
/// measure-zero contacts).
pub fn evolve_hard<const D: usize>(
    cfg: &Configuration<D>,
    t: f64,
) -> Result<(Configuration<D>, TrajectoryLog<D>), HardDynError> {
    engine::Engine::run(cfg, t)
}

/// Negates every velocity, keeping positions: the time-reversal involution.
pub fn reverse_velocities<const D: usize>(cfg: &Configuration<D>) -> Configuration<D> {
    Configuration {
        points: cfg
            .points
            .iter()
            .map(|p| PhasePoint::new(p.x, vec::scale(p.v, -1.0)))
            .collect(),
        diameter: cfg.diameter,
        geometry: cfg.geometry,
    }
}

/// Draws an equilibrium configuration: positions uniform on the torus
/// conditioned on no overlap (whole-configuration rejection), velocities
/// Maxwellian at inverse temperature `beta`, then projected to zero total
/// momentum and rescaled to the exact microcanonical kinetic energy
/// `d (n - 1) / (2 beta)`.
///
/// The projection and rescaling remove the O(1/sqrt(n)) sample-to-sample
/// scatter of temperature and drift that would otherwise dominate
/// collision-rate comparisons at modest n; what remains are the O(1/n)
/// microcanonical corrections.
pub fn sample_equilibrium<const D: usize, R: Rng>(
    params: &ScalingParams,
    beta: f64,
    rng: &mut R,
) -> Result<Configuration<D>, HardDynError> {
    if params.d != D {
        return Err(HardDynError::InvalidParam(format!(
            "scaling dimension {} does not match configuration dimension {D}",
            params.d
        )));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(HardDynError::InvalidParam(format!(
            "inverse temperature must be positive and finite, got {beta}"
        )));
    }
    let n = params.n;
    let xs = sample_nonoverlapping_positions::<D, R>(n, params.epsilon, rng, 1000)?;
    let sigma = (1.0 / beta).sqrt();
    let mut vs: Vec<[f64; D]> = Vec::with_capacity(n);
    let mut mean = [0.0; D];
    for _ in 0..n {
        let mut v = [0.0; D];
        for c in v.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *c = sigma * g;
        }
        mean = vec::add(mean, v);
        vs.push(v);
    }
    mean = vec::scale(mean, 1.0 / n as f64);
    let mut ke = 0.0;
    for v in vs.iter_mut() {
        *v = vec::sub(*v, mean);
        ke += 0.5 * vec::norm_sq(*v);
    }
    if ke <= 0.0 {
        return Err(HardDynError::NumericFailure(
            "degenerate velocity sample with zero kinetic energy".into(),
        ));
    }
    let target = D as f64 * (n as f64 - 1.0) / (2.0 * beta);
    let scale = (target / ke).sqrt();
    let points = xs
        .into_iter()
        .zip(vs)
        .map(|(x, v)| PhasePoint::new(x, vec::scale(v, scale)))
        .collect();
    Ok(Configuration::new(points, params.epsilon, Geometry::Torus)?)
}

/// Measured mean free time with its statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFreeTimeEstimate {
    /// Mean time between collisions per particle, `(2 events / (n t))^-1`.
    pub mean_free_time: f64,
    /// Poisson standard error, `mean_free_time / sqrt(events)`.
    pub std_err: f64,
    /// Collision frequency per particle, the reciprocal estimate.
    pub collision_rate: f64,
    pub events: u64,
    pub particles: usize,
    /// Length of the measurement window (after burn-in).
    pub window: f64,
}

/// Measures the equilibrium mean free time: reach equilibrium by running for
/// `t_burn`, then count collisions over `t_meas`.
///
/// Each collision interrupts the free flight of two particles, so the
/// per-particle collision frequency is `2 events / (n t)` and the mean free
/// time its reciprocal.  The standard error treats the collision count as
/// Poisson, which is accurate when `t_meas` spans many mean free times.
pub fn measure_mean_free_time<const D: usize>(
    params: &ScalingParams,
    beta: f64,
    t_burn: f64,
    t_meas: f64,
    rng_state: &RngState,
) -> Result<MeanFreeTimeEstimate, HardDynError> {
    if !(t_burn >= 0.0 && t_burn.is_finite()) {
        return Err(HardDynError::InvalidParam(format!(
            "burn-in time must be finite and nonnegative, got {t_burn}"
        )));
    }
    if !(t_meas > 0.0 && t_meas.is_finite()) {
        return Err(HardDynError::InvalidParam(format!(
            "measurement window must be positive and finite, got {t_meas}"
        )));
    }
    let mut rng = rng_state.rng();
    let cfg = sample_equilibrium::<D, _>(params, beta, &mut rng)?;
    let (cfg, _) = evolve_hard(&cfg, t_burn)?;
    let (_, log) = evolve_hard(&cfg, t_meas)?;
    let events = log.len() as u64;
    if events == 0 {
        return Err(HardDynError::NoCollisions);
    }
    let rate = 2.0 * events as f64 / (params.n as f64 * t_meas);
    let tau = 1.0 / rate;
    Ok(MeanFreeTimeEstimate {
        mean_free_time: tau,
        std_err: tau / (events as f64).sqrt(),
        collision_rate: rate,
        events,
        particles: params.n,
        window: t_meas,
    })
}
