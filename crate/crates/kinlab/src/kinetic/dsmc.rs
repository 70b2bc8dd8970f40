//! Stochastic particle solver for the homogeneous kinetic equation.

use super::{collision_transform, KineticError, ParticleEnsemble};
use crate::scattering::CrossSection;
use crate::vec;
use rand::Rng;

/// Safety margin applied to the sampled kernel bound.  Kept modest on
/// purpose: the doubling machinery below handles an undersized bound
/// correctly, and a tight initial bound wastes fewer candidates.
const MAJORANT_MARGIN: f64 = 1.1;

/// Ordered pairs sampled when estimating the collision frequency of a
/// large ensemble.
const FREQUENCY_SAMPLE_PAIRS: usize = 20_000;

/// Statistics of one stochastic collision run.
#[derive(Debug, Clone, Copy)]
pub struct DsmcReport {
    /// Time steps taken.
    pub steps: usize,
    /// Candidate pairs examined.
    pub candidates: u64,
    /// Candidates accepted as collisions.
    pub accepted: u64,
    /// Times the kernel bound was doubled after an evaluation exceeded it.
    pub majorant_doublings: u32,
    /// Kernel bound in force at the end of the run.
    pub final_majorant: f64,
    /// Mean free time estimated from the initial ensemble; the step size
    /// must not exceed a tenth of it.
    pub mean_free_time: f64,
}

/// Advances an ensemble through elastic pair collisions for a time `t`.
///
/// Each step draws candidate pairs at the majorant rate
/// `M/2 * |half sphere| * b_max * dt`, gives each candidate a direction
/// uniform on the half sphere facing the relative velocity, and accepts it
/// with probability `b(w, omega) / b_max`; accepted candidates exchange
/// velocity components along the direction, conserving momentum and energy
/// to rounding.  Fractional candidate counts carry across steps
/// deterministically, so the run is a pure function of the ensemble and
/// the generator state.
///
/// When an evaluation exceeds the kernel bound, the bound doubles until it
/// covers the value and the remaining candidate budget is rescaled to the
/// new rate; the report counts these events.  The candidate in hand is
/// accepted outright, the correct limit of the acceptance rule.
///
/// # Errors
///
/// The kernel must be bounded and match the ensemble dimension, `t` must
/// be nonnegative and finite, and `dt` positive, finite, and at most a
/// tenth of the estimated mean free time.  A single-particle ensemble is
/// returned unchanged.
pub fn dsmc_run<const D: usize, R: Rng>(
    ens: &ParticleEnsemble<D>,
    b: &CrossSection,
    t: f64,
    dt: f64,
    rng: &mut R,
) -> Result<(ParticleEnsemble<D>, DsmcReport), KineticError> {
    if b.dim() != D {
        return Err(KineticError::InvalidParam(format!(
            "kernel dimension {} does not match ensemble dimension {D}",
            b.dim()
        )));
    }
    if !b.is_bounded() {
        return Err(KineticError::UnboundedKernel(
            "candidate sampling needs a finite kernel bound; tabulated kernels require \
             a positive grazing cutoff"
                .into(),
        ));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(KineticError::InvalidParam(format!(
            "horizon {t} must be finite and nonnegative"
        )));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(KineticError::InvalidParam(format!(
            "step {dt} must be finite and positive"
        )));
    }
    let m = ens.len();
    let mut report = DsmcReport {
        steps: 0,
        candidates: 0,
        accepted: 0,
        majorant_doublings: 0,
        final_majorant: 0.0,
        mean_free_time: f64::INFINITY,
    };
    if m == 1 || t == 0.0 {
        return Ok((ens.clone(), report));
    }

    // Collision-frequency estimate over ordered pairs: every pair of a
    // small ensemble, a fixed-size sample of a large one.
    let mut frequency_sum = 0.0;
    let mut frequency_pairs = 0u64;
    let mut bound_scan = 0.0f64;
    let exhaustive = m * (m - 1) <= 2 * FREQUENCY_SAMPLE_PAIRS;
    let pair_list: Vec<(usize, usize)> = if exhaustive {
        (0..m)
            .flat_map(|p| (p + 1..m).map(move |q| (p, q)))
            .collect()
    } else {
        (0..FREQUENCY_SAMPLE_PAIRS)
            .map(|_| draw_pair(m, rng))
            .collect()
    };
    for &(p, q) in &pair_list {
        let w = vec::sub(ens.velocities()[q], ens.velocities()[p]);
        frequency_sum += b.total_rate(vec::norm(w));
        frequency_pairs += 1;
        bound_scan = bound_scan.max(peak_over_directions(b, w));
    }
    let nu = frequency_sum / frequency_pairs as f64;
    if nu > 0.0 {
        report.mean_free_time = 1.0 / nu;
        if dt > 0.1 * report.mean_free_time {
            return Err(KineticError::InvalidParam(format!(
                "step {dt} exceeds a tenth of the mean free time {}",
                report.mean_free_time
            )));
        }
    }

    let mut out = ens.clone();
    let mut b_max = MAJORANT_MARGIN * bound_scan;
    report.final_majorant = b_max;
    if b_max == 0.0 {
        // No pair produces any collision weight; nothing can happen.
        return Ok((out, report));
    }

    let half_sphere = match D {
        2 => std::f64::consts::PI,
        _ => 2.0 * std::f64::consts::PI,
    };
    let steps = (t / dt).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let mut carry = 0.0f64;
    for _ in 0..steps {
        report.steps += 1;
        let mut budget = carry + 0.5 * m as f64 * half_sphere * b_max * h;
        while budget >= 1.0 {
            budget -= 1.0;
            report.candidates += 1;
            let (p, q) = draw_pair(m, rng);
            let w = vec::sub(out.velocities()[q], out.velocities()[p]);
            let mut omega = random_unit::<D, _>(rng);
            if vec::dot(omega, w) < 0.0 {
                omega = vec::scale(omega, -1.0);
            }
            let bval = b.evaluate(w, omega);
            if !bval.is_finite() {
                return Err(KineticError::Numeric(format!(
                    "kernel evaluated to {bval} at relative velocity {w:?}"
                )));
            }
            if bval > b_max {
                // Grow the bound until it covers the value and rescale the
                // rest of this step's budget to the faster candidate rate.
                let old = b_max;
                while bval > b_max {
                    b_max *= 2.0;
                    report.majorant_doublings += 1;
                }
                budget *= b_max / old;
                report.final_majorant = b_max;
                // Drawn while the bound was too small, this candidate is a
                // certain acceptance under the clamped rule.
            }
            if rng.gen::<f64>() * b_max < bval {
                report.accepted += 1;
                let (vp, vq) = collision_transform(
                    out.velocities()[p],
                    out.velocities()[q],
                    omega,
                )?;
                out.velocities_mut()[p] = vp;
                out.velocities_mut()[q] = vq;
            }
        }
        carry = budget;
    }
    Ok((out, report))
}

/// Draws an unordered pair of distinct indices uniformly.
fn draw_pair<R: Rng>(m: usize, rng: &mut R) -> (usize, usize) {
    let p = rng.gen_range(0..m);
    let mut q = rng.gen_range(0..m - 1);
    if q >= p {
        q += 1;
    }
    (p, q)
}

/// A direction uniform on the unit sphere.
pub(crate) fn random_unit<const D: usize, R: Rng>(rng: &mut R) -> [f64; D] {
    let mut omega = [0.0; D];
    if D == 2 {
        let theta = rng.gen::<f64>() * std::f64::consts::TAU;
        omega[0] = theta.cos();
        omega[1] = theta.sin();
    } else {
        let z = 2.0 * rng.gen::<f64>() - 1.0;
        let phi = rng.gen::<f64>() * std::f64::consts::TAU;
        let r = (1.0 - z * z).max(0.0).sqrt();
        omega[0] = r * phi.cos();
        omega[1] = r * phi.sin();
        omega[2] = z;
    }
    omega
}

/// Largest kernel value over a fine sweep of directions for one relative
/// velocity.
fn peak_over_directions<const D: usize>(b: &CrossSection, w: [f64; D]) -> f64 {
    // The kernels here peak either head-on or at the grazing cutoff; a
    // moderate sweep brackets the maximum well enough for a starting bound,
    // and the doubling machinery covers any remainder.
    let mut peak = 0.0f64;
    let sweep = 64;
    for a in 0..sweep {
        let theta = (a as f64 + 0.5) * std::f64::consts::PI / sweep as f64;
        let omega = if D == 2 {
            let mut o = [0.0; D];
            let wn = vec::norm(w);
            let (wx, wy) = if wn > 0.0 {
                (w[0] / wn, w[1] / wn)
            } else {
                (1.0, 0.0)
            };
            // Rotate the relative direction by theta.
            o[0] = wx * theta.cos() - wy * theta.sin();
            o[1] = wx * theta.sin() + wy * theta.cos();
            o
        } else {
            // Axial symmetry: tilt within the plane spanned by w and a
            // transverse axis.
            let wn = vec::norm(w);
            let unit = if wn > 0.0 {
                vec::scale(w, 1.0 / wn)
            } else {
                let mut e = [0.0; D];
                e[0] = 1.0;
                e
            };
            let mut trans = [0.0; D];
            let pick = if unit[0].abs() < 0.9 { 0 } else { 1 };
            trans[pick] = 1.0;
            let proj = vec::dot(trans, unit);
            // The chosen axis is at most 0.9-aligned with the direction, so
            // the residual cannot vanish.
            let ortho = vec::unit(vec::axpy(trans, -proj, unit))
                .expect("transverse axis is independent of the direction");
            let mut o = vec::scale(unit, theta.cos());
            o = vec::axpy(o, theta.sin(), ortho);
            o
        };
        peak = peak.max(b.evaluate(w, omega));
    }
    peak
}
