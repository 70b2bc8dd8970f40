//! Deflection angles for the smooth repulsive family, by two independent
//! routes: the classical turning-point integral (fast, used to build tables)
//! and direct integration of the reduced two-body trajectory (slow, the
//! ground truth the quadrature is checked against).

use super::quad::integrate_adaptive;
use super::{PotentialSpec, ScatteringError};
use crate::core::RadialPotential;
use crate::vec;
use std::f64::consts::PI;

/// Radial energy factor `g(r) = 1 - rho^2/r^2 - phi(r)/E`: the squared
/// radial speed in units of the asymptotic speed.  For the repulsive family
/// `g` is strictly increasing on `(0, 1]`, so its outermost root — the
/// turning point — is the only one.
fn radial_factor(phi: &PotentialSpec, rho: f64, energy: f64, r: f64) -> f64 {
    let mut g = 1.0 - phi.value(r) / energy;
    if rho > 0.0 {
        let q = rho / r;
        g -= q * q;
    }
    g
}

/// Outermost root of `g` on `(0, 1]` by bisection, to full precision.
///
/// Bracket: `g(1) = 1 - rho^2 >= 0` always; for `rho > 0` the centrifugal
/// term forces `g(rho) = -phi(rho)/E < 0`, while for the head-on line the
/// lower end is the origin and a bracket exists only below the barrier
/// (`E < phi(0)`), otherwise there is no turning point and the deflection
/// integral does not apply.
fn turning_point(
    phi: &PotentialSpec,
    rho: f64,
    energy: f64,
) -> Result<f64, ScatteringError> {
    let mut lo = rho;
    if radial_factor(phi, rho, energy, lo.max(1e-300)) >= 0.0 {
        if rho == 0.0 && energy < phi.barrier() {
            // Unreachable for the built-in family (phi(0) is the barrier),
            // kept as a guard for future profiles.
            lo = 0.0;
        } else {
            return Err(ScatteringError::NoTurningPoint { rho, energy });
        }
    }
    let mut hi = 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if radial_factor(phi, rho, energy, mid.max(1e-300)) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(hi)
}

/// Deflection angle by the turning-point integral,
///
/// `chi = pi - 2 arcsin(rho) - 2 rho I`,   `I = int_{r*}^{1} dr / (r^2 sqrt(g))`,
///
/// where `r*` is the turning point and the `arcsin` term accounts for the
/// straight segment outside the interaction range.  The endpoint singularity
/// is removed by `r = r* + u^2`, which turns the integrand into a smooth even
/// function of `u`; panel-doubled Gauss-Legendre then converges fast.
pub fn deflection_angle_quadrature(
    phi: &PotentialSpec,
    rho: f64,
    energy: f64,
) -> Result<f64, ScatteringError> {
    if phi.is_hard() {
        return Err(ScatteringError::InvalidParam(
            "deflection quadrature requires a smooth profile; use \
             hard_sphere_deflection for the hard core"
            .into(),
        ));
    }
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(ScatteringError::InvalidParam(format!(
            "impact parameter must be nonnegative and finite, got {rho}"
        )));
    }
    if !(energy.is_finite() && energy > 0.0) {
        return Err(ScatteringError::InvalidParam(format!(
            "reduced energy must be positive and finite, got {energy}"
        )));
    }
    if rho >= 1.0 {
        return Ok(0.0);
    }
    let r_star = turning_point(phi, rho, energy)?;
    if rho == 0.0 {
        // Head-on below the barrier: pure backscatter by symmetry.
        return Ok(PI);
    }
    let u_max = (1.0 - r_star).sqrt();
    if u_max == 0.0 {
        // Turning point at the range boundary: grazing, no deflection.
        return Ok(0.0);
    }
    let integrand = |u: f64| {
        let r = r_star + u * u;
        let g = radial_factor(phi, rho, energy, r).max(0.0);
        // 2u dr-substitution factor over r^2 sqrt(g); near u = 0 the ratio
        // u/sqrt(g) tends to 1/sqrt(g'(r*)) and stays smooth.
        2.0 * u / (r * r * g.sqrt())
    };
    let integral = integrate_adaptive(&integrand, 0.0, u_max, 1e-11).map_err(|diff| {
        ScatteringError::QuadratureFailure(format!(
            "turning-point integral stalled at discrepancy {diff:.3e} \
             (rho = {rho}, energy = {energy})"
        ))
    })?;
    let chi = PI - 2.0 * rho.asin() - 2.0 * rho * integral;
    Ok(chi.clamp(0.0, PI))
}

/// Deflection angle by direct integration of the reduced trajectory
/// (`R'' = -2 phi'(|R|) R/|R|`, reduced mass one half), started on the range
/// boundary with impact parameter `rho` and speed `2 sqrt(E)`, run until the
/// trajectory leaves the range again.  The step is halved until the angle
/// changes by less than 1e-8, making this an oracle independent of the
/// quadrature route.
pub fn deflection_angle_ode(
    phi: &PotentialSpec,
    rho: f64,
    energy: f64,
    dt: f64,
) -> Result<f64, ScatteringError> {
    if phi.is_hard() {
        return Err(ScatteringError::InvalidParam(
            "trajectory integration requires a smooth profile".into(),
        ));
    }
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(ScatteringError::InvalidParam(format!(
            "impact parameter must be nonnegative and finite, got {rho}"
        )));
    }
    if !(energy.is_finite() && energy > 0.0) {
        return Err(ScatteringError::InvalidParam(format!(
            "reduced energy must be positive and finite, got {energy}"
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ScatteringError::InvalidParam(format!(
            "time step must be positive and finite, got {dt}"
        )));
    }
    if rho >= 1.0 {
        return Ok(0.0);
    }
    let mut step = dt;
    let mut prev = shoot(phi, rho, energy, step)?;
    for _ in 0..24 {
        step *= 0.5;
        let next = shoot(phi, rho, energy, step)?;
        if (next - prev).abs() < 1e-8 {
            return Ok(next);
        }
        prev = next;
    }
    Err(ScatteringError::OdeFailure(format!(
        "deflection did not settle under step halving (rho = {rho}, energy = {energy})"
    )))
}

/// One trajectory shot at fixed step: velocity-Verlet from the entry point
/// `(-sqrt(1 - rho^2), rho)` with velocity `(2 sqrt(E), 0)` until exit;
/// returns the angle between the outgoing and incoming velocity.
fn shoot(
    phi: &PotentialSpec,
    rho: f64,
    energy: f64,
    dt: f64,
) -> Result<f64, ScatteringError> {
    let speed = 2.0 * energy.sqrt();
    let mut x = [-(1.0 - rho * rho).sqrt(), rho];
    let mut v = [speed, 0.0];
    let accel = |x: [f64; 2]| -> [f64; 2] {
        let r = vec::norm(x);
        if r >= 1.0 || r == 0.0 {
            return [0.0; 2];
        }
        // Reduced mass 1/2: acceleration is -2 phi'(r) x / r.
        vec::scale(x, -2.0 * phi.derivative(r) / r)
    };
    let mut a = accel(x);
    let max_steps = 200_000_000usize;
    for _ in 0..max_steps {
        v = vec::axpy(v, 0.5 * dt, a);
        x = vec::axpy(x, dt, v);
        a = accel(x);
        v = vec::axpy(v, 0.5 * dt, a);
        if vec::norm_sq(x) >= 1.0 {
            let vn = vec::norm(v);
            if vn == 0.0 {
                return Err(ScatteringError::OdeFailure(
                    "outgoing velocity vanished".into(),
                ));
            }
            let cosine = (v[0] / vn).clamp(-1.0, 1.0);
            return Ok(cosine.acos());
        }
    }
    Err(ScatteringError::OdeFailure(format!(
        "trajectory did not exit the interaction range within {max_steps} steps \
         (dt = {dt})"
    )))
}
