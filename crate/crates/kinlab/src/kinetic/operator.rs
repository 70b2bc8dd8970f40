//! Collision integral on a velocity grid and Picard time stepping.

use super::grid::{DistributionGrid, VelocityGrid};
use super::KineticError;
use crate::scattering::CrossSection;
use rayon::prelude::*;

/// Angular resolution used by the time steppers: nodes over the full circle.
pub const DEFAULT_OPERATOR_ANGLES: usize = 16;

/// Number of source cells handled per parallel work item.  Fixed so that
/// the merge order, and therefore the floating-point result, does not
/// depend on the number of worker threads.
const SOURCE_CHUNK: usize = 64;

/// Largest negative excursion tolerated silently in a Picard iterate.
const NEGATIVITY_WARNING_DEPTH: f64 = 1e-4;

/// Conservation diagnostics for one collision-operator evaluation.
///
/// The `raw_*` moments are measured on the assembled operator *before* the
/// collision-invariant projection; they quantify the interpolation defect
/// honestly instead of assuming it away.  The projection then removes the
/// defect exactly, so the returned operator has vanishing mass, momentum,
/// and energy moments up to rounding.
#[derive(Debug, Clone, Copy)]
pub struct OperatorDefect {
    /// Mass moment of the unprojected operator (zero up to rounding by
    /// construction).
    pub raw_mass: f64,
    /// Momentum moment of the unprojected operator (zero up to rounding).
    pub raw_momentum: [f64; 2],
    /// Energy moment of the unprojected operator; order cell-width squared
    /// from bilinear placement of post-collision velocities.
    pub raw_energy: f64,
    /// Total collision mass flux, equal to the mean collision frequency of
    /// the distribution under the discretised kernel.
    pub collision_rate: f64,
    /// Fraction of the collision flux dropped because a post-collision
    /// velocity left the grid hull (both partners are dropped together, so
    /// the truncation stays conservative).
    pub skipped_fraction: f64,
}

/// Outcome of a Picard iteration run.
#[derive(Debug, Clone)]
pub struct PicardOutcome {
    /// Final iterate, clamped to a nonnegative distribution.
    pub f: DistributionGrid,
    /// Most negative raw value of the final iterate before clamping.
    pub min_value: f64,
    /// Set when the raw iterate dipped below `-1e-4`.
    pub negativity_warning: bool,
    /// Mean collision frequency of the initial data; the iteration horizon
    /// is half of its reciprocal.
    pub collision_frequency: f64,
}

/// Evaluates the collision integral of `f` with itself under kernel `b`.
///
/// The quadrature runs over all ordered pairs of occupied cells and
/// `angles / 2` directions covering half the circle (the kernel and the
/// velocity exchange are even in the direction, so opposite directions are
/// redundant).  Each elementary collision removes mass at the pre-collision
/// cells and deposits it bilinearly at the post-collision velocities, which
/// conserves mass and momentum to rounding; the energy defect of bilinear
/// placement is measured and then removed by projecting the result onto
/// the complement of the collision invariants `1, vx, vy, |v|^2` weighted
/// by `f`.
///
/// Returns the signed rate of change per cell (same layout as the
/// distribution values) together with the defect diagnostics.
///
/// # Errors
///
/// The kernel must be two-dimensional and bounded (tabulated kernels need a
/// positive grazing cutoff), and `angles` must be an even number of at
/// least 16 full-circle nodes.
pub fn collision_operator_grid(
    f: &DistributionGrid,
    b: &CrossSection,
    angles: usize,
) -> Result<(Vec<f64>, OperatorDefect), KineticError> {
    operator_raw(*f.grid(), f.values(), b, angles)
}

/// Collision operator on raw cell values (which may carry the small
/// negative excursions of intermediate Picard iterates).
fn operator_raw(
    grid: VelocityGrid,
    values: &[f64],
    b: &CrossSection,
    angles: usize,
) -> Result<(Vec<f64>, OperatorDefect), KineticError> {
    if b.dim() != 2 {
        return Err(KineticError::InvalidParam(format!(
            "grid collision operator needs a two-dimensional kernel, got dimension {}",
            b.dim()
        )));
    }
    if !b.is_bounded() {
        return Err(KineticError::UnboundedKernel(
            "tabulated kernel without a grazing cutoff concentrates unbounded weight \
             at small deflections"
                .into(),
        ));
    }
    if angles < 16 || angles % 2 != 0 {
        return Err(KineticError::InvalidParam(format!(
            "angular resolution {angles} must be an even count of at least 16 nodes"
        )));
    }

    let cells = grid.cell_count();
    let vol = grid.cell_volume();
    let centers: Vec<[f64; 2]> = (0..cells)
        .map(|c| grid.center(c / grid.resolution(), c % grid.resolution()))
        .collect();
    let masses: Vec<f64> = values.iter().map(|v| v * vol).collect();
    let active: Vec<usize> = (0..cells).filter(|&c| masses[c] != 0.0).collect();

    // Directions covering half the circle; the other half duplicates them.
    let half = angles / 2;
    let angular_weight = 2.0 * std::f64::consts::PI / angles as f64;
    let directions: Vec<[f64; 2]> = (0..half)
        .map(|a| {
            let theta = (a as f64 + 0.5) * 2.0 * std::f64::consts::PI / angles as f64;
            [theta.cos(), theta.sin()]
        })
        .collect();

    struct Partial {
        rate_mass: Vec<f64>,
        executed: f64,
        skipped: f64,
    }

    let partials: Vec<Partial> = active
        .par_chunks(SOURCE_CHUNK)
        .map(|chunk| {
            let mut local = Partial {
                rate_mass: vec![0.0; cells],
                executed: 0.0,
                skipped: 0.0,
            };
            for &c in chunk {
                let vc = centers[c];
                for &c1 in &active {
                    if c1 == c {
                        continue;
                    }
                    let v1 = centers[c1];
                    let w = [v1[0] - vc[0], v1[1] - vc[1]];
                    let pair_mass = masses[c] * masses[c1];
                    for omega in &directions {
                        let bval = b.evaluate(w, *omega);
                        if bval == 0.0 {
                            continue;
                        }
                        let flux = pair_mass * bval * angular_weight;
                        let transfer = omega[0] * w[0] + omega[1] * w[1];
                        let vp = [vc[0] + transfer * omega[0], vc[1] + transfer * omega[1]];
                        let v1p = [v1[0] - transfer * omega[0], v1[1] - transfer * omega[1]];
                        // Both partners must stay interpolable, otherwise the
                        // whole elementary collision is dropped; the partner
                        // cell drops its mirrored half through the same test.
                        let (target, partner) = (grid.bilinear(vp), grid.bilinear(v1p));
                        let (Some((base, frac)), Some(_)) = (target, partner) else {
                            local.skipped += flux.abs();
                            continue;
                        };
                        local.executed += flux.abs();
                        local.rate_mass[c] -= flux;
                        let g = grid.resolution();
                        let i00 = base[0] * g + base[1];
                        local.rate_mass[i00] += flux * (1.0 - frac[0]) * (1.0 - frac[1]);
                        local.rate_mass[i00 + 1] += flux * (1.0 - frac[0]) * frac[1];
                        local.rate_mass[i00 + g] += flux * frac[0] * (1.0 - frac[1]);
                        local.rate_mass[i00 + g + 1] += flux * frac[0] * frac[1];
                    }
                }
            }
            local
        })
        .collect();

    let mut rate_mass = vec![0.0; cells];
    let mut executed = 0.0;
    let mut skipped = 0.0;
    for p in &partials {
        for (acc, x) in rate_mass.iter_mut().zip(&p.rate_mass) {
            *acc += x;
        }
        executed += p.executed;
        skipped += p.skipped;
    }
    if !rate_mass.iter().all(|x| x.is_finite()) {
        return Err(KineticError::Numeric(
            "collision operator produced non-finite rates".into(),
        ));
    }

    // Raw conservation defects, measured before any correction.
    let mut raw = [0.0f64; 4];
    for (c, &m) in rate_mass.iter().enumerate() {
        let v = centers[c];
        raw[0] += m;
        raw[1] += m * v[0];
        raw[2] += m * v[1];
        raw[3] += m * 0.5 * (v[0] * v[0] + v[1] * v[1]);
    }

    // Projection onto the complement of the collision invariants, weighted
    // by the distribution itself: subtract (a + b . v + c |v|^2 / 2) |f|
    // with coefficients chosen to zero the four moments.
    let weights: Vec<f64> = masses.iter().map(|m| m.abs()).collect();
    let mut gram = [[0.0f64; 4]; 4];
    for (c, &wgt) in weights.iter().enumerate() {
        if wgt == 0.0 {
            continue;
        }
        let v = centers[c];
        let psi = [1.0, v[0], v[1], 0.5 * (v[0] * v[0] + v[1] * v[1])];
        for i in 0..4 {
            for j in 0..4 {
                gram[i][j] += wgt * psi[i] * psi[j];
            }
        }
    }
    let scale = executed.max(1e-300);
    let coeff = match solve4(gram, raw) {
        Some(c) => c,
        None => {
            if raw.iter().all(|d| d.abs() <= 1e-12 * scale) {
                [0.0; 4]
            } else {
                return Err(KineticError::Numeric(
                    "conservation projection is singular but defects are not negligible"
                        .into(),
                ));
            }
        }
    };
    for (c, &wgt) in weights.iter().enumerate() {
        if wgt == 0.0 {
            continue;
        }
        let v = centers[c];
        let psi = [1.0, v[0], v[1], 0.5 * (v[0] * v[0] + v[1] * v[1])];
        rate_mass[c] -=
            wgt * (coeff[0] * psi[0] + coeff[1] * psi[1] + coeff[2] * psi[2] + coeff[3] * psi[3]);
    }

    let defect = OperatorDefect {
        raw_mass: raw[0],
        raw_momentum: [raw[1], raw[2]],
        raw_energy: raw[3],
        collision_rate: executed + skipped,
        skipped_fraction: if executed + skipped > 0.0 {
            skipped / (executed + skipped)
        } else {
            0.0
        },
    };
    let rate: Vec<f64> = rate_mass.iter().map(|m| m / vol).collect();
    Ok((rate, defect))
}

/// Solves a symmetric 4x4 system by Gaussian elimination with partial
/// pivoting; `None` when the matrix is numerically singular.
fn solve4(mut a: [[f64; 4]; 4], mut rhs: [f64; 4]) -> Option<[f64; 4]> {
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |acc, x| acc.max(x.abs()))
        .max(1e-300);
    for col in 0..4 {
        let pivot_row = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for row in col + 1..4 {
            let factor = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= factor * a[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = [0.0f64; 4];
    for col in (0..4).rev() {
        let mut s = rhs[col];
        for k in col + 1..4 {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Advances the homogeneous kinetic equation by Picard iteration of its
/// mild form.
///
/// The iteration refines `f(tau) = f0 + integral of Q(f, f) from 0 to tau`
/// on five equally spaced time nodes with cumulative trapezoid quadrature;
/// `iterations` fixed-point sweeps are applied and the value at `t` is
/// returned.  Successive sweeps agree to order `t^(k+1)`, so with the
/// mandatory horizon `t <= 0.5` mean free times a handful of sweeps
/// saturates the quadrature error.
///
/// # Errors
///
/// `iterations` is capped at 4 and `t` must be nonnegative, finite, and at
/// most half the mean free time of the initial data; kernel requirements
/// are as in [`collision_operator_grid`].
pub fn picard_iterate(
    f0: &DistributionGrid,
    b: &CrossSection,
    iterations: usize,
    t: f64,
) -> Result<PicardOutcome, KineticError> {
    if iterations > 4 {
        return Err(KineticError::InvalidParam(format!(
            "iteration count {iterations} exceeds the supported maximum of 4"
        )));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(KineticError::InvalidParam(format!(
            "horizon {t} must be finite and nonnegative"
        )));
    }
    let grid = *f0.grid();
    let (q0, defect0) = operator_raw(grid, f0.values(), b, DEFAULT_OPERATOR_ANGLES)?;
    let nu = defect0.collision_rate;
    if t * nu > 0.5 {
        return Err(KineticError::InvalidParam(format!(
            "horizon {t} exceeds half a mean free time (collision frequency {nu})"
        )));
    }
    if iterations == 0 || t == 0.0 || nu == 0.0 {
        return Ok(PicardOutcome {
            f: f0.clone(),
            min_value: f0.values().iter().cloned().fold(f64::INFINITY, f64::min),
            negativity_warning: false,
            collision_frequency: nu,
        });
    }

    const NODES: usize = 5;
    let dtau = t / (NODES - 1) as f64;
    let mut iterates: Vec<Vec<f64>> = vec![f0.values().to_vec(); NODES];
    let mut rates: Vec<Vec<f64>> = vec![q0.clone(); NODES];
    for _ in 0..iterations {
        // Node zero never moves, so its rate stays the cached Q(f0).
        for node in 1..NODES {
            rates[node] = operator_raw(grid, &iterates[node], b, DEFAULT_OPERATOR_ANGLES)?.0;
        }
        for node in 1..NODES {
            let mut next = f0.values().to_vec();
            for seg in 0..node {
                let (qa, qb) = (&rates[seg], &rates[seg + 1]);
                for (x, (a, b)) in next.iter_mut().zip(qa.iter().zip(qb)) {
                    *x += 0.5 * dtau * (a + b);
                }
            }
            iterates[node] = next;
        }
    }

    let final_values = iterates.pop().expect("node list is non-empty");
    let min_value = final_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let negativity_warning = min_value < -NEGATIVITY_WARNING_DEPTH;
    let clamp = if min_value < 0.0 {
        min_value.abs() * (1.0 + 1e-12)
    } else {
        0.0
    };
    Ok(PicardOutcome {
        f: DistributionGrid::from_values_clamped(grid, final_values, clamp)?,
        min_value,
        negativity_warning,
        collision_frequency: nu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::VelocityMixture;
    use crate::scattering::{cross_section_from_deflection, DeflectionTable, PotentialSpec};
    use crate::vec;

    fn hard2() -> CrossSection {
        CrossSection::hard_sphere(2).unwrap()
    }

    fn two_bump(grid: VelocityGrid) -> DistributionGrid {
        let mixture = VelocityMixture::symmetric_pair(4.0, [1.2, 0.0]).unwrap();
        DistributionGrid::from_mixture(grid, &mixture).unwrap()
    }

    #[test]
    fn operator_moments_vanish_and_raw_defect_is_honest() {
        let grid = VelocityGrid::new(4.0, 32).unwrap();
        let f = two_bump(grid);
        let (q, defect) = collision_operator_grid(&f, &hard2(), 16).unwrap();
        let vol = grid.cell_volume();
        let mut mass = 0.0;
        let mut momentum = [0.0f64; 2];
        let mut energy = 0.0;
        for (c, &rate) in q.iter().enumerate() {
            let v = grid.center(c / 32, c % 32);
            mass += rate * vol;
            momentum[0] += rate * v[0] * vol;
            momentum[1] += rate * v[1] * vol;
            energy += rate * 0.5 * vec::norm_sq(v) * vol;
        }
        let rate_scale = defect.collision_rate;
        assert!(rate_scale > 0.1, "collision rate {rate_scale}");
        assert!(mass.abs() < 1e-8, "mass moment {mass}");
        assert!(momentum[0].abs() < 1e-6, "momentum moment {momentum:?}");
        assert!(momentum[1].abs() < 1e-6, "momentum moment {momentum:?}");
        assert!(energy.abs() < 1e-6, "energy moment {energy}");
        // The scatter assembly conserves mass and momentum by construction...
        assert!(defect.raw_mass.abs() < 1e-13 * rate_scale);
        assert!(vec::norm(defect.raw_momentum) < 1e-12 * rate_scale);
        // ...while the energy defect of bilinear placement is real, and the
        // diagnostic reports it instead of hiding it.
        assert!(
            defect.raw_energy.abs() > 1e-8,
            "raw energy defect {} suspiciously small",
            defect.raw_energy
        );
        assert!(defect.skipped_fraction < 0.05, "skipped {}", defect.skipped_fraction);
    }

    #[test]
    fn raw_energy_defect_shrinks_under_grid_refinement() {
        let mut defects = Vec::new();
        for g in [16usize, 32, 64] {
            let grid = VelocityGrid::new(4.0, g).unwrap();
            let f = two_bump(grid);
            let (_, defect) = collision_operator_grid(&f, &hard2(), 16).unwrap();
            defects.push(defect.raw_energy.abs() / defect.collision_rate);
        }
        assert!(
            defects[1] < 0.5 * defects[0] && defects[2] < 0.5 * defects[1],
            "defects {defects:?} do not shrink like the cell area"
        );
    }

    #[test]
    fn maxwellian_is_a_discrete_fixed_point_under_refinement() {
        // The residual of the discrete equilibrium is scale invariant in
        // relative terms: about 4e-3 of (peak density x collision rate) at
        // 32 cells, dominated by the bilinear gain placement.  A cold, wide
        // Maxwellian (low peak density) expresses that as a small absolute
        // residual; the value here is deterministic, not statistical.
        let beta: f64 = 0.1;
        let sigma = (1.0 / beta).sqrt();
        let mut sup = Vec::new();
        for g in [32usize, 48] {
            let grid = VelocityGrid::new(3.5 * sigma, g).unwrap();
            let f = DistributionGrid::maxwellian(grid, beta).unwrap();
            let (q, _) = collision_operator_grid(&f, &hard2(), 16).unwrap();
            sup.push(q.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        }
        assert!(sup[0] < 1e-3, "equilibrium residual {} at 32 cells", sup[0]);
        // Refinement cuts the cell area in half squared: the residual drops
        // by about (32/48)^2 = 0.44.
        assert!(sup[1] < 0.6 * sup[0], "residuals {sup:?} do not improve");
    }

    #[test]
    fn two_bump_operator_fills_the_gap_between_bumps() {
        let grid = VelocityGrid::new(4.0, 32).unwrap();
        let f = two_bump(grid);
        let (q, _) = collision_operator_grid(&f, &hard2(), 16).unwrap();
        let at = |v: [f64; 2]| {
            let ([ix, iy], _) = grid.bilinear(v).unwrap();
            q[grid.index(ix, iy)]
        };
        assert!(at([1.2, 0.0]) < 0.0, "rate at first bump {}", at([1.2, 0.0]));
        assert!(at([-1.2, 0.0]) < 0.0, "rate at second bump {}", at([-1.2, 0.0]));
        assert!(at([0.0, 0.0]) > 0.0, "rate between bumps {}", at([0.0, 0.0]));
    }

    #[test]
    fn zero_kernel_gives_zero_operator() {
        let grid = VelocityGrid::new(4.0, 16).unwrap();
        let f = two_bump(grid);
        let (q, defect) = collision_operator_grid(&f, &CrossSection::zero(2).unwrap(), 16).unwrap();
        assert!(q.iter().all(|&x| x == 0.0));
        assert_eq!(defect.collision_rate, 0.0);
    }

    #[test]
    fn operator_rejects_bad_kernel_or_angles() {
        let grid = VelocityGrid::new(4.0, 16).unwrap();
        let f = two_bump(grid);
        let err = collision_operator_grid(&f, &CrossSection::hard_sphere(3).unwrap(), 16);
        assert!(matches!(err.unwrap_err(), KineticError::InvalidParam(_)));
        assert!(collision_operator_grid(&f, &hard2(), 8).is_err());
        assert!(collision_operator_grid(&f, &hard2(), 17).is_err());
    }

    #[test]
    fn operator_rejects_kernel_without_grazing_cutoff() {
        let potential = PotentialSpec::soft(30.0, 2.0).unwrap();
        let rhos: Vec<f64> = (0..41).map(|k| k as f64 / 40.0).collect();
        let table = DeflectionTable::build(&potential, rhos, vec![1.0]).unwrap();
        let unbounded = cross_section_from_deflection(&table, 0.0, 2).unwrap();
        let grid = VelocityGrid::new(4.0, 16).unwrap();
        let f = two_bump(grid);
        assert!(matches!(
            collision_operator_grid(&f, &unbounded, 16).unwrap_err(),
            KineticError::UnboundedKernel(_)
        ));
    }

    #[test]
    fn picard_trivial_cases_return_initial_data() {
        let grid = VelocityGrid::new(4.0, 24).unwrap();
        let f0 = two_bump(grid);
        let none = picard_iterate(&f0, &hard2(), 0, 0.05).unwrap();
        assert_eq!(none.f.values(), f0.values());
        assert!(!none.negativity_warning);
        let frozen = picard_iterate(&f0, &hard2(), 3, 0.0).unwrap();
        assert_eq!(frozen.f.values(), f0.values());
        // A zero kernel freezes the distribution at any admissible horizon.
        let idle = picard_iterate(&f0, &CrossSection::zero(2).unwrap(), 3, 0.3).unwrap();
        assert!(idle.f.l1_distance(&f0).unwrap() < 1e-14);
    }

    #[test]
    fn picard_enforces_horizon_and_iteration_cap() {
        let grid = VelocityGrid::new(4.0, 24).unwrap();
        let f0 = two_bump(grid);
        assert!(picard_iterate(&f0, &hard2(), 5, 0.01).is_err());
        assert!(picard_iterate(&f0, &hard2(), 2, -0.1).is_err());
        // The two-bump state collides about twice per unit time, so one
        // full time unit is far beyond half a mean free time.
        let err = picard_iterate(&f0, &hard2(), 2, 1.0).unwrap_err();
        assert!(matches!(err, KineticError::InvalidParam(_)), "{err}");
    }

    #[test]
    fn picard_sweeps_converge_at_increasing_order() {
        let grid = VelocityGrid::new(4.0, 24).unwrap();
        let f0 = two_bump(grid);
        let b = hard2();
        let l1 = |k: usize, t: f64| {
            let a = picard_iterate(&f0, &b, k, t).unwrap().f;
            let c = picard_iterate(&f0, &b, k + 1, t).unwrap().f;
            a.l1_distance(&c).unwrap()
        };
        // The gap between sweeps k and k+1 scales like t^(k+1): halving t
        // shrinks the k = 1 gap by about 4 and the k = 2 gap by about 8.
        // The two-bump state collides about 3.4 times per unit time, so the
        // longer horizon stays inside the half-mean-free-time bound.
        for (k, factor) in [(1usize, 4.0f64), (2, 8.0)] {
            let coarse = l1(k, 0.12);
            let fine = l1(k, 0.06);
            let ratio = coarse / fine;
            assert!(
                ratio > 0.5 * factor && ratio < 2.0 * factor,
                "sweep {k}: gaps {coarse:.3e} / {fine:.3e} give ratio {ratio:.2}, expected near {factor}"
            );
        }
    }

    #[test]
    fn picard_keeps_mass_and_stays_nearly_nonnegative() {
        let grid = VelocityGrid::new(4.0, 32).unwrap();
        let f0 = two_bump(grid);
        let out = picard_iterate(&f0, &hard2(), 3, 0.1).unwrap();
        assert!((out.f.mass() - 1.0).abs() < 1e-12);
        assert!(out.min_value > -1e-4, "minimum value {}", out.min_value);
        assert!(!out.negativity_warning);
        assert!(out.collision_frequency > 0.5 && out.collision_frequency < 10.0);
        // The distribution actually moved.
        assert!(out.f.l1_distance(&f0).unwrap() > 1e-3);
    }
}
