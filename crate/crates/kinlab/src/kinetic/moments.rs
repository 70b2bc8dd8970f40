//! Moments and entropy of gridded and sampled velocity distributions.

use super::grid::DistributionGrid;
use super::{KineticError, ParticleEnsemble};
use crate::stats;
use crate::vec;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Neighbour order of the nearest-neighbour entropy estimator.
const KNN_ORDER: usize = 4;

/// Disjoint subsamples used for the entropy error bar.
const ENTROPY_BLOCKS: usize = 8;

/// Smallest ensemble admitted to density-level estimation.
const MIN_STATISTICAL_SIZE: usize = 1000;

/// Low-order moments of a velocity distribution.
///
/// `entropy` is the integral of `f log f`; it decreases toward equilibrium.
/// For ensembles it is estimated from nearest-neighbour spacings and comes
/// with a subsample standard error; for grids it is a plain quadrature and
/// `entropy_se` is `None`.
#[derive(Debug, Clone, Copy)]
pub struct MomentSummary<const D: usize> {
    /// Total represented mass.
    pub mass: f64,
    /// First moment per axis.
    pub momentum: [f64; D],
    /// Kinetic energy `integral of |v|^2 / 2`.
    pub energy: f64,
    /// Fourth moment `integral of |v|^4`.
    pub fourth: f64,
    /// `integral of f log f`.
    pub entropy: f64,
    /// Standard error of the entropy estimate, when it is statistical.
    pub entropy_se: Option<f64>,
}

/// Moments of a gridded distribution by midpoint quadrature over cells.
pub fn grid_moments(f: &DistributionGrid) -> MomentSummary<2> {
    let grid = f.grid();
    let vol = grid.cell_volume();
    let mut out = MomentSummary {
        mass: 0.0,
        momentum: [0.0; 2],
        energy: 0.0,
        fourth: 0.0,
        entropy: 0.0,
        entropy_se: None,
    };
    for ix in 0..grid.resolution() {
        for iy in 0..grid.resolution() {
            let value = f.value(ix, iy);
            let weight = value * vol;
            let v = grid.center(ix, iy);
            let speed_sq = vec::norm_sq(v);
            out.mass += weight;
            out.momentum[0] += weight * v[0];
            out.momentum[1] += weight * v[1];
            out.energy += weight * 0.5 * speed_sq;
            out.fourth += weight * speed_sq * speed_sq;
            if value > 0.0 {
                out.entropy += weight * value.ln();
            }
        }
    }
    out
}

/// Moments and entropy of a particle ensemble.
///
/// Mass, momentum, energy, and the fourth moment are exact sample
/// statistics of the equal-weight ensemble.  The entropy comes from the
/// nearest-neighbour spacing estimator applied to the full sample, with a
/// standard error from eight disjoint subsamples.
///
/// # Errors
///
/// Density-level estimation needs at least 1000 particles.
pub fn ensemble_moments<const D: usize>(
    ens: &ParticleEnsemble<D>,
) -> Result<MomentSummary<D>, KineticError> {
    if ens.len() < MIN_STATISTICAL_SIZE {
        return Err(KineticError::EnsembleTooSmall {
            size: ens.len(),
            required: format!("{MIN_STATISTICAL_SIZE} particles for density estimation"),
        });
    }
    let m = ens.len() as f64;
    let mut out = MomentSummary {
        mass: 1.0,
        momentum: [0.0; D],
        energy: 0.0,
        fourth: 0.0,
        entropy: 0.0,
        entropy_se: None,
    };
    for v in ens.velocities() {
        let speed_sq = vec::norm_sq(*v);
        for axis in 0..D {
            out.momentum[axis] += v[axis] / m;
        }
        out.energy += 0.5 * speed_sq / m;
        out.fourth += speed_sq * speed_sq / m;
    }
    out.entropy = knn_entropy(ens.velocities())?;
    // Error bar from disjoint subsamples: each block carries the same
    // sampling noise scaled up by sqrt(blocks), so the spread of block
    // estimates divided by the block count's square root estimates the
    // full-sample error.
    let block_len = ens.len() / ENTROPY_BLOCKS;
    let mut block_values = Vec::with_capacity(ENTROPY_BLOCKS);
    for block in 0..ENTROPY_BLOCKS {
        let lo = block * block_len;
        let hi = if block + 1 == ENTROPY_BLOCKS {
            ens.len()
        } else {
            lo + block_len
        };
        block_values.push(knn_entropy(&ens.velocities()[lo..hi])?);
    }
    let (_, block_se) = stats::mean_and_se(&block_values);
    out.entropy_se = Some(block_se);
    Ok(out)
}

/// Nearest-neighbour estimate of `integral of f log f`.
///
/// Uses the spacing to the fourth-nearest neighbour: the differential
/// entropy is `psi(n) - psi(k) + log c_d + d * mean(log r_k)` with `c_d`
/// the unit-ball volume, and the returned value is its negative.
fn knn_entropy<const D: usize>(points: &[[f64; D]]) -> Result<f64, KineticError> {
    let n = points.len();
    if n <= KNN_ORDER {
        return Err(KineticError::EnsembleTooSmall {
            size: n,
            required: format!("more than {KNN_ORDER} points for spacing estimation"),
        });
    }
    let spacings = knn_distances(points, KNN_ORDER);
    let mut log_sum = 0.0;
    let mut counted = 0usize;
    for r in &spacings {
        // Coincident samples contribute no spacing information.
        if *r > 0.0 {
            log_sum += r.ln();
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(KineticError::InvalidDistribution(
            "all ensemble velocities coincide; the density is singular".into(),
        ));
    }
    let unit_ball = match D {
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        _ => {
            return Err(KineticError::InvalidParam(format!(
                "entropy estimation supports dimensions 2 and 3, got {D}"
            )))
        }
    };
    let differential = stats::digamma_int(n) - stats::digamma_int(KNN_ORDER)
        + unit_ball.ln()
        + D as f64 * log_sum / counted as f64;
    Ok(-differential)
}

/// Distance to the `k`-th nearest neighbour for every point, via a uniform
/// bucket grid and expanding ring search.
fn knn_distances<const D: usize>(points: &[[f64; D]], k: usize) -> Vec<f64> {
    let n = points.len();
    let mut lo = [f64::INFINITY; D];
    let mut hi = [f64::NEG_INFINITY; D];
    for p in points {
        for axis in 0..D {
            lo[axis] = lo[axis].min(p[axis]);
            hi[axis] = hi[axis].max(p[axis]);
        }
    }
    // Aim for a handful of points per bucket.
    let per_axis = ((n as f64 / 4.0).powf(1.0 / D as f64).floor() as usize).max(1);
    let mut width = [0.0f64; D];
    for axis in 0..D {
        let span = (hi[axis] - lo[axis]).max(f64::MIN_POSITIVE);
        width[axis] = span / per_axis as f64 * (1.0 + 1e-12);
    }
    let min_width = width.iter().cloned().fold(f64::INFINITY, f64::min);

    let bucket_of = |p: &[f64; D]| -> usize {
        let mut index = 0usize;
        for axis in 0..D {
            let cell = (((p[axis] - lo[axis]) / width[axis]) as usize).min(per_axis - 1);
            index = index * per_axis + cell;
        }
        index
    };
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); per_axis.pow(D as u32)];
    for (i, p) in points.iter().enumerate() {
        buckets[bucket_of(p)].push(i as u32);
    }

    let coords_of = |p: &[f64; D]| -> [usize; D] {
        let mut c = [0usize; D];
        for axis in 0..D {
            c[axis] = (((p[axis] - lo[axis]) / width[axis]) as usize).min(per_axis - 1);
        }
        c
    };

    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let home = coords_of(p);
            // Max-heap of the k smallest squared distances seen so far.
            let mut best: Vec<f64> = Vec::with_capacity(k);
            let mut ring = 0usize;
            loop {
                let mut any_cell = false;
                // Visit every bucket whose Chebyshev ring index equals `ring`.
                visit_ring::<D>(&home, ring, per_axis, &mut |cell| {
                    any_cell = true;
                    let mut index = 0usize;
                    for axis in 0..D {
                        index = index * per_axis + cell[axis];
                    }
                    for &j in &buckets[index] {
                        if j as usize == i {
                            continue;
                        }
                        let d2 = vec::norm_sq(vec::sub(points[j as usize], *p));
                        if best.len() < k {
                            best.push(d2);
                            best.sort_by(|a, b| a.total_cmp(b));
                        } else if d2 < best[k - 1] {
                            best[k - 1] = d2;
                            best.sort_by(|a, b| a.total_cmp(b));
                        }
                    }
                });
                // Points beyond the scanned rings are at least
                // `ring * min_width` away; once the current k-th spacing is
                // inside that bound it cannot be displaced.
                let guaranteed = ring as f64 * min_width;
                if best.len() == k && best[k - 1].sqrt() <= guaranteed {
                    break;
                }
                if !any_cell && ring > per_axis {
                    break;
                }
                ring += 1;
            }
            best[k - 1].sqrt()
        })
        .collect()
}

/// Calls `visit` for every in-range cell at exact Chebyshev distance
/// `ring` from `home`.
fn visit_ring<const D: usize>(
    home: &[usize; D],
    ring: usize,
    per_axis: usize,
    visit: &mut impl FnMut(&[usize; D]),
) {
    let mut cell = [0usize; D];
    let mut offsets = [0isize; D];
    walk_ring::<D>(home, ring, per_axis, 0, &mut offsets, &mut cell, visit);
}

fn walk_ring<const D: usize>(
    home: &[usize; D],
    ring: usize,
    per_axis: usize,
    axis: usize,
    offsets: &mut [isize; D],
    cell: &mut [usize; D],
    visit: &mut impl FnMut(&[usize; D]),
) {
    if axis == D {
        if offsets.iter().map(|o| o.unsigned_abs()).max() == Some(ring) {
            visit(cell);
        }
        return;
    }
    let r = ring as isize;
    for offset in -r..=r {
        let coord = home[axis] as isize + offset;
        if coord < 0 || coord >= per_axis as isize {
            continue;
        }
        offsets[axis] = offset;
        cell[axis] = coord as usize;
        walk_ring::<D>(home, ring, per_axis, axis + 1, offsets, cell, visit);
    }
}

/// One row of a moment time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    /// Sample time.
    pub t: f64,
    /// Total mass.
    pub mass: f64,
    /// Momentum components.
    pub px: f64,
    pub py: f64,
    /// Kinetic energy.
    pub energy: f64,
    /// Fourth velocity moment.
    pub m4: f64,
    /// `integral of f log f`.
    pub entropy: f64,
}

impl MomentRecord {
    /// Packages a two-dimensional moment summary at time `t`.
    pub fn from_summary(t: f64, s: &MomentSummary<2>) -> Self {
        Self {
            t,
            mass: s.mass,
            px: s.momentum[0],
            py: s.momentum[1],
            energy: s.energy,
            m4: s.fourth,
            entropy: s.entropy,
        }
    }
}

/// Writes a moment series as one JSON object per line.
pub fn write_moment_series(path: &Path, records: &[MomentRecord]) -> Result<(), KineticError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| KineticError::Numeric(format!("serializing moment record: {e}")))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a moment series written by [`write_moment_series`].
pub fn read_moment_series(path: &Path) -> Result<Vec<MomentRecord>, KineticError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MomentRecord = serde_json::from_str(&line).map_err(|e| {
            KineticError::InvalidParam(format!("moment series line {}: {e}", lineno + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}
