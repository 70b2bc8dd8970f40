//! Velocity-space grids and gridded distribution functions.

use super::KineticError;
use super::VelocityMixture;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// A square, uniform grid over the velocity box `[-cutoff, cutoff]^2`.
///
/// Values live at cell centres, so the centre lattice is symmetric under
/// `v -> -v`: the centre of cell `(i, j)` is the negative of the centre of
/// cell `(G-1-i, G-1-j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    cutoff: f64,
    resolution: usize,
}

impl VelocityGrid {
    /// Creates a grid with the given velocity cutoff and cells per axis.
    ///
    /// # Errors
    ///
    /// The cutoff must be positive and finite and the resolution at least
    /// two cells per axis.
    pub fn new(cutoff: f64, resolution: usize) -> Result<Self, KineticError> {
        if !(cutoff > 0.0) || !cutoff.is_finite() {
            return Err(KineticError::InvalidParam(format!(
                "velocity cutoff {cutoff} must be positive and finite"
            )));
        }
        if resolution < 2 {
            return Err(KineticError::InvalidParam(format!(
                "grid resolution {resolution} must be at least 2 cells per axis"
            )));
        }
        Ok(Self { cutoff, resolution })
    }

    /// Half-width of the velocity box.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Number of cells per axis.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Side length of one cell.
    pub fn cell_width(&self) -> f64 {
        2.0 * self.cutoff / self.resolution as f64
    }

    /// Area of one cell.
    pub fn cell_volume(&self) -> f64 {
        let w = self.cell_width();
        w * w
    }

    /// Total number of cells.
    pub fn cell_count(&self) -> usize {
        self.resolution * self.resolution
    }

    /// Flat index of cell `(ix, iy)`, x-major.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.resolution + iy
    }

    /// Centre velocity of cell `(ix, iy)`.
    pub fn center(&self, ix: usize, iy: usize) -> [f64; 2] {
        let w = self.cell_width();
        [
            -self.cutoff + (ix as f64 + 0.5) * w,
            -self.cutoff + (iy as f64 + 0.5) * w,
        ]
    }

    /// Locates `v` within the centre lattice for bilinear interpolation.
    ///
    /// Returns the lower-left cell indices and the fractional offsets in
    /// `[0, 1]` along each axis, or `None` when `v` lies outside the convex
    /// hull of cell centres (where interpolation would extrapolate).
    pub fn bilinear(&self, v: [f64; 2]) -> Option<([usize; 2], [f64; 2])> {
        let w = self.cell_width();
        let last = self.resolution - 1;
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for axis in 0..2 {
            let s = (v[axis] + self.cutoff) / w - 0.5;
            if !(0.0..=last as f64).contains(&s) {
                return None;
            }
            let mut i = s.floor() as usize;
            if i >= last {
                i = last - 1;
            }
            base[axis] = i;
            frac[axis] = s - i as f64;
        }
        Some((base, frac))
    }
}

/// A nonnegative, unit-mass distribution sampled on a [`VelocityGrid`].
///
/// Every constructor normalizes the values so that the total mass
/// `sum(f) * cell_volume` equals one up to rounding; nonnegativity is
/// checked up to the stated clamping tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionGrid {
    grid: VelocityGrid,
    values: Vec<f64>,
}

impl DistributionGrid {
    /// Builds a distribution by averaging a density over each cell.
    ///
    /// The average uses a tensor 3-point Gauss rule per cell, which keeps
    /// the discrete moments of smooth densities accurate to the cell width
    /// to the sixth power.
    ///
    /// # Errors
    ///
    /// The density must return finite, nonnegative values, and must carry
    /// positive total mass on the grid box.
    pub fn from_density(
        grid: VelocityGrid,
        density: impl Fn([f64; 2]) -> f64,
    ) -> Result<Self, KineticError> {
        // 3-point Gauss-Legendre nodes and weights on [-1/2, 1/2].
        let offset = 0.5 * (3.0f64 / 5.0).sqrt();
        let nodes = [-offset, 0.0, offset];
        let weights = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
        let g = grid.resolution;
        let w = grid.cell_width();
        let mut values = vec![0.0; grid.cell_count()];
        for ix in 0..g {
            for iy in 0..g {
                let c = grid.center(ix, iy);
                let mut avg = 0.0;
                for (nx, wx) in nodes.iter().zip(weights) {
                    for (ny, wy) in nodes.iter().zip(weights) {
                        let v = [c[0] + nx * w, c[1] + ny * w];
                        let f = density(v);
                        if !f.is_finite() || f < 0.0 {
                            return Err(KineticError::InvalidDistribution(format!(
                                "density value {f} at velocity {v:?} is not finite and nonnegative"
                            )));
                        }
                        avg += wx * wy * f;
                    }
                }
                values[grid.index(ix, iy)] = avg;
            }
        }
        Self::from_values(grid, values)
    }

    /// Builds a distribution from a Gaussian mixture by cell averaging.
    pub fn from_mixture(
        grid: VelocityGrid,
        mixture: &VelocityMixture<2>,
    ) -> Result<Self, KineticError> {
        Self::from_density(grid, |v| mixture.density(v))
    }

    /// A grid Maxwellian at inverse temperature `beta`.
    pub fn maxwellian(grid: VelocityGrid, beta: f64) -> Result<Self, KineticError> {
        Self::from_mixture(grid, &VelocityMixture::maxwellian(beta)?)
    }

    /// Wraps explicit cell values, normalizing them to unit mass.
    ///
    /// # Errors
    ///
    /// The value list must match the grid size, contain only finite
    /// nonnegative entries, and carry positive mass.
    pub fn from_values(grid: VelocityGrid, values: Vec<f64>) -> Result<Self, KineticError> {
        Self::from_values_clamped(grid, values, 0.0)
    }

    /// Wraps cell values that may dip slightly negative, clamping dips no
    /// deeper than `tolerance` to zero before normalizing.
    ///
    /// Iterative solvers produce small negative excursions from quadrature
    /// error; this constructor accepts them up to the stated depth while
    /// still rejecting genuinely signed data.
    pub fn from_values_clamped(
        grid: VelocityGrid,
        mut values: Vec<f64>,
        tolerance: f64,
    ) -> Result<Self, KineticError> {
        if values.len() != grid.cell_count() {
            return Err(KineticError::InvalidDistribution(format!(
                "value list has {} entries for a grid of {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        for v in &mut values {
            if !v.is_finite() {
                return Err(KineticError::InvalidDistribution(
                    "grid values must be finite".into(),
                ));
            }
            if *v < 0.0 {
                if *v < -tolerance {
                    return Err(KineticError::InvalidDistribution(format!(
                        "grid value {v} is below the clamping tolerance -{tolerance}"
                    )));
                }
                *v = 0.0;
            }
        }
        let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(KineticError::InvalidDistribution(format!(
                "grid carries non-normalizable mass {mass}"
            )));
        }
        for v in &mut values {
            *v /= mass;
        }
        Ok(Self { grid, values })
    }

    /// Bins an ensemble's velocities into cell frequencies.
    ///
    /// Cell `(i, j)` covers the half-open box
    /// `[-cutoff + i w, -cutoff + (i+1) w) x [...)`; samples outside the
    /// box are dropped.  The result is normalized over the retained
    /// samples, so it compares directly against other unit-mass
    /// distributions on the same grid.
    ///
    /// # Errors
    ///
    /// At least one sample must land inside the box.
    pub fn histogram(
        grid: VelocityGrid,
        samples: &[[f64; 2]],
    ) -> Result<Self, KineticError> {
        let g = grid.resolution();
        let w = grid.cell_width();
        let mut counts = vec![0.0f64; grid.cell_count()];
        for v in samples {
            let ix = ((v[0] + grid.cutoff()) / w).floor();
            let iy = ((v[1] + grid.cutoff()) / w).floor();
            if (0.0..g as f64).contains(&ix) && (0.0..g as f64).contains(&iy) {
                counts[grid.index(ix as usize, iy as usize)] += 1.0;
            }
        }
        Self::from_values(grid, counts)
    }

    /// Sums `factor x factor` blocks of cells into a coarser distribution.
    ///
    /// Aggregation commutes with binning, so a fine histogram aggregated by
    /// `factor` equals the histogram taken directly on the coarse grid;
    /// it trades velocity resolution for a proportionally lower sampling
    /// noise floor in distribution comparisons.
    ///
    /// # Errors
    ///
    /// `factor` must divide the resolution.
    pub fn block_aggregate(&self, factor: usize) -> Result<Self, KineticError> {
        if factor == 0 || self.grid.resolution() % factor != 0 {
            return Err(KineticError::InvalidParam(format!(
                "block factor {factor} does not divide {} cells per axis",
                self.grid.resolution()
            )));
        }
        let coarse = VelocityGrid::new(self.grid.cutoff(), self.grid.resolution() / factor)?;
        let mut values = vec![0.0f64; coarse.cell_count()];
        for ix in 0..self.grid.resolution() {
            for iy in 0..self.grid.resolution() {
                values[coarse.index(ix / factor, iy / factor)] += self.value(ix, iy);
            }
        }
        // Summed cell masses over the larger cells: density is the mean.
        let scale = 1.0 / (factor * factor) as f64;
        for v in &mut values {
            *v *= scale;
        }
        Self::from_values(coarse, values)
    }

    /// The underlying grid.
    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    /// Cell values, x-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value of cell `(ix, iy)`.
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.grid.index(ix, iy)]
    }

    /// Total mass `sum(f) * cell_volume`; one up to rounding.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// `L1` distance to another distribution on the same grid.
    ///
    /// # Errors
    ///
    /// Both distributions must share the same grid.
    pub fn l1_distance(&self, other: &Self) -> Result<f64, KineticError> {
        if self.grid != other.grid {
            return Err(KineticError::InvalidParam(
                "distributions live on different grids".into(),
            ));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_volume())
    }

    /// Writes the distribution as `vx,vy,f` rows.
    ///
    /// Values print in shortest round-trip decimal form, so reading them
    /// back reproduces the stored floats bit for bit.
    pub fn write_csv(&self, path: &Path) -> Result<(), KineticError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "vx,vy,f")?;
        let g = self.grid.resolution;
        for ix in 0..g {
            for iy in 0..g {
                let c = self.grid.center(ix, iy);
                writeln!(out, "{},{},{}", c[0], c[1], self.value(ix, iy))?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
