//! One-particle marginal estimation and factorization tests.
//!
//! All estimators here are label-free: histogram counts are integer
//! accumulations (exactly associative in floating point), and every
//! non-integer per-replica sum runs in a canonical order obtained by
//! sorting particles by velocity, so relabeling particles inside a
//! replica reproduces each estimate bit for bit.
//!
//! Error bars come from replica groups: replicas are assigned round-robin
//! to at most 128 groups by their stream index, and the scatter of
//! group-level statistics estimates the error of the pooled value.  This
//! keeps memory at `O(groups x cells)` no matter how many replicas are
//! pooled, and the same grouping feeds the bootstrap used for nonlinear
//! functionals (`L1`, corrected quadratic distance).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnsembleError, ReplicaSet};
use crate::core::{torus_displacement, Configuration};
use crate::kinetic::{DistributionGrid, VelocityGrid};
use crate::vec;

/// Upper bound on the number of replica groups used for error bars.
const MAX_GROUPS: usize = 128;

/// Bootstrap resamples behind `L1` and corrected-quadratic error bars.
const BOOTSTRAP_ROUNDS: usize = 200;

/// Fixed seed for the error-bar bootstrap, so identical inputs give
/// byte-identical reports.
const BOOTSTRAP_SEED: u64 = 0x6d61_7267_696e_616c;

/// Names of the weak-convergence test family.
pub(crate) const TEST_FUNCTION_NAMES: [&str; 6] = ["1", "vx", "vy", "vsq", "vxvy", "gauss"];

/// The test family `{1, v_x, v_y, |v|^2, v_x v_y, exp(-|v|^2/2)}`.
pub(crate) fn test_function(k: usize, v: [f64; 2]) -> f64 {
    match k {
        0 => 1.0,
        1 => v[0],
        2 => v[1],
        3 => vec::norm_sq(v),
        4 => v[0] * v[1],
        5 => (-0.5 * vec::norm_sq(v)).exp(),
        _ => unreachable!("test family has six members"),
    }
}

/// Particle order sorted by velocity (total order, ties by position):
/// the canonical order used for label-free floating-point sums.
fn canonical_order(cfg: &Configuration<2>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cfg.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&cfg.points[a], &cfg.points[b]);
        pa.v[0]
            .total_cmp(&pb.v[0])
            .then(pa.v[1].total_cmp(&pb.v[1]))
            .then(pa.x[0].total_cmp(&pb.x[0]))
            .then(pa.x[1].total_cmp(&pb.x[1]))
    });
    order
}

/// Flat cell index of a velocity, or `None` outside the grid box.
fn locate(grid: &VelocityGrid, v: [f64; 2]) -> Option<usize> {
    let w = grid.cell_width();
    let g = grid.resolution();
    let ix = ((v[0] + grid.cutoff()) / w).floor();
    let iy = ((v[1] + grid.cutoff()) / w).floor();
    if (0.0..g as f64).contains(&ix) && (0.0..g as f64).contains(&iy) {
        Some(grid.index(ix as usize, iy as usize))
    } else {
        None
    }
}

/// Marks particles having another particle within `radius` (torus
/// metric), via a bucket grid so one replica costs `O(n)` rather than
/// `O(n^2)` when the radius is small.
fn neighbor_within(cfg: &Configuration<2>, radius: f64) -> Vec<bool> {
    let n = cfg.len();
    let mut flagged = vec![false; n];
    // Bucket side at least `radius` and at least 0.05 so occupancy stays
    // a handful of particles; `k` buckets of width `1/k >= side`.
    let side = radius.max(0.05);
    let k = (1.0 / side).floor().max(1.0) as usize;
    let mut buckets = vec![Vec::new(); k * k];
    let slot = |x: [f64; 2]| -> (usize, usize) {
        let bx = ((x[0] * k as f64) as usize).min(k - 1);
        let by = ((x[1] * k as f64) as usize).min(k - 1);
        (bx, by)
    };
    for (i, p) in cfg.points.iter().enumerate() {
        let (bx, by) = slot(p.x);
        buckets[bx * k + by].push(i);
    }
    for (i, p) in cfg.points.iter().enumerate() {
        let (bx, by) = slot(p.x);
        'search: for dx in 0..3 {
            for dy in 0..3 {
                let nx = (bx + k + dx - 1) % k;
                let ny = (by + k + dy - 1) % k;
                for &j in &buckets[nx * k + ny] {
                    if j != i
                        && vec::norm(torus_displacement(p.x, cfg.points[j].x)) <= radius
                    {
                        flagged[i] = true;
                        break 'search;
                    }
                }
            }
        }
    }
    flagged
}

/// Streaming histogram accumulator over replica sets.
///
/// Counts are per group and per cell; the probability of a cell is
/// measured relative to every tagged particle, so particles dropped by
/// the velocity box or by an exclusion indicator deplete total weight
/// instead of being renormalized away.  That convention makes the
/// truncated estimate a sub-probability whose missing mass is exactly
/// the excluded fraction.
pub(crate) struct MarginalAccumulator {
    grid: VelocityGrid,
    exclusion: Option<f64>,
    groups: usize,
    counts: Vec<Vec<f64>>,
    totals: Vec<f64>,
    samples: u64,
    retained: u64,
    excluded: u64,
    replicas: usize,
}

impl MarginalAccumulator {
    pub(crate) fn new(
        grid: VelocityGrid,
        groups: usize,
        exclusion: Option<f64>,
    ) -> Result<Self, EnsembleError> {
        if groups < 2 {
            return Err(EnsembleError::InvalidParam(
                "need at least two replica groups for error bars".into(),
            ));
        }
        if let Some(radius) = exclusion {
            if !(radius >= 0.0 && radius < 0.5) {
                return Err(EnsembleError::InvalidParam(format!(
                    "exclusion radius {radius} must lie in [0, 0.5) on the unit torus"
                )));
            }
        }
        let cells = grid.cell_count();
        Ok(Self {
            grid,
            exclusion,
            groups,
            counts: vec![vec![0.0; cells]; groups],
            totals: vec![0.0; groups],
            samples: 0,
            retained: 0,
            excluded: 0,
            replicas: 0,
        })
    }

    /// Absorbs a replica set, assigning groups by global replica index
    /// `offset + position` so chunked and one-shot accumulation agree.
    pub(crate) fn absorb(&mut self, set: &ReplicaSet<2>, offset: usize) {
        for (r, rep) in set.replicas.iter().enumerate() {
            let g = (offset + r) % self.groups;
            let keep = match self.exclusion {
                Some(radius) => {
                    let near = neighbor_within(&rep.state, radius);
                    near.iter().map(|flag| !flag).collect()
                }
                None => vec![true; rep.state.len()],
            };
            for (p, keep_particle) in rep.state.points.iter().zip(&keep) {
                self.samples += 1;
                self.totals[g] += 1.0;
                if !keep_particle {
                    self.excluded += 1;
                    continue;
                }
                if let Some(c) = locate(&self.grid, p.v) {
                    self.counts[g][c] += 1.0;
                    self.retained += 1;
                }
            }
            self.replicas += 1;
        }
    }

    pub(crate) fn finalize(self) -> Result<MarginalEstimate, EnsembleError> {
        if self.retained == 0 {
            return Err(EnsembleError::InsufficientData(
                "no particle landed inside the velocity box".into(),
            ));
        }
        let occupied = self.totals.iter().filter(|t| **t > 0.0).count();
        if occupied < 2 {
            return Err(EnsembleError::InsufficientData(
                "need replicas in at least two groups for error bars".into(),
            ));
        }
        // Pooled probabilities from total counts (exact); group scatter
        // of per-group probabilities for the standard errors.
        let cells = self.grid.cell_count();
        let group_probs: Vec<Vec<f64>> = self
            .counts
            .iter()
            .zip(&self.totals)
            .filter(|(_, t)| **t > 0.0)
            .map(|(c, t)| c.iter().map(|x| x / t).collect())
            .collect();
        let gn = group_probs.len() as f64;
        let total: f64 = self.totals.iter().sum();
        let mut probabilities = vec![0.0f64; cells];
        for counts in &self.counts {
            for (p, c) in probabilities.iter_mut().zip(counts) {
                *p += c;
            }
        }
        for p in &mut probabilities {
            *p /= total;
        }
        let mut stderr = vec![0.0f64; cells];
        for probs in &group_probs {
            for ((s, p), m) in stderr.iter_mut().zip(probs).zip(&probabilities) {
                *s += (p - m) * (p - m);
            }
        }
        for s in &mut stderr {
            *s = (*s / (gn * (gn - 1.0))).sqrt();
        }
        Ok(MarginalEstimate {
            grid: self.grid,
            probabilities,
            stderr,
            group_probs,
            samples: self.samples,
            retained: self.retained,
            excluded: self.excluded,
            replicas: self.replicas,
        })
    }
}

/// Velocity histogram of the one-particle marginal, pooled over
/// particles and replicas (positions integrated out; valid because the
/// initial law is uniform in position).
#[derive(Debug, Clone)]
pub struct MarginalEstimate {
    grid: VelocityGrid,
    probabilities: Vec<f64>,
    stderr: Vec<f64>,
    group_probs: Vec<Vec<f64>>,
    samples: u64,
    retained: u64,
    excluded: u64,
    replicas: usize,
}

impl MarginalEstimate {
    /// The velocity partition the histogram lives on.
    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    /// Per-cell probability relative to all tagged particles, x-major.
    ///
    /// Sums to the retained weight, not to one: mass outside the
    /// velocity box or removed by an exclusion indicator is missing by
    /// design.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Per-cell standard error of [`Self::probabilities`], from replica
    /// group scatter.
    pub fn stderr(&self) -> &[f64] {
        &self.stderr
    }

    /// Probability of cell `(ix, iy)`.
    pub fn probability(&self, ix: usize, iy: usize) -> f64 {
        self.probabilities[self.grid.index(ix, iy)]
    }

    /// Tagged particles pooled into the estimate.
    pub fn samples(&self) -> u64 {
        self.samples
    }

    /// Replicas pooled into the estimate.
    pub fn replicas(&self) -> usize {
        self.replicas
    }

    /// Retained weight `sum of probabilities`: 1 minus the excluded and
    /// out-of-box fractions.
    pub fn weight(&self) -> f64 {
        self.retained as f64 / self.samples as f64
    }

    /// Fraction of tagged particles removed by the exclusion indicator
    /// (zero for the plain marginal).
    pub fn excluded_fraction(&self) -> f64 {
        self.excluded as f64 / self.samples as f64
    }

    /// Unit-mass density view of the histogram for plotting and for
    /// comparisons that expect a normalized distribution.
    ///
    /// # Errors
    ///
    /// The histogram must have positive retained weight (guaranteed at
    /// construction).
    pub fn density(&self) -> Result<DistributionGrid, EnsembleError> {
        Ok(DistributionGrid::from_values(
            self.grid.clone(),
            self.probabilities.clone(),
        )?)
    }

    /// `L1` distance between the weighted cell probabilities of two
    /// estimates on the same grid — e.g. a truncated estimate against
    /// its plain partner, where the distance is dominated by the
    /// excluded mass.
    ///
    /// # Errors
    ///
    /// Both estimates must share the same grid.
    pub fn l1_weighted(&self, other: &Self) -> Result<f64, EnsembleError> {
        if self.grid != other.grid {
            return Err(EnsembleError::InvalidParam(
                "estimates live on different grids".into(),
            ));
        }
        Ok(self
            .probabilities
            .iter()
            .zip(&other.probabilities)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }

    pub(crate) fn group_probabilities(&self) -> &[Vec<f64>] {
        &self.group_probs
    }
}

fn require_replicas(set: &ReplicaSet<2>, minimum: usize) -> Result<(), EnsembleError> {
    if set.len() < minimum {
        return Err(EnsembleError::InsufficientData(format!(
            "need at least {minimum} replicas, got {}",
            set.len()
        )));
    }
    Ok(())
}

/// Estimates the one-particle velocity marginal of a replica set on the
/// given partition.
///
/// # Errors
///
/// Needs at least 30 replicas and at least one particle inside the
/// velocity box.
pub fn estimate_marginal(
    set: &ReplicaSet<2>,
    grid: &VelocityGrid,
) -> Result<MarginalEstimate, EnsembleError> {
    require_replicas(set, 30)?;
    let mut acc = MarginalAccumulator::new(grid.clone(), set.len().min(MAX_GROUPS), None)?;
    acc.absorb(set, 0);
    acc.finalize()
}

/// Estimates the truncated one-particle marginal: particles with any
/// other particle within `radius` are excluded, so the histogram is a
/// sub-probability whose missing mass is the excluded fraction.
///
/// At any radius below the hard-core diameter the indicator is
/// identically one and the estimate equals the plain marginal.
///
/// # Errors
///
/// As [`estimate_marginal`]; the radius must lie in `[0, 0.5)`.
pub fn estimate_truncated_marginal(
    set: &ReplicaSet<2>,
    grid: &VelocityGrid,
    radius: f64,
) -> Result<MarginalEstimate, EnsembleError> {
    require_replicas(set, 30)?;
    let mut acc =
        MarginalAccumulator::new(grid.clone(), set.len().min(MAX_GROUPS), Some(radius))?;
    acc.absorb(set, 0);
    acc.finalize()
}

/// Checks cell-by-cell domination `truncated count <= plain count` in
/// every replica separately (the truncation removes particles and can
/// never add them; this verifies the estimator realizes that).
///
/// # Errors
///
/// The radius must lie in `[0, 0.5)`.
pub fn truncation_dominated_per_replica(
    set: &ReplicaSet<2>,
    grid: &VelocityGrid,
    radius: f64,
) -> Result<bool, EnsembleError> {
    if !(radius >= 0.0 && radius < 0.5) {
        return Err(EnsembleError::InvalidParam(format!(
            "exclusion radius {radius} must lie in [0, 0.5) on the unit torus"
        )));
    }
    let cells = grid.cell_count();
    let mut plain = vec![0u64; cells];
    let mut truncated = vec![0u64; cells];
    for rep in &set.replicas {
        plain.iter_mut().for_each(|c| *c = 0);
        truncated.iter_mut().for_each(|c| *c = 0);
        let near = neighbor_within(&rep.state, radius);
        for (p, flagged) in rep.state.points.iter().zip(&near) {
            if let Some(c) = locate(grid, p.v) {
                plain[c] += 1;
                if !flagged {
                    truncated[c] += 1;
                }
            }
        }
        if truncated.iter().zip(&plain).any(|(t, p)| t > p) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// One weak-convergence distance `|<phi, est> - <phi, f>|`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct WeakDistance {
    /// Test function name (`1`, `vx`, `vy`, `vsq`, `vxvy`, `gauss`).
    pub name: String,
    /// Absolute difference of the binned expectations.
    pub value: f64,
    /// Replica-group standard error of the difference.
    pub stderr: f64,
}

/// Distances between an estimated marginal and a kinetic distribution.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct KineticDistance {
    /// `sum_c |phat_c - p_c|` over the common cells (integral `L1`).
    pub l1: f64,
    /// Group-bootstrap standard error of `l1`.
    pub l1_stderr: f64,
    /// Weak distances for the six-function test family.
    pub weak: Vec<WeakDistance>,
    /// Largest weak distance.
    pub weak_max: f64,
    /// Noise-corrected squared `L2` distance on cell probabilities:
    /// `sum_c (phat_c - p_c)^2 - sum_c Var(phat_c)`.  Unbiased for the
    /// true squared distance, so pure sampling noise centers it at zero
    /// and a resolved signal pulls it positive.
    pub quadratic: f64,
    /// Group-bootstrap standard error of `quadratic`.
    pub quadratic_stderr: f64,
    /// The subtracted noise floor `sum_c Var(phat_c)`.
    pub noise_variance: f64,
}

impl KineticDistance {
    /// Corrected `L2` distance `sqrt(max(quadratic, 0))`.
    pub fn l2_corrected(&self) -> f64 {
        self.quadratic.max(0.0).sqrt()
    }

    /// Whether the corrected quadratic signal clears `z` standard
    /// errors — the gate for using this row in a convergence-rate fit.
    pub fn resolved(&self, z: f64) -> bool {
        self.quadratic > z * self.quadratic_stderr
    }
}

fn pooled(groups: &[Vec<f64>]) -> Vec<f64> {
    let mut p = vec![0.0; groups[0].len()];
    for g in groups {
        for (a, b) in p.iter_mut().zip(g) {
            *a += b;
        }
    }
    for a in &mut p {
        *a /= groups.len() as f64;
    }
    p
}

fn pooled_variance(groups: &[Vec<f64>], center: &[f64]) -> Vec<f64> {
    let gn = groups.len() as f64;
    let mut var = vec![0.0; center.len()];
    for g in groups {
        for ((v, p), m) in var.iter_mut().zip(g).zip(center) {
            *v += (p - m) * (p - m);
        }
    }
    for v in &mut var {
        *v /= gn * (gn - 1.0);
    }
    var
}

fn l1_between(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn quadratic_corrected(pool: &[f64], var: &[f64], target: &[f64]) -> f64 {
    let raw: f64 = pool
        .iter()
        .zip(target)
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    raw - var.iter().sum::<f64>()
}

/// Compares an estimated marginal against a kinetic distribution.
///
/// The kinetic side may live on a finer grid with the same cutoff and a
/// resolution divisible by the estimate's; it is then block-aggregated
/// onto the estimate's partition (cell averaging is exact for cell-mean
/// data).  All three distance families come with error bars: `L1` and
/// the noise-corrected quadratic distance via a deterministic group
/// bootstrap, weak distances via group scatter.
///
/// # Errors
///
/// Grid cutoffs must match and resolutions must be compatible.
pub fn compare_to_kinetic(
    est: &MarginalEstimate,
    f: &DistributionGrid,
) -> Result<KineticDistance, EnsembleError> {
    let target = align_reference(est.grid(), f)?;

    let groups = est.group_probabilities();
    let pool = est.probabilities().to_vec();
    let var: Vec<f64> = est.stderr().iter().map(|s| s * s).collect();
    let l1 = l1_between(&pool, &target);
    let quadratic = quadratic_corrected(&pool, &var, &target);
    let noise_variance: f64 = var.iter().sum();

    // Deterministic group bootstrap for the two nonlinear distances.
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let gn = groups.len();
    let mut l1_samples = Vec::with_capacity(BOOTSTRAP_ROUNDS);
    let mut quad_samples = Vec::with_capacity(BOOTSTRAP_ROUNDS);
    for _ in 0..BOOTSTRAP_ROUNDS {
        let resample: Vec<Vec<f64>> = (0..gn)
            .map(|_| groups[rng.gen_range(0..gn)].clone())
            .collect();
        let p = pooled(&resample);
        let v = pooled_variance(&resample, &p);
        l1_samples.push(l1_between(&p, &target));
        quad_samples.push(quadratic_corrected(&p, &v, &target));
    }
    let spread = |xs: &[f64]| -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    };
    let l1_stderr = spread(&l1_samples);
    let quadratic_stderr = spread(&quad_samples);

    // Weak distances: both expectations binned on the common partition,
    // so the shared discretization cancels to leading order.
    let grid = est.grid();
    let centers: Vec<[f64; 2]> = (0..grid.cell_count())
        .map(|c| grid.center(c / grid.resolution(), c % grid.resolution()))
        .collect();
    let mut weak = Vec::with_capacity(TEST_FUNCTION_NAMES.len());
    let mut weak_max = 0.0f64;
    for (k, name) in TEST_FUNCTION_NAMES.iter().enumerate() {
        let expect = |probs: &[f64]| -> f64 {
            probs
                .iter()
                .zip(&centers)
                .map(|(p, c)| p * test_function(k, *c))
                .sum()
        };
        let reference = expect(&target);
        let value = (expect(&pool) - reference).abs();
        let group_values: Vec<f64> = groups.iter().map(|g| expect(g)).collect();
        let gm = group_values.iter().sum::<f64>() / gn as f64;
        let gv = group_values
            .iter()
            .map(|x| (x - gm) * (x - gm))
            .sum::<f64>()
            / ((gn * (gn - 1)) as f64);
        let stderr = gv.sqrt();
        weak_max = weak_max.max(value);
        weak.push(WeakDistance {
            name: (*name).to_string(),
            value,
            stderr,
        });
    }

    Ok(KineticDistance {
        l1,
        l1_stderr,
        weak,
        weak_max,
        quadratic,
        quadratic_stderr,
        noise_variance,
    })
}

/// Cell probabilities of the kinetic reference on the estimate's
/// partition, aggregating a finer compatible grid when needed.
fn align_reference(
    grid: &VelocityGrid,
    f: &DistributionGrid,
) -> Result<Vec<f64>, EnsembleError> {
    let fg = f.grid();
    if (fg.cutoff() - grid.cutoff()).abs() > 1e-12 {
        return Err(EnsembleError::InvalidParam(format!(
            "velocity cutoffs differ: estimate {}, reference {}",
            grid.cutoff(),
            fg.cutoff()
        )));
    }
    let aligned;
    let reference = if fg.resolution() == grid.resolution() {
        f
    } else if fg.resolution() % grid.resolution() == 0 {
        aligned = f.block_aggregate(fg.resolution() / grid.resolution())?;
        &aligned
    } else {
        return Err(EnsembleError::InvalidParam(format!(
            "reference resolution {} is not a multiple of estimate resolution {}",
            fg.resolution(),
            grid.resolution()
        )));
    };
    let vol = reference.grid().cell_volume();
    Ok(reference.values().iter().map(|v| v * vol).collect())
}

/// One entry of the factorization test: a pair of test functions with
/// the signed difference `E[phi(v_1) psi(v_2)] - E[phi(v_1)] E[psi(v_2)]`
/// over distinct tagged particles.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PairDeficit {
    pub left: String,
    pub right: String,
    /// Signed pooled deficit.
    pub value: f64,
    /// Replica-group standard error.
    pub stderr: f64,
}

/// Factorization (propagation-of-chaos) test report over the unordered
/// pairs of the six-function family.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ChaosReport {
    pub deficits: Vec<PairDeficit>,
    /// Largest absolute deficit.
    pub sup: f64,
    /// Standard error of the pair realizing the sup.
    pub sup_stderr: f64,
    pub replicas: usize,
}

impl ChaosReport {
    /// Whether every pair deficit is within `z` standard errors of zero.
    ///
    /// Pairs that vanish identically (such as `(1, 1)` and, up to
    /// rounding, `(1, phi)`) have rounding-scale value and error, so an
    /// absolute floor of `1e-12` keeps them from failing spuriously.
    pub fn consistent_with_zero(&self, z: f64) -> bool {
        self.deficits
            .iter()
            .all(|d| d.value.abs() <= z * d.stderr + 1e-12)
    }
}

const FAMILY: usize = TEST_FUNCTION_NAMES.len();
const PAIRS: usize = FAMILY * (FAMILY + 1) / 2;

/// Streaming accumulator for the factorization test.
///
/// Per replica it forms the label-free sums `S_k = sum_i phi_k(v_i)` and
/// `P_kl = sum_i phi_k(v_i) phi_l(v_i)` in canonical particle order, so
/// the pair mean over distinct particles is `(S_k S_l - P_kl)/(n(n-1))`
/// without any pair enumeration.
pub(crate) struct ChaosAccumulator {
    groups: usize,
    single: Vec<[f64; FAMILY]>,
    pair: Vec<[f64; PAIRS]>,
    count: Vec<f64>,
    replicas: usize,
}

fn pair_index(a: usize, b: usize) -> usize {
    // Unordered pair (a <= b) to flat index.
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    lo * FAMILY - lo * (lo + 1) / 2 + hi
}

impl ChaosAccumulator {
    pub(crate) fn new(groups: usize) -> Result<Self, EnsembleError> {
        if groups < 2 {
            return Err(EnsembleError::InvalidParam(
                "need at least two replica groups for error bars".into(),
            ));
        }
        Ok(Self {
            groups,
            single: vec![[0.0; FAMILY]; groups],
            pair: vec![[0.0; PAIRS]; groups],
            count: vec![0.0; groups],
            replicas: 0,
        })
    }

    pub(crate) fn absorb(&mut self, set: &ReplicaSet<2>, offset: usize) {
        for (r, rep) in set.replicas.iter().enumerate() {
            let g = (offset + r) % self.groups;
            let order = canonical_order(&rep.state);
            let mut s = [0.0f64; FAMILY];
            let mut p = [0.0f64; PAIRS];
            for &i in &order {
                let v = rep.state.points[i].v;
                let mut phi = [0.0f64; FAMILY];
                for (k, slot) in phi.iter_mut().enumerate() {
                    *slot = test_function(k, v);
                }
                for k in 0..FAMILY {
                    s[k] += phi[k];
                    for l in k..FAMILY {
                        p[pair_index(k, l)] += phi[k] * phi[l];
                    }
                }
            }
            let n = rep.state.len() as f64;
            for k in 0..FAMILY {
                self.single[g][k] += s[k] / n;
                for l in k..FAMILY {
                    let idx = pair_index(k, l);
                    self.pair[g][idx] += (s[k] * s[l] - p[idx]) / (n * (n - 1.0));
                }
            }
            self.count[g] += 1.0;
            self.replicas += 1;
        }
    }

    pub(crate) fn finalize(self) -> Result<ChaosReport, EnsembleError> {
        let occupied: Vec<usize> = (0..self.groups).filter(|&g| self.count[g] > 0.0).collect();
        if occupied.len() < 2 {
            return Err(EnsembleError::InsufficientData(
                "need replicas in at least two groups for error bars".into(),
            ));
        }
        let total: f64 = self.count.iter().sum();
        let mut pooled_single = [0.0f64; FAMILY];
        let mut pooled_pair = [0.0f64; PAIRS];
        for g in &occupied {
            for k in 0..FAMILY {
                pooled_single[k] += self.single[*g][k];
            }
            for idx in 0..PAIRS {
                pooled_pair[idx] += self.pair[*g][idx];
            }
        }
        for v in &mut pooled_single {
            *v /= total;
        }
        for v in &mut pooled_pair {
            *v /= total;
        }

        let mut deficits = Vec::with_capacity(PAIRS);
        let mut sup = 0.0f64;
        let mut sup_stderr = 0.0f64;
        for k in 0..FAMILY {
            for l in k..FAMILY {
                let idx = pair_index(k, l);
                let value = pooled_pair[idx] - pooled_single[k] * pooled_single[l];
                let group_values: Vec<f64> = occupied
                    .iter()
                    .map(|&g| {
                        let c = self.count[g];
                        self.pair[g][idx] / c
                            - (self.single[g][k] / c) * (self.single[g][l] / c)
                    })
                    .collect();
                let gn = group_values.len() as f64;
                let gm = group_values.iter().sum::<f64>() / gn;
                let gv = group_values
                    .iter()
                    .map(|x| (x - gm) * (x - gm))
                    .sum::<f64>()
                    / (gn * (gn - 1.0));
                let stderr = gv.sqrt();
                if value.abs() > sup {
                    sup = value.abs();
                    sup_stderr = stderr;
                }
                deficits.push(PairDeficit {
                    left: TEST_FUNCTION_NAMES[k].to_string(),
                    right: TEST_FUNCTION_NAMES[l].to_string(),
                    value,
                    stderr,
                });
            }
        }
        Ok(ChaosReport {
            deficits,
            sup,
            sup_stderr,
            replicas: self.replicas,
        })
    }
}

/// Measures the factorization deficit of two-particle statistics: for
/// every unordered pair of test functions, the pooled difference between
/// the distinct-pair expectation and the product of single-particle
/// expectations, with replica-group error bars.
///
/// The `(1, 1)` pair is exactly zero by construction and anchors the
/// bookkeeping.
///
/// # Errors
///
/// Needs at least 100 replicas.
pub fn chaos_test(set: &ReplicaSet<2>) -> Result<ChaosReport, EnsembleError> {
    require_replicas(set, 100)?;
    let mut acc = ChaosAccumulator::new(set.len().min(MAX_GROUPS))?;
    acc.absorb(set, 0);
    acc.finalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{RngState, ScalingParams};
    use crate::ensemble::{run_replicas, InitialLaw};

    fn grid16() -> VelocityGrid {
        VelocityGrid::new(4.0, 16).unwrap()
    }

    fn frozen_set(n: usize, m: usize, seed: u64) -> ReplicaSet<2> {
        let law = InitialLaw::<2>::two_bump();
        let params = ScalingParams::boltzmann_grad(n, 2).unwrap();
        run_replicas(m, &params, &law, 0.0, &RngState::new(seed)).unwrap()
    }

    #[test]
    fn zero_time_marginal_reproduces_the_initial_density() {
        let law = InitialLaw::<2>::two_bump();
        let set = frozen_set(200, 400, 31);
        let est = estimate_marginal(&set, &grid16()).unwrap();
        assert_eq!(est.samples(), 200 * 400);
        assert!(est.weight() > 0.999_99, "box tail too fat: {}", est.weight());

        let fine = VelocityGrid::new(4.0, 32).unwrap();
        let f0 = DistributionGrid::from_mixture(fine, law.mixture()).unwrap();
        let dist = compare_to_kinetic(&est, &f0).unwrap();
        // Pure sampling noise: corrected quadratic consistent with zero,
        // L1 at the noise floor, every weak distance within errors.
        assert!(
            dist.quadratic.abs() <= 4.0 * dist.quadratic_stderr,
            "signal where none should be: {} +- {}",
            dist.quadratic,
            dist.quadratic_stderr
        );
        assert!(dist.l1 < 0.05);
        assert!(dist.weak[0].value < 1e-4, "normalization drifted");
        for w in &dist.weak {
            assert!(
                w.value <= 4.0 * w.stderr.max(1e-12),
                "weak {} off: {} +- {}",
                w.name,
                w.value,
                w.stderr
            );
        }
    }

    #[test]
    fn truncation_is_dominated_and_geometrically_bounded() {
        let set = frozen_set(125, 200, 32);
        let grid = grid16();
        let eps = set.params.epsilon;

        // Below the hard core the indicator never fires.
        let plain = estimate_marginal(&set, &grid).unwrap();
        let same = estimate_truncated_marginal(&set, &grid, 0.5 * eps).unwrap();
        assert_eq!(plain.probabilities(), same.probabilities());
        assert_eq!(same.excluded_fraction(), 0.0);

        // At radius 2 eps the excluded weight obeys the union bound
        // n pi r^2 and equals the L1 gap to the plain estimate.
        let radius = 2.0 * eps;
        let trunc = estimate_truncated_marginal(&set, &grid, radius).unwrap();
        let bound = set.params.n as f64 * std::f64::consts::PI * radius * radius;
        assert!(trunc.excluded_fraction() > 0.0);
        assert!(
            trunc.excluded_fraction() <= bound,
            "excluded {} above the union bound {bound}",
            trunc.excluded_fraction()
        );
        let gap = trunc.l1_weighted(&plain).unwrap();
        assert!((gap - trunc.excluded_fraction()).abs() < 1e-12);
        assert!(truncation_dominated_per_replica(&set, &grid, radius).unwrap());
    }

    #[test]
    fn quadrupling_replicas_halves_cell_errors() {
        let small = estimate_marginal(&frozen_set(50, 240, 33), &grid16()).unwrap();
        let large = estimate_marginal(&frozen_set(50, 960, 33), &grid16()).unwrap();
        let mean_se = |est: &MarginalEstimate| -> f64 {
            let sum: f64 = est.stderr().iter().sum();
            sum / est.stderr().iter().filter(|s| **s > 0.0).count() as f64
        };
        let ratio = mean_se(&large) / mean_se(&small);
        assert!(
            (0.35..=0.65).contains(&ratio),
            "error scaling violates 1/sqrt(M): ratio {ratio}"
        );
    }

    #[test]
    fn estimates_are_label_free() {
        let mut set = frozen_set(40, 60, 34);
        let grid = grid16();
        let plain = estimate_marginal(&set, &grid).unwrap();
        let chaos = chaos_test(&set).unwrap();

        // Rotate every replica's particle labels.
        for rep in &mut set.replicas {
            rep.state.points.rotate_left(7);
        }
        let rotated = estimate_marginal(&set, &grid).unwrap();
        let chaos_rotated = chaos_test(&set).unwrap();

        assert_eq!(plain.probabilities(), rotated.probabilities());
        assert_eq!(plain.stderr(), rotated.stderr());
        for (a, b) in chaos.deficits.iter().zip(&chaos_rotated.deficits) {
            assert_eq!(a.value.to_bits(), b.value.to_bits());
            assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        }
    }

    #[test]
    fn product_initial_law_shows_no_factorization_deficit() {
        let set = frozen_set(125, 2000, 35);
        let report = chaos_test(&set).unwrap();
        assert_eq!(report.replicas, 2000);
        assert_eq!(report.deficits.len(), 21);

        // (1, 1) is structurally exact.
        let unit = &report.deficits[0];
        assert_eq!(unit.left, "1");
        assert_eq!(unit.right, "1");
        assert_eq!(unit.value, 0.0);

        // Velocities are i.i.d. at t = 0 (the rejection only touches
        // positions), so every deficit is noise around zero.
        assert!(
            report.consistent_with_zero(3.5),
            "sup deficit {} +- {}",
            report.sup,
            report.sup_stderr
        );
        assert!(report.sup > 0.0);
    }

    #[test]
    fn comparison_rejects_incompatible_grids() {
        let law = InitialLaw::<2>::two_bump();
        let est = estimate_marginal(&frozen_set(50, 60, 36), &grid16()).unwrap();
        let other_cutoff =
            DistributionGrid::from_mixture(VelocityGrid::new(3.0, 16).unwrap(), law.mixture())
                .unwrap();
        assert!(compare_to_kinetic(&est, &other_cutoff).is_err());
        let odd =
            DistributionGrid::from_mixture(VelocityGrid::new(4.0, 24).unwrap(), law.mixture())
                .unwrap();
        assert!(compare_to_kinetic(&est, &odd).is_err());
    }
}
