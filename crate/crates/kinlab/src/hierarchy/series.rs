//! Order-by-order Monte Carlo estimation of the collision series.

use super::tree::{flow_bbgky_tree, flow_boltzmann_tree, sample_tree_rooted};
use super::{HierarchyError, InitialData, HORIZON_FRACTION, MAX_SERIES_ORDER};
use crate::core::RngState;
use crate::stats;
use crate::vec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Which expansion the estimator evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Point particles, free backward transport.
    Boltzmann,
    /// Positive diameter, exact backward hard-sphere flow.
    Bbgky,
}

/// Parameters of one series estimation run.
#[derive(Debug, Clone)]
pub struct SeriesConfig {
    /// Which expansion to evaluate.
    pub side: Side,
    /// Highest order `K` included (at most [`MAX_SERIES_ORDER`]).
    pub order: usize,
    /// Evaluation time; must not exceed a fifth of the mean free time.
    pub time: f64,
    /// Sphere diameter; must be zero on the Boltzmann side.
    pub diameter: f64,
    /// Monte Carlo samples per order (at least 2).
    pub samples: usize,
    /// Inverse temperature of the Gaussian partner-velocity proposal.
    pub proposal_beta: f64,
    /// Measured mean free time of the underlying data, fixing the
    /// admissible horizon.
    pub mean_free_time: f64,
}

/// Monte Carlo summary of one series order.
#[derive(Debug, Clone)]
pub struct OrderEstimate {
    /// Series order `k`.
    pub order: usize,
    /// Sample mean of the signed terms.
    pub mean: f64,
    /// Standard error of the mean (zero for the deterministic order 0).
    pub stderr: f64,
    /// Samples that produced a value.
    pub samples: usize,
    /// Fraction of samples whose backward flow contained a recollision.
    pub recollision_fraction: f64,
    /// Fraction of samples blocked by the exclusion constraint.
    pub exclusion_fraction: f64,
    /// Samples discarded for degenerate backward flows.
    pub discarded: usize,
}

/// Per-order estimates and their sum through the requested order.
#[derive(Debug, Clone)]
pub struct SeriesEstimate {
    /// Orders `0..=K` in order.
    pub orders: Vec<OrderEstimate>,
    /// Sum of the per-order means.
    pub total: f64,
    /// Standard error of the total (orders are independent).
    pub total_stderr: f64,
    /// Set when the relative standard error of the total exceeds 20%.
    pub low_precision: bool,
}

/// One JSON Lines record of a series estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub k: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub recollision_fraction: f64,
    pub exclusion_fraction: f64,
}

impl From<&OrderEstimate> for SeriesRecord {
    fn from(o: &OrderEstimate) -> Self {
        Self {
            k: o.order,
            mean: o.mean,
            stderr: o.stderr,
            n: o.samples,
            recollision_fraction: o.recollision_fraction,
            exclusion_fraction: o.exclusion_fraction,
        }
    }
}

/// Outcome of evaluating one sampled tree.
struct SampleOutcome {
    value: Option<f64>,
    recollision: bool,
    exclusion: bool,
}

/// Estimates the collision series around root phase points `roots`
/// through order `config.order`.
///
/// Order 0 is the deterministic backward transport of the roots and has
/// zero variance; each higher order is an independent Monte Carlo average
/// over `config.samples` trees.  Samples are evaluated in parallel from
/// split generator streams and reduced in index order, so a fixed
/// `state` reproduces the estimate bit for bit at any worker count.
///
/// # Errors
///
/// Parameter validation; degenerate backward flows beyond the sample
/// budget; order 0 flows that fail outright.
pub fn estimate_series<const D: usize, F>(
    config: &SeriesConfig,
    f0: &F,
    roots: &[([f64; D], [f64; D])],
    state: &RngState,
) -> Result<SeriesEstimate, HierarchyError>
where
    F: InitialData<D> + Sync,
{
    validate_config(config)?;
    if roots.is_empty() {
        return Err(HierarchyError::InvalidParam(
            "at least one root phase point is required".into(),
        ));
    }
    for (x, v) in roots {
        if !(vec::is_finite(*x) && vec::is_finite(*v)) {
            return Err(HierarchyError::InvalidParam(
                "root phase points must be finite".into(),
            ));
        }
    }
    let positions: Vec<[f64; D]> = roots.iter().map(|r| r.0).collect();
    let velocities: Vec<[f64; D]> = roots.iter().map(|r| r.1).collect();

    let mut orders = Vec::with_capacity(config.order + 1);

    // Order 0: deterministic transport, no sampling.
    let zero = if config.time == 0.0 {
        let value: f64 = roots.iter().map(|(x, v)| f0.eval(*x, *v)).product();
        OrderEstimate {
            order: 0,
            mean: value,
            stderr: 0.0,
            samples: 1,
            recollision_fraction: 0.0,
            exclusion_fraction: 0.0,
            discarded: 0,
        }
    } else {
        let mut rng = state.substream(0).rng();
        let tree = sample_tree_rooted(&velocities, 0, config.time, config.proposal_beta, &mut rng)?;
        let (value, recollision, exclusion) = match config.side {
            Side::Boltzmann => (flow_boltzmann_tree(&tree, f0, &positions)?, false, false),
            Side::Bbgky => flow_bbgky_tree(&tree, config.diameter, f0, &positions)?,
        };
        OrderEstimate {
            order: 0,
            mean: value,
            stderr: 0.0,
            samples: 1,
            recollision_fraction: if recollision { 1.0 } else { 0.0 },
            exclusion_fraction: if exclusion { 1.0 } else { 0.0 },
            discarded: 0,
        }
    };
    orders.push(zero);

    for k in 1..=config.order {
        if config.time == 0.0 {
            // The time simplex is empty: every term vanishes exactly.
            orders.push(OrderEstimate {
                order: k,
                mean: 0.0,
                stderr: 0.0,
                samples: config.samples,
                recollision_fraction: 0.0,
                exclusion_fraction: 0.0,
                discarded: 0,
            });
            continue;
        }
        let outcomes: Vec<SampleOutcome> = (0..config.samples)
            .into_par_iter()
            .map(|i| -> Result<SampleOutcome, HierarchyError> {
                let tag = ((k as u64) << 40) ^ (i as u64);
                let mut rng = state.substream(tag).rng();
                let tree = sample_tree_rooted(
                    &velocities,
                    k,
                    config.time,
                    config.proposal_beta,
                    &mut rng,
                )?;
                let attempt = match config.side {
                    Side::Boltzmann => {
                        flow_boltzmann_tree(&tree, f0, &positions).map(|v| (v, false, false))
                    }
                    Side::Bbgky => flow_bbgky_tree(&tree, config.diameter, f0, &positions),
                };
                match attempt {
                    Ok((value, recollision, exclusion)) => Ok(SampleOutcome {
                        value: Some(value),
                        recollision,
                        exclusion,
                    }),
                    Err(HierarchyError::DegenerateSample(_)) => Ok(SampleOutcome {
                        value: None,
                        recollision: false,
                        exclusion: false,
                    }),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;

        let values: Vec<f64> = outcomes.iter().filter_map(|o| o.value).collect();
        let discarded = outcomes.len() - values.len();
        if values.len() < 2 {
            return Err(HierarchyError::InsufficientSamples(format!(
                "order {k}: only {} usable samples after {discarded} discards",
                values.len()
            )));
        }
        let (mean, stderr) = stats::mean_and_se(&values);
        let n = values.len();
        let recollisions = outcomes
            .iter()
            .filter(|o| o.value.is_some() && o.recollision)
            .count();
        let exclusions = outcomes
            .iter()
            .filter(|o| o.value.is_some() && o.exclusion)
            .count();
        orders.push(OrderEstimate {
            order: k,
            mean,
            stderr,
            samples: n,
            recollision_fraction: recollisions as f64 / n as f64,
            exclusion_fraction: exclusions as f64 / n as f64,
            discarded,
        });
    }

    let total: f64 = orders.iter().map(|o| o.mean).sum();
    let total_stderr = orders
        .iter()
        .map(|o| o.stderr * o.stderr)
        .sum::<f64>()
        .sqrt();
    let low_precision = total_stderr > 0.2 * total.abs();
    Ok(SeriesEstimate {
        orders,
        total,
        total_stderr,
        low_precision,
    })
}

fn validate_config(config: &SeriesConfig) -> Result<(), HierarchyError> {
    if config.order > MAX_SERIES_ORDER {
        return Err(HierarchyError::InvalidParam(format!(
            "order {} exceeds the supported maximum {MAX_SERIES_ORDER}",
            config.order
        )));
    }
    if !(config.time >= 0.0 && config.time.is_finite()) {
        return Err(HierarchyError::InvalidParam(format!(
            "time must be nonnegative and finite, got {}",
            config.time
        )));
    }
    if !(config.mean_free_time > 0.0 && config.mean_free_time.is_finite()) {
        return Err(HierarchyError::InvalidParam(format!(
            "mean free time must be positive and finite, got {}",
            config.mean_free_time
        )));
    }
    if config.time > HORIZON_FRACTION * config.mean_free_time * (1.0 + 1e-9) {
        return Err(HierarchyError::InvalidParam(format!(
            "horizon {} exceeds {HORIZON_FRACTION} of the mean free time {}",
            config.time, config.mean_free_time
        )));
    }
    if !(config.diameter >= 0.0 && config.diameter.is_finite()) {
        return Err(HierarchyError::InvalidParam(format!(
            "diameter must be nonnegative and finite, got {}",
            config.diameter
        )));
    }
    if config.side == Side::Boltzmann && config.diameter != 0.0 {
        return Err(HierarchyError::InvalidParam(
            "the Boltzmann side has zero diameter by definition".into(),
        ));
    }
    if config.samples < 2 {
        return Err(HierarchyError::InvalidParam(format!(
            "at least 2 samples per order are required, got {}",
            config.samples
        )));
    }
    if !(config.proposal_beta > 0.0 && config.proposal_beta.is_finite()) {
        return Err(HierarchyError::InvalidParam(format!(
            "proposal inverse temperature must be positive and finite, got {}",
            config.proposal_beta
        )));
    }
    Ok(())
}

/// Writes the per-order records of an estimate as JSON Lines.
pub fn write_series_records(path: &Path, estimate: &SeriesEstimate) -> Result<(), HierarchyError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for order in &estimate.orders {
        let record = SeriesRecord::from(order);
        let line = serde_json::to_string(&record)
            .map_err(|e| HierarchyError::InvalidParam(format!("serializing record: {e}")))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads records written by [`write_series_records`].
pub fn read_series_records(path: &Path) -> Result<Vec<SeriesRecord>, HierarchyError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SeriesRecord = serde_json::from_str(&line).map_err(|e| {
            HierarchyError::InvalidParam(format!("series record line {}: {e}", lineno + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::SpatiallyUniform;
    use crate::kinetic::VelocityMixture;

    fn two_bump_data() -> SpatiallyUniform<2> {
        SpatiallyUniform::new(VelocityMixture::symmetric_pair(4.0, [1.2, 0.0]).unwrap())
    }

    fn base_config() -> SeriesConfig {
        SeriesConfig {
            side: Side::Boltzmann,
            order: 2,
            time: 0.05,
            diameter: 0.0,
            samples: 400,
            proposal_beta: 2.0,
            mean_free_time: 0.3,
        }
    }

    #[test]
    fn order_zero_estimate_is_deterministic_transport() {
        let f0 = two_bump_data();
        let config = SeriesConfig {
            order: 0,
            ..base_config()
        };
        let z = ([0.2, 0.7], [1.2, 0.0]);
        let state = RngState::new(11);
        let est = estimate_series(&config, &f0, &[z], &state).unwrap();
        assert_eq!(est.orders.len(), 1);
        assert_eq!(est.orders[0].stderr, 0.0);
        assert_eq!(est.total, f0.mixture().density([1.2, 0.0]));
        assert!(!est.low_precision);
    }

    #[test]
    fn zero_time_returns_initial_data_with_vanishing_orders() {
        let f0 = two_bump_data();
        let config = SeriesConfig {
            order: 3,
            time: 0.0,
            ..base_config()
        };
        let z = ([0.0, 0.0], [0.9, -0.3]);
        let est = estimate_series(&config, &f0, &[z], &RngState::new(12)).unwrap();
        assert_eq!(est.total, f0.mixture().density([0.9, -0.3]));
        for k in 1..=3 {
            assert_eq!(est.orders[k].mean, 0.0);
            assert_eq!(est.orders[k].stderr, 0.0);
        }
        assert!(!est.low_precision);
    }

    #[test]
    fn same_state_reproduces_the_estimate_bit_for_bit() {
        let f0 = two_bump_data();
        let config = base_config();
        let z = ([0.0, 0.0], [1.2, 0.0]);
        let state = RngState::new(13);
        let a = estimate_series(&config, &f0, &[z], &state).unwrap();
        let b = estimate_series(&config, &f0, &[z], &state).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        for (oa, ob) in a.orders.iter().zip(&b.orders) {
            assert_eq!(oa.mean.to_bits(), ob.mean.to_bits());
            assert_eq!(oa.stderr.to_bits(), ob.stderr.to_bits());
        }
    }

    #[test]
    fn config_validation_rejects_bad_runs() {
        let f0 = two_bump_data();
        let z = [([0.0, 0.0], [0.0, 0.0])];
        let state = RngState::new(14);
        let cases = [
            SeriesConfig {
                order: 5,
                ..base_config()
            },
            SeriesConfig {
                time: -0.01,
                ..base_config()
            },
            SeriesConfig {
                time: 0.1,
                mean_free_time: 0.3,
                ..base_config()
            },
            SeriesConfig {
                side: Side::Boltzmann,
                diameter: 0.01,
                ..base_config()
            },
            SeriesConfig {
                samples: 1,
                ..base_config()
            },
            SeriesConfig {
                proposal_beta: -1.0,
                ..base_config()
            },
            SeriesConfig {
                mean_free_time: 0.0,
                ..base_config()
            },
        ];
        for (i, config) in cases.iter().enumerate() {
            assert!(
                estimate_series(config, &f0, &z, &state).is_err(),
                "case {i} was accepted"
            );
        }
        assert!(estimate_series(&base_config(), &f0, &[], &state).is_err());
    }

    #[test]
    fn low_precision_flag_reflects_relative_error() {
        let f0 = two_bump_data();
        // A tiny sample budget at a velocity where single-order draws are
        // noisy: the flag must trip.
        let config = SeriesConfig {
            order: 2,
            samples: 3,
            ..base_config()
        };
        let z = ([0.0, 0.0], [3.0, 3.0]);
        let est = estimate_series(&config, &f0, &[z], &RngState::new(15)).unwrap();
        assert!(est.low_precision, "relative error {}", est.total_stderr);
    }

    #[test]
    fn records_round_trip_bit_for_bit() {
        let f0 = two_bump_data();
        let config = base_config();
        let z = ([0.0, 0.0], [1.2, 0.0]);
        let est = estimate_series(&config, &f0, &[z], &RngState::new(16)).unwrap();
        let dir = std::env::temp_dir().join("kinlab-series-records");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("orders.jsonl");
        write_series_records(&path, &est).unwrap();
        let back = read_series_records(&path).unwrap();
        assert_eq!(back.len(), est.orders.len());
        for (rec, order) in back.iter().zip(&est.orders) {
            assert_eq!(rec.k, order.order);
            assert_eq!(rec.mean.to_bits(), order.mean.to_bits());
            assert_eq!(rec.stderr.to_bits(), order.stderr.to_bits());
            assert_eq!(rec.n, order.samples);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn boltzmann_and_zero_diameter_bbgky_totals_coincide() {
        let f0 = two_bump_data();
        let config = base_config();
        let bbgky = SeriesConfig {
            side: Side::Bbgky,
            ..base_config()
        };
        let z = ([0.4, -0.2], [1.2, 0.0]);
        let state = RngState::new(17);
        let a = estimate_series(&config, &f0, &[z], &state).unwrap();
        let b = estimate_series(&bbgky, &f0, &[z], &state).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
    }
}
