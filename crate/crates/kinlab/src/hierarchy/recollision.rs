//! Diameter scaling of recollision and exclusion events.

use super::tree::{build_pseudo_trajectory, sample_tree};
use super::HierarchyError;
use crate::core::RngState;
use crate::kinetic::VelocityMixture;
use crate::stats;
use rand::Rng;
use rayon::prelude::*;

/// Paired comparison of recollision indicators at two diameters.
///
/// Under the hypothesis that shrinking the diameter does not reduce the
/// recollision probability, the samples that recollide at exactly one of
/// the two diameters split evenly; `p_value` is the one-sided binomial
/// tail of observing at least `coarser_only` such samples on the larger
/// diameter.
#[derive(Debug, Clone)]
pub struct PairedComparison {
    /// Samples recolliding at the larger diameter only.
    pub coarser_only: usize,
    /// Samples recolliding at the smaller diameter only.
    pub finer_only: usize,
    /// One-sided tail probability of the observed split.
    pub p_value: f64,
}

/// Recollision and exclusion statistics over a ladder of diameters.
#[derive(Debug, Clone)]
pub struct RecollisionStudy {
    /// Diameters, strictly decreasing.
    pub epsilons: Vec<f64>,
    /// Recollision fraction per diameter.
    pub fractions: Vec<f64>,
    /// Binomial standard error per fraction.
    pub stderrs: Vec<f64>,
    /// Exclusion-blocked fraction per diameter.
    pub exclusion_fractions: Vec<f64>,
    /// Trees evaluated per diameter (after discarding degenerate flows).
    pub samples: Vec<usize>,
    /// Least-squares slope of `log fraction` against `log diameter` over
    /// the diameters with a positive fraction; `None` when fewer than two
    /// such points exist.
    pub slope: Option<stats::LineFit>,
    /// Paired comparisons of consecutive diameters.
    pub paired: Vec<PairedComparison>,
}

/// Measures how fast recollisions die out as the diameter shrinks.
///
/// A fixed population of collision trees of the given order is sampled
/// once — root at the origin, root velocity from the same Gaussian used
/// for partner proposals — and every tree is rebuilt at every diameter,
/// so the ladder shares its random numbers and consecutive rungs can be
/// compared pair by pair.
///
/// # Errors
///
/// The order must be at least 2 (after a single adjunction the pair
/// separates backward forever, so order-1 trees cannot recollide); the
/// diameters must be strictly decreasing and positive; if no tree
/// recollides at any diameter the sample size is reported as too small.
pub fn recollision_statistics<const D: usize>(
    epsilons: &[f64],
    order: usize,
    horizon: f64,
    proposal_beta: f64,
    samples: usize,
    state: &RngState,
) -> Result<RecollisionStudy, HierarchyError> {
    if order < 2 {
        return Err(HierarchyError::InvalidParam(format!(
            "recollisions need order >= 2, got {order}"
        )));
    }
    if epsilons.len() < 2 {
        return Err(HierarchyError::InvalidParam(
            "at least two diameters are required".into(),
        ));
    }
    for pair in epsilons.windows(2) {
        if !(pair[0] > pair[1]) {
            return Err(HierarchyError::InvalidParam(
                "diameters must be strictly decreasing".into(),
            ));
        }
    }
    if !(epsilons[epsilons.len() - 1] > 0.0 && epsilons[0].is_finite()) {
        return Err(HierarchyError::InvalidParam(
            "diameters must be positive and finite".into(),
        ));
    }
    if samples < 2 {
        return Err(HierarchyError::InvalidParam(format!(
            "at least 2 samples are required, got {samples}"
        )));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(HierarchyError::InvalidParam(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    let proposal = VelocityMixture::<D>::maxwellian(proposal_beta)?;
    let origin = [[0.0; D]];

    // Per sample: recollision/exclusion flags per diameter, None where
    // the backward flow was degenerate.
    let flags: Vec<Vec<Option<(bool, bool)>>> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<Vec<Option<(bool, bool)>>, HierarchyError> {
            let mut rng = state.substream(i as u64).rng();
            let root_velocity = proposal.sample(&mut rng);
            let tree = sample_tree::<D, _>(order, horizon, proposal_beta, root_velocity, &mut rng)?;
            epsilons
                .iter()
                .map(|eps| match build_pseudo_trajectory(&tree, *eps, &origin) {
                    Ok(traj) => Ok(Some((traj.recollision(), traj.exclusion()))),
                    Err(HierarchyError::DegenerateSample(_)) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut fractions = Vec::with_capacity(epsilons.len());
    let mut stderrs = Vec::with_capacity(epsilons.len());
    let mut exclusion_fractions = Vec::with_capacity(epsilons.len());
    let mut counts = Vec::with_capacity(epsilons.len());
    for (e, _) in epsilons.iter().enumerate() {
        let mut n = 0usize;
        let mut recollisions = 0usize;
        let mut exclusions = 0usize;
        for row in &flags {
            if let Some((rec, exc)) = row[e] {
                n += 1;
                recollisions += usize::from(rec);
                exclusions += usize::from(exc);
            }
        }
        if n == 0 {
            return Err(HierarchyError::InsufficientSamples(format!(
                "every sample at diameter index {e} was degenerate"
            )));
        }
        let p = recollisions as f64 / n as f64;
        fractions.push(p);
        stderrs.push((p * (1.0 - p) / n as f64).sqrt());
        exclusion_fractions.push(exclusions as f64 / n as f64);
        counts.push(n);
    }

    if fractions.iter().all(|p| *p == 0.0) {
        return Err(HierarchyError::InsufficientSamples(format!(
            "no recollisions at any diameter over {samples} samples; enlarge the sample budget"
        )));
    }

    let mut paired = Vec::with_capacity(epsilons.len() - 1);
    for e in 0..epsilons.len() - 1 {
        let mut coarser_only = 0usize;
        let mut finer_only = 0usize;
        for row in &flags {
            if let (Some((coarse, _)), Some((fine, _))) = (row[e], row[e + 1]) {
                match (coarse, fine) {
                    (true, false) => coarser_only += 1,
                    (false, true) => finer_only += 1,
                    _ => {}
                }
            }
        }
        let discordant = (coarser_only + finer_only) as u64;
        paired.push(PairedComparison {
            coarser_only,
            finer_only,
            p_value: stats::binomial_tail_one_sided(coarser_only as u64, discordant),
        });
    }

    let mut log_eps = Vec::new();
    let mut log_frac = Vec::new();
    for (eps, p) in epsilons.iter().zip(&fractions) {
        if *p > 0.0 {
            log_eps.push(eps.ln());
            log_frac.push(p.ln());
        }
    }
    let slope = if log_eps.len() >= 2 {
        stats::fit_line(&log_eps, &log_frac)
    } else {
        None
    };

    Ok(RecollisionStudy {
        epsilons: epsilons.to_vec(),
        fractions,
        stderrs,
        exclusion_fractions,
        samples: counts,
        slope,
        paired,
    })
}

/// Draws one root velocity the way [`recollision_statistics`] does;
/// exposed for tests that need the same law.
#[allow(dead_code)]
pub(crate) fn study_root_velocity<const D: usize, R: Rng>(
    proposal: &VelocityMixture<D>,
    rng: &mut R,
) -> [f64; D] {
    proposal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        let state = RngState::new(20);
        let eps = [0.02, 0.01];
        assert!(recollision_statistics::<2>(&eps, 1, 0.3, 2.0, 100, &state).is_err());
        assert!(recollision_statistics::<2>(&[0.02], 2, 0.3, 2.0, 100, &state).is_err());
        assert!(recollision_statistics::<2>(&[0.01, 0.02], 2, 0.3, 2.0, 100, &state).is_err());
        assert!(recollision_statistics::<2>(&[0.02, 0.0], 2, 0.3, 2.0, 100, &state).is_err());
        assert!(recollision_statistics::<2>(&eps, 2, 0.0, 2.0, 100, &state).is_err());
        assert!(recollision_statistics::<2>(&eps, 2, 0.3, 2.0, 1, &state).is_err());
    }

    #[test]
    fn vanishing_diameters_with_few_samples_report_insufficient_data() {
        // At microscopic diameters recollisions are essentially absent;
        // the study must say so instead of fitting noise.  (The diameters
        // stay well above the relative rounding of particle placement, so
        // the trees themselves remain constructible.)
        let state = RngState::new(21);
        let eps = [1e-5, 5e-6];
        let err = recollision_statistics::<2>(&eps, 2, 0.2, 2.0, 40, &state).unwrap_err();
        assert!(matches!(err, HierarchyError::InsufficientSamples(_)));
    }

    #[test]
    fn moderate_diameters_produce_a_decreasing_ladder() {
        let state = RngState::new(22);
        let eps = [0.2, 0.1, 0.05];
        let study = recollision_statistics::<2>(&eps, 2, 0.3, 2.0, 4000, &state).unwrap();
        assert_eq!(study.fractions.len(), 3);
        for (p, se) in study.fractions.iter().zip(&study.stderrs) {
            assert!((0.0..=1.0).contains(p));
            assert!(se.is_finite());
        }
        assert!(
            study.fractions[0] > 0.0,
            "no recollisions at the largest diameter"
        );
        // Non-increasing within two standard errors.
        for w in 0..eps.len() - 1 {
            let slack = 2.0 * study.stderrs[w].hypot(study.stderrs[w + 1]);
            assert!(
                study.fractions[w + 1] <= study.fractions[w] + slack,
                "fraction rose from {} to {}",
                study.fractions[w],
                study.fractions[w + 1]
            );
        }
        assert!(study.slope.is_some());
    }

    #[test]
    fn same_state_reproduces_the_study() {
        let state = RngState::new(23);
        let eps = [0.1, 0.05];
        let a = recollision_statistics::<2>(&eps, 2, 0.25, 2.0, 500, &state).unwrap();
        let b = recollision_statistics::<2>(&eps, 2, 0.25, 2.0, 500, &state).unwrap();
        assert_eq!(a.fractions, b.fractions);
        assert_eq!(a.exclusion_fractions, b.exclusion_fractions);
        assert_eq!(
            a.paired
                .iter()
                .map(|p| (p.coarser_only, p.finer_only))
                .collect::<Vec<_>>(),
            b.paired
                .iter()
                .map(|p| (p.coarser_only, p.finer_only))
                .collect::<Vec<_>>()
        );
    }
}
