//! Tabulated deflection data and the collision kernel assembled from it.
//!
//! The kernel convention matches the event-driven dynamics: for unit
//! direction `omega` and relative velocity `w`, the contact angle is
//! `theta = arccos |what . omega|` and the deflection it produces is
//! `chi = pi - 2 theta`.  The kernel is
//!
//!   d = 2:  `b = 2 |w| |drho/dchi|`,
//!   d = 3:  `b = 4 |w . omega| rho |drho/dchi| / sin chi`,
//!
//! which for the hard core reduces to the closed form `b = |w . omega|` in
//! both dimensions.  `b` is even under `omega -> -omega`, so integrals over
//! the full sphere double those over the hemisphere `omega . w >= 0`.

use super::quad::{gauss_legendre, panel_sum};
use super::{deflection_angle_quadrature, PotentialSpec, ScatteringError};
use crate::vec;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

/// Deflection angles on a rectangular (impact parameter) x (energy) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DeflectionTable {
    rhos: Vec<f64>,
    energies: Vec<f64>,
    /// Row-major over energies: `chi[e * rhos.len() + r]`.
    chi: Vec<f64>,
}

impl DeflectionTable {
    /// Computes the table for a smooth profile by turning-point quadrature,
    /// parallelized over grid points with a deterministic layout.
    pub fn build(
        phi: &PotentialSpec,
        rhos: Vec<f64>,
        energies: Vec<f64>,
    ) -> Result<Self, ScatteringError> {
        if phi.is_hard() {
            return Err(ScatteringError::InvalidParam(
                "deflection tables describe smooth profiles; the hard core has a \
                 closed-form kernel"
                    .into(),
            ));
        }
        validate_grid(&rhos, "impact parameter", 0.0, 1.0, 2)?;
        validate_grid(&energies, "energy", f64::MIN_POSITIVE, f64::INFINITY, 1)?;
        let nr = rhos.len();
        let cells: Vec<(usize, usize)> = (0..energies.len())
            .flat_map(|e| (0..nr).map(move |r| (e, r)))
            .collect();
        let chi = cells
            .par_iter()
            .map(|&(e, r)| deflection_angle_quadrature(phi, rhos[r], energies[e]))
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(Self {
            rhos,
            energies,
            chi,
        })
    }

    /// Wraps precomputed values (shape-checked only; monotonicity is the
    /// kernel assembly's concern).
    pub fn from_raw(
        rhos: Vec<f64>,
        energies: Vec<f64>,
        chi: Vec<f64>,
    ) -> Result<Self, ScatteringError> {
        validate_grid(&rhos, "impact parameter", 0.0, 1.0, 2)?;
        validate_grid(&energies, "energy", f64::MIN_POSITIVE, f64::INFINITY, 1)?;
        if chi.len() != rhos.len() * energies.len() {
            return Err(ScatteringError::BadTable(format!(
                "expected {} x {} = {} values, got {}",
                energies.len(),
                rhos.len(),
                energies.len() * rhos.len(),
                chi.len()
            )));
        }
        if let Some(bad) = chi.iter().find(|c| !(c.is_finite() && (0.0..=PI).contains(c))) {
            return Err(ScatteringError::BadTable(format!(
                "deflection value {bad} outside [0, pi]"
            )));
        }
        Ok(Self {
            rhos,
            energies,
            chi,
        })
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rhos
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Deflection at energy index `e` and impact-parameter index `r`.
    pub fn value(&self, e: usize, r: usize) -> f64 {
        self.chi[e * self.rhos.len() + r]
    }

    /// Writes `rho,energy,chi` records; floats are printed in the shortest
    /// form that parses back to the identical bits, so a read of this output
    /// reproduces the table exactly.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "rho,energy,chi")?;
        for (e, energy) in self.energies.iter().enumerate() {
            for (r, rho) in self.rhos.iter().enumerate() {
                writeln!(out, "{rho},{energy},{}", self.value(e, r))?;
            }
        }
        Ok(())
    }

    /// Reads a dump produced by [`DeflectionTable::write_csv`] (energy-major
    /// row order).
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, ScatteringError> {
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line = line.map_err(|e| ScatteringError::BadTable(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if k == 0 {
                if line != "rho,energy,chi" {
                    return Err(ScatteringError::BadTable(format!(
                        "unexpected header {line:?}"
                    )));
                }
                continue;
            }
            let mut fields = line.split(',');
            let mut next = |name: &str| {
                fields
                    .next()
                    .ok_or_else(|| {
                        ScatteringError::BadTable(format!("row {k}: missing {name}"))
                    })?
                    .parse::<f64>()
                    .map_err(|e| ScatteringError::BadTable(format!("row {k}: {e}")))
            };
            let rho = next("rho")?;
            let energy = next("energy")?;
            let chi = next("chi")?;
            rows.push((rho, energy, chi));
        }
        if rows.is_empty() {
            return Err(ScatteringError::BadTable("no data rows".into()));
        }
        // The first energy block fixes the impact-parameter grid.
        let first_energy = rows[0].1;
        let nr = rows.iter().take_while(|r| r.1 == first_energy).count();
        if rows.len() % nr != 0 {
            return Err(ScatteringError::BadTable(format!(
                "{} rows do not tile blocks of {nr}",
                rows.len()
            )));
        }
        let rhos: Vec<f64> = rows[..nr].iter().map(|r| r.0).collect();
        let mut energies = Vec::with_capacity(rows.len() / nr);
        let mut chi = Vec::with_capacity(rows.len());
        for block in rows.chunks(nr) {
            let energy = block[0].1;
            for (i, &(rho, e, c)) in block.iter().enumerate() {
                if e != energy || rho != rhos[i] {
                    return Err(ScatteringError::BadTable(
                        "rows do not form a rectangular energy-major grid".into(),
                    ));
                }
                chi.push(c);
            }
            energies.push(energy);
        }
        Self::from_raw(rhos, energies, chi)
    }
}

fn validate_grid(
    values: &[f64],
    name: &str,
    lo: f64,
    hi: f64,
    min_len: usize,
) -> Result<(), ScatteringError> {
    if values.len() < min_len {
        return Err(ScatteringError::InvalidParam(format!(
            "{name} grid needs at least {min_len} point(s)"
        )));
    }
    for v in values {
        if !(v.is_finite() && (lo..=hi).contains(v)) {
            return Err(ScatteringError::InvalidParam(format!(
                "{name} grid value {v} outside [{lo}, {hi}]"
            )));
        }
    }
    for pair in values.windows(2) {
        if pair[1] <= pair[0] {
            return Err(ScatteringError::InvalidParam(format!(
                "{name} grid must be strictly increasing"
            )));
        }
    }
    Ok(())
}

/// One inverted deflection curve: `chi` ascending with the matching impact
/// parameters (descending, since `chi` decreases in `rho`).
#[derive(Debug, Clone)]
struct Curve {
    chis: Vec<f64>,
    rhos: Vec<f64>,
}

impl Curve {
    /// Impact parameter and `|drho/dchi|` at `chi`, clamped to the resolved
    /// range.
    fn invert(&self, chi: f64) -> (f64, f64) {
        let n = self.chis.len();
        let k = match self
            .chis
            .binary_search_by(|c| c.partial_cmp(&chi).unwrap())
        {
            Ok(k) => k.min(n - 2),
            Err(0) => 0,
            Err(k) => (k - 1).min(n - 2),
        };
        let (c0, c1) = (self.chis[k], self.chis[k + 1]);
        let (r0, r1) = (self.rhos[k], self.rhos[k + 1]);
        let slope = (r1 - r0) / (c1 - c0);
        let t = ((chi - c0) / (c1 - c0)).clamp(0.0, 1.0);
        (r0 + (r1 - r0) * t, slope.abs())
    }
}

#[derive(Debug)]
enum Kind {
    HardSphere,
    Zero,
    Table {
        chi_min: f64,
        energies: Vec<f64>,
        curves: Vec<Curve>,
    },
}

/// The collision kernel `b(w, omega)`: closed form for the hard core,
/// table-backed for smooth profiles (with the grazing cutoff), and an
/// identically zero variant for collisionless checks.
#[derive(Debug)]
pub struct CrossSection {
    d: usize,
    kind: Kind,
}

impl CrossSection {
    /// The hard-core kernel `b = |w . omega|`.
    pub fn hard_sphere(d: usize) -> Result<Self, ScatteringError> {
        check_dim(d)?;
        Ok(Self {
            d,
            kind: Kind::HardSphere,
        })
    }

    /// The identically zero kernel (no collisions); useful as a negative
    /// control.
    pub fn zero(d: usize) -> Result<Self, ScatteringError> {
        check_dim(d)?;
        Ok(Self {
            d,
            kind: Kind::Zero,
        })
    }

    /// Spatial dimension the kernel was built for.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Grazing-angle cutoff below which tabulated kernels vanish; zero for
    /// the closed-form kernels, which need no cutoff.
    pub fn chi_min(&self) -> f64 {
        match &self.kind {
            Kind::Table { chi_min, .. } => *chi_min,
            _ => 0.0,
        }
    }

    /// Whether the kernel is bounded on every bounded velocity domain.
    ///
    /// The closed-form kernels grow at most linearly in `|w|`.  Tabulated
    /// kernels concentrate unbounded weight at grazing deflections unless a
    /// positive cutoff removes them, so they are bounded exactly when
    /// `chi_min > 0`.
    pub fn is_bounded(&self) -> bool {
        match &self.kind {
            Kind::Zero | Kind::HardSphere => true,
            Kind::Table { chi_min, .. } => *chi_min > 0.0,
        }
    }

    /// Evaluates `b(w, omega)` for unit `omega`.  The const dimension must
    /// match the kernel's dimension.
    pub fn evaluate<const D: usize>(&self, w: [f64; D], omega: [f64; D]) -> f64 {
        debug_assert_eq!(D, self.d, "kernel dimension mismatch");
        debug_assert!((vec::norm(omega) - 1.0).abs() < 1e-12, "omega not unit");
        let wn = vec::norm(w);
        if wn == 0.0 {
            return 0.0;
        }
        let cos_eff = (vec::dot(w, omega).abs() / wn).clamp(0.0, 1.0);
        match &self.kind {
            Kind::Zero => 0.0,
            Kind::HardSphere => wn * cos_eff,
            Kind::Table {
                chi_min,
                energies,
                curves,
            } => {
                let chi = PI - 2.0 * cos_eff.acos();
                if chi < *chi_min {
                    return 0.0;
                }
                let energy = 0.25 * wn * wn;
                let at = |curve: &Curve| -> f64 {
                    let (rho, drho) = curve.invert(chi);
                    match self.d {
                        2 => 2.0 * wn * drho,
                        _ => {
                            let s = chi.clamp(1e-9, PI - 1e-9).sin();
                            4.0 * wn * cos_eff * rho * drho / s
                        }
                    }
                };
                let ne = energies.len();
                if energy <= energies[0] || ne == 1 {
                    at(&curves[0])
                } else if energy >= energies[ne - 1] {
                    at(&curves[ne - 1])
                } else {
                    let k = energies.partition_point(|e| *e <= energy) - 1;
                    let t = (energy - energies[k]) / (energies[k + 1] - energies[k]);
                    (1.0 - t) * at(&curves[k]) + t * at(&curves[k + 1])
                }
            }
        }
    }

    /// Total collision rate `B(|w|) = int b(w, omega) domega` over the
    /// hemisphere `omega . w >= 0` (the kernel's even symmetry makes the full
    /// sphere exactly twice this).
    pub fn total_rate(&self, speed: f64) -> f64 {
        if !(speed.is_finite() && speed > 0.0) {
            return 0.0;
        }
        let (nodes, weights) = gauss_legendre(48);
        match self.d {
            2 => {
                let w = [speed, 0.0];
                let f = |theta: f64| self.evaluate(w, [theta.cos(), theta.sin()]);
                // Both sides of the symmetry axis.
                2.0 * panel_sum(&f, 0.0, 0.5 * PI, &nodes, &weights, 8)
            }
            _ => {
                let w = [speed, 0.0, 0.0];
                let f = |theta: f64| {
                    self.evaluate(w, [theta.cos(), theta.sin(), 0.0]) * theta.sin()
                };
                2.0 * PI * panel_sum(&f, 0.0, 0.5 * PI, &nodes, &weights, 8)
            }
        }
    }
}

fn check_dim(d: usize) -> Result<(), ScatteringError> {
    if d == 2 || d == 3 {
        Ok(())
    } else {
        Err(ScatteringError::InvalidParam(format!(
            "dimension must be 2 or 3, got {d}"
        )))
    }
}

/// Inverts each deflection curve and wraps it as an evaluable kernel.
///
/// Requires `chi` strictly decreasing in the impact parameter at every
/// energy — the operational admissibility test for the convex class; data
/// violating it (e.g. energies above the barrier, where near-head-on
/// trajectories pass over the top) is rejected.
pub fn cross_section_from_deflection(
    table: &DeflectionTable,
    chi_min: f64,
    d: usize,
) -> Result<CrossSection, ScatteringError> {
    check_dim(d)?;
    if !(chi_min.is_finite() && (0.0..PI).contains(&chi_min)) {
        return Err(ScatteringError::InvalidParam(format!(
            "grazing cutoff must lie in [0, pi), got {chi_min}"
        )));
    }
    let nr = table.rhos().len();
    let mut curves = Vec::with_capacity(table.energies().len());
    for (e, &energy) in table.energies().iter().enumerate() {
        let mut chis = Vec::with_capacity(nr);
        let mut rhos = Vec::with_capacity(nr);
        for r in 0..nr {
            let c = table.value(e, r);
            if r + 1 < nr && table.value(e, r + 1) >= c {
                return Err(ScatteringError::NonMonotone { energy, row: r });
            }
            chis.push(c);
            rhos.push(table.rhos()[r]);
        }
        chis.reverse();
        rhos.reverse();
        curves.push(Curve { chis, rhos });
    }
    Ok(CrossSection {
        d,
        kind: Kind::Table {
            chi_min,
            energies: table.energies().to_vec(),
            curves,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::RngState;
    use proptest::prelude::*;

    fn soft() -> PotentialSpec {
        PotentialSpec::soft(100.0, 2.0).unwrap()
    }

    fn rho_grid(n: usize) -> Vec<f64> {
        (0..=n).map(|k| k as f64 / n as f64).collect()
    }

    #[test]
    fn table_is_monotone_and_pinned_at_the_ends() {
        let t = DeflectionTable::build(&soft(), rho_grid(40), vec![0.5, 1.0, 2.0]).unwrap();
        for e in 0..3 {
            assert!((t.value(e, 0) - PI).abs() < 1e-12, "head-on not backscatter");
            assert_eq!(t.value(e, 40), 0.0, "grazing end not zero");
            for r in 0..40 {
                assert!(t.value(e, r) > t.value(e, r + 1));
            }
        }
    }

    #[test]
    fn table_build_rejects_bad_grids() {
        let phi = soft();
        assert!(DeflectionTable::build(&phi, vec![0.5], vec![1.0, 2.0]).is_err());
        assert!(DeflectionTable::build(&phi, vec![0.5, 0.4], vec![1.0, 2.0]).is_err());
        assert!(DeflectionTable::build(&phi, vec![0.0, 1.5], vec![1.0, 2.0]).is_err());
        assert!(DeflectionTable::build(&phi, rho_grid(4), vec![-1.0, 2.0]).is_err());
        assert!(
            DeflectionTable::build(&PotentialSpec::HardSphere, rho_grid(4), vec![1.0, 2.0])
                .is_err()
        );
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let t = DeflectionTable::build(&soft(), rho_grid(17), vec![0.3, 1.0, 3.7]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("rho,energy,chi\n"));
        let back = DeflectionTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back, t);
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn csv_reader_rejects_malformed_input() {
        assert!(DeflectionTable::read_csv(&b"bad,header\n"[..]).is_err());
        assert!(DeflectionTable::read_csv(&b"rho,energy,chi\n"[..]).is_err());
        assert!(
            DeflectionTable::read_csv(&b"rho,energy,chi\n0.0,1.0,oops\n"[..]).is_err()
        );
        // Ragged grid: second block has a different rho set.
        let ragged = b"rho,energy,chi\n0,1,3\n0.5,1,2\n0,2,3\n0.25,2,2\n";
        assert!(DeflectionTable::read_csv(&ragged[..]).is_err());
    }

    #[test]
    fn assembly_rejects_non_monotone_deflections() {
        let t = DeflectionTable::from_raw(
            vec![0.0, 0.5, 1.0],
            vec![1.0],
            vec![1.0, 2.0, 0.0],
        )
        .unwrap();
        let err = cross_section_from_deflection(&t, 1e-2, 2).unwrap_err();
        assert!(matches!(err, ScatteringError::NonMonotone { row: 0, .. }), "{err}");
    }

    #[test]
    fn hard_sphere_kernel_closed_form() {
        let b3 = CrossSection::hard_sphere(3).unwrap();
        assert_eq!(b3.evaluate([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]), 1.0);
        assert_eq!(b3.evaluate([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), 0.0);
        let b2 = CrossSection::hard_sphere(2).unwrap();
        let ang = 0.7f64;
        let got = b2.evaluate([2.0, 0.0], [ang.cos(), ang.sin()]);
        assert!((got - 2.0 * ang.cos()).abs() < 1e-14);
        // Reflection through the origin leaves the kernel unchanged.
        assert_eq!(
            b2.evaluate([2.0, 0.0], [-ang.cos(), -ang.sin()]),
            got
        );
    }

    #[test]
    fn zero_kernel_never_fires() {
        let b = CrossSection::zero(2).unwrap();
        assert_eq!(b.evaluate([3.0, -1.0], [0.6, 0.8]), 0.0);
        assert_eq!(b.total_rate(2.0), 0.0);
    }

    #[test]
    fn hard_sphere_total_rate_matches_closed_form() {
        // Hemisphere integral of |w . omega|: 2|w| in d = 2, pi |w| in d = 3.
        let b2 = CrossSection::hard_sphere(2).unwrap();
        assert!((b2.total_rate(2.0) - 4.0).abs() < 1e-10);
        let b3 = CrossSection::hard_sphere(3).unwrap();
        assert!((b3.total_rate(2.0) - 2.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn soft_kernel_is_bounded_away_from_grazing() {
        let t = DeflectionTable::build(&soft(), rho_grid(200), vec![1.0]).unwrap();
        for d in [2usize, 3] {
            let b = cross_section_from_deflection(&t, 1e-2, d).unwrap();
            let mut max_ratio = 0.0f64;
            for k in 0..2000 {
                let theta = 0.5 * PI * k as f64 / 2000.0;
                let v = if d == 2 {
                    b.evaluate([2.0, 0.0], [theta.cos(), theta.sin()])
                } else {
                    b.evaluate([2.0, 0.0, 0.0], [theta.cos(), theta.sin(), 0.0])
                };
                assert!(v.is_finite() && v >= 0.0);
                max_ratio = max_ratio.max(v / 2.0);
            }
            assert!(max_ratio < 50.0, "d = {d}: kernel ratio {max_ratio}");
            assert!(max_ratio > 0.1, "d = {d}: kernel vanished everywhere");
        }
    }

    #[test]
    fn soft_total_rate_is_stable_under_grid_refinement() {
        let coarse = DeflectionTable::build(&soft(), rho_grid(100), vec![1.0]).unwrap();
        let fine = DeflectionTable::build(&soft(), rho_grid(200), vec![1.0]).unwrap();
        for d in [2usize, 3] {
            let bc = cross_section_from_deflection(&coarse, 1e-2, d).unwrap();
            let bf = cross_section_from_deflection(&fine, 1e-2, d).unwrap();
            let (rc, rf) = (bc.total_rate(2.0), bf.total_rate(2.0));
            assert!(rf > 0.0);
            assert!(
                (rc - rf).abs() / rf < 0.01,
                "d = {d}: total rate moved from {rc} to {rf}"
            );
        }
    }

    #[test]
    fn energy_interpolation_hits_nodes_and_stays_between_curves() {
        let multi =
            DeflectionTable::build(&soft(), rho_grid(80), vec![1.0, 4.0]).unwrap();
        let single = DeflectionTable::build(&soft(), rho_grid(80), vec![4.0]).unwrap();
        let bm = cross_section_from_deflection(&multi, 1e-2, 2).unwrap();
        let bs = cross_section_from_deflection(&single, 1e-2, 2).unwrap();
        let omega = [0.6f64.cos(), 0.6f64.sin()];
        // |w| = 4 means E = 4: the node curve must be reproduced exactly.
        assert!(
            (bm.evaluate([4.0, 0.0], omega) - bs.evaluate([4.0, 0.0], omega)).abs()
                < 1e-12
        );
        // Between the nodes the normalized kernel lies between the curves.
        let s1 = bm.evaluate([2.0, 0.0], omega) / 2.0;
        let s4 = bm.evaluate([4.0, 0.0], omega) / 4.0;
        let mid = bm.evaluate([3.0, 0.0], omega) / 3.0;
        let (lo, hi) = (s1.min(s4), s1.max(s4));
        assert!(mid >= lo - 1e-12 && mid <= hi + 1e-12, "{lo} {mid} {hi}");
    }

    proptest! {
        #[test]
        fn kernel_is_even_under_joint_reflection(
            seed in 0u64..500,
            hard in proptest::bool::ANY,
        ) {
            use rand::Rng;
            let mut rng = RngState::new(seed).rng();
            let t = DeflectionTable::from_raw(
                vec![0.0, 0.25, 0.5, 0.75, 1.0],
                vec![1.0],
                vec![PI, 2.0, 1.0, 0.4, 0.0],
            ).unwrap();
            let b = if hard {
                CrossSection::hard_sphere(2).unwrap()
            } else {
                cross_section_from_deflection(&t, 1e-2, 2).unwrap()
            };
            let w = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let ang: f64 = rng.gen_range(0.0..(2.0 * PI));
            let omega = [ang.cos(), ang.sin()];
            let lhs = b.evaluate(w, omega);
            let rhs = b.evaluate(vec::scale(w, -1.0), vec::scale(omega, -1.0));
            prop_assert_eq!(lhs, rhs);
        }
    }
}
