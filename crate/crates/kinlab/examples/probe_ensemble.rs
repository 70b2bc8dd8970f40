//! Throwaway calibration probe for the ensemble study (not committed).
//! Full-scale dry run: measures the finite-diameter signal against the
//! Monte Carlo noise floor at study-scale replica counts.

use kinlab::core::{torus_displacement, RngState, ScalingParams};
use kinlab::ensemble::{run_replicas, InitialLaw};
use kinlab::kinetic::{picard_iterate, DistributionGrid, VelocityGrid};
use kinlab::scattering::CrossSection;
use kinlab::vec;
use rand::{Rng, SeedableRng};
use std::time::Instant;

const GROUPS: usize = 100;
const CHUNK: usize = 20_000;

struct CellAcc {
    counts: Vec<Vec<f64>>, // per group per cell
    totals: Vec<f64>,      // tagged particles per group
}

impl CellAcc {
    fn new(cells: usize) -> Self {
        Self {
            counts: vec![vec![0.0; cells]; GROUPS],
            totals: vec![0.0; GROUPS],
        }
    }
    fn probs(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .zip(&self.totals)
            .map(|(c, t)| c.iter().map(|x| x / t).collect())
            .collect()
    }
}

struct MomentAcc {
    sums: Vec<[f64; 2]>, // per group: [sum phi, count] for each of 2 functions -> store per fn
}

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

fn pooled(per_group: &[Vec<f64>]) -> Vec<f64> {
    let cells = per_group[0].len();
    let mut p = vec![0.0; cells];
    for g in per_group {
        for (a, b) in p.iter_mut().zip(g) {
            *a += b;
        }
    }
    for a in &mut p {
        *a /= per_group.len() as f64;
    }
    p
}

fn pooled_var(per_group: &[Vec<f64>], pool: &[f64]) -> Vec<f64> {
    let gn = per_group.len() as f64;
    let mut var = vec![0.0; pool.len()];
    for g in per_group {
        for ((v, p), m) in var.iter_mut().zip(g).zip(pool) {
            *v += (p - m) * (p - m);
        }
    }
    for v in &mut var {
        *v /= gn * (gn - 1.0);
    }
    var
}

fn l1_probs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn d2_corrected(pool: &[f64], var: &[f64], target: &[f64]) -> f64 {
    let raw: f64 = pool
        .iter()
        .zip(target)
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    raw - var.iter().sum::<f64>()
}

fn bootstrap_se(per_group: &[Vec<f64>], target: &[f64], seed: u64) -> (f64, f64) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let gn = per_group.len();
    let mut l1s = Vec::new();
    let mut d2s = Vec::new();
    for _ in 0..200 {
        let sample: Vec<Vec<f64>> = (0..gn)
            .map(|_| per_group[rng.gen_range(0..gn)].clone())
            .collect();
        let p = pooled(&sample);
        let v = pooled_var(&sample, &p);
        l1s.push(l1_probs(&p, target));
        d2s.push(d2_corrected(&p, &v, target));
    }
    let se = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    };
    (se(&l1s), se(&d2s))
}

fn probs_of_grid(f: &DistributionGrid) -> Vec<f64> {
    let vol = f.grid().cell_volume();
    f.values().iter().map(|v| v * vol).collect()
}

fn mean_se_groups(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let m = vals.iter().sum::<f64>() / n;
    let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n * (n - 1.0));
    (m, v.sqrt())
}

#[allow(clippy::too_many_arguments)]
fn run_rung(
    label: &str,
    n: usize,
    m: usize,
    time: f64,
    seed_tag: u64,
    law: &InitialLaw<2>,
    state: &RngState,
    grid16: &VelocityGrid,
    grid8: &VelocityGrid,
    p_ref16: &[f64],
    p_ref8: &[f64],
    phi_ref: &[f64; 3],
) {
    let params = ScalingParams::boltzmann_grad(n, 2).unwrap();
    let mut acc16 = CellAcc::new(grid16.cell_count());
    let mut acc8 = CellAcc::new(grid8.cell_count());
    let mut trunc16 = CellAcc::new(grid16.cell_count());
    let mut removed = 0u64;
    let mut tagged = 0u64;
    // Weak moments: phi in {vx*vy, exp(-|v|^2/2)}; per-group [sum, sumsq]
    let mut phi_groups: Vec<Vec<f64>> = vec![vec![0.0; GROUPS]; 3];
    // chaos: per-group sums of per-replica single and pair means for |v|^2
    let mut chaos_single = vec![0.0; GROUPS];
    let mut chaos_pair = vec![0.0; GROUPS];
    let mut chaos_count = vec![0.0; GROUPS];
    let mut events = 0u64;
    let radius = 2.0 * params.epsilon;

    let tick = Instant::now();
    let mut done = 0usize;
    let mut chunk_id = 0u64;
    while done < m {
        let take = CHUNK.min(m - done);
        let set = run_replicas(
            take,
            &params,
            law,
            time,
            &state.substream(seed_tag * 1000 + chunk_id),
        )
        .unwrap();
        events += set.total_events();
        for (r, rep) in set.replicas.iter().enumerate() {
            let g = (done + r) % GROUPS;
            let np = rep.state.len();
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for i in 0..np {
                let v = rep.state.points[i].v;
                tagged += 1;
                acc16.totals[g] += 1.0;
                acc8.totals[g] += 1.0;
                trunc16.totals[g] += 1.0;
                if let Some(c) = locate(grid16, v) {
                    acc16.counts[g][c] += 1.0;
                }
                if let Some(c) = locate(grid8, v) {
                    acc8.counts[g][c] += 1.0;
                }
                let mut near = false;
                for j in 0..np {
                    if j != i {
                        let d = vec::norm(torus_displacement(
                            rep.state.points[i].x,
                            rep.state.points[j].x,
                        ));
                        if d <= radius {
                            near = true;
                            break;
                        }
                    }
                }
                if near {
                    removed += 1;
                } else if let Some(c) = locate(grid16, v) {
                    trunc16.counts[g][c] += 1.0;
                }
                phi_groups[0][g] += v[0] * v[1];
                phi_groups[1][g] += (-0.5 * vec::norm_sq(v)).exp();
                phi_groups[2][g] += 1.0; // tag count per group for normalizing
                let q = vec::norm_sq(v);
                s1 += q;
                s2 += q * q;
            }
            let npf = np as f64;
            chaos_single[g] += s1 / npf;
            chaos_pair[g] += (s1 * s1 - s2) / (npf * (npf - 1.0));
            chaos_count[g] += 1.0;
        }
        done += take;
        chunk_id += 1;
    }
    let dt = tick.elapsed().as_secs_f64();

    let pg16 = acc16.probs();
    let pg8 = acc8.probs();
    let pool16 = pooled(&pg16);
    let pool8 = pooled(&pg8);
    let var16 = pooled_var(&pg16, &pool16);
    let var8 = pooled_var(&pg8, &pool8);
    let l1 = l1_probs(&pool16, p_ref16);
    let d2 = d2_corrected(&pool16, &var16, p_ref16);
    let d2c8 = d2_corrected(&pool8, &var8, p_ref8);
    let (l1_se, d2_se) = bootstrap_se(&pg16, p_ref16, 40_000 + seed_tag);
    let (_, d2_se8) = bootstrap_se(&pg8, p_ref8, 41_000 + seed_tag);
    let floor16: f64 = var16.iter().sum::<f64>();

    println!(
        "{label}: N={n} M={m} evolve+acc {dt:.0}s, events/rep {:.2}, nu_md {:.4}",
        events as f64 / m as f64,
        if time > 0.0 {
            2.0 * events as f64 / (n as f64 * m as f64 * time)
        } else {
            f64::NAN
        },
    );
    println!(
        "  16^2: L1 {l1:.5} +- {l1_se:.5}, sum-var {floor16:.3e}, D2corr {d2:.3e} +- {d2_se:.3e}  ({:.1} sigma)",
        d2 / d2_se
    );
    println!(
        "   8^2: D2corr {d2c8:.3e} +- {d2_se8:.3e}  ({:.1} sigma)",
        d2c8 / d2_se8
    );

    // weak moments per group -> mean/se of pooled deficit vs reference
    for (k, name) in ["vx*vy", "gauss"].iter().enumerate() {
        let per: Vec<f64> = (0..GROUPS)
            .map(|g| phi_groups[k][g] / phi_groups[2][g])
            .collect();
        let (mn, se) = mean_se_groups(&per);
        println!(
            "  weak {name}: md {mn:.6} ref {:.6} deficit {:+.2e} +- {:.2e} ({:+.1} sigma)",
            phi_ref[k],
            mn - phi_ref[k],
            se,
            (mn - phi_ref[k]) / se
        );
    }

    // truncation
    let pgt = trunc16.probs();
    let poolt = pooled(&pgt);
    let gap = l1_probs(&poolt, &pool16);
    println!(
        "  truncation r=2eps: removed {:.5}, L1 gap {gap:.5}",
        removed as f64 / tagged as f64
    );

    // chaos deficit for |v|^2
    let per_def: Vec<f64> = (0..GROUPS)
        .map(|g| {
            let s = chaos_single[g] / chaos_count[g];
            chaos_pair[g] / chaos_count[g] - s * s
        })
        .collect();
    let (dm, dse) = mean_se_groups(&per_def);
    println!("  chaos |v|^2 deficit: {dm:+.3e} +- {dse:.3e} ({:+.1} sigma)", dm / dse);
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let law = InitialLaw::<2>::two_bump();
    let b = CrossSection::hard_sphere(2).unwrap();

    let fine32 = VelocityGrid::new(4.0, 32).unwrap();
    let f032 = DistributionGrid::from_mixture(fine32, law.mixture()).unwrap();
    let nu = picard_iterate(&f032, &b, 0, 0.0).unwrap().collision_frequency;
    let t_abs = 0.1 / nu;
    println!("nu(G=32) = {nu:.6}, t = {t_abs:.6}");

    let tick = Instant::now();
    let ref32 = picard_iterate(&f032, &b, 3, t_abs).unwrap();
    println!("picard3 G=32: {:.0} s", tick.elapsed().as_secs_f64());

    // Reference systematics: G=64 vs G=32 on the 16^2 partition.
    let (p16, p8, phi_ref) = if args.iter().any(|a| a == "--g64") {
        let fine64 = VelocityGrid::new(4.0, 64).unwrap();
        let f064 = DistributionGrid::from_mixture(fine64, law.mixture()).unwrap();
        let tick = Instant::now();
        let ref64 = picard_iterate(&f064, &b, 3, t_abs).unwrap();
        println!("picard3 G=64: {:.0} s", tick.elapsed().as_secs_f64());
        let a16 = ref64.f.block_aggregate(4).unwrap();
        let b16 = ref32.f.block_aggregate(2).unwrap();
        let pa = probs_of_grid(&a16);
        let pb = probs_of_grid(&b16);
        let dd: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum();
        println!(
            "reference grid systematic on 16^2: L1 {:.3e}, D2 {:.3e}",
            l1_probs(&pa, &pb),
            dd
        );
        let a8 = ref64.f.block_aggregate(8).unwrap();
        // Weak moments of the reference from the finest grid available.
        let g64 = ref64.f.grid().clone();
        let mut mxy = 0.0;
        let mut mgauss = 0.0;
        let vol = g64.cell_volume();
        for ix in 0..g64.resolution() {
            for iy in 0..g64.resolution() {
                let c = g64.center(ix, iy);
                let w = ref64.f.value(ix, iy) * vol;
                mxy += w * c[0] * c[1];
                mgauss += w * (-0.5 * vec::norm_sq(c)).exp();
            }
        }
        (pa, probs_of_grid(&a8), [mxy, mgauss, 0.0])
    } else {
        let b16 = ref32.f.block_aggregate(2).unwrap();
        let b8 = ref32.f.block_aggregate(4).unwrap();
        let g32 = ref32.f.grid().clone();
        let mut mxy = 0.0;
        let mut mgauss = 0.0;
        let vol = g32.cell_volume();
        for ix in 0..g32.resolution() {
            for iy in 0..g32.resolution() {
                let c = g32.center(ix, iy);
                let w = ref32.f.value(ix, iy) * vol;
                mxy += w * c[0] * c[1];
                mgauss += w * (-0.5 * vec::norm_sq(c)).exp();
            }
        }
        (
            probs_of_grid(&b16),
            probs_of_grid(&b8),
            [mxy, mgauss, 0.0],
        )
    };

    let f016 = f032.block_aggregate(2).unwrap();
    let f08 = f032.block_aggregate(4).unwrap();
    let p016 = probs_of_grid(&f016);
    let p08 = probs_of_grid(&f08);
    // f0 weak moments for the 0-rows (exact for the mixture): vxvy = 0 by
    // symmetry, gauss moment computed from the grid for consistency.
    let g32 = f032.grid().clone();
    let mut mxy0 = 0.0;
    let mut mg0 = 0.0;
    let vol = g32.cell_volume();
    for ix in 0..g32.resolution() {
        for iy in 0..g32.resolution() {
            let c = g32.center(ix, iy);
            let w = f032.value(ix, iy) * vol;
            mxy0 += w * c[0] * c[1];
            mg0 += w * (-0.5 * vec::norm_sq(c)).exp();
        }
    }
    let phi0 = [mxy0, mg0, 0.0];

    let grid16 = VelocityGrid::new(4.0, 16).unwrap();
    let grid8 = VelocityGrid::new(4.0, 8).unwrap();
    let state = RngState::new(777);

    let ladder: Vec<(usize, usize)> = vec![(125, 160_000), (250, 60_000), (500, 20_000), (1000, 6_000)];
    for (k, &(n, m)) in ladder.iter().enumerate() {
        run_rung(
            "t-row", n, m, t_abs, (k + 1) as u64, &law, &state, &grid16, &grid8, &p16, &p8,
            &phi_ref,
        );
        let m0 = (m / 4).max(2000);
        run_rung(
            "0-row", n, m0, 0.0, (k + 11) as u64, &law, &state, &grid16, &grid8, &p016, &p08,
            &phi0,
        );
    }
}
