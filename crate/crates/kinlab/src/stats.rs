//! Small statistical helpers shared by estimators and tests.
//!
//! Nothing here is clever: sample means with standard errors, a least-squares
//! line with a slope error, bootstrap index draws, and the handful of
//! critical values (Kolmogorov–Smirnov, chi-squared, one-sided binomial) the
//! validation tests need.

use rand::Rng;

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Sums after sorting by the IEEE total order, so the result is independent
/// of the input permutation.  Estimators that must not depend on particle
/// labels accumulate through this.
pub fn sum_label_free(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values.iter().sum()
}

/// Least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Ordinary least squares with the usual residual-based slope error; needs at
/// least two distinct abscissae (three points for a finite error estimate).
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx = x.iter().map(|xi| (xi - mx) * (xi - mx)).sum::<f64>();
    if sxx == 0.0 {
        return None;
    }
    let sxy = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (xi - mx) * (yi - my))
        .sum::<f64>();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let ss_res = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| {
                let r = yi - (intercept + slope * xi);
                r * r
            })
            .sum::<f64>();
        (ss_res / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    Some(LineFit {
        slope,
        intercept,
        slope_se,
    })
}

/// Kolmogorov–Smirnov distance of a sample to the uniform law on `[0, 1]`.
pub fn ks_uniform_statistic(sample: &[f64]) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((x - lo).abs()).max((hi - x).abs());
    }
    d
}

/// Asymptotic KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// 99th percentile of chi-squared with `df` degrees of freedom
/// (Wilson–Hilferty approximation, good to a fraction of a percent for
/// df >= 3).
pub fn chi2_critical_99(df: usize) -> f64 {
    let k = df as f64;
    let z = 2.326_347_874_040_841; // standard normal 99th percentile
    let h = 2.0 / (9.0 * k);
    k * (1.0 - h + z * h.sqrt()).powi(3)
}

fn ln_factorial(n: u64) -> f64 {
    // Exact summation; the binomial tests here never see astronomical n.
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// One-sided binomial tail `P(X >= k)` for `X ~ Bin(n, 1/2)`.
///
/// Used by the paired comparison of recollision indicators: under the null of
/// no difference, discordant pairs split evenly.
pub fn binomial_tail_one_sided(k: u64, n: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut terms: Vec<f64> = (k..=n).map(|j| ln_choose(n, j) + ln_half_n).collect();
    // log-sum-exp for stability
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return 0.0;
    }
    let s: f64 = terms.drain(..).map(|t| (t - m).exp()).sum();
    (m + s.ln()).exp().min(1.0)
}

/// Digamma at a positive integer: `psi(n) = -gamma + sum_{j<n} 1/j`.
pub fn digamma_int(n: usize) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let mut s = -EULER_GAMMA;
    for j in 1..n {
        s += 1.0 / j as f64;
    }
    s
}

/// One bootstrap resample: `n` indices drawn with replacement.
pub fn bootstrap_indices<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}
