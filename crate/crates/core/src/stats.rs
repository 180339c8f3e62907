//! Small statistical toolkit: pairwise sums, Kolmogorov–Smirnov distances,
//! isotonic regression, weighted least squares and resampling errors.

use rand::Rng;
use serde::Serialize;

use crate::rng::RngStream;

/// Pairwise (cascade) summation; the result depends only on the order of
/// `xs`, never on how the caller produced it.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n - F|`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

/// Nonincreasing least-squares fit by pool-adjacent-violators.
pub fn isotonic_nonincreasing(y: &[f64], w: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), w.len());
    // Blocks of (weighted mean, weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        blocks.push((yi, wi, 1));
        while blocks.len() >= 2 {
            let (m2, w2, n2) = blocks[blocks.len() - 1];
            let (m1, w1, n1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let wt = w1 + w2;
            blocks.push(((m1 * w1 + m2 * w2) / wt, wt, n1 + n2));
        }
    }
    blocks.into_iter().flat_map(|(m, _, n)| std::iter::repeat_n(m, n)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub points: usize,
}

impl LinearFit {
    /// Two-sided interval `slope ± z se`.
    pub fn slope_interval(&self, z: f64) -> (f64, f64) {
        (self.slope - z * self.slope_se, self.slope + z * self.slope_se)
    }
}

/// Ordinary least squares of `y` on `x`. Needs at least two distinct `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = pairwise_sum(&x.iter().map(|a| (a - mx) * (a - mx)).collect::<Vec<_>>());
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 =
        pairwise_sum(&x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect::<Vec<_>>());
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let rss: Vec<f64> =
            x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).collect();
        (pairwise_sum(&rss) / (n - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some(LinearFit { slope, intercept, slope_se, points: n })
}

/// Standard error of the mean of a correlated series from `batches`
/// contiguous batch means.
pub fn batch_means_se(series: &[f64], batches: usize) -> f64 {
    let b = batches.max(2).min(series.len());
    let len = series.len() / b;
    if len == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b).map(|i| mean(&series[i * len..(i + 1) * len])).collect();
    (variance(&means) / b as f64).sqrt()
}

/// Bootstrap standard error of the mean of `batch_means`, resampling
/// batches with replacement.
pub fn bootstrap_se_of_mean(batch_means: &[f64], resamples: usize, stream: &mut RngStream) -> f64 {
    let n = batch_means.len();
    if n < 2 {
        return f64::NAN;
    }
    let draws: Vec<f64> = (0..resamples)
        .map(|_| {
            let pick: Vec<f64> = (0..n).map(|_| batch_means[stream.random_range(0..n)]).collect();
            mean(&pick)
        })
        .collect();
    variance(&draws).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Percentile bootstrap interval for the median.
pub fn bootstrap_median_band(
    xs: &[f64],
    resamples: usize,
    level: f64,
    stream: &mut RngStream,
) -> Band {
    let n = xs.len();
    let estimate = median(xs);
    if n < 2 || resamples == 0 {
        return Band { estimate, lower: estimate, upper: estimate };
    }
    let mut meds: Vec<f64> = (0..resamples)
        .map(|_| {
            let pick: Vec<f64> = (0..n).map(|_| xs[stream.random_range(0..n)]).collect();
            median(&pick)
        })
        .collect();
    meds.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Band { estimate, lower: quantile(&meds, alpha), upper: quantile(&meds, 1.0 - alpha) }
}
