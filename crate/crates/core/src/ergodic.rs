//! Statistics of paths and ensembles: ergodic averages, the angle's linear
//! growth, window recurrence, goodness of fit to the invariant law, and
//! decay rates of observables and of total variation.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::model::{CircleModel, ProductMeasure, State};
use crate::rng::RngStream;
use crate::sde::{simulate_with, SimConfig, SimError, Trajectory};
use crate::stats::{
    bootstrap_median_band, bootstrap_se_of_mean, isotonic_nonincreasing,
    ks_critical_1pct, ks_statistic, linear_fit, mean, pairwise_sum, variance, Band,
};

/// Minimum ensemble size for KS statistics.
pub const MIN_GOF_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum ErgodicError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("bad argument: {0}")]
    BadArgument(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Running trapezoid averages `(1/t) int_0^t f(Y_s) ds` at the recorded times.
pub fn time_average<F: Fn(&State) -> f64>(
    traj: &Trajectory,
    f: F,
) -> Result<Vec<(f64, f64)>, ErgodicError> {
    if traj.is_empty() {
        return Err(ErgodicError::EmptyTrajectory);
    }
    let vals: Vec<f64> = traj.states.iter().map(&f).collect();
    let mut out = Vec::with_capacity(vals.len());
    out.push((traj.times[0], vals[0]));
    let mut integral = 0.0;
    for i in 1..vals.len() {
        integral += 0.5 * (vals[i] + vals[i - 1]) * (traj.times[i] - traj.times[i - 1]);
        let span = traj.times[i] - traj.times[0];
        out.push((traj.times[i], integral / span));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicAverage {
    pub t: f64,
    pub average: f64,
    pub batch_means: Vec<f64>,
    pub se_batch: f64,
    pub se_bootstrap: f64,
}

/// Streams one path and returns the trapezoid time average of `f(x, u)`
/// with batch-means and block-bootstrap standard errors.
pub fn ergodic_average<F>(
    model: &CircleModel,
    s0: &State,
    cfg: &SimConfig,
    f: F,
    batches: usize,
) -> Result<ErgodicAverage, ErgodicError>
where
    F: Fn(f64, &[f64]) -> f64,
{
    if batches < 2 {
        return Err(ErgodicError::BadArgument("need at least two batches".into()));
    }
    let n = cfg.n_steps();
    let per_batch = (n / batches).max(1);
    let mut batch_integrals = vec![0.0; batches];
    let mut prev = f64::NAN;
    let mut stream = RngStream::new(cfg.seed, 0);
    simulate_with(model, s0, cfg, &mut stream, |p| {
        let v = f(p.x, p.u);
        if p.step > 0 {
            let b = ((p.step - 1) / per_batch).min(batches - 1);
            batch_integrals[b] += 0.5 * (v + prev) * cfg.dt;
        }
        prev = v;
    })?;
    let t = n as f64 * cfg.dt;
    let lengths: Vec<f64> = (0..batches)
        .map(|b| {
            let steps = if b + 1 == batches { n - per_batch * (batches - 1) } else { per_batch };
            steps as f64 * cfg.dt
        })
        .collect();
    let batch_means: Vec<f64> = batch_integrals.iter().zip(&lengths).map(|(i, l)| i / l).collect();
    let average = pairwise_sum(&batch_integrals) / t;
    let se_batch = (variance(&batch_means) / batches as f64).sqrt();
    let se_bootstrap =
        bootstrap_se_of_mean(&batch_means, 1000, &mut RngStream::new(cfg.seed, u64::MAX));
    Ok(ErgodicAverage { t, average, batch_means, se_batch, se_bootstrap })
}

/// `(t, unwrapped_x / t)` for `t > 0`.
pub fn x_over_t(traj: &Trajectory) -> Vec<(f64, f64)> {
    traj.times
        .iter()
        .zip(&traj.unwrapped_x)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, x)| (*t, x / t))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XOverTSummary {
    pub t: f64,
    pub values: Vec<f64>,
    pub median_abs: Band,
}

/// Terminal `|X_T / T|` over ensemble members with a bootstrap band on the
/// median.
pub fn x_over_t_summary(t: f64, unwrapped_final: &[f64], seed: u64) -> XOverTSummary {
    let values: Vec<f64> = unwrapped_final.iter().map(|x| x / t).collect();
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let median_abs = bootstrap_median_band(&abs, 1000, 0.95, &mut RngStream::new(seed, u64::MAX));
    XOverTSummary { t, values, median_abs }
}

/// Arc of half-width `half_width` centred on `center`; `half_width >= pi`
/// is the whole circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub center: f64,
    pub half_width: f64,
}

impl Window {
    /// The family `((2k + j) pi - eps, (2k + j) pi + eps)` for `j` in {0, 1}.
    pub fn parity(j: u8, eps: f64) -> Result<Self, ErgodicError> {
        if j > 1 {
            return Err(ErgodicError::BadArgument(format!("j = {j} must be 0 or 1")));
        }
        if !(eps > 0.0 && eps < PI / 2.0) {
            return Err(ErgodicError::BadArgument(format!("eps = {eps} must lie in (0, pi/2)")));
        }
        Ok(Self { center: j as f64 * PI, half_width: eps })
    }

    pub fn full() -> Self {
        Self { center: 0.0, half_width: PI }
    }

    pub fn contains(&self, x: f64) -> bool {
        if self.half_width >= PI {
            return true;
        }
        let d = (x - self.center).rem_euclid(TAU);
        d.min(TAU - d) < self.half_width
    }
}

/// Counts entries into `window`: samples inside whose predecessor was
/// outside, plus the first sample if it starts inside.
#[derive(Debug, Clone, Copy)]
pub struct EntryCounter {
    window: Window,
    inside: bool,
    started: bool,
    pub entries: usize,
}

impl EntryCounter {
    pub fn new(window: Window) -> Self {
        Self { window, inside: false, started: false, entries: 0 }
    }

    pub fn push(&mut self, x: f64) {
        let now = self.window.contains(x);
        if now && (!self.inside || !self.started) {
            self.entries += 1;
        }
        self.inside = now;
        self.started = true;
    }
}

pub fn recurrence_count(xs: &[f64], window: Window) -> usize {
    let mut c = EntryCounter::new(window);
    for &x in xs {
        c.push(x);
    }
    c.entries
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofReport {
    pub n: usize,
    pub ks_x: f64,
    pub ks_u: Vec<f64>,
    pub critical: f64,
    pub pass: bool,
}

/// KS distances of the angle to the uniform law and of each `u_k` to its
/// Gaussian marginal under `measure`.
pub fn marginal_gof(states: &[State], measure: &ProductMeasure) -> Result<GofReport, ErgodicError> {
    let n = states.len();
    if n < MIN_GOF_SAMPLES {
        return Err(ErgodicError::TooFewSamples { need: MIN_GOF_SAMPLES, got: n });
    }
    let xs: Vec<f64> = states.iter().map(|s| s.x).collect();
    let ks_x = ks_statistic(&xs, |x| (x / TAU).clamp(0.0, 1.0));
    let ks_u: Vec<f64> = measure
        .std_devs()
        .iter()
        .enumerate()
        .map(|(k, &sd)| {
            let normal = Normal::new(0.0, sd).expect("positive sd");
            let uk: Vec<f64> = states.iter().map(|s| s.u[k]).collect();
            ks_statistic(&uk, |u| normal.cdf(u))
        })
        .collect();
    let critical = ks_critical_1pct(n);
    let pass = ks_x < critical && ks_u.iter().all(|&d| d < critical);
    Ok(GofReport { n, ks_x, ks_u, critical, pass })
}

/// Histogram over `[0, 2pi) x [-L, L]^{2m}` with `L = half_width_sd` standard
/// deviations per coordinate; anything beyond `L` falls in one extra cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TvBins {
    pub angle_bins: usize,
    pub u_bins: usize,
    pub half_width_sd: f64,
}

impl Default for TvBins {
    fn default() -> Self {
        Self { angle_bins: 64, u_bins: 64, half_width_sd: 5.0 }
    }
}

/// Binned total variation distance `(1/2) sum |empirical - mu|` between the
/// ensemble and `measure`.
pub fn empirical_tv(states: &[State], measure: &ProductMeasure, bins: TvBins) -> f64 {
    let n = states.len();
    if n == 0 {
        return f64::NAN;
    }
    let sds = measure.std_devs();
    let dim = sds.len();
    let width = 2.0 * bins.half_width_sd / bins.u_bins as f64;
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    // Mass of each standardized u-bin.
    let u_mass: Vec<f64> = (0..bins.u_bins)
        .map(|i| {
            let a = -bins.half_width_sd + i as f64 * width;
            std_normal.cdf(a + width) - std_normal.cdf(a)
        })
        .collect();
    let angle_mass = 1.0 / bins.angle_bins as f64;

    let mut counts: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut outside = 0usize;
    for s in states {
        let mut key = Vec::with_capacity(dim + 1);
        let a = ((s.x / TAU * bins.angle_bins as f64).floor() as usize).min(bins.angle_bins - 1);
        key.push(a as u32);
        let mut inside = true;
        for (k, &sd) in sds.iter().enumerate() {
            let z = s.u[k] / sd + bins.half_width_sd;
            if !(z >= 0.0 && z < 2.0 * bins.half_width_sd) {
                inside = false;
                break;
            }
            key.push(((z / width).floor() as usize).min(bins.u_bins - 1) as u32);
        }
        if inside {
            *counts.entry(key).or_insert(0) += 1;
        } else {
            outside += 1;
        }
    }
    let inside_mass: f64 = u_mass.iter().sum::<f64>().powi(dim as i32);
    let nf = n as f64;
    // Sum over all cells of |emp - mu| = 1 + sum over occupied cells of
    // (|emp - mu| - mu), since unoccupied cells contribute mu.
    let mut terms: Vec<(Vec<u32>, f64)> = counts
        .into_iter()
        .map(|(key, c)| {
            let mu = angle_mass * key[1..].iter().map(|&b| u_mass[b as usize]).product::<f64>();
            let emp = c as f64 / nf;
            let term = (emp - mu).abs() - mu;
            (key, term)
        })
        .collect();
    terms.sort_by(|a, b| a.0.cmp(&b.0));
    let mut parts: Vec<f64> = terms.into_iter().map(|(_, t)| t).collect();
    let mu_out = 1.0 - inside_mass;
    let emp_out = outside as f64 / nf;
    parts.push((emp_out - mu_out).abs() - mu_out);
    0.5 * (1.0 + pairwise_sum(&parts))
}

/// Mean binned TV between `reps` independent `n`-samples of `measure` and
/// `measure` itself.
pub fn tv_noise_floor(measure: &ProductMeasure, bins: TvBins, n: usize, reps: usize, seed: u64) -> f64 {
    let vals: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut s = RngStream::new(seed, (1u64 << 40) + r as u64);
            let states: Vec<State> = (0..n).map(|_| measure.sample(&mut s)).collect();
            empirical_tv(&states, measure, bins)
        })
        .collect();
    mean(&vals)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub rate_se: f64,
    /// `rate - 2 se`.
    pub lower: f64,
    pub points: usize,
}

/// Fits `values ~ C exp(-exponent * rate * t)` on the leading run of points
/// that exceed `3 * floor`. `exponent` is 2 when `values` are squared norms.
pub fn fit_decay(times: &[f64], values: &[f64], floors: &[f64], exponent: f64) -> Option<RateFit> {
    let used = values
        .iter()
        .zip(floors)
        .take_while(|(v, f)| **v > 3.0 * **f && **v > 0.0)
        .count();
    if used < 3 {
        return None;
    }
    let logs: Vec<f64> = values[..used].iter().map(|v| v.ln()).collect();
    let fit = linear_fit(&times[..used], &logs)?;
    let rate = -fit.slope / exponent;
    let rate_se = fit.slope_se / exponent;
    Some(RateFit { rate, rate_se, lower: rate - 2.0 * rate_se, points: used })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvDecay {
    pub times: Vec<f64>,
    pub tv: Vec<f64>,
    pub noise_floor: f64,
    /// Largest gap between the series and its nonincreasing isotonic fit.
    pub isotonic_residual: f64,
    pub fit: Option<RateFit>,
}

pub fn tv_decay(
    times: &[f64],
    snapshots: &[Vec<State>],
    measure: &ProductMeasure,
    bins: TvBins,
    noise_floor: f64,
) -> TvDecay {
    let tv: Vec<f64> = snapshots.par_iter().map(|s| empirical_tv(s, measure, bins)).collect();
    let iso = isotonic_nonincreasing(&tv, &vec![1.0; tv.len()]);
    let isotonic_residual = tv.iter().zip(&iso).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    // Excess over the floor decays exponentially; the floor itself does not.
    let excess: Vec<f64> = tv.iter().map(|v| v - noise_floor).collect();
    let fit = fit_decay(times, &excess, &vec![noise_floor; tv.len()], 1.0);
    TvDecay { times: times.to_vec(), tv, noise_floor, isotonic_residual, fit }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NestedDesign {
    /// Initial conditions drawn from the invariant law.
    pub outer: usize,
    /// Replicas per initial condition.
    pub inner: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableDecay {
    pub times: Vec<f64>,
    /// Estimates of `||P_t g - mu(g)||^2` in `L^2(mu)`.
    pub sq_norm: Vec<f64>,
    pub sq_norm_se: Vec<f64>,
    pub censored: Vec<bool>,
    pub fit: Option<RateFit>,
}

/// Estimates `||P_t g - mu(g)||_{L^2(mu)}^2` by drawing `outer` starting
/// points from `mu` and `inner` replicas from each: with replica mean `m`
/// and variance `s^2`, `m^2 - s^2/inner` is unbiased for `(P_t g)^2`.
pub fn observable_decay<G>(
    model: &CircleModel,
    g: G,
    mu_g: f64,
    times: &[f64],
    design: NestedDesign,
    dt: f64,
    seed: u64,
) -> Result<ObservableDecay, ErgodicError>
where
    G: Fn(f64, &[f64]) -> f64 + Sync,
{
    if design.outer < 2 || design.inner < 2 {
        return Err(ErgodicError::BadArgument("outer and inner must both be >= 2".into()));
    }
    if times.is_empty() || times.windows(2).any(|w| w[0] >= w[1]) || times[0] <= 0.0 {
        return Err(ErgodicError::BadArgument("times must be positive and increasing".into()));
    }
    let steps: Vec<usize> = times.iter().map(|t| (t / dt).round() as usize).collect();
    let cfg = SimConfig::new(dt, *steps.last().unwrap() as f64 * dt, 1, seed)?;
    let measure = model.product_measure();
    let inner_base = 1u64 << 32;
    let per_point: Vec<Result<Vec<f64>, SimError>> = (0..design.outer)
        .into_par_iter()
        .map(|k| {
            let y0 = measure.sample(&mut RngStream::new(seed, k as u64));
            let mut samples = vec![vec![0.0; design.inner]; steps.len()];
            for r in 0..design.inner {
                let id = inner_base + (k * design.inner + r) as u64;
                let mut stream = RngStream::new(seed, id);
                let mut next = 0;
                simulate_with(model, &y0, &cfg, &mut stream, |p| {
                    if next < steps.len() && steps[next] == p.step {
                        samples[next][r] = g(p.x, p.u);
                        next += 1;
                    }
                })?;
            }
            Ok(samples
                .iter()
                .map(|reps| {
                    let m = mean(reps) - mu_g;
                    m * m - variance(reps) / design.inner as f64
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::with_capacity(design.outer);
    for (i, r) in per_point.into_iter().enumerate() {
        rows.push(r.map_err(|e| SimError::Member { index: i, source: Box::new(e) })?);
    }
    let mut sq_norm = Vec::with_capacity(times.len());
    let mut sq_norm_se = Vec::with_capacity(times.len());
    for ti in 0..times.len() {
        let col: Vec<f64> = rows.iter().map(|r| r[ti]).collect();
        sq_norm.push(mean(&col));
        sq_norm_se.push((variance(&col) / col.len() as f64).sqrt());
    }
    let censored: Vec<bool> = sq_norm.iter().zip(&sq_norm_se).map(|(v, s)| *v <= 3.0 * s).collect();
    let fit = fit_decay(times, &sq_norm, &sq_norm_se, 2.0);
    Ok(ObservableDecay { times: times.to_vec(), sq_norm, sq_norm_se, censored, fit })
}
