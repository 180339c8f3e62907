//! Period function of the rescaled planar system
//!
//! ```text
//! u2' = v2 - 1/v2,   v2' = -u2
//! ```
//!
//! on the level set `H = c`. With `phi(v) = v^2/2 - ln v` the orbit crosses
//! `u2 = 0` at the two roots `c1 < 1 < c2` of `phi(v) = c`, and
//!
//! ```text
//! T(c) = sqrt(2) * int_{c1}^{c2} dv / sqrt(c - phi(v))
//! ```
//!
//! which is evaluated here by tanh–sinh quadrature on `[c1, 1]` and
//! `[1, c2]`. An independent route integrates the planar system itself and
//! times the half-orbit from `(0, c1)` to `(0, c2)`.

use std::f64::consts::{PI, SQRT_2, TAU};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::flow::{hermite, rk4_step, FlowError, FlowSystem};
use crate::quadrature::{QuadError, TanhSinh};

/// Smallest admissible distance of `c` above the minimum level `1/2`.
pub const MIN_EXCESS: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum PeriodError {
    #[error("phi is defined for v > 0 only (got {0})")]
    NonPositive(f64),
    #[error("level c = {0} must satisfy c > 1/2 (+{MIN_EXCESS:e} for periods) and be finite")]
    Level(f64),
    #[error("lower root underflows for c = {0}")]
    Underflow(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// `phi(v) = v^2/2 - ln v`.
pub fn phi(v: f64) -> Result<f64, PeriodError> {
    if !(v > 0.0) {
        return Err(PeriodError::NonPositive(v));
    }
    Ok(0.5 * v * v - v.ln())
}

/// `phi(1 + d) - 1/2 = d^2 - d^3/3 + d^4/4 - ...`, accurate for small `d`.
pub fn phi_excess(d: f64) -> f64 {
    if d.abs() < 0.1 {
        // d^2/2 + (d - ln(1 + d)), the second part as its alternating series.
        let mut term = d * d;
        let mut sum = 0.5 * term;
        let mut k = 2.0;
        let mut series = 0.0;
        for _ in 0..40 {
            let contrib = term / k;
            series += contrib;
            if contrib.abs() < 1e-18 * series.abs() {
                break;
            }
            term *= -d;
            k += 1.0;
        }
        sum += series;
        sum
    } else {
        d + 0.5 * d * d - d.ln_1p()
    }
}

/// `phi(a) - phi(a + d)`, computed without forming either value.
pub fn phi_drop(a: f64, d: f64) -> f64 {
    (d / a).ln_1p() - a * d - 0.5 * d * d
}

fn check_level(c: f64) -> Result<f64, PeriodError> {
    if !c.is_finite() || c <= 0.5 {
        return Err(PeriodError::Level(c));
    }
    Ok(c - 0.5)
}

/// Log of the lower root, `ln c1`, for a level with excess `e = c - 1/2`.
fn log_lower_root(e: f64) -> f64 {
    // Far from 1 the expm1 route would lose 1 + d to cancellation.
    let g = |w: f64| {
        let excess =
            if w > -0.1 { phi_excess(w.exp_m1()) } else { 0.5 * (2.0 * w).exp() - w - 0.5 };
        excess - e
    };
    let (mut lo, mut hi) = (-(e + 1.0), 0.0);
    // g is decreasing in w on (-inf, 0).
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut w = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = w.exp_m1();
        let slope = d * (d + 2.0);
        if slope == 0.0 {
            break;
        }
        let next = w - g(w) / slope;
        if next.is_finite() && next > lo - (hi - lo) && next < hi + (hi - lo) {
            w = next;
        }
    }
    w
}

/// `c2 - 1` for excess `e`.
fn upper_root_offset(e: f64) -> f64 {
    let g = |d: f64| phi_excess(d) - e;
    // phi(v) >= ((v - 1)^2 + 1) / 2 bounds c2 - 1 by sqrt(2e).
    let (mut lo, mut hi) = (0.0, (2.0 * e).sqrt() * (1.0 + 1e-12) + 1e-300);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut d = 0.5 * (lo + hi);
    for _ in 0..3 {
        let slope = d * (d + 2.0) / (1.0 + d);
        if slope == 0.0 {
            break;
        }
        let next = d - g(d) / slope;
        if next.is_finite() && next > 0.0 {
            d = next;
        }
    }
    d
}

/// Roots `c1 < 1 < c2` of `phi(v) = c`. For very large `c` the lower root
/// underflows to 0.
pub fn phi_roots(c: f64) -> Result<(f64, f64), PeriodError> {
    let e = check_level(c)?;
    Ok((log_lower_root(e).exp(), 1.0 + upper_root_offset(e)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodMethod {
    Quadrature,
    OdeEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodResult {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub period: f64,
    pub method: PeriodMethod,
    pub err_estimate: f64,
}

fn period_level(c: f64) -> Result<(f64, f64, f64), PeriodError> {
    let e = check_level(c)?;
    if e <= MIN_EXCESS {
        return Err(PeriodError::Level(c));
    }
    let (c1, c2) = phi_roots(c)?;
    if !(c1 > 0.0 && c1.is_normal()) {
        return Err(PeriodError::Underflow(c));
    }
    Ok((e, c1, c2))
}

/// Period by tanh–sinh quadrature of the singular integral.
pub fn period_quadrature(c: f64) -> Result<PeriodResult, PeriodError> {
    let (e, c1, c2) = period_level(c)?;
    let rule = TanhSinh::default();
    // Near a root the drop is anchored at that root; elsewhere it is
    // e - (phi(v) - 1/2) with v - 1 known exactly from the node distances.
    let left = rule.integrate(
        |da, db| {
            let drop = if da < db { phi_drop(c1, da) } else { e - phi_excess(-db) };
            1.0 / drop.sqrt()
        },
        c1,
        1.0,
    )?;
    let right = rule.integrate(
        |da, db| {
            let drop = if db < da { phi_drop(c2, -db) } else { e - phi_excess(da) };
            1.0 / drop.sqrt()
        },
        1.0,
        c2,
    )?;
    Ok(PeriodResult {
        c,
        c1,
        c2,
        period: SQRT_2 * (left.value + right.value),
        method: PeriodMethod::Quadrature,
        err_estimate: SQRT_2 * (left.err_estimate + right.err_estimate),
    })
}

/// Default base step of the event-detection oracle.
pub const ORACLE_DT: f64 = 1e-4;

/// Outcome of one event-timed half orbit of the rescaled system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfOrbit {
    pub t_event: f64,
    pub v_event: f64,
    pub max_h_drift: f64,
    pub steps: usize,
}

/// Integrates the rescaled system from `(u2, v2) = (0, c1)` until `u2`
/// returns to 0 from below. Steps are `base_dt * min(1, v2)` because the
/// field stiffens like `1/v2` near the singular line.
pub fn rescaled_half_orbit(c: f64, base_dt: f64) -> Result<HalfOrbit, PeriodError> {
    let (_, c1, _) = period_level(c)?;
    if !(base_dt.is_finite() && base_dt > 0.0) {
        return Err(FlowError::BadStep(base_dt).into());
    }
    let f = |y: &[f64; 3]| FlowSystem::Rescaled.rhs(y);
    let energy = |y: &[f64; 3]| crate::flow::first_integral_h(y[1], y[2]);
    let budget = 100.0;
    let h0 = energy(&[0.0, 0.0, c1]);
    let mut y = [0.0, 0.0, c1];
    let mut max_drift: f64 = 0.0;
    let mut left_zero = false;
    let mut steps = 0;
    while y[0] < budget {
        let h = base_dt * y[2].abs().min(1.0);
        let (next, k1) = rk4_step(&f, &y, h);
        steps += 1;
        if next[2] <= 0.0 {
            return Err(FlowError::SingularCrossing { t: next[0] }.into());
        }
        max_drift = max_drift.max((energy(&next) - h0).abs());
        if left_zero && next[1] >= 0.0 {
            let k2 = f(&next);
            let u_at = |s: f64| hermite(y[1], k1[1], next[1], k2[1], h, s);
            let (mut a, mut b) = (0.0, h);
            while b - a > 1e-13 * h.max(1e-300) && b - a > 0.0 {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if u_at(mid) < 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let s = 0.5 * (a + b);
            return Ok(HalfOrbit {
                t_event: y[0] + s,
                v_event: hermite(y[2], k1[2], next[2], k2[2], h, s),
                max_h_drift: max_drift,
                steps,
            });
        }
        if next[1] < 0.0 {
            left_zero = true;
        }
        y = next;
    }
    Err(FlowError::NoEvent { budget }.into())
}

/// Period by event detection on the rescaled system with base step `dt`.
/// The error estimate is the Richardson difference against step `2 dt`.
pub fn period_ode_oracle_with(c: f64, dt: f64) -> Result<PeriodResult, PeriodError> {
    let (_, c1, c2) = period_level(c)?;
    let fine = rescaled_half_orbit(c, dt)?;
    let coarse = rescaled_half_orbit(c, 2.0 * dt)?;
    let period = 2.0 * fine.t_event;
    Ok(PeriodResult {
        c,
        c1,
        c2,
        period,
        method: PeriodMethod::OdeEvent,
        err_estimate: (period - 2.0 * coarse.t_event).abs() / 15.0,
    })
}

pub fn period_ode_oracle(c: f64) -> Result<PeriodResult, PeriodError> {
    period_ode_oracle_with(c, ORACLE_DT)
}

/// Angle displacement of the rotated system over successive `(u, v)` periods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XDisplacement {
    pub c: f64,
    /// `(T_k, x(T_k))` at the end of the k-th period, `k = 1..`.
    pub returns: Vec<(f64, f64)>,
}

/// Integrates the rotated system from `(0, 0, c1)` over `periods` returns
/// of `(u, v)`, each detected as an upward crossing of `u = 0`.
pub fn x_displacement(c: f64, periods: usize, dt: f64) -> Result<XDisplacement, PeriodError> {
    let (_, c1, _) = period_level(c)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(FlowError::BadStep(dt).into());
    }
    let f = |y: &[f64; 3]| FlowSystem::Rotated.rhs(y);
    let budget = 1e4;
    let mut y = [0.0, 0.0, c1];
    let mut t = 0.0;
    let mut step = 0usize;
    let mut returns = Vec::with_capacity(periods);
    while returns.len() < periods {
        let (next, k1) = rk4_step(&f, &y, dt);
        step += 1;
        let t_next = step as f64 * dt;
        if y[1] < 0.0 && next[1] >= 0.0 {
            let k2 = f(&next);
            let u_at = |s: f64| hermite(y[1], k1[1], next[1], k2[1], dt, s);
            let (mut a, mut b) = (0.0, dt);
            for _ in 0..100 {
                let mid = 0.5 * (a + b);
                if u_at(mid) < 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let s = 0.5 * (a + b);
            returns.push((t + s, hermite(y[0], k1[0], next[0], k2[0], dt, s)));
        }
        y = next;
        t = t_next;
        if t > budget {
            return Err(FlowError::NoEvent { budget }.into());
        }
    }
    Ok(XDisplacement { c, returns })
}

/// `|x(T_c)|` over one period of the rotated system.
pub fn x_displacement_check(c: f64) -> Result<f64, PeriodError> {
    let d = x_displacement(c, 1, ORACLE_DT)?;
    Ok(d.returns[0].1.abs())
}

/// `2 sqrt(2) [sqrt(c1/(1+c1)) + sqrt(c2/(1+c2))]`.
pub fn period_lower_bound(c: f64) -> Result<f64, PeriodError> {
    let (c1, c2) = phi_roots(c)?;
    Ok(2.0 * SQRT_2 * ((c1 / (1.0 + c1)).sqrt() + (c2 / (1.0 + c2)).sqrt()))
}

/// Infimum and supremum of the period function.
pub const PERIOD_INF: f64 = 2.0 * SQRT_2;
pub const PERIOD_SUP: f64 = SQRT_2 * PI;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Convergent {
    pub p: i64,
    pub q: i64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RationalityReport {
    pub c: f64,
    pub period: f64,
    pub ratio: f64,
    pub convergents: Vec<Convergent>,
    pub best: Convergent,
    pub classification: &'static str,
}

/// Continued-fraction convergents of `x` with denominators up to `max_den`.
pub fn convergents(x: f64, max_den: i64) -> Vec<Convergent> {
    let mut out = Vec::new();
    let (mut p_prev, mut p) = (1i64, x.floor() as i64);
    let (mut q_prev, mut q) = (0i64, 1i64);
    let mut rem = x - x.floor();
    out.push(Convergent { p, q, error: (x - p as f64 / q as f64).abs() });
    while rem > 1e-15 {
        let inv = 1.0 / rem;
        let a = inv.floor();
        rem = inv - a;
        let a = a as i64;
        let (Some(pn), Some(qn)) = (
            a.checked_mul(p).and_then(|v| v.checked_add(p_prev)),
            a.checked_mul(q).and_then(|v| v.checked_add(q_prev)),
        ) else {
            break;
        };
        if qn > max_den {
            break;
        }
        (p_prev, p, q_prev, q) = (p, pn, q, qn);
        out.push(Convergent { p, q, error: (x - p as f64 / q as f64).abs() });
    }
    out
}

/// Convergents of `T(c) / 2 pi`. Floating point cannot decide whether the
/// ratio is rational, so the report carries no periodic/dense verdict.
pub fn rationality_report(c: f64, max_denominator: i64) -> Result<RationalityReport, PeriodError> {
    let res = period_quadrature(c)?;
    let ratio = res.period / TAU;
    let convergents = convergents(ratio, max_denominator.max(1));
    let best = convergents
        .iter()
        .min_by(|a, b| a.error.total_cmp(&b.error))
        .cloned()
        .expect("at least the integer part");
    Ok(RationalityReport {
        c,
        period: res.period,
        ratio,
        convergents,
        best,
        classification: "numerically undecidable classification",
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodRow {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub t_quad: f64,
    pub t_ode: f64,
    pub lower_bound: f64,
    pub t_over_2pi: f64,
}

/// Grid of levels between `cmin` and `cmax`; `log` spaces `c - 1/2`
/// logarithmically.
pub fn level_grid(cmin: f64, cmax: f64, points: usize, log: bool) -> Vec<f64> {
    if points == 1 {
        return vec![cmin];
    }
    (0..points)
        .map(|i| {
            let s = i as f64 / (points - 1) as f64;
            if log {
                let (a, b) = ((cmin - 0.5).ln(), (cmax - 0.5).ln());
                0.5 + (a + s * (b - a)).exp()
            } else {
                cmin + s * (cmax - cmin)
            }
        })
        .collect()
}

pub fn period_row(c: f64) -> Result<PeriodRow, PeriodError> {
    let q = period_quadrature(c)?;
    let o = period_ode_oracle(c)?;
    Ok(PeriodRow {
        c,
        c1: q.c1,
        c2: q.c2,
        t_quad: q.period,
        t_ode: o.period,
        lower_bound: period_lower_bound(c)?,
        t_over_2pi: q.period / TAU,
    })
}

pub fn period_table(levels: &[f64]) -> Result<Vec<PeriodRow>, PeriodError> {
    levels.par_iter().map(|&c| period_row(c)).collect::<Vec<_>>().into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::E;

    #[test]
    fn phi_examples() {
        assert_eq!(phi(1.0).unwrap(), 0.5);
        assert_abs_diff_eq!(phi(E).unwrap(), E * E / 2.0 - 1.0, epsilon = 1e-15);
        let h = 1e-6;
        let fd = (phi(1.0 + h).unwrap() - phi(1.0 - h).unwrap()) / (2.0 * h);
        assert!(fd.abs() < 1e-9);
        assert_eq!(phi(0.0), Err(PeriodError::NonPositive(0.0)));
        assert_eq!(phi(-1.0), Err(PeriodError::NonPositive(-1.0)));
    }

    #[test]
    fn phi_is_strictly_convex() {
        let vs: Vec<f64> = (1..400).map(|i| i as f64 * 0.01).collect();
        for w in vs.windows(3) {
            let (a, b, c) = (phi(w[0]).unwrap(), phi(w[1]).unwrap(), phi(w[2]).unwrap());
            assert!(a + c - 2.0 * b > 0.0);
        }
    }

    #[test]
    fn excess_and_drop_agree_with_direct_formula() {
        for &d in &[-0.5, -0.09, -1e-3, 1e-4, 0.05, 0.099, 0.2, 3.0] {
            let direct = phi(1.0 + d).unwrap() - 0.5;
            assert!((phi_excess(d) - direct).abs() < 1e-15 * (1.0 + direct.abs()) + 1e-16, "{d}");
        }
        for &(a, d) in &[(0.3, 0.1), (2.0, -0.5), (0.01, 1e-3)] {
            let direct = phi(a).unwrap() - phi(a + d).unwrap();
            assert!((phi_drop(a, d) - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn roots_examples() {
        for &c in &[0.5 + 1e-8, 0.51, 0.6, 1.0, 5.0, 20.0, 100.0] {
            let (c1, c2) = phi_roots(c).unwrap();
            assert!(0.0 < c1 && c1 < 1.0 && 1.0 < c2, "{c}: {c1} {c2}");
            assert!((phi(c1).unwrap() - c).abs() < 1e-13 * c.max(1.0), "{c}");
            assert!((phi(c2).unwrap() - c).abs() < 1e-13 * c.max(1.0), "{c}");
            assert!(c2 <= 1.0 + (2.0 * c - 1.0).sqrt());
        }
        let c = phi(2.0).unwrap();
        assert_abs_diff_eq!(phi_roots(c).unwrap().1, 2.0, epsilon = 1e-14);
        assert!(phi_roots(0.5).is_err());
        assert!(phi_roots(f64::NAN).is_err());
    }

    #[test]
    fn roots_collapse_like_sqrt_excess() {
        for k in 4..=10 {
            let e = 10f64.powi(-k);
            let (c1, c2) = phi_roots(0.5 + e).unwrap();
            let r1 = (1.0 - c1) / e.sqrt();
            let r2 = (c2 - 1.0) / e.sqrt();
            assert!((r1 - 1.0).abs() < 2.0 * e.sqrt(), "k={k} r1={r1}");
            assert!((r2 - 1.0).abs() < 2.0 * e.sqrt(), "k={k} r2={r2}");
        }
    }

    #[test]
    fn quadrature_matches_oracle_at_two() {
        let q = period_quadrature(2.0).unwrap();
        let o = period_ode_oracle(2.0).unwrap();
        assert!((q.period - o.period).abs() / q.period < 1e-6, "{q:?} {o:?}");
        assert!(q.err_estimate < 1e-10);
        assert_eq!(q.method, PeriodMethod::Quadrature);
        assert_eq!(o.method, PeriodMethod::OdeEvent);
    }

    #[test]
    fn period_near_minimum_level() {
        let q = period_quadrature(0.5001).unwrap();
        assert!((q.period - 4.442882938).abs() < 1e-2);
        assert!(q.period < PERIOD_SUP);
        assert!(period_quadrature(0.5 + 1e-11).is_err());
    }

    #[test]
    fn bounds_on_coarse_grid() {
        for &c in &[0.6, 1.0, 2.0, 5.0, 20.0] {
            let t = period_quadrature(c).unwrap().period;
            assert!(t > PERIOD_INF && t < PERIOD_SUP, "{c}: {t}");
            assert!(t >= period_lower_bound(c).unwrap());
        }
    }

    #[test]
    fn oracle_event_lands_on_upper_root() {
        let c = 2.0;
        let (_, c2) = phi_roots(c).unwrap();
        let half = rescaled_half_orbit(c, ORACLE_DT).unwrap();
        assert!((half.v_event - c2).abs() < 1e-6);
        assert!((phi(half.v_event).unwrap() - c).abs() < 1e-6);
        let fine = rescaled_half_orbit(c, 1e-5).unwrap();
        assert!(fine.max_h_drift < 1e-10, "{}", fine.max_h_drift);
    }

    #[test]
    fn x_displacement_equals_period() {
        for &c in &[1.0, 5.0] {
            let tq = period_quadrature(c).unwrap().period;
            let dx = x_displacement_check(c).unwrap();
            assert!((dx - tq).abs() < 1e-5, "c={c}: {dx} vs {tq}");
        }
        let d = x_displacement(1.0, 3, ORACLE_DT).unwrap();
        let x1 = d.returns[0].1;
        let x3 = d.returns[2].1;
        assert!((x3 - 3.0 * x1).abs() < 1e-5);
        // v > 0 on this leaf so x decreases.
        assert!(x1 < 0.0);
    }

    #[test]
    fn lower_bound_examples() {
        let b = period_lower_bound(2.0).unwrap();
        assert!(b < period_quadrature(2.0).unwrap().period);
        for &c in &[10.0, 100.0, 1000.0] {
            assert!(period_lower_bound(c).unwrap() < PERIOD_SUP);
        }
        // Both roots tend to 1, so the bound tends to 2 sqrt(2) * 2 sqrt(1/2) = 4.
        let near = period_lower_bound(0.5 + 1e-12).unwrap();
        assert!((near - 4.0).abs() < 1e-5);
    }

    #[test]
    fn convergent_property() {
        let r = rationality_report(2.0, 10_000).unwrap();
        assert!(r.ratio > PERIOD_INF / TAU && r.ratio < PERIOD_SUP / TAU);
        assert!(r.convergents.len() >= 3);
        for cv in &r.convergents {
            assert!(cv.q <= 10_000);
            assert!(cv.error < 1.0 / (cv.q * cv.q) as f64);
        }
        assert_eq!(r.classification, "numerically undecidable classification");
        let pi_cf = convergents(PI, 1000);
        let last = pi_cf.last().unwrap();
        assert_eq!((last.p, last.q), (355, 113));
    }

    #[test]
    fn decreasing_on_grid() {
        let grid = [0.6, 1.0, 2.0, 5.0, 10.0, 20.0];
        let vals: Vec<f64> = grid.iter().map(|&c| period_quadrature(c).unwrap().period).collect();
        assert!(vals.windows(2).all(|w| w[0] > w[1]), "{vals:?}");
    }

    #[test]
    fn grid_spacing() {
        let g = level_grid(0.5001, 100.0, 50, true);
        assert_eq!(g.len(), 50);
        assert_abs_diff_eq!(g[0], 0.5001, epsilon = 1e-12);
        assert_abs_diff_eq!(g[49], 100.0, epsilon = 1e-9);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        let lin = level_grid(1.0, 2.0, 3, false);
        assert_eq!(lin, vec![1.0, 1.5, 2.0]);
    }
}
