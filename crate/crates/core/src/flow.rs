//! Zero-noise dynamics of the one-mode model in raw coordinates `(X, U, V)`:
//!
//! ```text
//! X' = sin(X) U - cos(X) V,   U' = cos(X),   V' = sin(X)
//! ```
//!
//! Rotating `(U, V)` by `-X` gives `(x, u, v)` with `x' = -v`, `u' = 1 - v^2`,
//! `v' = u v`, which conserves `H(u, v) = (u^2 + v^2 - ln v^2) / 2`. Using `x`
//! as the clock gives the rescaled planar system `u2' = v2 - 1/v2`,
//! `v2' = -u2`; it is carried here as `(t, u2, v2)` with a unit-speed first
//! component so that all three systems share one RK4 driver.

use std::f64::consts::TAU;

use serde::Serialize;
use thiserror::Error;

use crate::model::wrap_angle;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("step size {0} must be finite and > 0")]
    BadStep(f64),
    #[error("rescaled system needs v2 != 0 (got v2 = {0})")]
    SingularStart(f64),
    #[error("rescaled system crossed v2 = 0 near t = {t}; the step is too large")]
    SingularCrossing { t: f64 },
    #[error("no event within the time budget {budget}")]
    NoEvent { budget: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowSystem {
    /// Raw coordinates `(X, U, V)`.
    Full,
    /// Rotated coordinates `(x, u, v)`.
    Rotated,
    /// `(t, u2, v2)` with the angle as clock.
    Rescaled,
}

impl FlowSystem {
    pub fn rhs(self, y: &[f64; 3]) -> [f64; 3] {
        match self {
            FlowSystem::Full => {
                let (s, c) = y[0].sin_cos();
                [s * y[1] - c * y[2], c, s]
            }
            FlowSystem::Rotated => [-y[2], 1.0 - y[2] * y[2], y[1] * y[2]],
            FlowSystem::Rescaled => [1.0, y[2] - 1.0 / y[2], -y[1]],
        }
    }
}

/// One classical RK4 step; also returns the slope at the start point.
#[inline]
pub fn rk4_step<F>(f: &F, y: &[f64; 3], h: f64) -> ([f64; 3], [f64; 3])
where
    F: Fn(&[f64; 3]) -> [f64; 3],
{
    let add = |a: &[f64; 3], b: &[f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    let k1 = f(y);
    let k2 = f(&add(y, &k1, 0.5 * h));
    let k3 = f(&add(y, &k2, 0.5 * h));
    let k4 = f(&add(y, &k3, h));
    let mut out = *y;
    for i in 0..3 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    (out, k1)
}

/// Samples `(t, state)` of a fixed-step RK4 run; every `record_every`-th
/// step is stored, plus the final one. Angles are left unwrapped.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPath {
    pub system: FlowSystem,
    pub times: Vec<f64>,
    pub states: Vec<[f64; 3]>,
}

pub fn rk4_flow(
    system: FlowSystem,
    y0: [f64; 3],
    dt: f64,
    t_final: f64,
    record_every: usize,
) -> Result<FlowPath, FlowError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(FlowError::BadStep(dt));
    }
    if system == FlowSystem::Rescaled && y0[2] == 0.0 {
        return Err(FlowError::SingularStart(y0[2]));
    }
    let record_every = record_every.max(1);
    let n = (t_final / dt - 1e-9).ceil().max(0.0) as usize;
    let f = |y: &[f64; 3]| system.rhs(y);
    let mut path = FlowPath { system, times: vec![0.0], states: vec![y0] };
    let mut y = y0;
    for step in 1..=n {
        let (next, _) = rk4_step(&f, &y, dt);
        let t = step as f64 * dt;
        if system == FlowSystem::Rescaled && (next[2] == 0.0 || next[2].signum() != y0[2].signum())
        {
            return Err(FlowError::SingularCrossing { t });
        }
        y = next;
        if step % record_every == 0 || step == n {
            path.times.push(t);
            path.states.push(y);
        }
    }
    Ok(path)
}

/// Coordinates after rotating `(U, V)` by `-x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RotatedState {
    pub x: f64,
    pub u: f64,
    pub v: f64,
}

impl RotatedState {
    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.u, self.v]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { x: a[0], u: a[1], v: a[2] }
    }

    pub fn energy(&self) -> f64 {
        first_integral_h(self.u, self.v)
    }
}

pub fn xi_forward(raw: [f64; 3]) -> RotatedState {
    let (s, c) = raw[0].sin_cos();
    RotatedState { x: raw[0], u: c * raw[1] + s * raw[2], v: -s * raw[1] + c * raw[2] }
}

pub fn xi_inverse(r: RotatedState) -> [f64; 3] {
    let (s, c) = r.x.sin_cos();
    [r.x, c * r.u - s * r.v, s * r.u + c * r.v]
}

/// `H(u, v) = (u^2 + v^2 - ln v^2) / 2`, infinite on `v = 0`.
pub fn first_integral_h(u: f64, v: f64) -> f64 {
    if v == 0.0 {
        f64::INFINITY
    } else {
        0.5 * (u * u + v * v) - v.abs().ln()
    }
}

pub const LEAF_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafKind {
    MinimumCurve,
    Torus,
    TwistedStrip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeafDescriptor {
    pub kind: LeafKind,
    /// Level of `H`; infinite on the twisted strip.
    pub level: f64,
    /// Sign of `v`; `None` on the twisted strip.
    pub sign: Option<i8>,
}

pub fn classify_leaf(r: &RotatedState, tol: f64) -> LeafDescriptor {
    if r.v.abs() <= tol {
        return LeafDescriptor { kind: LeafKind::TwistedStrip, level: f64::INFINITY, sign: None };
    }
    let level = first_integral_h(r.u, r.v);
    let kind = if (level - 0.5).abs() <= tol { LeafKind::MinimumCurve } else { LeafKind::Torus };
    LeafDescriptor { kind, level, sign: Some(if r.v > 0.0 { 1 } else { -1 }) }
}

/// Cubic Hermite interpolation on `[0, h]` from end values and slopes.
pub fn hermite(y0: f64, f0: f64, y1: f64, f1: f64, h: f64, s: f64) -> f64 {
    let t = s / h;
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * h * f0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * f1
}

/// Angle-wrapped copy of a raw or rotated state.
pub fn wrapped(y: [f64; 3]) -> [f64; 3] {
    [wrap_angle(y[0]), y[1], y[2]]
}

/// Difference of two angles mapped into `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > std::f64::consts::PI {
        d - TAU
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn line_solution_full_system() {
        for &x0 in &[0.0, 1.0, 2.0, 4.5] {
            // The line repels transversally, so roundoff grows like exp(t^2/2).
            let p = rk4_flow(FlowSystem::Full, [x0, x0.cos(), x0.sin()], 1e-3, 3.0, 1000).unwrap();
            for (t, y) in p.times.iter().zip(&p.states) {
                assert_abs_diff_eq!(y[0], x0, epsilon = 1e-9);
                assert_abs_diff_eq!(y[1], (t + 1.0) * x0.cos(), epsilon = 1e-9);
                assert_abs_diff_eq!(y[2], (t + 1.0) * x0.sin(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn twisted_strip_dynamics() {
        let p = rk4_flow(FlowSystem::Rotated, [0.4, -1.5, 0.0], 1e-2, 3.0, 1).unwrap();
        for (t, y) in p.times.iter().zip(&p.states) {
            assert_eq!(y[0], 0.4);
            assert_abs_diff_eq!(y[1], -1.5 + t, epsilon = 1e-12);
            assert_eq!(y[2], 0.0);
        }
    }

    #[test]
    fn minimum_is_a_periodic_circle() {
        let p = rk4_flow(FlowSystem::Rotated, [0.0, 0.0, 1.0], TAU / 6000.0, TAU, 1).unwrap();
        assert_eq!(p.times.len(), 6001);
        for (t, y) in p.times.iter().zip(&p.states) {
            assert_abs_diff_eq!(y[0], -t, epsilon = 1e-12);
            assert_eq!((y[1], y[2]), (0.0, 1.0));
        }
        let (_, last) = (p.times.last().unwrap(), p.states.last().unwrap());
        assert_abs_diff_eq!(wrap_angle(last[0]), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn xi_examples() {
        let r = xi_forward([0.0, 1.3, -0.4]);
        assert_eq!((r.x, r.u, r.v), (0.0, 1.3, -0.4));
        for &x in &[0.3, 2.0, 5.0] {
            let r = xi_forward([x, x.cos(), x.sin()]);
            assert_abs_diff_eq!(r.u, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(r.v, 0.0, epsilon = 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100_000 {
            let y = [rng.random::<f64>() * TAU, rng.random::<f64>() * 20.0 - 10.0, rng.random::<f64>() * 20.0 - 10.0];
            let back = xi_inverse(xi_forward(y));
            for i in 0..3 {
                assert!((back[i] - y[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn h_examples() {
        assert_eq!(first_integral_h(0.0, 1.0), 0.5);
        assert_eq!(first_integral_h(0.0, -1.0), 0.5);
        assert_eq!(first_integral_h(0.7, 2.0), first_integral_h(0.7, -2.0));
        assert_eq!(first_integral_h(0.7, 0.0), f64::INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (u, v) = (rng.random::<f64>() * 6.0 - 3.0, rng.random::<f64>() * 6.0 - 3.0);
            assert!(first_integral_h(u, v) >= 0.5);
        }
    }

    #[test]
    fn classify_examples() {
        let strip = classify_leaf(&RotatedState { x: 1.0, u: 0.3, v: 0.0 }, LEAF_TOL);
        assert_eq!(strip.kind, LeafKind::TwistedStrip);
        assert_eq!(strip.sign, None);
        let min = classify_leaf(&RotatedState { x: 1.0, u: 0.0, v: 1.0 }, LEAF_TOL);
        assert_eq!(min.kind, LeafKind::MinimumCurve);
        assert_eq!(min.sign, Some(1));
        let torus = classify_leaf(&RotatedState { x: 1.0, u: 0.0, v: 2.0 }, LEAF_TOL);
        assert_eq!(torus.kind, LeafKind::Torus);
        assert_abs_diff_eq!(torus.level, (4.0 - 4f64.ln()) / 2.0, epsilon = 1e-15);
        let neg = classify_leaf(&RotatedState { x: 0.0, u: 0.5, v: -0.3 }, LEAF_TOL);
        assert_eq!(neg.sign, Some(-1));
    }

    fn level_point(c: f64) -> [f64; 3] {
        // (u, v) = (0, v) with phi(v) = c on the lower branch.
        let (c1, _) = crate::period::phi_roots(c).unwrap();
        [0.0, 0.0, c1]
    }

    #[test]
    fn conservation_rotated() {
        for &c in &[0.6, 1.0, 2.0, 5.0] {
            let y0 = level_point(c);
            let p = rk4_flow(FlowSystem::Rotated, y0, 1e-3, 200.0, 1).unwrap();
            let h0 = first_integral_h(y0[1], y0[2]);
            let drift = p.states.iter().map(|y| (first_integral_h(y[1], y[2]) - h0).abs()).fold(0.0, f64::max);
            assert!(drift < 1e-8, "rotated c={c}: {drift}");
        }
    }

    #[test]
    fn leaf_invariance_and_sign_preservation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let raw = [rng.random::<f64>() * TAU, rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
            let r0 = xi_forward(raw);
            let leaf0 = classify_leaf(&r0, LEAF_TOL);
            let p = rk4_flow(FlowSystem::Full, raw, 1e-3, 30.0, 10).unwrap();
            // Raw X' = -v keeps its sign.
            let f = |y: &[f64; 3]| FlowSystem::Full.rhs(y);
            for y in &p.states {
                let leaf = classify_leaf(&xi_forward(*y), LEAF_TOL);
                assert_eq!(leaf.kind, leaf0.kind);
                assert_eq!(leaf.sign, leaf0.sign);
                assert!((leaf.level - leaf0.level).abs() < 1e-6);
                assert_eq!(f(y)[0].signum(), -r0.v.signum());
            }
        }
    }

    #[test]
    fn conjugacy_full_vs_rotated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let raw = [rng.random::<f64>() * TAU, rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
            let full = rk4_flow(FlowSystem::Full, raw, 1e-3, 10.0, 100).unwrap();
            let rot = rk4_flow(FlowSystem::Rotated, xi_forward(raw).as_array(), 1e-3, 10.0, 100).unwrap();
            for (a, b) in full.states.iter().zip(&rot.states) {
                let ra = xi_forward(*a);
                assert!(angle_diff(ra.x, b[0]).abs() < 1e-6);
                assert!((ra.u - b[1]).abs() < 1e-6);
                assert!((ra.v - b[2]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rescaled_rejects_singular_start() {
        assert_eq!(
            rk4_flow(FlowSystem::Rescaled, [0.0, 1.0, 0.0], 1e-3, 1.0, 1),
            Err(FlowError::SingularStart(0.0))
        );
        // A huge step near v2 -> 0 overshoots the singular line.
        let r = rk4_flow(FlowSystem::Rescaled, [0.0, 3.0, 0.05], 0.5, 5.0, 1);
        assert!(matches!(r, Err(FlowError::SingularCrossing { .. })), "{r:?}");
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let p = |t: f64| 1.0 + 2.0 * t - t * t + 0.5 * t * t * t;
        let dp = |t: f64| 2.0 - 2.0 * t + 1.5 * t * t;
        let h = 0.7;
        for i in 0..=10 {
            let s = h * i as f64 / 10.0;
            assert_abs_diff_eq!(hermite(p(0.0), dp(0.0), p(h), dp(h), h, s), p(s), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(angle_diff(0.1, TAU - 0.1), 0.2, epsilon = 1e-14);
        assert_abs_diff_eq!(angle_diff(PI, 0.0), PI, epsilon = 1e-14);
    }
}
