//! The n-mode circle model.
//!
//! The interaction kernel is a finite diagonal Mercer kernel built from the
//! Laplacian eigenfunctions of the unit circle,
//!
//! ```text
//! V(x, y) = sum_k a_k e_k(x) e_k(y)
//! ```
//!
//! with `e_{2j-1} = cos(jx)/sqrt(pi)`, `e_{2j} = sin(jx)/sqrt(pi)` (orthonormal
//! in `L2(dx)` on `[0, 2pi)`) and eigenvalue `-j^2` for both members of the
//! pair. A frequency weight `a_j` is shared by its cosine and sine member.
//!
//! The lifted state is `(x, u)` with `u_k = int_0^t e_k(X_s) ds`. The cosine
//! kernel `cos(y - x)` of the one-mode example is the model with `a_1 = pi`;
//! its raw coordinates `(X, U, V)` relate to ours by `U = sqrt(pi) u_1`,
//! `V = sqrt(pi) u_2`.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid size used wherever a sup-norm over the circle is evaluated numerically.
pub const SUP_GRID: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model needs at least one Fourier mode")]
    Empty,
    #[error("coefficient a_{index} = {value} must be finite and > 0")]
    BadCoefficient { index: usize, value: f64 },
    #[error("sigma = {0} must be finite and >= 0")]
    BadSigma(f64),
    #[error("state has {got} occupation coordinates, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Wrap an angle into `[0, 2pi)`.
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleModel {
    coeffs: Vec<f64>,
    sigma: f64,
}

impl CircleModel {
    /// `coeffs[j-1]` is the weight of frequency `j` in the normalized convention.
    pub fn new(coeffs: Vec<f64>, sigma: f64) -> Result<Self, ModelError> {
        if coeffs.is_empty() {
            return Err(ModelError::Empty);
        }
        for (i, &a) in coeffs.iter().enumerate() {
            if !(a.is_finite() && a > 0.0) {
                return Err(ModelError::BadCoefficient { index: i + 1, value: a });
            }
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(ModelError::BadSigma(sigma));
        }
        Ok(Self { coeffs, sigma })
    }

    /// Model for `V(x, y) = sum_j w_j cos(j (y - x))`.
    pub fn from_cosine_weights(weights: &[f64], sigma: f64) -> Result<Self, ModelError> {
        Self::new(weights.iter().map(|w| w * PI).collect(), sigma)
    }

    /// `V(x, y) = cos(y - x)` with noise `sigma`.
    pub fn motivating(sigma: f64) -> Self {
        Self::new(vec![PI], sigma).expect("preset is valid")
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self, ModelError> {
        Self::new(self.coeffs.clone(), sigma)
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    /// Number of eigenfunctions, `2m`.
    pub fn dim(&self) -> usize {
        2 * self.coeffs.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Frequency `j` of eigenfunction index `k` (0-based).
    #[inline]
    pub fn frequency(k: usize) -> usize {
        k / 2 + 1
    }

    /// Eigenvalue `-j^2` of eigenfunction `k` (0-based).
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let j = Self::frequency(k) as f64;
        -j * j
    }

    /// Kernel weight attached to eigenfunction `k` (0-based).
    pub fn weight(&self, k: usize) -> f64 {
        self.coeffs[Self::frequency(k) - 1]
    }

    /// Eigenvalues per eigenfunction index.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.eigenvalue(k)).collect()
    }

    /// Per-eigenfunction weights (each frequency weight appears twice).
    pub fn weights(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.weight(k)).collect()
    }

    /// Eigenfunction values and first derivatives at `x`.
    pub fn eigen_eval(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let mut values = vec![0.0; self.dim()];
        let mut derivs = vec![0.0; self.dim()];
        self.eigen_eval_into(x, &mut values, &mut derivs);
        (values, derivs)
    }

    /// Allocation-free variant of [`eigen_eval`](Self::eigen_eval).
    ///
    /// `cos(jx), sin(jx)` come from the angle-addition recurrence seeded by a
    /// single `sin_cos`.
    #[inline]
    pub fn eigen_eval_into(&self, x: f64, values: &mut [f64], derivs: &mut [f64]) {
        let inv = 1.0 / PI.sqrt();
        let (s1, c1) = x.sin_cos();
        let (mut c, mut s) = (c1, s1);
        for j in 1..=self.coeffs.len() {
            let jf = j as f64;
            values[2 * j - 2] = c * inv;
            values[2 * j - 1] = s * inv;
            derivs[2 * j - 2] = -jf * s * inv;
            derivs[2 * j - 1] = jf * c * inv;
            let (cn, sn) = (c * c1 - s * s1, s * c1 + c * s1);
            c = cn;
            s = sn;
        }
    }

    /// `V(x, y)`.
    pub fn kernel_eval(&self, x: f64, y: f64) -> f64 {
        let (ex, _) = self.eigen_eval(x);
        let (ey, _) = self.eigen_eval(y);
        (0..self.dim()).map(|k| self.weight(k) * ex[k] * ey[k]).sum()
    }

    /// Drift of the lifted system: `dx = -sum a_k e_k'(x) u_k`, `du_k = e_k(x)`.
    pub fn drift(&self, s: &State) -> Result<(f64, Vec<f64>), ModelError> {
        self.check_state(s)?;
        let (values, derivs) = self.eigen_eval(s.x);
        let dx = -(0..self.dim())
            .map(|k| self.weight(k) * derivs[k] * s.u[k])
            .sum::<f64>();
        Ok((dx, values))
    }

    /// `K = max_y (sum_k e_k(y)^2)^{1/2}` on a `SUP_GRID` angle grid.
    pub fn growth_bound_k(&self) -> f64 {
        let (lo, hi) = self.eigen_square_sum_range(SUP_GRID);
        debug_assert!(hi - lo < 1e-10);
        hi.sqrt()
    }

    /// Min and max of `sum_k e_k(y)^2` over a uniform grid of `points` angles.
    pub fn eigen_square_sum_range(&self, points: usize) -> (f64, f64) {
        let mut values = vec![0.0; self.dim()];
        let mut derivs = vec![0.0; self.dim()];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..points {
            let y = TAU * i as f64 / points as f64;
            self.eigen_eval_into(y, &mut values, &mut derivs);
            let s: f64 = values.iter().map(|v| v * v).sum();
            lo = lo.min(s);
            hi = hi.max(s);
        }
        (lo, hi)
    }

    /// The invariant product measure. It does not depend on sigma.
    pub fn product_measure(&self) -> ProductMeasure {
        ProductMeasure {
            variances: (0..self.dim())
                .map(|k| 1.0 / (self.weight(k) * self.eigenvalue(k).abs()))
                .collect(),
        }
    }

    pub fn check_state(&self, s: &State) -> Result<(), ModelError> {
        if s.u.len() != self.dim() {
            return Err(ModelError::DimensionMismatch { expected: self.dim(), got: s.u.len() });
        }
        Ok(())
    }

    /// The origin `(x, 0, ..., 0)`.
    pub fn origin(&self, x: f64) -> State {
        State::new(x, vec![0.0; self.dim()])
    }
}

/// Point `(x, u)` of the lifted process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub u: Vec<f64>,
}

impl State {
    /// Builds a state; the angle is wrapped into `[0, 2pi)`.
    pub fn new(x: f64, u: Vec<f64>) -> Self {
        Self { x: wrap_angle(x), u }
    }

    /// From raw occupation integrals `int cos(jX)`, `int sin(jX)`.
    pub fn from_raw(x: f64, raw: &[f64]) -> Self {
        let inv = 1.0 / PI.sqrt();
        Self::new(x, raw.iter().map(|r| r * inv).collect())
    }

    /// Raw occupation integrals, `sqrt(pi) * u`.
    pub fn raw_u(&self) -> Vec<f64> {
        let s = PI.sqrt();
        self.u.iter().map(|v| v * s).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.u.iter().all(|v| v.is_finite())
    }
}

/// `nu(dx) (x) exp(-Phi(u)) du`: uniform angle, independent centered Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductMeasure {
    pub variances: Vec<f64>,
}

impl ProductMeasure {
    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.variances.iter().map(|v| v.sqrt()).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let x = rng.random::<f64>() * TAU;
        let u = self
            .variances
            .iter()
            .map(|v| v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        State::new(x, u)
    }

    /// `ln C(Phi) = sum_k 0.5 ln(2 pi var_k)`.
    pub fn log_normalizer(&self) -> f64 {
        self.variances.iter().map(|v| 0.5 * (TAU * v).ln()).sum()
    }

    /// `Phi(u)` including its normalizer.
    pub fn potential(&self, u: &[f64]) -> f64 {
        self.log_normalizer()
            + 0.5 * u.iter().zip(&self.variances).map(|(x, v)| x * x / v).sum::<f64>()
    }

    /// Log-density with respect to `dx du` on `[0, 2pi) x R^n`.
    pub fn log_density(&self, s: &State) -> f64 {
        -TAU.ln() - self.potential(&s.u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inv_sqrt_pi() -> f64 {
        1.0 / PI.sqrt()
    }

    #[test]
    fn rejects_bad_models() {
        assert_eq!(CircleModel::new(vec![], 1.0), Err(ModelError::Empty));
        assert!(matches!(
            CircleModel::new(vec![1.0, 0.0], 1.0),
            Err(ModelError::BadCoefficient { index: 2, .. })
        ));
        assert!(matches!(CircleModel::new(vec![1.0], -0.1), Err(ModelError::BadSigma(_))));
        assert!(CircleModel::new(vec![1.0], 0.0).is_ok());
    }

    #[test]
    fn eigen_eval_examples() {
        let m1 = CircleModel::new(vec![1.0], 1.0).unwrap();
        let (v, d) = m1.eigen_eval(0.0);
        assert_abs_diff_eq!(v[0], inv_sqrt_pi(), epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], inv_sqrt_pi(), epsilon = 1e-15);
        for &x in &[0.3, 1.7, 4.0, 6.2] {
            let (v, _) = m1.eigen_eval(x);
            assert_abs_diff_eq!((v[0] * v[0] + v[1] * v[1]) * PI, 1.0, epsilon = 1e-14);
        }
        let m2 = CircleModel::new(vec![1.0, 1.0], 1.0).unwrap();
        let (v, _) = m2.eigen_eval(PI / 2.0);
        let expected = [0.0, inv_sqrt_pi(), -inv_sqrt_pi(), 0.0];
        for (a, b) in v.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn orthonormal_on_grid() {
        let m = CircleModel::new(vec![1.0, 2.0, 3.0], 1.0).unwrap();
        let n = 10_000;
        let h = TAU / n as f64;
        let mut gram = vec![0.0; 36];
        for i in 0..n {
            let (v, _) = m.eigen_eval(i as f64 * h);
            for a in 0..6 {
                for b in 0..6 {
                    gram[a * 6 + b] += v[a] * v[b] * h;
                }
            }
        }
        for a in 0..6 {
            for b in 0..6 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[a * 6 + b], want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn eigen_relation_second_derivative() {
        // e'' = lambda e, second derivative by central differences of e'.
        let m = CircleModel::new(vec![1.0, 1.0, 1.0, 1.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 1e-4;
        for _ in 0..100 {
            let x: f64 = rng.random::<f64>() * TAU;
            let (v, _) = m.eigen_eval(x);
            let (_, dp) = m.eigen_eval(x + h);
            let (_, dm) = m.eigen_eval(x - h);
            for k in 0..m.dim() {
                let second = (dp[k] - dm[k]) / (2.0 * h);
                assert_abs_diff_eq!(second, m.eigenvalue(k) * v[k], epsilon = 1e-6);
            }
        }
        // Exact check from the closed form: e''_k = -j^2 e_k.
        for k in 0..m.dim() {
            let j = CircleModel::frequency(k) as f64;
            assert_eq!(m.eigenvalue(k), -j * j);
        }
    }

    #[test]
    fn kernel_examples() {
        let m = CircleModel::motivating(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x: f64 = rng.random::<f64>() * TAU;
            let y: f64 = rng.random::<f64>() * TAU;
            assert_abs_diff_eq!(m.kernel_eval(x, y), (y - x).cos(), epsilon = 1e-12);
            assert_abs_diff_eq!(m.kernel_eval(x, y), m.kernel_eval(y, x), epsilon = 1e-15);
        }
        assert_abs_diff_eq!(m.kernel_eval(1.1, 1.1), 1.0, epsilon = 1e-14);
        let m2 = CircleModel::new(vec![PI, PI], 1.0).unwrap();
        // Oracle: direct sum of cos(j (y - x)).
        let oracle: f64 = (1..=2).map(|j| (j as f64 * PI).cos()).sum();
        assert_abs_diff_eq!(m2.kernel_eval(0.0, PI), oracle, epsilon = 1e-14);
        assert_abs_diff_eq!(oracle, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn drift_examples() {
        let m = CircleModel::motivating(1.0);
        let (dx, du) = m.drift(&m.origin(0.0)).unwrap();
        assert_eq!(dx, 0.0);
        assert_abs_diff_eq!(du[0], inv_sqrt_pi(), epsilon = 1e-15);
        assert_abs_diff_eq!(du[1], 0.0, epsilon = 1e-15);

        // Raw coordinates: dX = sin(X) U - cos(X) V.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: f64 = rng.random::<f64>() * TAU;
            let raw = [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
            let s = State::from_raw(x, &raw);
            let (dx, du) = m.drift(&s).unwrap();
            assert_abs_diff_eq!(dx, x.sin() * raw[0] - x.cos() * raw[1], epsilon = 1e-12);
            assert_abs_diff_eq!(du[0] * PI.sqrt(), x.cos(), epsilon = 1e-14);
        }

        // m = 2 at x = pi/2, u = (1, 0, 0, 1), a = (1, 1). Symbolically
        // dx = -[a1 (-sin x) u1 + a2 (2 cos 2x) u4] / sqrt(pi) = -(-1 - 2)/sqrt(pi).
        let m2 = CircleModel::new(vec![1.0, 1.0], 1.0).unwrap();
        let s = State::new(PI / 2.0, vec![1.0, 0.0, 0.0, 1.0]);
        let (dx, _) = m2.drift(&s).unwrap();
        let x = PI / 2.0;
        let symbolic = -((-x.sin()) * 1.0 + (2.0 * (2.0 * x).cos()) * 1.0) / PI.sqrt();
        assert_abs_diff_eq!(dx, symbolic, epsilon = 1e-14);
        assert_abs_diff_eq!(dx, 3.0 / PI.sqrt(), epsilon = 1e-14);

        assert!(matches!(
            m2.drift(&m.origin(0.0)),
            Err(ModelError::DimensionMismatch { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn drift_matches_potential_finite_difference() {
        let m = CircleModel::new(vec![0.7, 1.3, 2.1], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-5;
        for _ in 0..100 {
            let x: f64 = rng.random::<f64>() * TAU;
            let u: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let potential = |y: f64| -> f64 {
                let (v, _) = m.eigen_eval(y);
                (0..6).map(|k| m.weight(k) * v[k] * u[k]).sum()
            };
            let fd = (potential(x + h) - potential(x - h)) / (2.0 * h);
            let (dx, _) = m.drift(&State::new(x, u.clone())).unwrap();
            assert_abs_diff_eq!(dx, -fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn growth_bound_values() {
        let m1 = CircleModel::new(vec![2.0], 1.0).unwrap();
        assert_abs_diff_eq!(m1.growth_bound_k(), (1.0 / PI).sqrt(), epsilon = 1e-14);
        let m2 = CircleModel::new(vec![2.0, 5.0], 1.0).unwrap();
        assert_abs_diff_eq!(m2.growth_bound_k(), (2.0 / PI).sqrt(), epsilon = 1e-14);
        for m in 1..=5 {
            let model = CircleModel::new(vec![1.0; m], 1.0).unwrap();
            let (lo, hi) = model.eigen_square_sum_range(SUP_GRID);
            assert!(hi - lo < 1e-12, "m={m}: {lo} {hi}");
        }
    }

    #[test]
    fn measure_variances_and_sigma_independence() {
        let m = CircleModel::new(vec![1.0], 0.5).unwrap();
        assert_eq!(m.product_measure().variances, vec![1.0, 1.0]);
        let mm = CircleModel::motivating(1.0).product_measure();
        assert_abs_diff_eq!(mm.variances[0], 1.0 / PI, epsilon = 1e-16);
        let m3 = CircleModel::new(vec![1.0, 2.0], 1.0).unwrap();
        assert_eq!(m3.product_measure().variances, vec![1.0, 1.0, 0.125, 0.125]);
        assert_eq!(m3.product_measure(), m3.with_sigma(7.0).unwrap().product_measure());
    }

    #[test]
    fn measure_sample_moments() {
        let m = CircleModel::motivating(1.0).product_measure();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let (mut s1, mut s2, mut sx) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let st = m.sample(&mut rng);
            assert!((0.0..TAU).contains(&st.x));
            let raw = st.u[0] * PI.sqrt();
            s1 += raw;
            s2 += raw * raw;
            sx += st.x;
        }
        let nf = n as f64;
        let mean = s1 / nf;
        let var = s2 / nf - mean * mean;
        // Standard errors: 1/sqrt(n) for the mean, sqrt(2/n) for the variance.
        assert!(mean.abs() < 3.0 / nf.sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 3.0 * (2.0 / nf).sqrt(), "var {var}");
        assert!((sx / nf - PI).abs() < 3.0 * (PI / 3f64.sqrt()) / nf.sqrt());
    }

    #[test]
    fn log_density_examples() {
        let m = CircleModel::new(vec![1.0], 1.0).unwrap().product_measure();
        let s = State::new(0.0, vec![0.0, 0.0]);
        // C(Phi) = (2 pi / 1)^{1/2} squared.
        assert_abs_diff_eq!(m.log_density(&s), -TAU.ln() - TAU.ln(), epsilon = 1e-14);
        let a = State::new(1.0, vec![0.4, -1.2]);
        let b = State::new(1.0, vec![-0.4, 1.2]);
        assert_eq!(m.log_density(&a), m.log_density(&b));
    }

    #[test]
    fn density_integrates_to_one() {
        // Trapezoid over [-8 sd, 8 sd]^2; the angle marginal is flat so the
        // x-integral is exactly 2 pi times the value.
        let m = CircleModel::new(vec![1.5], 1.0).unwrap().product_measure();
        let sd = m.std_devs();
        let n = 400;
        let mut total = 0.0;
        for i in 0..=n {
            let u0 = -8.0 * sd[0] + 16.0 * sd[0] * i as f64 / n as f64;
            let wi = if i == 0 || i == n { 0.5 } else { 1.0 };
            for k in 0..=n {
                let u1 = -8.0 * sd[1] + 16.0 * sd[1] * k as f64 / n as f64;
                let wk = if k == 0 || k == n { 0.5 } else { 1.0 };
                let s = State::new(0.0, vec![u0, u1]);
                total += wi * wk * m.log_density(&s).exp();
            }
        }
        total *= TAU * (16.0 * sd[0] / n as f64) * (16.0 * sd[1] / n as f64);
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn raw_round_trip() {
        let s = State::from_raw(7.0, &[1.0, -2.0]);
        assert!((0.0..TAU).contains(&s.x));
        let raw = s.raw_u();
        assert_abs_diff_eq!(raw[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(raw[1], -2.0, epsilon = 1e-15);
        assert_eq!(wrap_angle(-1e-20), 0.0);
        assert_eq!(wrap_angle(TAU), 0.0);
    }
}
