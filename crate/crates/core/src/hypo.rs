//! Explicit hypocoercivity constants and the L²(μ) decay rate they imply.
//!
//! Every quantity here is a closed-form function of the spectral data
//! `(λ_i, a_i)` and of two sup-norms of the eigenfunctions. For the Fourier
//! family both sup-norms are known exactly; the grid values are kept as a
//! diagnostic.

use serde::Serialize;
use thiserror::Error;

use crate::model::{CircleModel, SUP_GRID};

/// Smallest non-zero eigenvalue of `-Δ` on the unit circle.
pub const CIRCLE_SPECTRAL_GAP: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum HypoError {
    #[error("the model has no modes")]
    Empty,
    #[error("sigma must be positive and finite (got {0})")]
    Sigma(f64),
    #[error("eta must be positive and finite (got {0})")]
    Eta(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypoConstants {
    pub sigma: f64,
    /// Number of eigenfunctions, `2m`.
    pub n: usize,
    pub spectral_gap: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub n1: f64,
    pub n2: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub eps0: f64,
    /// `sum_i |λ_i|`.
    pub sum_abs_eigen: f64,
    /// `sup_i ||e_i'||_∞^2`.
    pub sup_grad_sq: f64,
    /// `||sum_i e_i^2||_∞`.
    pub sup_sum_sq: f64,
    pub sup_grad_sq_grid: f64,
    pub sup_sum_sq_grid: f64,
}

pub fn compute_constants(model: &CircleModel) -> Result<HypoConstants, HypoError> {
    let m = model.n_modes();
    if m == 0 {
        return Err(HypoError::Empty);
    }
    let sigma = model.sigma();
    let n = model.dim();
    let eig = model.eigenvalues();
    let w = model.weights();
    let abs: Vec<f64> = eig.iter().map(|l| l.abs()).collect();
    let sum_abs_eigen: f64 = abs.iter().sum();
    let min_abs = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    let weighted: f64 = abs.iter().zip(&w).map(|(l, a)| l * a).sum();
    let lambda2 = abs.iter().zip(&w).map(|(l, a)| l * a).fold(f64::INFINITY, f64::min);

    let mf = m as f64;
    let sup_grad_sq = mf * mf / std::f64::consts::PI;
    let sup_sum_sq = mf / std::f64::consts::PI;
    let (sup_grad_sq_grid, sup_sum_sq_grid) = grid_sup_norms(model, SUP_GRID);

    let n2 = 2.0 * n as f64 / min_abs * sup_grad_sq * (4.0 + weighted).sqrt() + 4.0 * sup_sum_sq;
    let lambda1 = CIRCLE_SPECTRAL_GAP * sigma * sigma / 2.0;
    let n1 = sigma * sigma / 2.0 * sum_abs_eigen;
    let d2 = 2.0 + (1.0 + n2).powi(2);
    let ratio = lambda2 / (1.0 + lambda2);
    let k1 = ratio * ratio / (4.0 * d2);
    let k2 = (1.0 + n2) * sum_abs_eigen / d2;
    let k3 = sum_abs_eigen * sum_abs_eigen / (4.0 * d2);
    let eps0 = 2.0 * lambda2 * lambda1 / ((1.0 + lambda2) * (2.0 + (1.0 + n1 + n2).powi(2)));

    Ok(HypoConstants {
        sigma,
        n,
        spectral_gap: CIRCLE_SPECTRAL_GAP,
        lambda1,
        lambda2,
        n1,
        n2,
        k1,
        k2,
        k3,
        eps0,
        sum_abs_eigen,
        sup_grad_sq,
        sup_sum_sq,
        sup_grad_sq_grid,
        sup_sum_sq_grid,
    })
}

/// Grid estimates of `sup_i ||e_i'||^2` and `||sum_i e_i^2||_∞`.
pub fn grid_sup_norms(model: &CircleModel, points: usize) -> (f64, f64) {
    let dim = model.dim();
    let mut vals = vec![0.0; dim];
    let mut ders = vec![0.0; dim];
    let (mut grad, mut sum) = (0.0f64, 0.0f64);
    for i in 0..points {
        let x = std::f64::consts::TAU * i as f64 / points as f64;
        model.eigen_eval_into(x, &mut vals, &mut ders);
        for d in &ders {
            grad = grad.max(d * d);
        }
        sum = sum.max(vals.iter().map(|v| v * v).sum());
    }
    (grad, sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayRate {
    pub eta: f64,
    pub sigma: f64,
    pub lambda: f64,
    /// The bound `sqrt(1 + 2 eta)`.
    pub kappa1: f64,
}

/// `λ = η/(1+η) K1 σ² / (1 + K2 σ² + K3 σ⁴)` and `κ1 = sqrt(1 + 2η)`.
pub fn decay_rate(c: &HypoConstants, eta: f64, sigma: f64) -> Result<DecayRate, HypoError> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(HypoError::Eta(eta));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(HypoError::Sigma(sigma));
    }
    let s2 = sigma * sigma;
    let lambda = eta / (1.0 + eta) * c.k1 * s2 / (1.0 + c.k2 * s2 + c.k3 * s2 * s2);
    Ok(DecayRate { eta, sigma, lambda, kappa1: (1.0 + 2.0 * eta).sqrt() })
}

/// The same rate assembled from `ε0`, which carries `N1 + N2` instead of
/// folding `N1` into `K2` and `K3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonRoute {
    pub eps_eta: f64,
    pub kappa1: f64,
    pub kappa2: f64,
}

pub fn epsilon_route(c: &HypoConstants, eta: f64) -> Result<EpsilonRoute, HypoError> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(HypoError::Eta(eta));
    }
    if !(c.sigma > 0.0) {
        return Err(HypoError::Sigma(c.sigma));
    }
    let eps_eta = eta / (1.0 + eta) * c.eps0 / c.eps0.max(1.0);
    Ok(EpsilonRoute {
        eps_eta,
        kappa1: ((1.0 + eps_eta) / (1.0 - eps_eta)).sqrt(),
        kappa2: eps_eta * c.lambda2 / (4.0 * (1.0 + c.lambda2)),
    })
}

/// Maximiser of `σ² / (1 + K2 σ² + K3 σ⁴)`.
pub fn sigma_star(c: &HypoConstants) -> f64 {
    c.k3.powf(-0.25)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRow {
    pub sigma: f64,
    pub lambda: f64,
    pub kappa2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTable {
    pub eta: f64,
    pub sigma_star: f64,
    pub lambda_star: f64,
    pub rows: Vec<RateRow>,
    /// Index of the largest tabulated rate, if it is not at either end.
    pub interior_max: Option<usize>,
}

pub fn rate_vs_sigma_table(
    model: &CircleModel,
    eta: f64,
    sigmas: &[f64],
) -> Result<RateTable, HypoError> {
    let base = compute_constants(model)?;
    let mut rows = Vec::with_capacity(sigmas.len());
    for &s in sigmas {
        let r = decay_rate(&base, eta, s)?;
        let at = compute_constants(&model.with_sigma(s).map_err(|_| HypoError::Sigma(s))?)?;
        rows.push(RateRow { sigma: s, lambda: r.lambda, kappa2: epsilon_route(&at, eta)?.kappa2 });
    }
    let argmax = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.lambda.total_cmp(&b.1.lambda))
        .map(|(i, _)| i);
    let interior_max = argmax.filter(|&i| i > 0 && i + 1 < rows.len());
    let ss = sigma_star(&base);
    Ok(RateTable {
        eta,
        sigma_star: ss,
        lambda_star: decay_rate(&base, eta, ss)?.lambda,
        rows,
        interior_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn motivating_constants_by_hand() {
        let c = compute_constants(&CircleModel::motivating(1.0)).unwrap();
        assert_eq!(c.spectral_gap, 1.0);
        assert_eq!(c.n, 2);
        assert_relative_eq!(c.lambda2, PI, max_relative = 1e-15);
        assert_relative_eq!(c.sup_grad_sq, 1.0 / PI, max_relative = 1e-15);
        assert_relative_eq!(c.sup_sum_sq, 1.0 / PI, max_relative = 1e-15);
        let n2 = 4.0 / PI * (4.0 + 2.0 * PI).sqrt() + 4.0 / PI;
        assert_relative_eq!(c.n2, n2, max_relative = 1e-14);
        assert_relative_eq!(c.sup_grad_sq_grid, c.sup_grad_sq, max_relative = 1e-6);
        assert_relative_eq!(c.sup_sum_sq_grid, c.sup_sum_sq, max_relative = 1e-12);
    }

    #[test]
    fn k_constants_by_second_evaluation() {
        // Written out for m = 1: |λ| = (1, 1), a = (π, π), n = 2.
        let n2: f64 = 4.0 / PI * (4.0 + 2.0 * PI).sqrt() + 4.0 / PI;
        let lam = PI;
        let s = 2.0;
        let den = 2.0 + (1.0 + n2) * (1.0 + n2);
        let k1 = (lam / (1.0 + lam)).powi(2) / (4.0 * den);
        let k2 = (1.0 + n2) * s / den;
        let k3 = s * s / (4.0 * den);
        let c = compute_constants(&CircleModel::motivating(1.0)).unwrap();
        assert!((c.k1 - k1).abs() < 1e-12 * k1);
        assert!((c.k2 - k2).abs() < 1e-12 * k2);
        assert!((c.k3 - k3).abs() < 1e-12 * k3);
        let r = decay_rate(&c, 1.0, 1.0).unwrap();
        assert_relative_eq!(r.lambda, k1 / (2.0 * (1.0 + k2 + k3)), max_relative = 1e-14);
        assert_relative_eq!(r.kappa1, 3f64.sqrt());
    }

    #[test]
    fn eta_dependence() {
        let c = compute_constants(&CircleModel::motivating(1.0)).unwrap();
        let tiny = decay_rate(&c, 1e-12, 1.0).unwrap().lambda;
        assert!(tiny < 1e-14);
        let grid = [0.1, 1.0, 10.0, 100.0];
        let rates: Vec<DecayRate> = grid.iter().map(|&e| decay_rate(&c, e, 1.0).unwrap()).collect();
        assert!(rates.windows(2).all(|w| w[0].lambda < w[1].lambda && w[0].kappa1 < w[1].kappa1));
        assert!(decay_rate(&c, 0.0, 1.0).is_err());
        assert!(decay_rate(&c, 1.0, 0.0).is_err());
    }

    #[test]
    fn both_routes_give_the_same_rate() {
        for m in 1..=4 {
            let coeffs: Vec<f64> = (1..=m).map(|j| 0.5 + j as f64).collect();
            for &sigma in &[0.1, 0.7, 1.0, 3.0, 20.0] {
                let model = CircleModel::new(coeffs.clone(), sigma).unwrap();
                let c = compute_constants(&model).unwrap();
                for &eta in &[0.1, 1.0, 10.0] {
                    let t = decay_rate(&c, eta, sigma).unwrap();
                    let r = epsilon_route(&c, eta).unwrap();
                    assert!((t.lambda - r.kappa2).abs() <= 1e-12 * t.lambda, "m={m} σ={sigma}");
                    assert!(r.kappa1 <= t.kappa1 + 1e-15);
                }
            }
        }
    }

    #[test]
    fn sigma_limits_and_argmax() {
        let model = CircleModel::motivating(1.0);
        let c = compute_constants(&model).unwrap();
        let eta = 1.0;
        let f = eta / (1.0 + eta);
        for &s in &[1e-1, 1e-2, 1e-3] {
            let l = decay_rate(&c, eta, s).unwrap().lambda;
            assert!((l / (s * s) - c.k1 * f).abs() < 2.0 * c.k2 * s * s * c.k1 * f);
        }
        let l = decay_rate(&c, eta, 1e4).unwrap().lambda;
        assert_relative_eq!(l * 1e8, c.k1 / c.k3 * f, max_relative = 1e-3);

        let ss = sigma_star(&c);
        assert_relative_eq!(c.k3 * ss.powi(4), 1.0, max_relative = 1e-14);
        let sigmas: Vec<f64> = (0..41).map(|i| 10f64.powf(-1.0 + i as f64 * 0.075)).collect();
        let table = rate_vs_sigma_table(&model, eta, &sigmas).unwrap();
        let i = table.interior_max.expect("interior maximum");
        assert!(table.rows.iter().all(|r| r.lambda <= table.lambda_star));
        assert!((sigmas[i] / ss).ln().abs() < 0.2);
        for r in &table.rows {
            assert!((r.lambda - r.kappa2).abs() <= 1e-12 * r.lambda);
        }
    }

    #[test]
    fn scale_covariance_and_sigma_free_measure() {
        let a = CircleModel::new(vec![1.0, 2.5], 1.0).unwrap();
        let b = CircleModel::new(vec![2.0, 5.0], 1.0).unwrap();
        let ca = compute_constants(&a).unwrap();
        let cb = compute_constants(&b).unwrap();
        assert_relative_eq!(cb.lambda2, 2.0 * ca.lambda2, max_relative = 1e-15);
        assert_eq!(ca.spectral_gap, cb.spectral_gap);
        assert_eq!(ca.lambda1, cb.lambda1);
        assert_eq!(
            a.product_measure(),
            a.with_sigma(3.0).unwrap().product_measure()
        );
    }

    proptest! {
        #[test]
        fn eps0_below_one(
            coeffs in proptest::collection::vec(1e-6f64..=10.0, 1..=5),
            sigma in 1e-3f64..50.0,
        ) {
            let model = CircleModel::new(coeffs, sigma).unwrap();
            let c = compute_constants(&model).unwrap();
            prop_assert!(c.eps0 > 0.0 && c.eps0 < 1.0);
            for v in [c.lambda1, c.lambda2, c.n1, c.n2, c.k1, c.k2, c.k3] {
                prop_assert!(v > 0.0 && v.is_finite());
            }
        }
    }
}
