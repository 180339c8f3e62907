//! Numerical rank of the derivative tower of the eigenfunction map.
//!
//! Row `k` of the tower at `x` is `d^k/dx^k (e_1, ..., e_2m)(x)`. The rows
//! should span `R^{2m}` at every angle. Rows are scaled to unit norm before
//! the SVD since `j^k` growth would otherwise decide the conditioning.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::model::CircleModel;

pub const RANK_TOL: f64 = 1e-8;

/// Tower built from eigenfunction pairs `cos(j x)/sqrt(pi), sin(j x)/sqrt(pi)`
/// for each listed frequency `j`.
pub fn tower_for_frequencies(freqs: &[usize], x: f64, max_order: usize) -> DMatrix<f64> {
    let norm = PI.sqrt().recip();
    DMatrix::from_fn(max_order, 2 * freqs.len(), |r, c| {
        let k = (r + 1) as i32;
        let j = freqs[c / 2] as f64;
        let phase = j * x + k as f64 * FRAC_PI_2;
        let trig = if c % 2 == 0 { phase.cos() } else { phase.sin() };
        j.powi(k) * trig * norm
    })
}

/// Derivative orders `1..=max_order` of the model's eigenfunction vector.
pub fn derivative_matrix(model: &CircleModel, x: f64, max_order: usize) -> DMatrix<f64> {
    let freqs: Vec<usize> = (1..=model.n_modes()).collect();
    tower_for_frequencies(&freqs, x, max_order)
}

/// Smallest singular value after scaling every row to unit norm.
pub fn min_normalized_singular_value(mut m: DMatrix<f64>) -> f64 {
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    m.singular_values().iter().cloned().fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EprimeReport {
    pub samples: usize,
    pub max_order: usize,
    pub min_singular_value: f64,
    pub worst_x: f64,
    pub pass: bool,
}

/// Deterministic low-discrepancy angles `2π frac(i/φ)`.
pub fn sample_angles(samples: usize) -> Vec<f64> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    (0..samples).map(|i| TAU * (i as f64 * g).fract()).collect()
}

pub fn check_frequencies(freqs: &[usize], samples: usize) -> EprimeReport {
    let max_order = 2 * freqs.len();
    let angles = sample_angles(samples.max(1));
    let svs: Vec<f64> = angles
        .par_iter()
        .map(|&x| min_normalized_singular_value(tower_for_frequencies(freqs, x, max_order)))
        .collect();
    // First minimum in sample order, so ties resolve the same on any schedule.
    let (idx, &min) = svs
        .iter()
        .enumerate()
        .fold((0, &f64::INFINITY), |acc, (i, v)| if *v < *acc.1 { (i, v) } else { acc });
    EprimeReport {
        samples: angles.len(),
        max_order,
        min_singular_value: min,
        worst_x: angles[idx],
        pass: min > RANK_TOL,
    }
}

pub fn check_condition_eprime(model: &CircleModel, samples: usize) -> EprimeReport {
    let freqs: Vec<usize> = (1..=model.n_modes()).collect();
    check_frequencies(&freqs, samples)
}
