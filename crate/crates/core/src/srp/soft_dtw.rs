//! Smoothed DTW and the two training objectives built on DTW.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::dtw::{check_pair, cost_matrix, dtw};
use crate::error::SrpError;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LossKind {
    /// Soft-minimum DTW over all alignments, divided by L².
    #[default]
    #[serde(rename = "softdtw")]
    SoftDtw,
    /// `-ln(sum_{1..L} exp(-DTW / L²))`, i.e. `DTW / L² - ln L`.
    #[serde(rename = "logexp-dtw")]
    LogExpDtw,
}

fn softmin(values: [f64; 3], gamma: f64) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    if lo.is_infinite() {
        return lo;
    }
    let s: f64 = values.iter().map(|v| (-(v - lo) / gamma).exp()).sum();
    lo - gamma * s.ln()
}

fn forward(cost: &Array2<f64>, gamma: f64) -> Array2<f64> {
    let (n, m) = cost.dim();
    let mut r = Array2::from_elem((n + 2, m + 2), f64::INFINITY);
    r[[0, 0]] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            r[[i, j]] = cost[[i - 1, j - 1]]
                + softmin([r[[i - 1, j - 1]], r[[i - 1, j]], r[[i, j - 1]]], gamma);
        }
    }
    r
}

/// Soft-DTW value with squared Euclidean pair costs.
pub fn soft_dtw(a: ArrayView2<f64>, b: ArrayView2<f64>, gamma: f64) -> Result<f64, SrpError> {
    check_pair(a, b)?;
    if !(gamma > 0.0) {
        return Err(SrpError::InvalidGamma(gamma));
    }
    let cost = cost_matrix(a, b);
    let (n, m) = cost.dim();
    Ok(forward(&cost, gamma)[[n, m]])
}

/// Value plus gradients with respect to both sequences.
pub fn soft_dtw_grad(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    gamma: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>), SrpError> {
    check_pair(a, b)?;
    if !(gamma > 0.0) {
        return Err(SrpError::InvalidGamma(gamma));
    }
    let cost = cost_matrix(a, b);
    let (n, m) = cost.dim();
    let mut r = forward(&cost, gamma);
    let value = r[[n, m]];
    // alignment expectations, swept backwards from the end cell
    let mut d = Array2::zeros((n + 2, m + 2));
    d.slice_mut(ndarray::s![1..=n, 1..=m]).assign(&cost);
    for i in 1..=n {
        r[[i, m + 1]] = f64::NEG_INFINITY;
    }
    for j in 1..=m {
        r[[n + 1, j]] = f64::NEG_INFINITY;
    }
    r[[n + 1, m + 1]] = value;
    let mut e = Array2::<f64>::zeros((n + 2, m + 2));
    e[[n + 1, m + 1]] = 1.0;
    for i in (1..=n).rev() {
        for j in (1..=m).rev() {
            let w = |ii: usize, jj: usize| ((r[[ii, jj]] - r[[i, j]] - d[[ii, jj]]) / gamma).exp();
            e[[i, j]] = e[[i + 1, j]] * w(i + 1, j)
                + e[[i, j + 1]] * w(i, j + 1)
                + e[[i + 1, j + 1]] * w(i + 1, j + 1);
        }
    }
    let mut ga = Array2::zeros(a.dim());
    let mut gb = Array2::zeros(b.dim());
    for i in 0..n {
        for j in 0..m {
            let weight = e[[i + 1, j + 1]];
            if weight == 0.0 {
                continue;
            }
            for k in 0..a.ncols() {
                let diff = 2.0 * (a[[i, k]] - b[[j, k]]) * weight;
                ga[[i, k]] += diff;
                gb[[j, k]] -= diff;
            }
        }
    }
    Ok((value, ga, gb))
}

/// Objective between a predicted and a target sequence and its gradient with
/// respect to the prediction. `L` is the longer of the two lengths.
pub fn loss_and_grad(
    kind: LossKind,
    predicted: ArrayView2<f64>,
    target: ArrayView2<f64>,
    gamma: f64,
) -> Result<(f64, Array2<f64>), SrpError> {
    check_pair(predicted, target)?;
    let l = predicted.nrows().max(target.nrows()) as f64;
    let scale = 1.0 / (l * l);
    match kind {
        LossKind::SoftDtw => {
            let (v, g, _) = soft_dtw_grad(predicted, target, gamma)?;
            Ok((v * scale, g * scale))
        }
        LossKind::LogExpDtw => {
            let (dist, path) = dtw(predicted, target)?;
            let mut g = Array2::zeros(predicted.dim());
            if dist > 0.0 {
                // d/dS of sqrt(S)/k
                let k = path.len() as f64;
                let ds = 1.0 / (2.0 * k * k * dist);
                for &(i, j) in &path.cells {
                    for f in 0..predicted.ncols() {
                        g[[i, f]] += 2.0 * (predicted[[i, f]] - target[[j, f]]) * ds;
                    }
                }
            }
            Ok((dist * scale - l.ln(), g * scale))
        }
    }
}

/// Soft-DTW objective alone.
pub fn soft_dtw_loss(
    core: ArrayView2<f64>,
    ordinary: ArrayView2<f64>,
    gamma: f64,
) -> Result<f64, SrpError> {
    Ok(loss_and_grad(LossKind::SoftDtw, ordinary, core, gamma)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn delannoy(n: usize, m: usize) -> f64 {
        let mut t = vec![vec![1.0f64; m + 1]; n + 1];
        for i in 1..=n {
            for j in 1..=m {
                t[i][j] = t[i - 1][j] + t[i][j - 1] + t[i - 1][j - 1];
            }
        }
        t[n][m]
    }

    #[test]
    fn constant_identical_sequences_hit_analytic_value() {
        for (n, m) in [(1, 1), (3, 3), (2, 4)] {
            let a = Array2::from_elem((n, 2), 0.4);
            let b = Array2::from_elem((m, 2), 0.4);
            let gamma = 0.1;
            let want = -gamma * delannoy(n - 1, m - 1).ln();
            let got = soft_dtw(a.view(), b.view(), gamma).unwrap();
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn approaches_hard_minimum_as_gamma_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
        // hard-min sum of squared costs over paths, by plain recursion
        let c = cost_matrix(a.view(), b.view());
        let mut r = Array2::from_elem((5, 4), f64::INFINITY);
        r[[0, 0]] = 0.0;
        for i in 1..5 {
            for j in 1..4 {
                r[[i, j]] = c[[i - 1, j - 1]] + r[[i - 1, j - 1]].min(r[[i - 1, j]]).min(r[[i, j - 1]]);
            }
        }
        let soft = soft_dtw(a.view(), b.view(), 1e-4).unwrap();
        assert!((soft - r[[4, 3]]).abs() < 1e-3);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in [LossKind::SoftDtw, LossKind::LogExpDtw] {
            for _ in 0..5 {
                let a = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
                let b = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
                let (_, g) = loss_and_grad(kind, a.view(), b.view(), 0.5).unwrap();
                for idx in [(0, 0), (1, 2), (2, 1)] {
                    let h = 1e-6;
                    let mut p = a.clone();
                    p[idx] += h;
                    let up = loss_and_grad(kind, p.view(), b.view(), 0.5).unwrap().0;
                    p[idx] -= 2.0 * h;
                    let down = loss_and_grad(kind, p.view(), b.view(), 0.5).unwrap().0;
                    let fd = (up - down) / (2.0 * h);
                    let rel = (fd - g[idx]).abs() / fd.abs().max(g[idx].abs()).max(1e-8);
                    assert!(rel <= 1e-4, "{kind:?} {idx:?}: fd {fd} analytic {}", g[idx]);
                }
            }
        }
    }

    #[test]
    fn moving_toward_target_lowers_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let core = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
            let ord = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
            let before = soft_dtw_loss(core.view(), ord.view(), 0.1).unwrap();
            let closer = &ord + &((&core - &ord) * 0.5);
            let after = soft_dtw_loss(core.view(), closer.view(), 0.1).unwrap();
            assert!(after < before);
        }
    }

    #[test]
    fn invalid_gamma() {
        let a = Array2::zeros((2, 2));
        assert_eq!(soft_dtw(a.view(), a.view(), 0.0), Err(SrpError::InvalidGamma(0.0)));
    }
}
