//! Dynamic time warping with a length-normalised root cost: the distance of
//! a warping path of `n` cells is `sqrt(sum of squared costs) / n`, and the
//! DTW distance is the minimum of that over all monotone paths.
//!
//! Because the normaliser depends on the path length, the usual 2-D
//! recursion is not exact; the table here carries the path length as a
//! third index.

use ndarray::{Array2, ArrayView2};

use crate::error::SrpError;

/// Zero-based `(i, j)` cells from `(0, 0)` to `(n - 1, m - 1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarpingPath {
    pub cells: Vec<(usize, usize)>,
}

impl WarpingPath {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Binary alignment matrix with ones on the path.
    pub fn matrix(&self, n: usize, m: usize) -> Array2<u8> {
        let mut out = Array2::zeros((n, m));
        for &(i, j) in &self.cells {
            out[[i, j]] = 1;
        }
        out
    }

    pub fn is_valid(&self, n: usize, m: usize) -> bool {
        if self.cells.first() != Some(&(0, 0)) || self.cells.last() != Some(&(n - 1, m - 1)) {
            return false;
        }
        self.cells.windows(2).all(|w| {
            let (di, dj) = (w[1].0 as isize - w[0].0 as isize, w[1].1 as isize - w[0].1 as isize);
            matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
        })
    }
}

pub(crate) fn check_pair(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<(), SrpError> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(SrpError::EmptySequence);
    }
    if a.ncols() != b.ncols() {
        return Err(SrpError::ShapeMismatch(format!(
            "feature dimensions differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(())
}

/// Squared Euclidean distance between every row of `a` and every row of `b`.
pub fn cost_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        a.row(i)
            .iter()
            .zip(b.row(j).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    })
}

/// Rows are time steps, columns features. Ties prefer the shortest path,
/// then diagonal steps.
pub fn dtw(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<(f64, WarpingPath), SrpError> {
    check_pair(a, b)?;
    let cost = cost_matrix(a, b);
    let (n, m) = cost.dim();
    let kmax = n + m - 1;
    let idx = |i: usize, j: usize, k: usize| (i * m + j) * (kmax + 1) + k;
    let mut best = vec![f64::INFINITY; n * m * (kmax + 1)];
    // 0 diagonal, 1 from (i-1, j), 2 from (i, j-1)
    let mut from = vec![0u8; best.len()];
    best[idx(0, 0, 1)] = cost[[0, 0]];
    for i in 0..n {
        for j in 0..m {
            if i == 0 && j == 0 {
                continue;
            }
            for k in 2..=(i + j + 1) {
                let mut v = f64::INFINITY;
                let mut arg = 0u8;
                let preds = [
                    (i > 0 && j > 0).then(|| idx(i - 1, j - 1, k - 1)),
                    (i > 0).then(|| idx(i - 1, j, k - 1)),
                    (j > 0).then(|| idx(i, j - 1, k - 1)),
                ];
                for (d, p) in preds.iter().enumerate() {
                    if let Some(p) = p {
                        if best[*p] < v {
                            v = best[*p];
                            arg = d as u8;
                        }
                    }
                }
                if v.is_finite() {
                    best[idx(i, j, k)] = v + cost[[i, j]];
                    from[idx(i, j, k)] = arg;
                }
            }
        }
    }
    let mut dist = f64::INFINITY;
    let mut len = 0;
    for k in n.max(m)..=kmax {
        let s = best[idx(n - 1, m - 1, k)];
        if s.is_finite() {
            let d = s.sqrt() / k as f64;
            if d < dist {
                dist = d;
                len = k;
            }
        }
    }
    let mut cells = Vec::with_capacity(len);
    let (mut i, mut j, mut k) = (n - 1, m - 1, len);
    loop {
        cells.push((i, j));
        if k == 1 {
            break;
        }
        match from[idx(i, j, k)] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            _ => j -= 1,
        }
        k -= 1;
    }
    cells.reverse();
    Ok((dist, WarpingPath { cells }))
}
