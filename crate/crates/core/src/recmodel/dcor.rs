//! Sample distance correlation and its gradient.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Double-centred Euclidean distance matrix plus the raw distances.
fn centred_distances(rows: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let mut dist = vec![0.0; n * n];
    for j in 0..n {
        for k in j + 1..n {
            let d = rows[j]
                .iter()
                .zip(rows[k])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist[j * n + k] = d;
            dist[k * n + j] = d;
        }
    }
    let row_mean: Vec<f64> = (0..n).map(|j| dist[j * n..(j + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let mut centred = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            centred[j * n + k] = dist[j * n + k] - row_mean[j] - row_mean[k] + grand;
        }
    }
    (centred, dist)
}

/// Sample distance correlation between row-aligned samples `x` and `y`.
/// Returns 0 when either sample is constant.
pub fn distance_correlation(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::shape(format!("{} vs {} samples", x.rows(), y.rows())));
    }
    if x.rows() < 2 {
        return Err(Error::invalid("distance correlation needs at least 2 samples"));
    }
    let xr: Vec<&[f64]> = (0..x.rows()).map(|r| x.row(r)).collect();
    let yr: Vec<&[f64]> = (0..y.rows()).map(|r| y.row(r)).collect();
    Ok(dcor_with_grad(&xr, &yr, false).0)
}

/// Distance correlation of two row sets with optional gradients w.r.t. every
/// row of `x` and `y` (flattened row-major).
///
/// With `S_xy = Σ A∘B`, `S_xx = Σ A∘A`, `S_yy = Σ B∘B` on the centred
/// matrices, `dCor = sqrt(S_xy) · (S_xx S_yy)^(-1/4)`. Centring is an
/// orthogonal projection, so `∂S_xy/∂a_jk = B_jk` and `∂S_xx/∂a_jk = 2 A_jk`.
pub(crate) fn dcor_with_grad(x: &[&[f64]], y: &[&[f64]], want_grad: bool) -> (f64, Vec<f64>, Vec<f64>) {
    let n = x.len();
    let p = x.first().map_or(0, |r| r.len());
    let q = y.first().map_or(0, |r| r.len());
    let (a, da) = centred_distances(x);
    let (b, db) = centred_distances(y);
    let sxy: f64 = a.iter().zip(&b).map(|(u, v)| u * v).sum();
    let sxx: f64 = a.iter().map(|u| u * u).sum();
    let syy: f64 = b.iter().map(|v| v * v).sum();
    let scale = (sxx.abs() + syy.abs()).max(1e-300);
    if sxx <= 1e-24 * scale.max(1.0) || syy <= 1e-24 * scale.max(1.0) || sxy <= 0.0 {
        return (0.0, vec![0.0; if want_grad { n * p } else { 0 }], vec![0.0; if want_grad { n * q } else { 0 }]);
    }
    let value = (sxy.sqrt() * (sxx * syy).powf(-0.25)).min(1.0);
    if !want_grad {
        return (value, Vec::new(), Vec::new());
    }
    let back = |rows: &[&[f64]], dist: &[f64], own: &[f64], other: &[f64], s_own: f64, dim: usize| {
        let mut g = vec![0.0; n * dim];
        for j in 0..n {
            for k in 0..n {
                let djk = dist[j * n + k];
                if j == k || djk <= 0.0 {
                    continue;
                }
                let gjk = value * (other[j * n + k] / (2.0 * sxy) - own[j * n + k] / (2.0 * s_own));
                let coef = 2.0 * gjk / djk;
                for c in 0..dim {
                    g[j * dim + c] += coef * (rows[j][c] - rows[k][c]);
                }
            }
        }
        g
    };
    let gx = back(x, &da, &a, &b, sxx, p);
    let gy = back(y, &db, &b, &a, syy, q);
    (value, gx, gy)
}
