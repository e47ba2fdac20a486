//! Dense least-squares helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative tolerance on |R_jj| / max|R_ii| below which a column is treated
/// as linearly dependent on its predecessors.
const RANK_TOL: f64 = 1e-10;

/// Solves the weighted least-squares problem min Σ wᵢ (yᵢ − xᵢᵀb)² through a
/// QR factorization of the column-scaled, row-weighted design.
pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<&[f64]>,
    column_names: &[String],
) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    if n < p {
        return Err(Error::invalid(format!("need at least {p} rows for {p} coefficients, got {n}")));
    }
    let mut xw = x.clone();
    let mut yw = y.clone();
    if let Some(w) = weights {
        for i in 0..n {
            let s = w[i].sqrt();
            for j in 0..p {
                xw[(i, j)] *= s;
            }
            yw[i] *= s;
        }
    }
    let mut scale = vec![1.0; p];
    for (j, s) in scale.iter_mut().enumerate() {
        let norm = xw.column(j).norm();
        if norm > 0.0 {
            *s = norm;
            xw.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    let qr = xw.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let bad: Vec<String> = (0..p)
        .filter(|&j| !(r[(j, j)].abs() > RANK_TOL * max_diag.max(f64::MIN_POSITIVE)))
        .map(|j| column_names.get(j).cloned().unwrap_or_else(|| format!("x{j}")))
        .collect();
    if !bad.is_empty() {
        return Err(Error::RankDeficient { columns: bad });
    }
    let qty = qr.q().transpose() * yw;
    let b = r.solve_upper_triangular(&qty).ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    Ok(DVector::from_iterator(p, (0..p).map(|j| b[j] / scale[j])))
}

/// Solves the symmetric positive-definite system `a x = b`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    a.clone().lu().solve(b).ok_or_else(|| Error::Numerical("singular information matrix".into()))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| a.clone().try_inverse())
        .ok_or_else(|| Error::Numerical("singular information matrix".into()))
}
