use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Aspect ratio at which the thin SVD switches to the Gram-matrix route.
const GRAM_ASPECT: usize = 2;
/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;
/// Convergence threshold of the iterative decompositions. nalgebra's SVD
/// returns wrong factors for some rank-deficient inputs at exactly `f64::EPSILON`.
const SOLVER_EPS: f64 = 5.0 * f64::EPSILON;

/// Thin singular value decomposition `m = u * diag(sigma) * v_t`.
///
/// Only the numerically nonzero triplets are kept, sorted by decreasing
/// singular value.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// Rebuild `u * diag(f(sigma)) * v_t`, skipping triplets mapped to zero.
    pub fn recompose(&self, rows: usize, cols: usize, f: impl Fn(usize, f64) -> f64) -> DMatrix<f64> {
        let weights: Vec<(usize, f64)> = self
            .sigma
            .iter()
            .enumerate()
            .map(|(j, &s)| (j, f(j, s)))
            .filter(|&(_, w)| w != 0.0)
            .collect();
        if weights.is_empty() {
            return DMatrix::zeros(rows, cols);
        }
        let mut us = DMatrix::zeros(rows, weights.len());
        let mut vt = DMatrix::zeros(weights.len(), cols);
        for (c, &(j, w)) in weights.iter().enumerate() {
            us.set_column(c, &(self.u.column(j) * w));
            vt.set_row(c, &self.v_t.row(j));
        }
        us * vt
    }
}

pub fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    let (rows, cols) = m.shape();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "SVD input {rows}x{cols} contains non-finite entries"
        )));
    }
    if cols >= GRAM_ASPECT * rows {
        gram_wide(m)
    } else if rows >= GRAM_ASPECT * cols {
        let t = gram_wide(&m.transpose())?;
        Ok(ThinSvd {
            u: t.v_t.transpose(),
            sigma: t.sigma,
            v_t: t.u.transpose(),
        })
    } else {
        direct(m)
    }
}

/// Wide matrix: eigendecompose `m mᵀ`, then read singular values off the rows
/// of `uᵀ m`, which is more accurate than square-rooting the eigenvalues.
fn gram_wide(m: &DMatrix<f64>) -> Result<ThinSvd> {
    let (rows, cols) = m.shape();
    let gram = m * m.transpose();
    let eig = SymmetricEigen::try_new(gram, SOLVER_EPS, 0).ok_or_else(|| {
        Error::Numeric(format!("Gram eigendecomposition of {rows}x{cols} matrix did not converge"))
    })?;
    let projected = eig.eigenvectors.transpose() * m;
    let mut triplets: Vec<(f64, usize)> = (0..rows)
        .map(|j| (projected.row(j).norm(), j))
        .collect();
    triplets.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let smax = triplets.first().map_or(0.0, |t| t.0);
    triplets.retain(|t| smax > 0.0 && t.0 > RANK_TOLERANCE * smax);

    let r = triplets.len();
    let mut u = DMatrix::zeros(rows, r);
    let mut v_t = DMatrix::zeros(r, cols);
    let mut sigma = Vec::with_capacity(r);
    for (c, &(s, j)) in triplets.iter().enumerate() {
        u.set_column(c, &eig.eigenvectors.column(j));
        v_t.set_row(c, &(projected.row(j) / s));
        sigma.push(s);
    }
    Ok(ThinSvd { u, sigma, v_t })
}

fn direct(m: &DMatrix<f64>) -> Result<ThinSvd> {
    let (rows, cols) = m.shape();
    let svd = nalgebra::SVD::try_new(m.clone(), true, true, SOLVER_EPS, 0).ok_or_else(|| {
        Error::Numeric(format!("SVD of {rows}x{cols} matrix did not converge"))
    })?;
    let (Some(u_full), Some(vt_full)) = (svd.u, svd.v_t) else {
        return Err(Error::Numeric("SVD did not return singular vectors".into()));
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let smax = order.first().map_or(0.0, |&j| svd.singular_values[j]);
    order.retain(|&j| smax > 0.0 && svd.singular_values[j] > RANK_TOLERANCE * smax);

    let r = order.len();
    let mut u = DMatrix::zeros(rows, r);
    let mut v_t = DMatrix::zeros(r, cols);
    let mut sigma = Vec::with_capacity(r);
    for (c, &j) in order.iter().enumerate() {
        u.set_column(c, &u_full.column(j));
        v_t.set_row(c, &vt_full.row(j));
        sigma.push(svd.singular_values[j]);
    }
    Ok(ThinSvd { u, sigma, v_t })
}
