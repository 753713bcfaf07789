//! Dense 4D tensors, mode-n unfolding, and the nuclear-norm machinery built
//! on top of the thin SVD.
//!
//! Unfolding along mode `i` (1-based, `1..=4`) places axis `i` on the rows.
//! The columns enumerate the remaining three axes in ascending axis order
//! with the first-listed axis varying fastest, so for a `(B, K, H, N)` tensor
//! the mode-2 column index is `b + B * (h + H * n)`. [`fold`] is the exact
//! inverse of [`unfold`].

mod svd;
mod volume;

use nalgebra::DMatrix;

pub use svd::{thin_svd, ThinSvd, RANK_TOLERANCE};
pub use volume::{Volume3D, Volume4D};

use crate::error::{ensure_arg, ensure_dims, Error, Result};

/// Dense real matrix, the unfolded view of a [`Volume4D`].
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix2D(pub DMatrix<f64>);

impl Matrix2D {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        ensure_arg!(m.nrows() >= 1 && m.ncols() >= 1, "matrix must be non-empty");
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("matrix has non-finite entries".into()));
        }
        Ok(Self(m))
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        ensure_dims!(data.len() == rows * cols, "expected {} entries", rows * cols);
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }
}

fn check_mode(mode: usize) -> Result<()> {
    ensure_arg!((1..=4).contains(&mode), "mode must be in 1..=4, got {mode}");
    Ok(())
}

/// Row and column count of the mode-`mode` unfolding.
fn unfolding_layout(dims: [usize; 4], mode: usize) -> (usize, usize) {
    let rows = dims[mode - 1];
    let cols = dims.iter().product::<usize>() / rows;
    (rows, cols)
}

/// Visit every entry as `(data_index, row, col)` under the unfolding order.
fn for_each_entry(dims: [usize; 4], mode: usize, mut f: impl FnMut(usize, usize, usize)) {
    let [nb, nk, nh, nn] = dims;
    let mut idx = 0;
    for n in 0..nn {
        for h in 0..nh {
            for k in 0..nk {
                for b in 0..nb {
                    let (row, col) = match mode {
                        1 => (b, k + nk * (h + nh * n)),
                        2 => (k, b + nb * (h + nh * n)),
                        3 => (h, b + nb * (k + nk * n)),
                        _ => (n, b + nb * (k + nk * h)),
                    };
                    f(idx, row, col);
                    idx += 1;
                }
            }
        }
    }
}

/// Mode-`mode` unfolding of `x` (see the module docs for the column order).
pub fn unfold(x: &Volume4D, mode: usize) -> Result<Matrix2D> {
    check_mode(mode)?;
    let dims = x.dims();
    let (rows, cols) = unfolding_layout(dims, mode);
    let data = x.data();
    // Mode 1 is the storage order read column-major.
    if mode == 1 {
        return Ok(Matrix2D(DMatrix::from_column_slice(rows, cols, data)));
    }
    let mut m = DMatrix::zeros(rows, cols);
    let buf = m.as_mut_slice();
    for_each_entry(dims, mode, |i, r, c| buf[r + rows * c] = data[i]);
    Ok(Matrix2D(m))
}

/// Inverse of [`unfold`]: rebuild a tensor of shape `dims`.
pub fn fold(mode: usize, dims: [usize; 4], m: &Matrix2D) -> Result<Volume4D> {
    check_mode(mode)?;
    ensure_arg!(dims.iter().all(|&d| d >= 1), "dims must be >= 1, got {dims:?}");
    let (rows, cols) = unfolding_layout(dims, mode);
    ensure_dims!(
        m.rows() == rows && m.cols() == cols,
        "mode-{mode} unfolding of {dims:?} is {rows}x{cols}, got {}x{}",
        m.rows(),
        m.cols()
    );
    let src = m.0.as_slice();
    let mut data = vec![0.0; rows * cols];
    if mode == 1 {
        data.copy_from_slice(src);
    } else {
        for_each_entry(dims, mode, |i, r, c| data[i] = src[r + rows * c]);
    }
    Volume4D::from_vec(dims, data)
}

/// Singular values of `m`, sorted decreasingly, numerically-zero ones dropped.
pub fn singular_values(m: &Matrix2D) -> Result<Vec<f64>> {
    Ok(thin_svd(&m.0)?.sigma)
}

/// Nuclear norm: the sum of singular values.
pub fn trace_norm(m: &Matrix2D) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// Check that `alpha` is a set of nonnegative weights summing to one.
pub fn validate_alpha(alpha: &[f64; 4]) -> Result<()> {
    ensure_arg!(
        alpha.iter().all(|a| a.is_finite() && *a >= 0.0),
        "alpha weights must be nonnegative, got {alpha:?}"
    );
    let sum: f64 = alpha.iter().sum();
    ensure_arg!(
        (sum - 1.0).abs() <= 1e-9,
        "alpha weights must sum to 1, got {sum}"
    );
    Ok(())
}

/// Per-mode trace norms `‖X_(i)‖_tr`, computed concurrently.
pub fn mode_trace_norms(x: &Volume4D) -> Result<[f64; 4]> {
    let norms: Vec<Result<f64>> = rayon_modes(|mode| trace_norm(&unfold(x, mode)?));
    let mut out = [0.0; 4];
    for (o, r) in out.iter_mut().zip(norms) {
        *o = r?;
    }
    Ok(out)
}

/// Weighted sum of the trace norms of the four unfoldings.
pub fn rank_surrogate(x: &Volume4D, alpha: &[f64; 4]) -> Result<f64> {
    validate_alpha(alpha)?;
    let norms = mode_trace_norms(x)?;
    Ok(alpha.iter().zip(&norms).map(|(a, t)| a * t).sum())
}

/// Singular value thresholding, the proximal map of `tau * ‖·‖_tr`.
pub fn svt(m: &Matrix2D, tau: f64) -> Result<Matrix2D> {
    ensure_arg!(tau.is_finite() && tau >= 0.0, "tau must be >= 0, got {tau}");
    let svd = thin_svd(&m.0)?;
    Ok(Matrix2D(svd.recompose(m.rows(), m.cols(), |_, s| (s - tau).max(0.0))))
}

/// Best rank-`k` approximation in the Frobenius norm.
pub fn truncated_svd_reconstruct(m: &Matrix2D, k: usize) -> Result<Matrix2D> {
    let full = m.rows().min(m.cols());
    ensure_arg!(
        (1..=full).contains(&k),
        "k must be in 1..={full}, got {k}"
    );
    let svd = thin_svd(&m.0)?;
    Ok(Matrix2D(
        svd.recompose(m.rows(), m.cols(), |j, s| if j < k { s } else { 0.0 }),
    ))
}

/// Run `f` for modes 1..=4 in parallel, returning results in mode order.
pub(crate) fn rayon_modes<T: Send>(f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (1..=4usize).into_par_iter().map(f).collect()
}
