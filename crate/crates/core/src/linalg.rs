//! Dense factorization helpers shared by the GP engine and the effect sampler.

use faer::linalg::solvers::Llt;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Relative jitter tried first when a Gram matrix fails to factorize.
pub const JITTER_START: f64 = 1e-8;
/// Largest relative jitter before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// Cholesky factor together with the diagonal jitter that was needed.
pub struct JitteredLlt {
    pub llt: Llt<f64>,
    pub jitter: f64,
}

/// Cholesky of a symmetric matrix. The matrix is first factorized as given;
/// on failure a jitter of `JITTER_START * mean(diag)` is added and doubled until
/// it exceeds `JITTER_MAX * mean(diag)`.
pub fn cholesky_with_jitter(a: MatRef<'_, f64>, context: &str) -> Result<JitteredLlt> {
    if let Ok(llt) = a.llt(Side::Lower) {
        return Ok(JitteredLlt { llt, jitter: 0.0 });
    }
    let n = a.nrows();
    let mean_diag = (0..n).map(|i| a[(i, i)]).sum::<f64>() / n.max(1) as f64;
    let scale = if mean_diag.is_finite() && mean_diag > 0.0 {
        mean_diag
    } else {
        1.0
    };
    let mut rel = JITTER_START;
    let mut work = a.to_owned();
    while rel <= JITTER_MAX {
        let jitter = rel * scale;
        for i in 0..n {
            work[(i, i)] = a[(i, i)] + jitter;
        }
        if let Ok(llt) = work.llt(Side::Lower) {
            return Ok(JitteredLlt { llt, jitter });
        }
        rel *= 2.0;
    }
    Err(Error::NotPositiveDefinite {
        jitter: JITTER_MAX * scale,
        context: context.to_string(),
    })
}

/// Square-root factor `F` with `F Fᵀ ≈ a` for a symmetric positive semidefinite
/// matrix, used for Gaussian sampling.
///
/// Tries Cholesky with escalating jitter `1e-10 .. 1e-6` of `trace/n`; a matrix
/// that is numerically rank deficient beyond that (including the zero matrix)
/// falls back to a symmetric eigendecomposition with negative eigenvalues clipped.
pub fn psd_sqrt(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let n = a.nrows();
    let trace: f64 = (0..n).map(|i| a[(i, i)]).sum();
    if !trace.is_finite() {
        return Err(Error::Gp("posterior covariance has non-finite entries".into()));
    }
    if let Ok(llt) = a.llt(Side::Lower) {
        return Ok(llt.L().to_owned());
    }
    let unit = trace / n.max(1) as f64;
    if unit > 0.0 {
        let mut work = a.to_owned();
        let mut rel = 1e-10;
        while rel <= 1e-6 * 1.0001 {
            for i in 0..n {
                work[(i, i)] = a[(i, i)] + rel * unit;
            }
            if let Ok(llt) = work.llt(Side::Lower) {
                return Ok(llt.L().to_owned());
            }
            rel *= 10.0;
        }
    }
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Gp(format!("eigendecomposition of posterior covariance failed: {e:?}")))?;
    let u = evd.U();
    let s = evd.S();
    Ok(Mat::from_fn(n, n, |i, j| u[(i, j)] * s[j].max(0.0).sqrt()))
}

/// `log det` from a Cholesky factor.
pub fn log_det(llt: &Llt<f64>) -> f64 {
    let l = llt.L();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: MatRef<'_, f64>) -> f64 {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map(|ev| ev.into_iter().fold(f64::INFINITY, f64::min))
        .unwrap_or(f64::NAN)
}

/// `(A + Aᵀ) / 2`, in place.
pub fn symmetrize(a: &mut Mat<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub(crate) fn col_vec(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_singular_psd() {
        // rank one
        let a = Mat::from_fn(3, 3, |i, j| (i + 1) as f64 * (j + 1) as f64);
        let f = cholesky_with_jitter(a.as_ref(), "test").unwrap();
        assert!(f.jitter > 0.0 && f.jitter <= JITTER_MAX * 14.0 / 3.0);
    }

    #[test]
    fn indefinite_matrix_is_an_error() {
        let a = Mat::from_fn(2, 2, |i, j| if i == j { -1.0 } else { 0.0 });
        assert!(matches!(
            cholesky_with_jitter(a.as_ref(), "test"),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn sqrt_of_zero_matrix_is_zero() {
        let f = psd_sqrt(Mat::<f64>::zeros(4, 4).as_ref()).unwrap();
        assert!(f.norm_max() == 0.0);
    }

    #[test]
    fn sqrt_reconstructs_rank_deficient() {
        let v = [1.0, -2.0, 0.5];
        let a = Mat::from_fn(3, 3, |i, j| v[i] * v[j]);
        let f = psd_sqrt(a.as_ref()).unwrap();
        let back = &f * f.transpose();
        assert!((&back - &a).norm_max() < 1e-5);
    }
}
