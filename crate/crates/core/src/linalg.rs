//! Dense decompositions shared by the statistical modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Thin singular value decomposition `a = U diag(s) V^T` with singular values
/// sorted in non-increasing order.
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub(crate) fn thin_svd(a: &DMatrix<f64>) -> Result<ThinSvd> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(ThinSvd {
            u: DMatrix::zeros(m, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(n, 0),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let mat = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let svd = mat
        .thin_svd()
        .map_err(|e| Error::SolverFailure(format!("SVD did not converge: {e:?}")))?;
    let r = m.min(n);
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    Ok(ThinSvd {
        u: DMatrix::from_fn(m, r, |i, j| u[(i, j)]),
        s: DVector::from_fn(r, |i, _| s[i]),
        v: DMatrix::from_fn(n, r, |i, j| v[(i, j)]),
    })
}
