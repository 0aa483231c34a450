//! Least squares through the thin SVD.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative singular-value threshold below which a design is rank deficient.
const RANK_TOL: f64 = 1e-10;

pub struct LeastSquares {
    /// One column of coefficients per response column.
    pub coef: DMatrix<f64>,
    /// Diagonal of the hat matrix.
    pub leverage: Vec<f64>,
}

pub fn least_squares(design: &DMatrix<f64>, response: &DMatrix<f64>) -> Result<LeastSquares> {
    let (n, k) = design.shape();
    if n < k {
        return Err(Error::Numerical(format!(
            "design has {n} rows for {k} columns"
        )));
    }
    if response.nrows() != n {
        return Err(Error::DimensionMismatch(
            "response rows differ from design rows".into(),
        ));
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite design entry".into()));
    }
    let svd = design.clone().svd(true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    if !(smax > 0.0) || smin <= RANK_TOL * smax {
        return Err(Error::Numerical(format!(
            "rank-deficient design (singular values {smin:e} / {smax:e})"
        )));
    }
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let uty = u.transpose() * response;
    let mut scaled = uty;
    for (r, sv) in s.iter().enumerate() {
        scaled.row_mut(r).scale_mut(1.0 / sv);
    }
    let coef = vt.transpose() * scaled;
    let leverage = (0..n).map(|i| u.row(i).norm_squared()).collect();
    Ok(LeastSquares { coef, leverage })
}
