//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Smallest squared Cholesky pivot accepted before the ridge fallback kicks in.
pub const MIN_PIVOT: f64 = 1e-12;
/// Ridge added to the diagonal by the fallback.
pub const FALLBACK_RIDGE: f64 = 1e-10;

/// A Cholesky factor and whether the ridge fallback had to be applied.
#[derive(Clone, Debug)]
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub ridged: bool,
}

impl Factor {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `ln |A|` of the factored matrix.
    pub fn ln_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

fn min_sq_pivot(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min)
}

/// Cholesky factorization of a symmetric matrix, falling back to
/// `A + 1e-10 I` when the factorization fails or a pivot is below `1e-12`.
pub fn factor_with_fallback(a: &DMatrix<f64>) -> Result<Factor> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        if min_sq_pivot(&chol) >= MIN_PIVOT {
            return Ok(Factor { chol, ridged: false });
        }
    }
    let mut ridged = a.clone();
    for i in 0..ridged.nrows() {
        ridged[(i, i)] += FALLBACK_RIDGE;
    }
    match Cholesky::new(ridged) {
        Some(chol) if min_sq_pivot(&chol).is_finite() && min_sq_pivot(&chol) > 0.0 => {
            Ok(Factor { chol, ridged: true })
        }
        _ => Err(Error::Singular(format!(
            "{}x{} matrix is not positive definite even after a {FALLBACK_RIDGE:e} ridge",
            a.nrows(),
            a.ncols()
        ))),
    }
}

/// Strict factorization: no fallback, every squared pivot must be positive.
pub fn factor_strict(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(a.clone())?;
    (min_sq_pivot(&chol) > 0.0).then_some(chol)
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Replaces `a` with `(a + aᵀ) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn select(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

pub fn dmatrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch { expected: ncols, got: bad.len() });
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn dmatrix_to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

pub fn row_vec(a: &DMatrix<f64>, i: usize) -> Vec<f64> {
    (0..a.ncols()).map(|j| a[(i, j)]).collect()
}

/// Serde adapter storing a `DMatrix` as row-major nested arrays.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::dmatrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::dmatrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for `DVector` as a flat array.
pub mod serde_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fallback_rescues_singular_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = factor_with_fallback(&a).unwrap();
        assert!(f.ridged);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(factor_with_fallback(&a).is_err());
    }

    #[test]
    fn ln_det_matches_product_of_eigenvalues() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = factor_with_fallback(&a).unwrap();
        assert!((f.ln_det() - (2.0_f64 - 0.25).ln()).abs() < 1e-14);
    }
}
