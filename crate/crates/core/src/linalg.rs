//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest accepted ratio between extreme eigenvalues (or singular values).
pub const MAX_CONDITION: f64 = 1e12;

/// A validated symmetric positive-definite matrix together with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct Spd {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Spd {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotPositiveDefinite(format!(
                "{}x{} matrix is not square",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.nrows() == 0 {
            return Err(Error::NotPositiveDefinite("empty matrix".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entry".into()));
        }
        let scale = matrix.amax().max(1.0);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-9 * scale {
            return Err(Error::NotPositiveDefinite(format!("asymmetry {asym:e}")));
        }
        let matrix = symmetrize(&matrix);
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        if chol.l_dirty().diagonal().iter().any(|&d| !(d > 0.0)) {
            return Err(Error::NotPositiveDefinite("non-positive factor diagonal".into()));
        }
        let cond = spd_condition(&matrix);
        if !(cond <= MAX_CONDITION) {
            return Err(Error::NotPositiveDefinite(format!("condition estimate {cond:e} exceeds {MAX_CONDITION:e}")));
        }
        Ok(Spd { matrix, chol })
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Spd::new(DMatrix::from_element(1, 1, value))
    }

    pub fn identity(dim: usize) -> Self {
        Spd::new(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower-triangular Cholesky factor.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `vᵀ M⁻¹ v` through one triangular solve.
    pub fn inv_quad_form(&self, v: &DVector<f64>) -> f64 {
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal");
        z.norm_squared()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.matrix[(i, j)] == 0.0))
    }
}

impl PartialEq for Spd {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Ratio of extreme singular values; infinite for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// A symmetric square root `S` with `S Sᵀ = M` for a positive semi-definite `M`.
///
/// Used by the simulators, where zero noise is a legitimate input.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::invalid("covariance must be square"));
    }
    let m = symmetrize(m);
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(m);
    let tol = 1e-12 * eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return Err(Error::NotPositiveDefinite("covariance has a negative eigenvalue".into()));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}
