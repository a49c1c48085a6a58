//! Symmetric matrix functions through a full eigendecomposition.
//!
//! Every closed form in the crate is assembled from functions of one
//! symmetric matrix (square roots, hyperbolic pairs, inverses), so a
//! single `V diag(f(λ)) V'` evaluation covers all of them. Dimensions are
//! small (a handful of assets), which keeps this cheaper than
//! scaling-and-squaring schemes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated (and averaged away) on input.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest admissible eigenvalue relative to the largest.
pub const PD_TOL: f64 = 1e-12;
/// Smallest admissible singular value relative to the largest.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Dense real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Accepts `m` when its relative asymmetry is below [`SYMMETRY_TOL`],
    /// storing `(m + m') / 2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(m, SYMMETRY_TOL)
    }

    /// Like [`SymMatrix::new`] with a caller-chosen asymmetry tolerance; used
    /// for matrices produced by computation rather than supplied as input.
    pub fn with_tolerance(m: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("symmetric matrix"));
        }
        let asymmetry = relative_asymmetry(&m);
        if asymmetry > tol {
            return Err(Error::NotSymmetric { asymmetry });
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self(sym))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for row in rows {
            if row.len() != n {
                return Err(Error::NotSquare {
                    rows: n,
                    cols: row.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn scalar(x: f64) -> Self {
        Self(DMatrix::from_element(1, 1, x))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn scale(&self, k: f64) -> Self {
        Self(&self.0 * k)
    }

    pub fn eigen(&self) -> SymEigen {
        SymEigen::new(self)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().values.min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigen().values.max()
    }
}

fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).amax() / scale
}

/// Eigendecomposition `m = Q diag(values) Q'` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn new(m: &SymMatrix) -> Self {
        let eig = SymmetricEigen::new(m.as_matrix().clone());
        Self {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    /// `Q diag(f(λ_i)) Q'`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let q = &self.vectors;
        let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * f(self.values[j]));
        scaled * q.transpose()
    }

    pub fn map_sym(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let m = self.map(f);
        SymMatrix((&m + m.transpose()) * 0.5)
    }
}

/// Eigendecomposition of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactorization {
    eigen: SymEigen,
}

impl SpdFactorization {
    pub fn new(m: &SymMatrix) -> Result<Self> {
        let eigen = m.eigen();
        let max = eigen.values.max();
        let min = eigen.values.min();
        if !(max > 0.0) || min <= PD_TOL * max {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
                max_eigenvalue: max,
            });
        }
        Ok(Self { eigen })
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigen.values
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigen.vectors
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        self.eigen.map(f)
    }

    pub fn map_sym(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        self.eigen.map_sym(f)
    }

    pub fn sqrt(&self) -> SymMatrix {
        self.map_sym(f64::sqrt)
    }

    pub fn inv_sqrt(&self) -> SymMatrix {
        self.map_sym(|x| 1.0 / x.sqrt())
    }

    pub fn inverse(&self) -> SymMatrix {
        self.map_sym(|x| 1.0 / x)
    }
}

/// Symmetric square root of an SPD matrix.
pub fn sqrtm_spd(m: &SymMatrix) -> Result<SymMatrix> {
    Ok(SpdFactorization::new(m)?.sqrt())
}

/// `(cosh(d τ), sinh(d τ))` for symmetric `d` and `τ ≥ 0`.
pub fn cosh_sinh(d: &SymMatrix, tau: f64) -> Result<(SymMatrix, SymMatrix)> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::InvalidArgument(format!("tau must be finite and >= 0, got {tau}")));
    }
    let eig = d.eigen();
    let c = eig.map_sym(|x| (x * tau).cosh());
    let s = eig.map_sym(|x| (x * tau).sinh());
    if c.0.iter().chain(s.0.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("cosh/sinh (argument overflow)"));
    }
    Ok((c, s))
}

/// Singular-value condition estimate `σ_max / σ_min` (infinite when singular).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `a x = b`, refusing systems whose smallest singular value is below
/// [`SINGULAR_TOL`] times the largest. Returns the solution and the
/// condition estimate.
pub fn solve_guarded(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if b.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch {
            what: "right-hand side rows",
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("solve_guarded matrix"));
    }
    let condition = condition_number(a);
    if !(condition.is_finite() && condition * SINGULAR_TOL < 1.0) {
        return Err(Error::NearSingular { condition });
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or(Error::NearSingular { condition })?;
    Ok((x, condition))
}

/// Vector convenience wrapper around [`solve_guarded`].
pub fn solve_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let rhs = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let (x, _) = solve_guarded(a, &rhs)?;
    Ok(x.column(0).into_owned())
}
