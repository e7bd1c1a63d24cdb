//! Dense symmetric and symmetric positive definite (SPD) linear algebra:
//! Cholesky, symmetric eigendecomposition, spectral powers, the geodesic
//! `A ♯_t B` on the SPD manifold, the affine-invariant Riemannian distance
//! and the symmetrized LogDet divergence.
//!
//! Every result that is mathematically symmetric is passed through
//! [`symmetrize`] before it is returned.

mod dense;
mod eigen;

use std::ops::Deref;

use crate::error::{Error, Result};

pub use dense::{rel_frobenius_diff, Matrix};
pub use eigen::EigenDecomposition;

/// Relative spectral floor for positive definiteness: an SPD matrix must
/// have `λ_min > SPD_TOLERANCE · λ_max`.
pub const SPD_TOLERANCE: f64 = 1e-12;

/// A square matrix that is exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    inner: Matrix,
}

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Result<SymMatrix> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if m.rows() == 0 {
        return Err(Error::InvalidLength {
            expected: 1,
            found: 0,
        });
    }
    Ok(SymMatrix {
        inner: symmetrized(m.clone()),
    })
}

fn symmetrized(mut m: Matrix) -> Matrix {
    let n = m.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

impl SymMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        if m.rows() == 0 {
            return Err(Error::InvalidLength {
                expected: 1,
                found: 0,
            });
        }
        Ok(Self {
            inner: symmetrized(m),
        })
    }

    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Matrix::from_row_major(dim, dim, data)?)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            inner: Matrix::identity(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            inner: Matrix::zeros(dim, dim),
        }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        Self {
            inner: Matrix::from_diag(diag),
        }
    }

    /// Internal constructor for values already known to be square.
    fn from_square(m: Matrix) -> Self {
        debug_assert!(m.is_square());
        Self {
            inner: symmetrized(m),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    #[inline]
    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix {
        self.inner
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.frobenius_norm()
    }

    fn check_dim(&self, other: &SymMatrix) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    pub fn add(&self, rhs: &SymMatrix) -> Result<SymMatrix> {
        self.check_dim(rhs)?;
        Ok(Self::from_square(self.inner.add(&rhs.inner)?))
    }

    pub fn sub(&self, rhs: &SymMatrix) -> Result<SymMatrix> {
        self.check_dim(rhs)?;
        Ok(Self::from_square(self.inner.sub(&rhs.inner)?))
    }

    pub fn scale(&self, alpha: f64) -> SymMatrix {
        Self {
            inner: self.inner.scale(alpha),
        }
    }

    /// Frobenius inner product `tr(self · rhs)`.
    pub fn inner_product(&self, rhs: &SymMatrix) -> Result<f64> {
        self.check_dim(rhs)?;
        Ok(self
            .inner
            .as_slice()
            .iter()
            .zip(rhs.inner.as_slice())
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Quadratic form `uᵀ M u`.
    pub fn quadratic_form(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: u.len(),
            });
        }
        let mv = self.inner.mul_vec(u)?;
        Ok(mv.iter().zip(u).map(|(a, b)| a * b).sum())
    }

    pub fn eigen(&self) -> Result<EigenDecomposition> {
        sym_eigen(self)
    }

    /// Eigenvalues in ascending order, without eigenvectors.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        eigen::symmetric_eigenvalues(&self.inner)
    }

    /// True when `λ_min ≥ −tol · max(|λ_max|, |λ_min|)`.
    pub fn is_psd(&self, tol: f64) -> Result<bool> {
        let ev = self.eigenvalues()?;
        let lo = ev[0];
        let hi = ev[ev.len() - 1].abs().max(lo.abs());
        Ok(lo >= -tol * hi)
    }
}

/// Symmetric positive definite matrix with its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    sym: SymMatrix,
    chol: Matrix,
}

impl Deref for SpdMatrix {
    type Target = SymMatrix;

    fn deref(&self) -> &SymMatrix {
        &self.sym
    }
}

impl SpdMatrix {
    /// Validates `sym` as SPD: the Cholesky factorization must succeed and
    /// the spectrum must satisfy `λ_min > SPD_TOLERANCE · λ_max`.
    pub fn new(sym: SymMatrix) -> Result<Self> {
        if !sym.as_matrix().is_finite() {
            return Err(Error::NotPositiveDefinite("non-finite entries".into()));
        }
        let chol = cholesky_factor(&sym)?;
        let ev = sym.eigenvalues()?;
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        if !(lo > SPD_TOLERANCE * hi) {
            return Err(Error::NotPositiveDefinite(format!(
                "eigenvalue ratio {lo:e}/{hi:e} below tolerance {SPD_TOLERANCE:e}"
            )));
        }
        Ok(Self { sym, chol })
    }

    pub fn from_matrix(m: Matrix) -> Result<Self> {
        Self::new(SymMatrix::new(m)?)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            sym: SymMatrix::identity(dim),
            chol: Matrix::identity(dim),
        }
    }

    /// # Panics
    /// Panics if any entry is not strictly positive.
    pub fn from_diag(diag: &[f64]) -> Self {
        assert!(diag.iter().all(|&v| v > 0.0), "diagonal must be positive");
        let chol = Matrix::from_diag(&diag.iter().map(|v| v.sqrt()).collect::<Vec<_>>());
        Self {
            sym: SymMatrix::from_diag(diag),
            chol,
        }
    }

    /// Accepts a computed result that is SPD in exact arithmetic; only the
    /// Cholesky pivots are checked.
    pub(crate) fn from_computed(sym: SymMatrix) -> Result<Self> {
        let chol = cholesky_factor(&sym)?;
        Ok(Self { sym, chol })
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.sym
    }

    pub fn into_sym(self) -> SymMatrix {
        self.sym
    }

    /// Lower-triangular `L` with `L Lᵀ = self`.
    pub fn cholesky(&self) -> &Matrix {
        &self.chol
    }

    /// Inverse via the Cholesky factor: `A⁻¹ = L⁻ᵀ L⁻¹`.
    pub fn inverse(&self) -> Result<SpdMatrix> {
        let n = self.dim();
        let linv = solve_lower(&self.chol, &Matrix::identity(n));
        let inv = gram_transpose(&linv);
        SpdMatrix::from_computed(SymMatrix::from_square(inv))
    }

    pub fn power(&self, t: f64) -> Result<SpdMatrix> {
        spd_power(self, t)
    }

    pub fn dim(&self) -> usize {
        self.sym.dim()
    }
}

/// Cholesky factor of an SPD matrix.
pub fn cholesky(a: &SpdMatrix) -> Matrix {
    a.chol.clone()
}

/// Lower-triangular Cholesky factor of a symmetric matrix; fails with
/// `NotPositiveDefinite` when any pivot is not strictly positive.
pub fn cholesky_factor(a: &SymMatrix) -> Result<Matrix> {
    let n = a.dim();
    let m = a.as_matrix();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "Cholesky pivot {j} is {diag:e}"
            )));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            let (ri, rj) = (l.row(i), l.row(j));
            for k in 0..j {
                s -= ri[k] * rj[k];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L X = B` for lower-triangular `L`, row by row.
fn solve_lower(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let cols = b.cols();
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            if lik == 0.0 {
                continue;
            }
            for c in 0..cols {
                let v = x[(k, c)];
                x[(i, c)] -= lik * v;
            }
        }
        let lii = l[(i, i)];
        for c in 0..cols {
            x[(i, c)] /= lii;
        }
    }
    x
}

/// `Xᵀ X`, filled symmetrically.
fn gram_transpose(x: &Matrix) -> Matrix {
    let n = x.cols();
    let mut out = Matrix::zeros(n, n);
    for k in 0..x.rows() {
        let row = x.row(k);
        for i in 0..n {
            let xi = row[i];
            if xi == 0.0 {
                continue;
            }
            for j in i..n {
                out[(i, j)] += xi * row[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            out[(i, j)] = out[(j, i)];
        }
    }
    out
}

/// `W diag(f) Wᵀ`, filled symmetrically.
fn scaled_gram(w: &Matrix, f: &[f64]) -> Matrix {
    let n = w.rows();
    let mut out = Matrix::zeros(n, n);
    let mut scaled = vec![0.0; w.cols()];
    for i in 0..n {
        for (s, (&wik, &fk)) in scaled.iter_mut().zip(w.row(i).iter().zip(f)) {
            *s = wik * fk;
        }
        for j in i..n {
            let v: f64 = scaled.iter().zip(w.row(j)).map(|(a, b)| a * b).sum();
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// `L⁻¹ B L⁻ᵀ` for symmetric `B`, symmetrized.
fn whiten(l: &Matrix, b: &SymMatrix) -> SymMatrix {
    let x = solve_lower(l, b.as_matrix());
    SymMatrix::from_square(solve_lower(l, &x.transpose()))
}

pub fn sym_eigen(m: &SymMatrix) -> Result<EigenDecomposition> {
    eigen::symmetric_eigen(m.as_matrix())
}

/// `A^t = V diag(λᵢ^t) Vᵀ`. `t = 0` returns the identity exactly.
pub fn spd_power(a: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    if !t.is_finite() {
        return Err(Error::param("t", format!("exponent must be finite, got {t}")));
    }
    if t == 0.0 {
        return Ok(SpdMatrix::identity(a.dim()));
    }
    if t == 1.0 {
        return Ok(a.clone());
    }
    let eig = a.eigen()?;
    if eig.values[0] <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "eigenvalue {:e} in power",
            eig.values[0]
        )));
    }
    let p = eig.reconstruct_with(|l| l.powf(t));
    SpdMatrix::from_computed(SymMatrix::from_square(p))
}

fn check_same_dim(a: &SymMatrix, b: &SymMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// The geodesic from `a` to `b`, factored once so that any number of points
/// on it can be evaluated cheaply.
///
/// With `A = L Lᵀ` and `L⁻¹ B L⁻ᵀ = V Λ Vᵀ`, the point at `t` is
/// `(L V) Λ^t (L V)ᵀ`. For a symmetric whitened matrix the Schur form is the
/// eigendecomposition, so this is the Cholesky–Schur method.
#[derive(Debug, Clone)]
pub struct GeodesicPath {
    start: SpdMatrix,
    end: SpdMatrix,
    basis: Matrix,
    spectrum: Vec<f64>,
}

impl GeodesicPath {
    pub fn new(a: &SpdMatrix, b: &SpdMatrix) -> Result<Self> {
        check_same_dim(a, b)?;
        let l = a.cholesky();
        let m = whiten(l, b);
        let eig = m.eigen()?;
        if eig.values[0] <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "whitened endpoint has eigenvalue {:e}",
                eig.values[0]
            )));
        }
        let basis = l.matmul(&eig.vectors)?;
        Ok(Self {
            start: a.clone(),
            end: b.clone(),
            basis,
            spectrum: eig.values,
        })
    }

    /// Point `A ♯_t B` for `t ∈ [0, 1]`; the endpoints are returned exactly.
    pub fn point(&self, t: f64) -> Result<SpdMatrix> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::param("t", format!("must lie in [0, 1], got {t}")));
        }
        if t == 0.0 {
            return Ok(self.start.clone());
        }
        if t == 1.0 {
            return Ok(self.end.clone());
        }
        let f: Vec<f64> = self.spectrum.iter().map(|l| l.powf(t)).collect();
        SpdMatrix::from_computed(SymMatrix::from_square(scaled_gram(&self.basis, &f)))
    }

    /// Eigenvalues of `A^{-1/2} B A^{-1/2}`, ascending.
    pub fn relative_spectrum(&self) -> &[f64] {
        &self.spectrum
    }
}

/// `A ♯_t B = A^{1/2} (A^{-1/2} B A^{-1/2})^t A^{1/2}` for `t ∈ [0, 1]`.
pub fn geodesic(a: &SpdMatrix, b: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::param("t", format!("must lie in [0, 1], got {t}")));
    }
    check_same_dim(a, b)?;
    if t == 0.0 {
        return Ok(a.clone());
    }
    if t == 1.0 {
        return Ok(b.clone());
    }
    GeodesicPath::new(a, b)?.point(t)
}

/// Affine-invariant distance `‖log(Y^{-1/2} X Y^{-1/2})‖_F`.
pub fn riemannian_distance(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    check_same_dim(x, y)?;
    let m = whiten(y.cholesky(), x);
    let ev = m.eigenvalues()?;
    if ev[0] <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "relative eigenvalue {:e}",
            ev[0]
        )));
    }
    Ok(ev.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
}

/// Symmetrized LogDet divergence `tr(A A0⁻¹) + tr(A⁻¹ A0) − 2d`.
pub fn sld_divergence(a: &SpdMatrix, a0: &SpdMatrix) -> Result<f64> {
    check_same_dim(a, a0)?;
    let d = a.dim() as f64;
    let forward = a.inner_product(a0.inverse()?.as_sym())?;
    let backward = a.inverse()?.inner_product(a0)?;
    Ok((forward + backward - 2.0 * d).max(0.0))
}

/// Strict Loewner order: `a ≺ b` iff `b − a` is positive definite.
pub fn loewner_less(a: &SymMatrix, b: &SymMatrix) -> Result<bool> {
    check_same_dim(a, b)?;
    let ev = b.sub(a)?.eigenvalues()?;
    Ok(ev[0] > 0.0)
}
