//! Small dense complex linear algebra: products with adjoints and a Hermitian
//! Cholesky factorization with multi-right-hand-side solves.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::{czero, Cx, Real};

/// Conjugate transpose.
pub fn adjoint<T: Real>(a: ArrayView2<'_, Cx<T>>) -> Array2<Cx<T>> {
    a.t().mapv(|z| z.conj())
}

/// `aᴴ · b` without materializing the adjoint.
pub fn adjoint_mul<T: Real>(a: ArrayView2<'_, Cx<T>>, b: ArrayView2<'_, Cx<T>>) -> Array2<Cx<T>> {
    assert_eq!(a.nrows(), b.nrows(), "adjoint_mul: row counts differ");
    let (rows, cols) = (a.ncols(), b.ncols());
    let mut out = Array2::from_elem((rows, cols), czero());
    for r in 0..a.nrows() {
        for i in 0..rows {
            let ai = a[[r, i]].conj();
            if ai.re == T::zero() && ai.im == T::zero() {
                continue;
            }
            for j in 0..cols {
                out[[i, j]] += ai * b[[r, j]];
            }
        }
    }
    out
}

/// Plain product `a · b`.
pub fn matmul<T: Real>(a: ArrayView2<'_, Cx<T>>, b: ArrayView2<'_, Cx<T>>) -> Array2<Cx<T>> {
    assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimensions differ");
    let (rows, inner, cols) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = Array2::from_elem((rows, cols), czero());
    for i in 0..rows {
        for k in 0..inner {
            let aik = a[[i, k]];
            if aik.re == T::zero() && aik.im == T::zero() {
                continue;
            }
            for j in 0..cols {
                out[[i, j]] += aik * b[[k, j]];
            }
        }
    }
    out
}

/// Lower-triangular factor `L` with `A = L·Lᴴ` and a real positive diagonal.
#[derive(Debug, Clone)]
pub struct Cholesky<T: Real> {
    lower: Array2<Cx<T>>,
}

impl<T: Real> Cholesky<T> {
    /// Factors a Hermitian positive definite matrix. Only the lower triangle is read.
    pub fn factor(a: ArrayView2<'_, Cx<T>>) -> Result<Self> {
        Self::factor_with_tolerance(a, T::zero())
    }

    /// As [`Cholesky::factor`], but a pivot at or below
    /// `rel_tol · max|diag(A)|` counts as a rank deficiency.
    pub fn factor_with_tolerance(a: ArrayView2<'_, Cx<T>>, rel_tol: T) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "cholesky of non-square {}x{}",
                n,
                a.ncols()
            )));
        }
        let scale = (0..n).map(|i| a[[i, i]].re.abs()).fold(T::zero(), T::max);
        let tiny = scale * rel_tol;
        let mut l = Array2::from_elem((n, n), czero());
        for j in 0..n {
            let mut d = a[[j, j]].re;
            for k in 0..j {
                d -= l[[j, k]].norm_sqr();
            }
            if !(d > tiny) || !d.is_finite() {
                return Err(Error::NumericalFailure(format!(
                    "matrix not positive definite at pivot {j}"
                )));
            }
            let djj = d.sqrt();
            l[[j, j]] = Cx::new(djj, T::zero());
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]].conj();
                }
                l[[i, j]] = s / djj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Array2<Cx<T>> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Solves `A·X = B` for every column of `B`.
    pub fn solve(&self, b: ArrayView2<'_, Cx<T>>) -> Array2<Cx<T>> {
        let n = self.dim();
        assert_eq!(b.nrows(), n, "cholesky solve: rhs rows differ");
        let l = &self.lower;
        let mut x = b.to_owned();
        for col in 0..x.ncols() {
            // L·y = b
            for i in 0..n {
                let mut s = x[[i, col]];
                for k in 0..i {
                    s -= l[[i, k]] * x[[k, col]];
                }
                x[[i, col]] = s / l[[i, i]].re;
            }
            // Lᴴ·x = y
            for i in (0..n).rev() {
                let mut s = x[[i, col]];
                for k in (i + 1)..n {
                    s -= l[[k, i]].conj() * x[[k, col]];
                }
                x[[i, col]] = s / l[[i, i]].re;
            }
        }
        x
    }
}

/// Wiener smoother `R·(R + σ²I)⁻¹` for a Hermitian PSD `R`.
pub fn wiener_matrix<T: Real>(cov: ArrayView2<'_, Cx<T>>, noise_var: T) -> Result<Array2<Cx<T>>> {
    let n = cov.nrows();
    let mut reg = cov.to_owned();
    for i in 0..n {
        reg[[i, i]].re += noise_var;
    }
    // R and R+σ²I are Hermitian, so R·(R+σ²I)⁻¹ = ((R+σ²I)⁻¹·R)ᴴ.
    let solved = Cholesky::factor(reg.view())?.solve(cov);
    Ok(adjoint(solved.view()))
}
