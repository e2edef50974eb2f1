//! Spline bases, difference penalties, row tensor products and linear
//! constraint reparameterization.
//!
//! Coefficient ordering convention for all tensor products in this crate:
//! the x-index is slow and the t-index fast, matching
//! `row_tensor(phi_x, phi_t)` and the Kronecker sum
//! `lx * Px ⊗ I_Kt + lt * I_Kx ⊗ Pt` of [`tensor_penalty`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::real::{real, to_f64, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("evaluation point {value} outside the basis domain [{min}, {max}]")]
    OutOfDomain { value: f64, min: f64, max: f64 },
    #[error("need K > order, got K = {k} and order = {order}")]
    OrderTooLarge { k: usize, order: usize },
    #[error("row count mismatch: {left} vs {right}")]
    RowCountMismatch { left: usize, right: usize },
    #[error("constraint matrix is rank deficient")]
    RankDeficientConstraint,
    #[error("basis needs K >= degree + 1, got K = {k} with degree {degree}")]
    BasisTooSmall { k: usize, degree: usize },
    #[error("basis domain is degenerate: min == max")]
    DegenerateDomain,
}

/// Open-uniform B-spline basis: `K` functions of the given degree with
/// equally spaced interior knots and `degree + 1`-fold boundary knots.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis<T: Real> {
    knots: Vec<T>,
    degree: usize,
    k: usize,
}

impl<T: Real> SplineBasis<T> {
    /// Basis with `K` functions over `[min, max]`.
    pub fn uniform(min: T, max: T, k: usize, degree: usize) -> Result<Self, BasisError> {
        if max <= min {
            return Err(BasisError::DegenerateDomain);
        }
        if k < degree + 1 {
            return Err(BasisError::BasisTooSmall { k, degree });
        }
        let intervals = k - degree;
        let mut knots = Vec::with_capacity(k + degree + 1);
        for _ in 0..degree {
            knots.push(min);
        }
        for i in 0..=intervals {
            let frac = real::<T>(i as f64 / intervals as f64);
            knots.push(min + (max - min) * frac);
        }
        for _ in 0..degree {
            knots.push(max);
        }
        Ok(Self { knots, degree, k })
    }

    pub fn num_basis(&self) -> usize {
        self.k
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn min(&self) -> T {
        self.knots[0]
    }

    pub fn max(&self) -> T {
        self.knots[self.knots.len() - 1]
    }

    /// Evaluate the basis at the given points: rows are points, columns the
    /// `K` basis functions. Rows sum to one and have at most `degree + 1`
    /// nonzero entries.
    pub fn eval(&self, x: &[T]) -> Result<DMatrix<T>, BasisError> {
        let mut out = DMatrix::zeros(x.len(), self.k);
        for (row, &xi) in x.iter().enumerate() {
            if xi < self.min() || xi > self.max() {
                return Err(BasisError::OutOfDomain {
                    value: to_f64(xi),
                    min: to_f64(self.min()),
                    max: to_f64(self.max()),
                });
            }
            let span = self.find_span(xi);
            let vals = self.basis_funs(span, xi);
            for (j, v) in vals.iter().enumerate() {
                out[(row, span - self.degree + j)] = *v;
            }
        }
        Ok(out)
    }

    /// Index `i` with `knots[i] <= x < knots[i+1]`, clamped so the last
    /// domain point maps into the final interval.
    fn find_span(&self, x: T) -> usize {
        let last = self.k; // first index of the trailing boundary knots
        if x >= self.knots[last] {
            return last - 1;
        }
        let mut lo = self.degree;
        let mut hi = last;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// The `degree + 1` nonzero basis values at `x` (de Boor's algorithm).
    fn basis_funs(&self, span: usize, x: T) -> Vec<T> {
        let d = self.degree;
        let mut vals = vec![T::zero(); d + 1];
        let mut left = vec![T::zero(); d + 1];
        let mut right = vec![T::zero(); d + 1];
        vals[0] = T::one();
        for j in 1..=d {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = T::zero();
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = vals[r] / denom;
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        vals
    }
}

/// Symmetric positive semidefinite penalty with known null-space dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix<T: Real> {
    matrix: DMatrix<T>,
    order: usize,
}

impl<T: Real> PenaltyMatrix<T> {
    /// Wrap a symmetric PSD matrix whose null space has dimension `order`.
    pub fn new(matrix: DMatrix<T>, order: usize) -> Self {
        debug_assert_eq!(matrix.nrows(), matrix.ncols());
        Self { matrix, order }
    }

    pub fn zero(k: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(k, k),
            order: k,
        }
    }

    pub fn identity(k: usize) -> Self {
        Self {
            matrix: DMatrix::identity(k, k),
            order: 0,
        }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Difference penalty `D^T D` with `D` the order-th difference operator, so
/// `theta' P theta = Σ (Δ^order theta)^2`.
pub fn difference_penalty<T: Real>(k: usize, order: usize) -> Result<PenaltyMatrix<T>, BasisError> {
    if order == 0 || k <= order {
        return Err(BasisError::OrderTooLarge { k, order });
    }
    let mut d = DMatrix::<T>::identity(k, k);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        let mut next = DMatrix::zeros(rows, k);
        for i in 0..rows {
            for j in 0..k {
                next[(i, j)] = d[(i + 1, j)] - d[(i, j)];
            }
        }
        d = next;
    }
    Ok(PenaltyMatrix::new(d.transpose() * &d, order))
}

/// Row tensor product: row `i` of the result is `kron(row_i(A), row_i(B))`.
pub fn row_tensor<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>, BasisError> {
    if a.nrows() != b.nrows() {
        return Err(BasisError::RowCountMismatch {
            left: a.nrows(),
            right: b.nrows(),
        });
    }
    let (h, na, nb) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(h, na * nb);
    for i in 0..h {
        for j in 0..na {
            let aij = a[(i, j)];
            if aij == T::zero() {
                continue;
            }
            for k in 0..nb {
                out[(i, j * nb + k)] = aij * b[(i, k)];
            }
        }
    }
    Ok(out)
}

/// Kronecker-sum tensor penalty `lx * Px ⊗ I_Kt + lt * I_Kx ⊗ Pt` for the
/// x-slow / t-fast coefficient ordering.
pub fn tensor_penalty<T: Real>(
    px: &PenaltyMatrix<T>,
    pt: &PenaltyMatrix<T>,
    lx: T,
    lt: T,
) -> DMatrix<T> {
    let kx = px.dim();
    let kt = pt.dim();
    let ix = DMatrix::<T>::identity(kx, kx);
    let it = DMatrix::<T>::identity(kt, kt);
    px.matrix().kronecker(&it) * lx + ix.kronecker(pt.matrix()) * lt
}

/// Reparameterization of a linear constraint `C theta = 0`:
/// `theta = Z theta_tilde` with `C Z = 0` and orthonormal `Z`.
#[derive(Debug, Clone)]
pub struct ConstraintMap<T: Real> {
    z: DMatrix<T>,
    c: DMatrix<T>,
}

impl<T: Real> ConstraintMap<T> {
    pub fn z(&self) -> &DMatrix<T> {
        &self.z
    }

    pub fn constraint(&self) -> &DMatrix<T> {
        &self.c
    }
}

/// Orthonormal null-space basis of a full-row-rank constraint matrix,
/// computed from the symmetric projector `I - C'(CC')^{-1}C`. Column signs
/// are fixed by making each column's largest-magnitude entry positive.
pub fn constraint_nullspace<T: Real>(c: &DMatrix<T>) -> Result<ConstraintMap<T>, BasisError> {
    let rows = c.nrows();
    let k = c.ncols();
    if rows >= k {
        return Err(BasisError::RankDeficientConstraint);
    }
    let gram = c * c.transpose();
    // Cholesky alone can slip past an exactly singular Gram matrix, so gate
    // on its eigenvalue spread first
    let gram_eigs = gram.clone().symmetric_eigen().eigenvalues;
    let (mut lo, mut hi) = (gram_eigs[0], gram_eigs[0]);
    for &e in gram_eigs.iter() {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    if to_f64(lo) < 1e-10 * to_f64(hi).max(f64::MIN_POSITIVE) {
        return Err(BasisError::RankDeficientConstraint);
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(BasisError::RankDeficientConstraint)?;
    let solve = chol.solve(c); // (CC')^{-1} C
    let projector = DMatrix::identity(k, k) - c.transpose() * solve;
    let eig = projector.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });
    let keep = k - rows;
    // eigenvalue of the projector must be ~1 on the kept subspace
    if to_f64(eig.eigenvalues[order[keep - 1]]) < 0.5 {
        return Err(BasisError::RankDeficientConstraint);
    }
    let mut z = DMatrix::zeros(k, keep);
    for (col, &idx) in order[..keep].iter().enumerate() {
        let mut v: DVector<T> = eig.eigenvectors.column(idx).into();
        let mut max_abs = T::zero();
        let mut max_sign = T::one();
        for &e in v.iter() {
            if e.abs() > max_abs {
                max_abs = e.abs();
                max_sign = if e >= T::zero() { T::one() } else { -T::one() };
            }
        }
        v *= max_sign;
        z.set_column(col, &v);
    }
    Ok(ConstraintMap { z, c: c.clone() })
}
