//! Aitchison geometry of finite compositions.
//!
//! A composition is a vector of `D` strictly positive parts summing to a
//! closure constant `kappa`. The simplex with perturbation and powering is a
//! `(D-1)`-dimensional Euclidean space; `clr` maps it isometrically onto the
//! zero-sum hyperplane of `R^D` and `ilr` (pivot coordinates) onto `R^{D-1}`.
//!
//! Tolerances used by the constructors:
//! * composition parts must sum to `kappa` within relative [`COMP_SUM_RTOL`],
//! * clr coordinates must sum to zero within absolute [`CLR_SUM_ATOL`],
//! * [`clr_inv`] re-centres inputs whose coordinate sum deviates by up to
//!   [`CLR_INV_RECENTER_ATOL`] and rejects anything larger.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::real::{real, to_f64, Real};

/// Relative tolerance for the closure invariant `sum(parts) == kappa`.
pub const COMP_SUM_RTOL: f64 = 1e-10;
/// Absolute tolerance for the zero-sum invariant of clr coordinates.
pub const CLR_SUM_ATOL: f64 = 1e-10;
/// Largest clr coordinate-sum deviation that [`clr_inv`] silently re-centres.
pub const CLR_INV_RECENTER_ATOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error("part {index} is not strictly positive (value {value})")]
    NonPositivePart { index: usize, value: f64 },
    #[error("composition dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("a composition needs at least 2 parts, got {0}")]
    TooFewParts(usize),
    #[error("closure constant must be positive, got {0}")]
    NonPositiveKappa(f64),
    #[error("parts sum to {sum} but kappa is {kappa}")]
    ClosureViolated { sum: f64, kappa: f64 },
    #[error("clr coordinates sum to {sum}, beyond the accepted tolerance {tol}")]
    NotCentred { sum: f64, tol: f64 },
}

/// A point on the simplex `S^D`: strictly positive parts summing to `kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition<T: Real> {
    parts: DVector<T>,
    kappa: T,
}

/// Image of a composition under the centred log-ratio transform; coordinates
/// sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrVector<T: Real> {
    coords: DVector<T>,
}

/// Pivot-coordinate ilr image of a composition, `D-1` unconstrained reals.
///
/// The basis is fixed to the pivot system; see [`pivot_contrast_matrix`] for
/// the clr-plane representation of that basis.
#[derive(Debug, Clone, PartialEq)]
pub struct IlrVector<T: Real> {
    coords: DVector<T>,
}

impl<T: Real> Composition<T> {
    /// Validate an already-closed vector of parts.
    pub fn new(parts: DVector<T>, kappa: T) -> Result<Self, SimplexError> {
        if parts.len() < 2 {
            return Err(SimplexError::TooFewParts(parts.len()));
        }
        if kappa <= T::zero() {
            return Err(SimplexError::NonPositiveKappa(to_f64(kappa)));
        }
        check_positive(&parts)?;
        let sum = parts.sum();
        if (sum - kappa).abs() > kappa * real(COMP_SUM_RTOL) {
            return Err(SimplexError::ClosureViolated {
                sum: to_f64(sum),
                kappa: to_f64(kappa),
            });
        }
        Ok(Self { parts, kappa })
    }

    /// The neutral element of perturbation: all parts equal to `kappa / D`.
    pub fn uniform(dim: usize, kappa: T) -> Result<Self, SimplexError> {
        if dim < 2 {
            return Err(SimplexError::TooFewParts(dim));
        }
        if kappa <= T::zero() {
            return Err(SimplexError::NonPositiveKappa(to_f64(kappa)));
        }
        let part = kappa / real::<T>(dim as f64);
        Ok(Self {
            parts: DVector::from_element(dim, part),
            kappa,
        })
    }

    pub fn parts(&self) -> &DVector<T> {
        &self.parts
    }

    pub fn kappa(&self) -> T {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.parts.len()
    }
}

impl<T: Real> ClrVector<T> {
    pub fn new(coords: DVector<T>) -> Result<Self, SimplexError> {
        let sum = coords.sum();
        if sum.abs() > real(CLR_SUM_ATOL) {
            return Err(SimplexError::NotCentred {
                sum: to_f64(sum),
                tol: CLR_SUM_ATOL,
            });
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &DVector<T> {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

impl<T: Real> IlrVector<T> {
    pub fn new(coords: DVector<T>) -> Self {
        Self { coords }
    }

    pub fn coords(&self) -> &DVector<T> {
        &self.coords
    }

    /// Dimension `D` of the composition this vector refers to.
    pub fn composition_dim(&self) -> usize {
        self.coords.len() + 1
    }
}

fn check_positive<T: Real>(v: &DVector<T>) -> Result<(), SimplexError> {
    for (index, &value) in v.iter().enumerate() {
        if value <= T::zero() {
            return Err(SimplexError::NonPositivePart {
                index,
                value: to_f64(value),
            });
        }
    }
    Ok(())
}

/// Closure operator: rescale a positive vector so its parts sum to `kappa`.
pub fn closure<T: Real>(v: &DVector<T>, kappa: T) -> Result<Composition<T>, SimplexError> {
    if v.len() < 2 {
        return Err(SimplexError::TooFewParts(v.len()));
    }
    if kappa <= T::zero() {
        return Err(SimplexError::NonPositiveKappa(to_f64(kappa)));
    }
    check_positive(v)?;
    let sum = v.sum();
    let parts = v.map(|x| kappa * x / sum);
    Ok(Composition { parts, kappa })
}

/// Closure with zero replacement: entries `<= 0` are replaced by `eps * kappa`
/// before closing. Off by default everywhere; exposed for the explicit
/// `--zero-replace` preprocessing flag.
pub fn closure_replacing_zeros<T: Real>(
    v: &DVector<T>,
    kappa: T,
    eps: T,
) -> Result<Composition<T>, SimplexError> {
    let replaced = v.map(|x| if x <= T::zero() { eps * kappa } else { x });
    closure(&replaced, kappa)
}

/// Perturbation `x ⊕ y`: closed componentwise product.
pub fn perturb<T: Real>(
    x: &Composition<T>,
    y: &Composition<T>,
) -> Result<Composition<T>, SimplexError> {
    if x.dim() != y.dim() {
        return Err(SimplexError::DimensionMismatch {
            left: x.dim(),
            right: y.dim(),
        });
    }
    let prod = x.parts.component_mul(&y.parts);
    closure(&prod, x.kappa)
}

/// Powering `alpha ⊙ x`: closed componentwise power.
pub fn power<T: Real>(alpha: T, x: &Composition<T>) -> Composition<T> {
    let powered = x.parts.map(|p| p.powf(alpha));
    closure(&powered, x.kappa).expect("powering preserves positivity")
}

/// Aitchison inner product `(2D)^{-1} Σ_d Σ_j log(x_d/x_j) log(y_d/y_j)`.
pub fn aitchison_inner<T: Real>(
    x: &Composition<T>,
    y: &Composition<T>,
) -> Result<T, SimplexError> {
    if x.dim() != y.dim() {
        return Err(SimplexError::DimensionMismatch {
            left: x.dim(),
            right: y.dim(),
        });
    }
    let d = x.dim();
    let mut acc = T::zero();
    for a in 0..d {
        for b in 0..d {
            let lx = (x.parts[a] / x.parts[b]).ln();
            let ly = (y.parts[a] / y.parts[b]).ln();
            acc += lx * ly;
        }
    }
    Ok(acc / real::<T>(2.0 * d as f64))
}

/// Aitchison norm `sqrt(<x,x>_A)`.
pub fn aitchison_norm<T: Real>(x: &Composition<T>) -> T {
    aitchison_inner(x, x).expect("same dimension").sqrt()
}

/// Centred log-ratio transform: `clr_d = log(x_d / m(x))` with `m` the
/// geometric mean. Output sums to zero by construction.
pub fn clr<T: Real>(x: &Composition<T>) -> ClrVector<T> {
    let logs = x.parts.map(|p| p.ln());
    let mean = logs.sum() / real::<T>(x.dim() as f64);
    let mut coords = logs.map(|l| l - mean);
    // kill the last bits of rounding so the zero-sum invariant is exact
    let residual = coords.sum() / real::<T>(x.dim() as f64);
    coords.apply(|c| *c -= residual);
    ClrVector { coords }
}

/// Inverse clr: exponentiate and close. Coordinates whose sum deviates from
/// zero by up to [`CLR_INV_RECENTER_ATOL`] are re-centred first.
pub fn clr_inv<T: Real>(u: &DVector<T>, kappa: T) -> Result<Composition<T>, SimplexError> {
    let sum = u.sum();
    if sum.abs() > real(CLR_INV_RECENTER_ATOL) {
        return Err(SimplexError::NotCentred {
            sum: to_f64(sum),
            tol: CLR_INV_RECENTER_ATOL,
        });
    }
    let mean = sum / real::<T>(u.len() as f64);
    let exps = u.map(|c| (c - mean).exp());
    closure(&exps, kappa)
}

/// Pivot-coordinate ilr transform (the scaled logit for `D = 2`).
pub fn ilr_pivot<T: Real>(x: &Composition<T>) -> IlrVector<T> {
    let d = x.dim();
    let logs: Vec<T> = x.parts.iter().map(|p| p.ln()).collect();
    let mut coords = DVector::zeros(d - 1);
    // suffix sums of logs give the log geometric mean of the trailing block
    let mut suffix = T::zero();
    let mut suffix_sums = vec![T::zero(); d];
    for j in (0..d).rev() {
        suffix += logs[j];
        suffix_sums[j] = suffix;
    }
    for j in 0..d - 1 {
        let tail = real::<T>((d - 1 - j) as f64);
        let scale = (tail / (tail + T::one())).sqrt();
        let tail_mean = (suffix_sums[j + 1]) / tail;
        coords[j] = scale * (logs[j] - tail_mean);
    }
    IlrVector { coords }
}

/// Inverse pivot ilr: reconstructs the composition up to closure.
pub fn ilr_pivot_inv<T: Real>(z: &IlrVector<T>, kappa: T) -> Composition<T> {
    let d = z.composition_dim();
    let v = pivot_contrast_matrix::<T>(d);
    let clr_coords = &v * z.coords();
    let exps = clr_coords.map(|c| c.exp());
    closure(&exps, kappa).expect("exponentials are positive")
}

/// Orthonormal pivot basis `V` (`D x D-1`) with `clr(x) = V * ilr(x)`.
/// Columns sum to zero and satisfy `V^T V = I`.
pub fn pivot_contrast_matrix<T: Real>(d: usize) -> DMatrix<T> {
    assert!(d >= 2, "pivot basis needs D >= 2");
    let mut v = DMatrix::zeros(d, d - 1);
    for j in 0..d - 1 {
        let tail = real::<T>((d - 1 - j) as f64);
        let scale = (tail / (tail + T::one())).sqrt();
        v[(j, j)] = scale;
        for k in j + 1..d {
            v[(k, j)] = -scale / tail;
        }
    }
    v
}

/// Simplicial gradient: the inverse-ilr of regression coefficients. It is the
/// perturbation direction of maximal predictor increase.
pub fn simplicial_gradient<T: Real>(beta: &IlrVector<T>, kappa: T) -> Composition<T> {
    ilr_pivot_inv(beta, kappa)
}

/// Multiplicative response change `alpha^clr_j(b)` under a log link when the
/// relative ratio of part `j` changes by factor `alpha`.
pub fn relative_ratio_effect<T: Real>(clr_b_j: T, alpha: T) -> T {
    assert!(alpha > T::zero(), "ratio change factor must be positive");
    alpha.powf(clr_b_j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn comp(parts: &[f64]) -> Composition<f64> {
        closure(&DVector::from_row_slice(parts), 1.0).unwrap()
    }

    fn random_comp(rng: &mut StdRng, d: usize) -> Composition<f64> {
        let v = DVector::from_fn(d, |_, _| rng.gen_range(0.05..1.0f64));
        closure(&v, 1.0).unwrap()
    }

    #[test]
    fn closure_basic() {
        let c = comp(&[1.0, 1.0, 1.0, 1.0]);
        for p in c.parts().iter() {
            assert_relative_eq!(*p, 0.25);
        }
        let c = comp(&[2.0, 1.0, 1.0]);
        assert_relative_eq!(c.parts()[0], 0.5);
        assert_relative_eq!(c.parts()[1], 0.25);
    }

    #[test]
    fn closure_castellon_arithmetic() {
        let c = comp(&[0.2728, 0.021, 0.205, 0.527]);
        let expect = [0.266, 0.020, 0.200, 0.514];
        for (got, want) in c.parts().iter().zip(expect) {
            assert!((got - want).abs() < 5e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn closure_rejects_nonpositive() {
        let err = closure(&DVector::from_row_slice(&[1.0, 0.0, 2.0]), 1.0).unwrap_err();
        assert_eq!(
            err,
            SimplexError::NonPositivePart {
                index: 1,
                value: 0.0
            }
        );
    }

    #[test]
    fn closure_scale_invariant() {
        let a = comp(&[0.3, 1.2, 2.5]);
        let b = comp(&[3.0, 12.0, 25.0]);
        assert_relative_eq!(a.parts(), b.parts(), max_relative = 1e-14);
    }

    #[test]
    fn zero_replacement() {
        let v = DVector::from_row_slice(&[1.0, 0.0, 1.0]);
        let c = closure_replacing_zeros(&v, 1.0, 1e-5).unwrap();
        assert!(c.parts()[1] > 0.0);
        assert_relative_eq!(c.parts().sum(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn perturb_neutral_and_inverse() {
        let x = comp(&[0.5, 0.3, 0.2]);
        let u = Composition::uniform(3, 1.0).unwrap();
        let p = perturb(&x, &u).unwrap();
        assert_relative_eq!(p.parts(), x.parts(), max_relative = 1e-12);
        let inv = power(-1.0, &x);
        let id = perturb(&x, &inv).unwrap();
        assert_relative_eq!(id.parts(), u.parts(), max_relative = 1e-12);
    }

    #[test]
    fn perturb_castellon() {
        let x = comp(&[0.248, 0.021, 0.205, 0.527]);
        let shift = comp(&[1.1, 1.0, 1.0, 1.0]);
        let y = perturb(&x, &shift).unwrap();
        let expect = [0.266, 0.020, 0.200, 0.514];
        for (got, want) in y.parts().iter().zip(expect) {
            assert!((got - want).abs() < 5e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn power_examples() {
        let x = comp(&[0.5, 0.25, 0.25]);
        let p1 = power(1.0, &x);
        assert_relative_eq!(p1.parts(), x.parts(), max_relative = 1e-14);
        let p0 = power(0.0, &x);
        let u = Composition::uniform(3, 1.0).unwrap();
        assert_relative_eq!(p0.parts(), u.parts(), max_relative = 1e-14);
        let p2 = power(2.0, &x);
        assert_relative_eq!(p2.parts()[0], 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(p2.parts()[1], 1.0 / 6.0, max_relative = 1e-12);
    }

    #[test]
    fn inner_with_uniform_is_zero() {
        let x = comp(&[0.7, 0.1, 0.2]);
        let u = Composition::uniform(3, 1.0).unwrap();
        assert!(aitchison_inner(&x, &u).unwrap().abs() < 1e-12);
        assert!(aitchison_inner(&x, &x).unwrap() > 0.0);
    }

    #[test]
    fn isometry_triple_random() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let d = rng.gen_range(2..=10usize);
            let x = random_comp(&mut rng, d);
            let y = random_comp(&mut rng, d);
            let a = aitchison_inner(&x, &y).unwrap();
            let clr_dot = clr(&x).coords().dot(clr(&y).coords());
            let ilr_dot = ilr_pivot(&x).coords().dot(ilr_pivot(&y).coords());
            assert!((a - clr_dot).abs() < 1e-10, "clr isometry: {a} vs {clr_dot}");
            assert!((a - ilr_dot).abs() < 1e-10, "ilr isometry: {a} vs {ilr_dot}");
        }
    }

    #[test]
    fn clr_round_trip() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let d = rng.gen_range(2..=10usize);
            let x = random_comp(&mut rng, d);
            let back = clr_inv(clr(&x).coords(), 1.0).unwrap();
            for (a, b) in x.parts().iter().zip(back.parts().iter()) {
                assert!((a - b).abs() / a < 1e-12);
            }
        }
    }

    #[test]
    fn clr_inv_rejects_uncentred() {
        let u = DVector::from_row_slice(&[0.5, 0.5, 0.1]);
        assert!(matches!(
            clr_inv(&u, 1.0),
            Err(SimplexError::NotCentred { .. })
        ));
    }

    #[test]
    fn ilr_round_trip_d2_logit() {
        let p = 0.73;
        let x = comp(&[p, 1.0 - p]);
        let z = ilr_pivot(&x);
        let logit = (0.5f64).sqrt() * (p / (1.0 - p)).ln();
        assert_relative_eq!(z.coords()[0], logit, max_relative = 1e-12);
        let back = ilr_pivot_inv(&z, 1.0);
        assert_relative_eq!(back.parts(), x.parts(), max_relative = 1e-12);
    }

    #[test]
    fn ilr_of_uniform_is_zero() {
        let u = Composition::uniform(5, 1.0).unwrap();
        assert!(ilr_pivot(&u).coords().amax() < 1e-14);
        assert!(clr(&u).coords().amax() < 1e-14);
    }

    #[test]
    fn pivot_contrast_matrix_properties() {
        for d in 2..=8 {
            let v = pivot_contrast_matrix::<f64>(d);
            let gram = v.transpose() * &v;
            assert_relative_eq!(
                gram,
                DMatrix::identity(d - 1, d - 1),
                max_relative = 1e-12
            );
            for j in 0..d - 1 {
                assert!(v.column(j).sum().abs() < 1e-12);
            }
        }
        let v2 = pivot_contrast_matrix::<f64>(2);
        assert_relative_eq!(v2[(0, 0)], (0.5f64).sqrt(), max_relative = 1e-14);
        assert_relative_eq!(v2[(1, 0)], -(0.5f64).sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn contrast_matrix_maps_ilr_to_clr() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let d = rng.gen_range(2..=9usize);
            let x = random_comp(&mut rng, d);
            let v = pivot_contrast_matrix::<f64>(d);
            let mapped = &v * ilr_pivot(&x).coords();
            let direct = clr(&x);
            assert_relative_eq!(&mapped, direct.coords(), epsilon = 1e-12);
        }
    }

    #[test]
    fn simplicial_gradient_zero_is_uniform() {
        let b = simplicial_gradient(&IlrVector::new(DVector::zeros(3)), 1.0);
        let u = Composition::uniform(4, 1.0).unwrap();
        assert_relative_eq!(b.parts(), u.parts(), max_relative = 1e-12);
    }

    #[test]
    fn gradient_direction_identity() {
        // <b, x ⊕ b/||b||> − <b, x> = ||b||
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..200 {
            let d = rng.gen_range(2..=6usize);
            let beta = IlrVector::new(DVector::from_fn(d - 1, |_, _| rng.gen_range(-2.0..2.0)));
            let b = simplicial_gradient(&beta, 1.0);
            let x = random_comp(&mut rng, d);
            let norm = aitchison_norm(&b);
            if norm < 1e-8 {
                continue;
            }
            let step = power(1.0 / norm, &b);
            let moved = perturb(&x, &step).unwrap();
            let delta =
                aitchison_inner(&b, &moved).unwrap() - aitchison_inner(&b, &x).unwrap();
            assert!((delta - norm).abs() < 1e-10, "{delta} vs {norm}");
        }
    }

    #[test]
    fn relative_ratio_published_values() {
        assert!((relative_ratio_effect(5.747_f64, 1.1) - 1.729).abs() < 1e-3);
        assert!((relative_ratio_effect(-5.009_f64, 1.1) - 0.620).abs() < 2e-3);
        assert_relative_eq!(relative_ratio_effect(3.21, 1.0), 1.0);
    }

    #[test]
    fn supplement_clr_gradient_sums_to_zero() {
        let clr_b = DVector::from_row_slice(&[5.747_f64, -1.515, 0.778, -5.010]);
        assert!(clr_b.sum().abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn vector_space_axioms(seed in 0u64..500) {
            let mut rng = StdRng::seed_from_u64(seed);
            let d = rng.gen_range(2..=7usize);
            let x = random_comp(&mut rng, d);
            let y = random_comp(&mut rng, d);
            let z = random_comp(&mut rng, d);
            let a: f64 = rng.gen_range(-2.0..2.0);

            // associativity of perturbation
            let left = perturb(&perturb(&x, &y).unwrap(), &z).unwrap();
            let right = perturb(&x, &perturb(&y, &z).unwrap()).unwrap();
            for (l, r) in left.parts().iter().zip(right.parts().iter()) {
                prop_assert!((l - r).abs() < 1e-10);
            }

            // distributivity of powering over perturbation
            let lhs = power(a, &perturb(&x, &y).unwrap());
            let rhs = perturb(&power(a, &x), &power(a, &y)).unwrap();
            for (l, r) in lhs.parts().iter().zip(rhs.parts().iter()) {
                prop_assert!((l - r).abs() < 1e-10);
            }
        }
    }
}
