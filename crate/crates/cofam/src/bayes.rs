//! Bayes Hilbert space of densities on a discretized grid.
//!
//! A density curve holds strictly positive values on a fixed grid with unit
//! integral under trapezoidal quadrature. The functional clr transform
//! `clr(f)(t) = log f(t) - |T|^{-1} ∫ log f(s) ds` maps densities
//! isometrically onto curves integrating to zero, which is where all design
//! matrix work happens (module `terms`).

use nalgebra::DVector;
use thiserror::Error;

use crate::real::{real, to_f64, Real};

/// Relative tolerance for `sum(weights) == domain length`.
pub const GRID_WEIGHT_RTOL: f64 = 1e-12;
/// Absolute tolerance for the unit-integral invariant of a density.
pub const DENSITY_INTEGRAL_ATOL: f64 = 1e-8;
/// Absolute tolerance for the zero-integral invariant of a clr curve.
pub const CLR_INTEGRAL_ATOL: f64 = 1e-8;
/// Largest integral deviation [`clr_density_inv`] re-centres silently.
pub const CLR_INV_RECENTER_ATOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BayesError {
    #[error("grid must be strictly increasing at index {0}")]
    NonIncreasingGrid(usize),
    #[error("grid needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("density value at grid index {index} is not strictly positive ({value})")]
    NonPositiveDensity { index: usize, value: f64 },
    #[error("curves live on different grids")]
    GridMismatch,
    #[error("density integrates to {integral}, expected 1")]
    NotNormalized { integral: f64 },
    #[error("clr curve integrates to {integral}, beyond tolerance {tol}")]
    NotCentred { integral: f64, tol: f64 },
}

/// A 1-D quadrature grid: strictly increasing points with trapezoidal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T: Real> {
    points: DVector<T>,
    weights: DVector<T>,
}

impl<T: Real> Grid<T> {
    /// Build a grid from strictly increasing points; weights are trapezoidal.
    pub fn new(points: DVector<T>) -> Result<Self, BayesError> {
        let weights = trapezoid_weights(&points)?;
        Ok(Self { points, weights })
    }

    pub fn from_slice(points: &[T]) -> Result<Self, BayesError> {
        Self::new(DVector::from_row_slice(points))
    }

    pub fn points(&self) -> &DVector<T> {
        &self.points
    }

    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.len() == 0
    }

    /// Length of the domain, `max - min`.
    pub fn domain_length(&self) -> T {
        self.points[self.points.len() - 1] - self.points[0]
    }

    /// Quadrature integral of values sampled on this grid.
    pub fn integrate(&self, values: &DVector<T>) -> T {
        self.weights.dot(values)
    }
}

/// Trapezoidal quadrature weights; exact for piecewise-linear integrands,
/// summing to the domain length.
pub fn trapezoid_weights<T: Real>(points: &DVector<T>) -> Result<DVector<T>, BayesError> {
    let n = points.len();
    if n < 3 {
        return Err(BayesError::TooFewPoints(n));
    }
    for i in 1..n {
        if points[i] <= points[i - 1] {
            return Err(BayesError::NonIncreasingGrid(i));
        }
    }
    let half = real::<T>(0.5);
    let mut w = DVector::zeros(n);
    for i in 0..n - 1 {
        let h = points[i + 1] - points[i];
        w[i] += half * h;
        w[i + 1] += half * h;
    }
    Ok(w)
}

/// A functional composition: positive values with unit quadrature integral.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve<T: Real> {
    grid: Grid<T>,
    values: DVector<T>,
}

/// Functional clr image of a density: values integrating to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrCurve<T: Real> {
    grid: Grid<T>,
    values: DVector<T>,
}

impl<T: Real> DensityCurve<T> {
    /// Validate positive values that already integrate to one.
    pub fn new(grid: Grid<T>, values: DVector<T>) -> Result<Self, BayesError> {
        check_positive(&values)?;
        let integral = grid.integrate(&values);
        if (integral - T::one()).abs() > real(DENSITY_INTEGRAL_ATOL) {
            return Err(BayesError::NotNormalized {
                integral: to_f64(integral),
            });
        }
        Ok(Self { grid, values })
    }

    /// The uniform density `1 / |T|`.
    pub fn uniform(grid: Grid<T>) -> Self {
        let v = DVector::from_element(grid.len(), T::one() / grid.domain_length());
        Self { grid, values: v }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn values(&self) -> &DVector<T> {
        &self.values
    }
}

impl<T: Real> ClrCurve<T> {
    pub fn new(grid: Grid<T>, values: DVector<T>) -> Result<Self, BayesError> {
        let integral = grid.integrate(&values);
        if integral.abs() > real(CLR_INTEGRAL_ATOL) {
            return Err(BayesError::NotCentred {
                integral: to_f64(integral),
                tol: CLR_INTEGRAL_ATOL,
            });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn values(&self) -> &DVector<T> {
        &self.values
    }
}

fn check_positive<T: Real>(v: &DVector<T>) -> Result<(), BayesError> {
    for (index, &value) in v.iter().enumerate() {
        if value <= T::zero() {
            return Err(BayesError::NonPositiveDensity {
                index,
                value: to_f64(value),
            });
        }
    }
    Ok(())
}

fn same_grid<T: Real>(a: &Grid<T>, b: &Grid<T>) -> Result<(), BayesError> {
    if a.points != b.points {
        return Err(BayesError::GridMismatch);
    }
    Ok(())
}

/// Divide raw positive values by their quadrature integral.
pub fn normalize_density<T: Real>(
    raw: &DVector<T>,
    grid: &Grid<T>,
) -> Result<DensityCurve<T>, BayesError> {
    check_positive(raw)?;
    let integral = grid.integrate(raw);
    let values = raw.map(|v| v / integral);
    Ok(DensityCurve {
        grid: grid.clone(),
        values,
    })
}

/// Functional clr: subtract the quadrature mean of `log f`.
pub fn clr_density<T: Real>(f: &DensityCurve<T>) -> ClrCurve<T> {
    let logs = f.values.map(|v| v.ln());
    let mean = f.grid.integrate(&logs) / f.grid.domain_length();
    let mut values = logs.map(|l| l - mean);
    let residual = f.grid.integrate(&values) / f.grid.domain_length();
    values.apply(|v| *v -= residual);
    ClrCurve {
        grid: f.grid.clone(),
        values,
    }
}

/// Inverse functional clr: exponentiate and renormalize. Inputs whose
/// integral deviates from zero by up to [`CLR_INV_RECENTER_ATOL`] are
/// re-centred; larger deviations are rejected.
pub fn clr_density_inv<T: Real>(
    grid: &Grid<T>,
    u: &DVector<T>,
) -> Result<DensityCurve<T>, BayesError> {
    let integral = grid.integrate(u);
    if integral.abs() > real(CLR_INV_RECENTER_ATOL) {
        return Err(BayesError::NotCentred {
            integral: to_f64(integral),
            tol: CLR_INV_RECENTER_ATOL,
        });
    }
    let shift = integral / grid.domain_length();
    let exps = u.map(|v| (v - shift).exp());
    normalize_density(&exps, grid)
}

/// Bayes-space inner product, computed through the clr route
/// `<clr f, clr h>_{L^2}`.
pub fn bayes_inner<T: Real>(
    f: &DensityCurve<T>,
    h: &DensityCurve<T>,
) -> Result<T, BayesError> {
    same_grid(&f.grid, &h.grid)?;
    let uf = clr_density(f);
    let uh = clr_density(h);
    let prod = uf.values.component_mul(&uh.values);
    Ok(f.grid.integrate(&prod))
}

/// Bayes-space perturbation: pointwise product, renormalized.
pub fn perturb_density<T: Real>(
    f: &DensityCurve<T>,
    h: &DensityCurve<T>,
) -> Result<DensityCurve<T>, BayesError> {
    same_grid(&f.grid, &h.grid)?;
    let prod = f.values.component_mul(&h.values);
    normalize_density(&prod, &f.grid)
}

/// Bayes-space powering: pointwise power, renormalized.
pub fn power_density<T: Real>(alpha: T, f: &DensityCurve<T>) -> DensityCurve<T> {
    let powered = f.values.map(|v| v.powf(alpha));
    normalize_density(&powered, &f.grid).expect("powering preserves positivity")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit_grid(n: usize) -> Grid<f64> {
        let pts = DVector::from_fn(n, |i, _| i as f64 / (n - 1) as f64);
        Grid::new(pts).unwrap()
    }

    fn random_density(rng: &mut StdRng, grid: &Grid<f64>) -> DensityCurve<f64> {
        // smooth positive curve: exp of a low-order trig polynomial
        let a: f64 = rng.gen_range(-1.0..1.0);
        let b: f64 = rng.gen_range(-1.0..1.0);
        let c: f64 = rng.gen_range(-1.0..1.0);
        let raw = grid.points().map(|t| {
            (a * (2.0 * std::f64::consts::PI * t).sin()
                + b * (2.0 * std::f64::consts::PI * t).cos()
                + c * t)
                .exp()
        });
        normalize_density(&raw, grid).unwrap()
    }

    #[test]
    fn trapezoid_examples() {
        let w = trapezoid_weights(&DVector::from_row_slice(&[0.0, 1.0, 2.0])).unwrap();
        assert_relative_eq!(w, DVector::from_row_slice(&[0.5, 1.0, 0.5]));
        assert_relative_eq!(w.sum(), 2.0);
        let w = trapezoid_weights(&DVector::from_row_slice(&[0.0, 1.0, 3.0])).unwrap();
        assert_relative_eq!(w, DVector::from_row_slice(&[0.5, 1.5, 1.0]));
    }

    #[test]
    fn trapezoid_rejects_bad_grids() {
        assert!(matches!(
            trapezoid_weights(&DVector::from_row_slice(&[0.0, 1.0])),
            Err(BayesError::TooFewPoints(2))
        ));
        assert!(matches!(
            trapezoid_weights(&DVector::from_row_slice(&[0.0, 1.0, 1.0])),
            Err(BayesError::NonIncreasingGrid(2))
        ));
    }

    #[test]
    fn normalize_constant_is_one() {
        let grid = unit_grid(11);
        let raw = DVector::from_element(11, 3.7);
        let f = normalize_density(&raw, &grid).unwrap();
        for v in f.values().iter() {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn normalize_scale_invariant_and_unit_integral() {
        let mut rng = StdRng::seed_from_u64(5);
        let grid = unit_grid(31);
        for _ in 0..50 {
            let raw = DVector::from_fn(31, |_, _| rng.gen_range(0.1..3.0f64));
            let f = normalize_density(&raw, &grid).unwrap();
            let g = normalize_density(&(&raw * 2.0), &grid).unwrap();
            assert_relative_eq!(f.values(), g.values(), max_relative = 1e-13);
            assert!((grid.integrate(f.values()) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn clr_of_uniform_is_zero() {
        let grid = unit_grid(21);
        let u = DensityCurve::uniform(grid);
        assert!(clr_density(&u).values().amax() < 1e-13);
    }

    #[test]
    fn clr_round_trip() {
        let mut rng = StdRng::seed_from_u64(9);
        let grid = unit_grid(51);
        for _ in 0..100 {
            let f = random_density(&mut rng, &grid);
            let u = clr_density(&f);
            assert!(grid.integrate(u.values()).abs() < 1e-10);
            let back = clr_density_inv(&grid, u.values()).unwrap();
            let err = (f.values() - back.values()).amax();
            assert!(err < 1e-10, "round trip error {err}");
        }
    }

    #[test]
    fn clr_inv_rejects_uncentred() {
        let grid = unit_grid(5);
        let u = DVector::from_element(5, 0.3);
        assert!(matches!(
            clr_density_inv(&grid, &u),
            Err(BayesError::NotCentred { .. })
        ));
    }

    #[test]
    fn bayes_inner_vs_double_integral_oracle() {
        // brute-force (2|T|)^{-1} ∬ log(f(t)/f(s)) log(h(t)/h(s)) ds dt
        let mut rng = StdRng::seed_from_u64(23);
        let grid = unit_grid(201);
        for _ in 0..10 {
            let f = random_density(&mut rng, &grid);
            let h = random_density(&mut rng, &grid);
            let fast = bayes_inner(&f, &h).unwrap();
            let mut brute = 0.0;
            let w = grid.weights();
            for t in 0..grid.len() {
                for s in 0..grid.len() {
                    brute += w[t]
                        * w[s]
                        * (f.values()[t] / f.values()[s]).ln()
                        * (h.values()[t] / h.values()[s]).ln();
                }
            }
            brute /= 2.0 * grid.domain_length();
            let scale = fast.abs().max(1e-3);
            assert!(
                (fast - brute).abs() / scale < 1e-6,
                "clr route {fast} vs brute force {brute}"
            );
        }
    }

    #[test]
    fn bayes_inner_uniform_and_norm() {
        let mut rng = StdRng::seed_from_u64(31);
        let grid = unit_grid(41);
        let f = random_density(&mut rng, &grid);
        let u = DensityCurve::uniform(grid.clone());
        assert!(bayes_inner(&f, &u).unwrap().abs() < 1e-12);
        assert!(bayes_inner(&f, &f).unwrap() >= 0.0);
    }

    #[test]
    fn perturbation_axioms_under_clr() {
        let mut rng = StdRng::seed_from_u64(41);
        let grid = unit_grid(61);
        for _ in 0..50 {
            let f = random_density(&mut rng, &grid);
            let h = random_density(&mut rng, &grid);
            let fh = perturb_density(&f, &h).unwrap();
            let sum = clr_density(&f).values() + clr_density(&h).values();
            let err = (clr_density(&fh).values() - sum).amax();
            assert!(err < 1e-10, "clr additivity error {err}");

            let alpha: f64 = rng.gen_range(-2.0..2.0);
            let af = power_density(alpha, &f);
            let scaled = clr_density(&f).values() * alpha;
            let err = (clr_density(&af).values() - scaled).amax();
            assert!(err < 1e-10, "clr scaling error {err}");
        }
    }

    #[test]
    fn perturb_neutral_element() {
        let mut rng = StdRng::seed_from_u64(47);
        let grid = unit_grid(21);
        let f = random_density(&mut rng, &grid);
        let u = DensityCurve::uniform(grid);
        let p = perturb_density(&f, &u).unwrap();
        assert_relative_eq!(p.values(), f.values(), max_relative = 1e-12);
        let zero = power_density(0.0, &f);
        assert_relative_eq!(zero.values(), u.values(), max_relative = 1e-12);
    }

    #[test]
    fn grid_mismatch_reported() {
        let mut rng = StdRng::seed_from_u64(53);
        let f = random_density(&mut rng, &unit_grid(11));
        let h = random_density(&mut rng, &unit_grid(13));
        assert!(matches!(
            perturb_density(&f, &h),
            Err(BayesError::GridMismatch)
        ));
    }
}
