//! Generalized functional additive mixed models for count-valued curves over
//! areal units.
//!
//! The crate covers four layers:
//!
//! * [`simplex`] and [`bayes`] — Aitchison geometry for finite compositions
//!   and the Bayes Hilbert space of densities, with clr/ilr transforms and
//!   their inverses,
//! * [`basis`] and [`spatial`] — penalized spline algebra (row tensor
//!   products, difference penalties, constraint null spaces) and spatial
//!   neighborhood graphs with MRF precision matrices,
//! * [`terms`] — design matrix and penalty construction for every additive
//!   term type, including constrained functional-composition terms,
//! * [`fit`] — penalized quasi-Poisson IRLS with GCV smoothing-parameter
//!   selection, inference, diagnostics and effect extraction.
//!
//! All numeric code is generic over the scalar type through [`real::Real`];
//! the aliases below pin `f64` for everyday use.

pub mod basis;
pub mod bayes;
pub mod fit;
pub mod real;
pub mod simplex;
pub mod spatial;
pub mod synth;
pub mod terms;

pub use real::Real;

/// `f64` composition on the simplex.
pub type Composition = simplex::Composition<f64>;
/// `f64` clr vector.
pub type ClrVector = simplex::ClrVector<f64>;
/// `f64` pivot ilr vector.
pub type IlrVector = simplex::IlrVector<f64>;
/// `f64` quadrature grid.
pub type Grid = bayes::Grid<f64>;
/// `f64` density curve.
pub type DensityCurve = bayes::DensityCurve<f64>;
/// `f64` clr curve.
pub type ClrCurve = bayes::ClrCurve<f64>;
/// `f64` spline basis.
pub type SplineBasis = basis::SplineBasis<f64>;
/// `f64` penalty matrix.
pub type PenaltyMatrix = basis::PenaltyMatrix<f64>;
/// `f64` data bundle.
pub type DataBundle = terms::DataBundle<f64>;
/// `f64` fitted model.
pub type FittedModel = fit::FittedModel<f64>;
