//! Design-matrix and penalty construction for the additive terms.
//!
//! Every term is represented through a (row) tensor product of a marginal
//! design over the covariate and a marginal spline design over `t`, with the
//! x-index slow and the t-index fast in the coefficient vector. Rows are
//! stacked region-major: row `(i, l)` comes before `(i, l+1)` and all rows of
//! region `i` precede those of region `i+1`. Only time indices with all
//! lagged covariates available are kept; the drop set is shared by all terms.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::basis::{
    constraint_nullspace, difference_penalty, row_tensor, tensor_penalty, BasisError,
    PenaltyMatrix, SplineBasis,
};
use crate::bayes::{clr_density, BayesError, DensityCurve, Grid};
use crate::real::{real, Real};
use crate::simplex::{ilr_pivot, Composition, SimplexError};
use crate::spatial::{mrf_precision, SpatialGraph};

/// Covariates with standard deviation below this are rejected as degenerate.
pub const DEGENERATE_SD_TOL: f64 = 1e-12;
/// Column-mean magnitudes below this skip the centering constraint.
pub const CENTERING_SKIP_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TermError {
    #[error("term '{term}': covariate '{name}' not found in the data bundle")]
    MissingCovariate { term: String, name: String },
    #[error("term '{term}': covariate '{name}' is (nearly) constant")]
    DegenerateCovariate { term: String, name: String },
    #[error("term '{term}': covariate '{name}' must be a per-time series for a concurrent effect")]
    NotASeries { term: String, name: String },
    #[error("term '{term}': lag {lag} exceeds the time grid length {len}")]
    LagTooLarge { term: String, lag: usize, len: usize },
    #[error("term '{term}': region {region} has group level {level} outside 1..={m}")]
    UnknownLevel {
        term: String,
        region: String,
        level: usize,
        m: usize,
    },
    #[error("term '{term}': precision matrix is {got}x{got} but the group has {m} levels")]
    InvalidPrecision { term: String, got: usize, m: usize },
    #[error("term '{term}': group '{group}' has a single level; a sum-to-zero random intercept needs at least two")]
    SingleLevelGroup { term: String, group: String },
    #[error("term '{term}': densities live on different grids")]
    GridMismatch { term: String },
    #[error("term '{term}': {source}")]
    Simplex {
        term: String,
        source: SimplexError,
    },
    #[error("term '{term}': {source}")]
    Bayes { term: String, source: BayesError },
    #[error("term '{term}': {source}")]
    Basis { term: String, source: BasisError },
}

/// Additive term catalogue.
#[derive(Debug, Clone, PartialEq)]
pub enum TermKind {
    /// Functional intercept `beta_0(t)`.
    Intercept { k_t: usize },
    /// Time-constant linear effect `x * beta` of a scalar or series.
    LinearScalar { x: String },
    /// Time-varying linear effect `x * beta(t)`.
    LinearScalarTv { x: String, k_t: usize },
    /// Time-constant smooth effect `f(x)`; accepts a series for `f(x(t))`.
    SmoothScalar { x: String, k_x: usize },
    /// Time-varying smooth effect `f(x, t)`.
    SmoothScalarTv { x: String, k_x: usize, k_t: usize },
    /// Time-constant concurrent interaction surface `f(x1(t), x2(t))`.
    TensorInteraction {
        x1: String,
        x2: String,
        k_x: usize,
    },
    /// Concurrent smooth `f(x(t))`; requires a per-time series.
    ConcurrentSmooth { x: String, k_x: usize },
    /// Linear functional effect `∫ x(s) beta(s,t) ds`.
    FunOnFun {
        x: String,
        k_s: usize,
        k_t: usize,
    },
    /// Time-constant compositional effect `<b, x>_A` via pivot ilr.
    CompositionLinear { x: String },
    /// Time-varying compositional effect `<b(t), x>_A`; one shared t-penalty.
    CompositionLinearTv { x: String, k_t: usize },
    /// Density covariate `<x, b(.,t)>_{B^2}` with the integration-to-zero
    /// constraint on the s-marginal basis.
    FunComposition {
        x: String,
        k_s: usize,
        k_t: usize,
    },
    /// Functional random intercept per group level; iid or MRF-correlated.
    RandomIntercept {
        group: String,
        k_t: usize,
        graph: Option<String>,
    },
}

/// One additive term of the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct TermSpec {
    pub id: String,
    pub kind: TermKind,
    /// Optional multiplier covariate gating the term's rows.
    pub by: Option<String>,
    /// Lag in grid steps: covariate at `t - lag` pairs with response at `t`.
    pub lag: usize,
    /// Difference order of the x-marginal penalty.
    pub x_order: usize,
    /// Difference order of the t-marginal penalty.
    pub t_order: usize,
}

impl TermSpec {
    pub fn new(id: impl Into<String>, kind: TermKind) -> Self {
        // random intercepts default to a first-order t-penalty so the joint
        // penalty null space is a single constant, removed by centering
        let t_order = match kind {
            TermKind::RandomIntercept { .. } => 1,
            _ => 2,
        };
        Self {
            id: id.into(),
            kind,
            by: None,
            lag: 0,
            x_order: 2,
            t_order,
        }
    }

    pub fn with_by(mut self, by: impl Into<String>) -> Self {
        self.by = Some(by.into());
        self
    }

    pub fn with_lag(mut self, lag: usize) -> Self {
        self.lag = lag;
        self
    }

    /// Whether this term carries unpenalized scalar coefficients reported in
    /// the Wald table.
    pub fn is_parametric(&self) -> bool {
        matches!(
            self.kind,
            TermKind::LinearScalar { .. } | TermKind::CompositionLinear { .. }
        )
    }
}

/// Scalar covariate: one value per region, or a full per-(region, t) series.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarCovariate<T: Real> {
    Constant(DVector<T>),
    Series(DMatrix<T>),
}

/// Functional covariate sampled on a common grid; rows are regions.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalCovariate<T: Real> {
    pub grid: Grid<T>,
    pub curves: DMatrix<T>,
}

/// Group assignment for random intercepts.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMap {
    /// Level index (0-based) of each region.
    pub level_of_region: Vec<usize>,
    /// Level labels, length `M`.
    pub labels: Vec<String>,
}

/// Everything a model fit needs: the response and all covariate tables.
#[derive(Debug, Clone)]
pub struct DataBundle<T: Real> {
    pub regions: Vec<String>,
    pub grid_t: Grid<T>,
    /// Counts, `n x T`.
    pub y: DMatrix<T>,
    /// Known additive predictor offsets (log population), `n x T`.
    pub offsets: DMatrix<T>,
    pub scalars: BTreeMap<String, ScalarCovariate<T>>,
    pub compositions: BTreeMap<String, Vec<Composition<T>>>,
    pub densities: BTreeMap<String, Vec<DensityCurve<T>>>,
    pub functionals: BTreeMap<String, FunctionalCovariate<T>>,
    pub graphs: BTreeMap<String, SpatialGraph>,
    pub groups: BTreeMap<String, GroupMap>,
}

impl<T: Real> DataBundle<T> {
    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn n_times(&self) -> usize {
        self.grid_t.len()
    }
}

/// Per-term extraction metadata kept alongside the coefficients.
#[derive(Debug, Clone)]
pub struct TermMeta<T: Real> {
    pub spec: TermSpec,
    pub basis_x: Option<SplineBasis<T>>,
    pub basis_t: Option<SplineBasis<T>>,
    /// s-marginal constraint map of a functional-composition term.
    pub z_s: Option<DMatrix<T>>,
    /// Row-centering map from reduced to structural coefficients.
    pub z_center: Option<DMatrix<T>>,
    pub ilr_dim: Option<usize>,
    pub kappa: Option<T>,
    pub grid_s: Option<Grid<T>>,
    pub levels: Option<Vec<String>>,
    pub warnings: Vec<String>,
}

impl<T: Real> TermMeta<T> {
    fn bare(spec: TermSpec) -> Self {
        Self {
            spec,
            basis_x: None,
            basis_t: None,
            z_s: None,
            z_center: None,
            ilr_dim: None,
            kappa: None,
            grid_s: None,
            levels: None,
            warnings: Vec::new(),
        }
    }

    /// Map reduced coefficients back to the structural (pre-centering) space.
    pub fn to_structural(&self, theta: &DVector<T>) -> DVector<T> {
        match &self.z_center {
            Some(z) => z * theta,
            None => theta.clone(),
        }
    }
}

/// A built term: stacked design block, penalty components, metadata.
#[derive(Debug, Clone)]
pub struct TermDesign<T: Real> {
    pub id: String,
    pub phi: DMatrix<T>,
    pub penalties: Vec<PenaltyBlock<T>>,
    pub meta: TermMeta<T>,
}

/// One smoothing slot: a penalty matrix with its own smoothing parameter.
#[derive(Debug, Clone)]
pub struct PenaltyBlock<T: Real> {
    pub slot: String,
    pub matrix: DMatrix<T>,
}

impl<T: Real> TermDesign<T> {
    pub fn num_coefs(&self) -> usize {
        self.phi.ncols()
    }
}

/// Immutable view shared by all term builders.
pub struct DesignContext<'a, T: Real> {
    pub data: &'a DataBundle<T>,
    /// Kept time indices (those with all lagged covariates available).
    pub kept: &'a [usize],
}

impl<'a, T: Real> DesignContext<'a, T> {
    pub fn n_rows(&self) -> usize {
        self.data.n_regions() * self.kept.len()
    }

    /// Kept time values.
    pub fn times(&self) -> Vec<T> {
        self.kept.iter().map(|&l| self.data.grid_t.points()[l]).collect()
    }
}

/// Largest lag over the term list; time indices below it are dropped.
pub fn max_lag(specs: &[TermSpec]) -> usize {
    specs.iter().map(|s| s.lag).max().unwrap_or(0)
}

fn err_simplex(term: &str) -> impl Fn(SimplexError) -> TermError + '_ {
    move |source| TermError::Simplex {
        term: term.to_string(),
        source,
    }
}

fn err_basis(term: &str) -> impl Fn(BasisError) -> TermError + '_ {
    move |source| TermError::Basis {
        term: term.to_string(),
        source,
    }
}

/// Build the design block and penalties for one term.
pub fn build_term<T: Real>(
    spec: &TermSpec,
    ctx: &DesignContext<'_, T>,
) -> Result<TermDesign<T>, TermError> {
    if spec.lag >= ctx.data.n_times() {
        return Err(TermError::LagTooLarge {
            term: spec.id.clone(),
            lag: spec.lag,
            len: ctx.data.n_times(),
        });
    }
    let mut meta = TermMeta::bare(spec.clone());
    let (phi, penalties) = match &spec.kind {
        TermKind::Intercept { k_t } => build_intercept(spec, ctx, *k_t, &mut meta)?,
        TermKind::LinearScalar { x } => build_linear(spec, ctx, x, None, &mut meta)?,
        TermKind::LinearScalarTv { x, k_t } => {
            build_linear(spec, ctx, x, Some(*k_t), &mut meta)?
        }
        TermKind::SmoothScalar { x, k_x } | TermKind::ConcurrentSmooth { x, k_x } => {
            build_smooth(spec, ctx, x, *k_x, None, &mut meta)?
        }
        TermKind::SmoothScalarTv { x, k_x, k_t } => {
            build_smooth(spec, ctx, x, *k_x, Some(*k_t), &mut meta)?
        }
        TermKind::TensorInteraction { x1, x2, k_x } => {
            build_interaction(spec, ctx, x1, x2, *k_x, &mut meta)?
        }
        TermKind::FunOnFun { x, k_s, k_t } => {
            build_fun_on_fun(spec, ctx, x, *k_s, *k_t, false, &mut meta)?
        }
        TermKind::CompositionLinear { x } => {
            build_composition(spec, ctx, x, None, &mut meta)?
        }
        TermKind::CompositionLinearTv { x, k_t } => {
            build_composition(spec, ctx, x, Some(*k_t), &mut meta)?
        }
        TermKind::FunComposition { x, k_s, k_t } => {
            build_fun_composition(spec, ctx, x, *k_s, *k_t, &mut meta)?
        }
        TermKind::RandomIntercept { group, k_t, graph } => {
            build_random_intercept(spec, ctx, group, *k_t, graph.as_deref(), &mut meta)?
        }
    };

    let phi = apply_by_variable(spec, ctx, phi)?;
    let (phi, penalties) = apply_centering(spec, phi, penalties, &mut meta)?;

    Ok(TermDesign {
        id: spec.id.clone(),
        phi,
        penalties,
        meta,
    })
}

type Built<T> = (DMatrix<T>, Vec<PenaltyBlock<T>>);

/// Repeat a time block (one row per kept time) over all regions.
fn expand_over_regions<T: Real>(block: &DMatrix<T>, n: usize) -> DMatrix<T> {
    let (rows, cols) = block.shape();
    let mut out = DMatrix::zeros(rows * n, cols);
    for i in 0..n {
        out.view_mut((i * rows, 0), (rows, cols)).copy_from(block);
    }
    out
}

/// Repeat a region block (one row per region) over all kept times.
fn expand_over_time<T: Real>(block: &DMatrix<T>, len_t: usize) -> DMatrix<T> {
    let (n, cols) = block.shape();
    let mut out = DMatrix::zeros(n * len_t, cols);
    for i in 0..n {
        for l in 0..len_t {
            out.row_mut(i * len_t + l).copy_from(&block.row(i));
        }
    }
    out
}

/// Spline basis over the response time domain, evaluated at the kept times
/// and repeated over regions.
fn t_block<T: Real>(
    spec: &TermSpec,
    ctx: &DesignContext<'_, T>,
    k_t: usize,
) -> Result<(SplineBasis<T>, DMatrix<T>), TermError> {
    let pts = ctx.data.grid_t.points();
    let basis = SplineBasis::uniform(pts[0], pts[pts.len() - 1], k_t, 3)
        .map_err(err_basis(&spec.id))?;
    let rows = basis.eval(&ctx.times()).map_err(err_basis(&spec.id))?;
    Ok((basis, expand_over_regions(&rows, ctx.data.n_regions())))
}

/// Lagged covariate values as a stacked column, one entry per design row.
fn scalar_rows<T: Real>(
    spec: &TermSpec,
    ctx: &DesignContext<'_, T>,
    name: &str,
) -> Result<DVector<T>, TermError> {
    let cov = ctx
        .data
        .scalars
        .get(name)
        .ok_or_else(|| TermError::MissingCovariate {
            term: spec.id.clone(),
            name: name.to_string(),
        })?;
    let n = ctx.data.n_regions();
    let len_t = ctx.kept.len();
    let mut out = DVector::zeros(n * len_t);
    for i in 0..n {
        for (pos, &l) in ctx.kept.iter().enumerate() {
            out[i * len_t + pos] = match cov {
                ScalarCovariate::Constant(v) => v[i],
                ScalarCovariate::Series(m) => m[(i, l - spec.lag)],
            };
        }
    }
    Ok(out)
}

fn build_intercept<T: Real>(
    spec: &TermSpec,
    ctx: &DesignContext<'_, T>,
    k_t: usize,
    meta: &mut TermMeta<T>,
) -> Result<Built<T>, TermError> {
    let (basis, phi) = t_block(spec, ctx, k_t)?;
    let pt = difference_penalty(k_t, spec.t_order).map_err(err_basis(&spec.id))?;
    meta.basis_t = Some(basis);
    Ok((
        phi,
        vec![PenaltyBlock {
            slot: format!("{}.t", spec.id),
            matrix: pt.matrix().clone(),
        }],
    ))
}

fn build_linear<T: Real>(
    spec: &TermSpec,
    ctx: &DesignContext<'_, T>,
    x: &str,
    k_t: Option<usize>,
    meta: &mut TermMeta<T>,
) -> Result<Built<T>, TermError> {
    let col = scalar_rows(spec, ctx, x)?;
    let xmat = DMatrix::from_column_slice(col.len(), 1, col.as_slice());
    match k_t {
        None => Ok((xmat, Vec::new())),
        Some(k_t) => {
            let (basis, bt) = t_block(spec, ctx, k_t)?;
            let phi = row_tensor(&xmat, &bt).map_err(err_basis(&spec.id))?;
            let pt = difference_penalty(k_t, spec.t_order).map_err(err_basis(&spec.id))?;
            meta.basis_t = Some(basis);
            Ok((
                phi,
                vec![PenaltyBlock {
                    slot: format!("{}.t", spec.id),
                    matrix: pt.matrix().clone(),
                }],
            ))
        }
    }
}

fn spread<T: Real>(values: &DVector<T>) -> T {
    let n = real::<T>(values.len() as f64);
    let mean = values.sum() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).fold(T::zero(), |a, b| a + b) / n;
    var.sqrt()
}

fn build_smooth<T: Real>(
    spec: &TermSpec,
    ctx: &DesignContext<'_, T>,
    x: &str,
    k_x: usize,
    k_t: Option<usize>,
    meta: &mut TermMeta<T>,
) -> Result<Built<T>, TermError> {
    if matches!(spec.kind, TermKind::ConcurrentSmooth { .. }) {
        match ctx.data.scalars.get(x) {
            Some(ScalarCovariate::Series(_)) => {}
            Some(_) => {
                return Err(TermError::NotASeries {
                    term: spec.id.clone(),
                    name: x.to_string(),
                })
            }
            None => {
                return Err(TermError::MissingCovariate {
                    term: spec.id.clone(),
                    name: x.to_string(),
                })
            }
        }
    }
    let values = scalar_rows(spec, ctx, x)?;
    if spread(&values) < real(DEGENERATE_SD_TOL) {
        return Err(TermError::DegenerateCovariate {
            term: spec.id.clone(),
            name: x.to_string(),
        });
    }
    let (lo, hi) = (values.min(), values.max());
    let basis_x = SplineBasis::uniform(lo, hi, k_x, 3).map_err(err_basis(&spec.id))?;
    let bx = basis_x
        .eval(values.as_slice())
        .map_err(err_basis(&spec.id))?;
    let px = difference_penalty(k_x, spec.x_order).map_err(err_basis(&spec.id))?;
    meta.basis_x = Some(basis_x);
    match k_t {
        None => Ok((
            bx,
            vec![PenaltyBlock {
                slot: format!("{}.x", spec.id),
                matrix: px.matrix().clone(),
            }],
        )),
        Some(k_t) => {
            let (basis_t, bt) = t_block(spec, ctx, k_t)?;
            let phi = row_tensor(&bx, &bt).map_err(err_basis(&spec.id))?;
            let pt = difference_penalty(k_t, spec.t_order).map_err(err_basis(&spec.id))?;
            meta.basis_t = Some(basis_t);
            Ok((
                phi,
                vec![
                    PenaltyBlock {
                        slot: format!("{}.x", spec.id),
                        matrix: tensor_penalty(&px, &PenaltyMatrix::zero(k_t), T::one(), T::zero()),
                    },
                    PenaltyBlock {
                        slot: format!("{}.t", spec.id),
                        matrix: tensor_penalty(&PenaltyMatrix::zero(k_x), &pt, T::zero(), T::one()),
                    },
                ],
            ))
        }
    }
}

fn build_interaction<T: Real>(
    spec: &TermSpec,
    ctx: &DesignContext<'_, T>,
    x1: &str,
    x2: &str,
    k_x: usize,
    meta: &mut TermMeta<T>,
) -> Result<Built<T>, TermError> {
    let v1 = scalar_rows(spec, ctx, x1)?;
    let v2 = scalar_rows(spec, ctx, x2)?;
    for (name, v) in [(x1, &v1), (x2, &v2)] {
        if spread(v) < real(DEGENERATE_SD_TOL) {
            return Err(TermError::DegenerateCovariate {
                term: spec.id.clone(),
                name: name.to_string(),
            });
        }
    }
    let b1 = SplineBasis::uniform(v1.min(), v1.max(), k_x, 3).map_err(err_basis(&spec.id))?;
    let b2 = SplineBasis::uniform(v2.min(), v2.max(), k_x, 3).map_err(err_basis(&spec.id))?;
    let e1 = b1.eval(v1.as_slice()).map_err(err_basis(&spec.id))?;
    let e2 = b2.eval(v2.as_slice()).map_err(err_basis(&spec.id))?;
    let phi = row_tensor(&e1, &e2).map_err(err_basis(&spec.id))?;
    let p1 = difference_penalty(k_x, spec.x_order).map_err(err_basis(&spec.id))?;
    let p2 = difference_penalty(k_x, spec.x_order).map_err(err_basis(&spec.id))?;
    meta.basis_x = Some(b1);
    meta.basis_t = Some(b2);
    Ok((
        phi,
        vec![
            PenaltyBlock {
                slot: format!("{}.x", spec.id),
                matrix: tensor_penalty(&p1, &PenaltyMatrix::zero(k_x), T::one(), T::zero()),
            },
            PenaltyBlock {
                slot: format!("{}.t", spec.id),
                matrix: tensor_penalty(&PenaltyMatrix::zero(k_x), &p2, T::zero(), T::one()),
            },
        ],
    ))
}

/// Quadrature cross-products of the covariate curves with the s-basis:
/// row `i`, column `k` is `Σ_m w_m x_i(s_m) φ_k(s_m)`.
fn functional_marginal<T: Real>(
    curves: &DMatrix<T>,
    grid_s: &Grid<T>,
    basis_s: &SplineBasis<T>,
) -> Result<DMatrix<T>, BasisError> {
    let pts: Vec<T> = grid_s.points().iter().copied().collect();
    let eval = basis_s.eval(&pts)?;
    let mut weighted = eval.clone();
    for (m, mut row) in weighted.row_iter_mut().enumerate() {
        row *= grid_s.weights()[m];
    }
    Ok(curves * weighted)
}

fn build_fun_on_fun<T: Real>(
    spec: &TermSpec,
    ctx: &DesignContext<'_, T>,
    x: &str,
    k_s: usize,
    k_t: usize,
    clr_input: bool,
    meta: &mut TermMeta<T>,
) -> Result<Built<T>, TermError> {
    debug_assert!(!clr_input);
    let cov = ctx
        .data
        .functionals
        .get(x)
        .ok_or_else(|| TermError::MissingCovariate {
            term: spec.id.clone(),
            name: x.to_string(),
        })?;
    let basis_s = SplineBasis::uniform(
        cov.grid.points()[0],
        cov.grid.points()[cov.grid.len() - 1],
        k_s,
        3,
    )
    .map_err(err_basis(&spec.id))?;
    let marginal =
        functional_marginal(&cov.curves, &cov.grid, &basis_s).map_err(err_basis(&spec.id))?;
    let xs = expand_over_time(&marginal, ctx.kept.len());
    let (basis_t, bt) = t_block(spec, ctx, k_t)?;
    let phi = row_tensor(&xs, &bt).map_err(err_basis(&spec.id))?;
    let ps = difference_penalty(k_s, spec.x_order).map_err(err_basis(&spec.id))?;
    let pt = difference_penalty(k_t, spec.t_order).map_err(err_basis(&spec.id))?;
    meta.basis_x = Some(basis_s);
    meta.basis_t = Some(basis_t);
    meta.grid_s = Some(cov.grid.clone());
    Ok((
        phi,
        vec![
            PenaltyBlock {
                slot: format!("{}.x", spec.id),
                matrix: tensor_penalty(&ps, &PenaltyMatrix::zero(k_t), T::one(), T::zero()),
            },
            PenaltyBlock {
                slot: format!("{}.t", spec.id),
                matrix: tensor_penalty(&PenaltyMatrix::zero(k_s), &pt, T::zero(), T::one()),
            },
        ],
    ))
}

fn build_composition<T: Real>(
    spec: &TermSpec,
    ctx: &DesignContext<'_, T>,
    x: &str,
    k_t: Option<usize>,
    meta: &mut TermMeta<T>,
) -> Result<Built<T>, TermError> {
    let comps = ctx
        .data
        .compositions
        .get(x)
        .ok_or_else(|| TermError::MissingCovariate {
            term: spec.id.clone(),
            name: x.to_string(),
        })?;
    let n = ctx.data.n_regions();
    let d = comps[0].dim();
    for c in comps {
        if c.dim() != d {
            return Err(err_simplex(&spec.id)(SimplexError::DimensionMismatch {
                left: d,
                right: c.dim(),
            }));
        }
    }
    let mut ilr_mat = DMatrix::zeros(n, d - 1);
    for (i, c) in comps.iter().enumerate() {
        let z = ilr_pivot(c);
        ilr_mat.row_mut(i).copy_from(&z.coords().transpose());
    }
    meta.ilr_dim = Some(d);
    meta.kappa = Some(comps[0].kappa());
    let xs = expand_over_time(&ilr_mat, ctx.kept.len());
    match k_t {
        None => Ok((xs, Vec::new())),
        Some(k_t) => {
            let (basis_t, bt) = t_block(spec, ctx, k_t)?;
            let phi = row_tensor(&xs, &bt).map_err(err_basis(&spec.id))?;
            let pt = difference_penalty(k_t, spec.t_order).map_err(err_basis(&spec.id))?;
            meta.basis_t = Some(basis_t);
            // one shared t-penalty across the D-1 ilr coordinates
            Ok((
                phi,
                vec![PenaltyBlock {
                    slot: format!("{}.t", spec.id),
                    matrix: tensor_penalty(
                        &PenaltyMatrix::zero(d - 1),
                        &pt,
                        T::zero(),
                        T::one(),
                    ),
                }],
            ))
        }
    }
}

fn build_fun_composition<T: Real>(
    spec: &TermSpec,
    ctx: &DesignContext<'_, T>,
    x: &str,
    k_s: usize,
    k_t: usize,
    meta: &mut TermMeta<T>,
) -> Result<Built<T>, TermError> {
    let densities = ctx
        .data
        .densities
        .get(x)
        .ok_or_else(|| TermError::MissingCovariate {
            term: spec.id.clone(),
            name: x.to_string(),
        })?;
    let grid_s = densities[0].grid().clone();
    for d in densities {
        if d.grid() != &grid_s {
            return Err(TermError::GridMismatch {
                term: spec.id.clone(),
            });
        }
    }
    let n = ctx.data.n_regions();
    let s_len = grid_s.len();
    let mut clr_curves = DMatrix::zeros(n, s_len);
    for (i, d) in densities.iter().enumerate() {
        clr_curves
            .row_mut(i)
            .copy_from(&clr_density(d).values().transpose());
    }
    // degenerate case: identical densities confound the term with the intercept
    let mut max_spread = T::zero();
    for j in 0..s_len {
        let col: DVector<T> = clr_curves.column(j).into();
        max_spread = max_spread.max(spread(&col));
    }
    if max_spread < real(DEGENERATE_SD_TOL) {
        meta.warnings.push(format!(
            "term '{}': all regions share one density; effect is confounded with the intercept",
            spec.id
        ));
    }

    let basis_s = SplineBasis::uniform(
        grid_s.points()[0],
        grid_s.points()[s_len - 1],
        k_s,
        3,
    )
    .map_err(err_basis(&spec.id))?;
    // integration-to-zero-for-each-t: constrain the s-marginal coefficients
    let pts: Vec<T> = grid_s.points().iter().copied().collect();
    let eval_s = basis_s.eval(&pts).map_err(err_basis(&spec.id))?;
    let c: RowDVector<T> = grid_s.weights().transpose() * &eval_s;
    let cmat = DMatrix::from_rows(&[c]);
    let map = constraint_nullspace(&cmat).map_err(err_basis(&spec.id))?;
    let z_s = map.z().clone();

    let marginal_raw =
        functional_marginal(&clr_curves, &grid_s, &basis_s).map_err(err_basis(&spec.id))?;
    let marginal = &marginal_raw * &z_s;
    let xs = expand_over_time(&marginal, ctx.kept.len());
    let (basis_t, bt) = t_block(spec, ctx, k_t)?;
    let phi = row_tensor(&xs, &bt).map_err(err_basis(&spec.id))?;

    let ps = difference_penalty::<T>(k_s, spec.x_order).map_err(err_basis(&spec.id))?;
    let ps_con = PenaltyMatrix::new(z_s.transpose() * ps.matrix() * &z_s, ps.order());
    let pt = difference_penalty(k_t, spec.t_order).map_err(err_basis(&spec.id))?;
    meta.basis_x = Some(basis_s);
    meta.basis_t = Some(basis_t);
    meta.grid_s = Some(grid_s);
    meta.z_s = Some(z_s);
    Ok((
        phi,
        vec![
            PenaltyBlock {
                slot: format!("{}.x", spec.id),
                matrix: tensor_penalty(&ps_con, &PenaltyMatrix::zero(k_t), T::one(), T::zero()),
            },
            PenaltyBlock {
                slot: format!("{}.t", spec.id),
                matrix: tensor_penalty(
                    &PenaltyMatrix::zero(k_s - 1),
                    &pt,
                    T::zero(),
                    T::one(),
                ),
            },
        ],
    ))
}

fn build_random_intercept<T: Real>(
    spec: &TermSpec,
    ctx: &DesignContext<'_, T>,
    group: &str,
    k_t: usize,
    graph: Option<&str>,
    meta: &mut TermMeta<T>,
) -> Result<Built<T>, TermError> {
    let gm = ctx
        .data
        .groups
        .get(group)
        .ok_or_else(|| TermError::MissingCovariate {
            term: spec.id.clone(),
            name: group.to_string(),
        })?;
    let m = gm.labels.len();
    if m < 2 {
        return Err(TermError::SingleLevelGroup {
            term: spec.id.clone(),
            group: group.to_string(),
        });
    }
    let n = ctx.data.n_regions();
    let mut indicators = DMatrix::zeros(n, m);
    for i in 0..n {
        let level = gm.level_of_region[i];
        if level >= m {
            return Err(TermError::UnknownLevel {
                term: spec.id.clone(),
                region: ctx.data.regions[i].clone(),
                level: level + 1,
                m,
            });
        }
        indicators[(i, level)] = T::one();
    }
    let px: PenaltyMatrix<T> = match graph {
        Some(name) => {
            let g = ctx
                .data
                .graphs
                .get(name)
                .ok_or_else(|| TermError::MissingCovariate {
                    term: spec.id.clone(),
                    name: name.to_string(),
                })?;
            if g.num_nodes() != m {
                return Err(TermError::InvalidPrecision {
                    term: spec.id.clone(),
                    got: g.num_nodes(),
                    m,
                });
            }
            mrf_precision(g)
        }
        None => PenaltyMatrix::identity(m),
    };
    let xs = expand_over_time(&indicators, ctx.kept.len());
    let (basis_t, bt) = t_block(spec, ctx, k_t)?;
    let phi = row_tensor(&xs, &bt).map_err(err_basis(&spec.id))?;
    let pt = difference_penalty(k_t, spec.t_order).map_err(err_basis(&spec.id))?;
    meta.basis_t = Some(basis_t);
    meta.levels = Some(gm.labels.clone());
    Ok((
        phi,
        vec![
            PenaltyBlock {
                slot: format!("{}.x", spec.id),
                matrix: tensor_penalty(&px, &PenaltyMatrix::zero(k_t), T::one(), T::zero()),
            },
            PenaltyBlock {
                slot: format!("{}.t", spec.id),
                matrix: tensor_penalty(&PenaltyMatrix::zero(m), &pt, T::zero(), T::one()),
            },
        ],
    ))
}

fn apply_by_variable<T: Real>(
    spec: &TermSpec,
    ctx: &DesignContext<'_, T>,
    mut phi: DMatrix<T>,
) -> Result<DMatrix<T>, TermError> {
    if let Some(by) = &spec.by {
        let gates = scalar_rows(spec, ctx, by)?;
        for (i, mut row) in phi.row_iter_mut().enumerate() {
            row *= gates[i];
        }
    }
    Ok(phi)
}

/// Sum-to-zero centering over observed rows for every penalized term,
/// preventing confounding with the functional intercept.
fn apply_centering<T: Real>(
    spec: &TermSpec,
    phi: DMatrix<T>,
    penalties: Vec<PenaltyBlock<T>>,
    meta: &mut TermMeta<T>,
) -> Result<Built<T>, TermError> {
    let centered = !matches!(
        spec.kind,
        TermKind::Intercept { .. }
            | TermKind::LinearScalar { .. }
            | TermKind::CompositionLinear { .. }
    );
    if !centered {
        return Ok((phi, penalties));
    }
    // Random intercepts get the stronger functional constraint
    // Σ_levels γ_l(t) = 0 for every t: each t-basis coefficient sums to zero
    // across levels. A single overall centering would leave the term's
    // population-mean time profile free and confounded with the intercept.
    if let TermKind::RandomIntercept { k_t, .. } = spec.kind {
        let p = phi.ncols();
        let m = p / k_t;
        let mut cmat = DMatrix::zeros(k_t, p);
        for j in 0..k_t {
            for l in 0..m {
                cmat[(j, l * k_t + j)] = T::one();
            }
        }
        let map = constraint_nullspace(&cmat).map_err(err_basis(&spec.id))?;
        let z = map.z().clone();
        let phi = &phi * &z;
        let penalties = penalties
            .into_iter()
            .map(|p| PenaltyBlock {
                slot: p.slot,
                matrix: z.transpose() * p.matrix * &z,
            })
            .collect();
        meta.z_center = Some(z);
        return Ok((phi, penalties));
    }
    let rows = real::<T>(phi.nrows() as f64);
    let means = phi.row_sum() / rows;
    if means.amax() < real(CENTERING_SKIP_TOL) {
        return Ok((phi, penalties));
    }
    let cmat = DMatrix::from_rows(&[means]);
    let map = constraint_nullspace(&cmat).map_err(err_basis(&spec.id))?;
    let z = map.z().clone();
    let phi = &phi * &z;
    let penalties = penalties
        .into_iter()
        .map(|p| PenaltyBlock {
            slot: p.slot,
            matrix: z.transpose() * p.matrix * &z,
        })
        .collect();
    meta.z_center = Some(z);
    Ok((phi, penalties))
}
