//! Full-model assembly: stacking term designs, selecting smoothing
//! parameters, running the final P-IRLS pass, and inference summaries.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector};

use super::pirls::{pirls, PirlsOptions};
use super::select::{default_lambda_grid, select_lambda, LambdaChoice, SlotPenalty};
use super::{
    deviance_explained, dispersion_estimate, wald_p_value, FitError,
};
use crate::bayes::Grid;
use crate::real::{to_f64, Real};
use crate::terms::{build_term, max_lag, DataBundle, DesignContext, TermDesign, TermKind, TermSpec};

#[derive(Debug, Clone)]
pub struct FitOptions<T: Real> {
    /// Pinned smoothing parameters by slot name; pinned slots skip selection.
    pub lambda_overrides: BTreeMap<String, T>,
    pub grid: Vec<T>,
    pub max_sweeps: usize,
    pub pirls: PirlsOptions<T>,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            lambda_overrides: BTreeMap::new(),
            grid: default_lambda_grid(),
            max_sweeps: 5,
            pirls: PirlsOptions::default(),
        }
    }
}

/// One row of the Wald table for parametric (unpenalized scalar) terms.
#[derive(Debug, Clone)]
pub struct WaldRow<T: Real> {
    pub term: String,
    pub coef: String,
    pub estimate: T,
    pub se: T,
    pub statistic: T,
    pub p_value: T,
}

/// A fitted model, immutable after construction.
#[derive(Debug, Clone)]
pub struct FittedModel<T: Real> {
    pub regions: Vec<String>,
    pub grid_t: Grid<T>,
    /// Kept time indices (after lag-induced drops), shared by all terms.
    pub kept: Vec<usize>,
    /// Stacked response, region-major with t fast.
    pub y: DVector<T>,
    pub offsets: DVector<T>,
    pub terms: Vec<TermDesign<T>>,
    /// Coefficient range of each term in `theta`.
    pub ranges: Vec<Range<usize>>,
    pub theta: DVector<T>,
    pub mu: DVector<T>,
    pub lambda: BTreeMap<String, LambdaChoice<T>>,
    pub dispersion: T,
    pub edf: T,
    pub deviance: T,
    pub deviance_explained: T,
    /// Coefficient covariance `ξ (ΦᵀWΦ + S)⁻¹`.
    pub cov: DMatrix<T>,
    pub log: Vec<String>,
}

impl<T: Real> FittedModel<T> {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn term_index(&self, id: &str) -> Result<usize, FitError> {
        self.terms
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| FitError::UnknownTerm { id: id.to_string() })
    }

    pub fn term_coefs(&self, idx: usize) -> DVector<T> {
        let r = &self.ranges[idx];
        self.theta.rows(r.start, r.end - r.start).into()
    }

    pub fn term_cov(&self, idx: usize) -> DMatrix<T> {
        let r = &self.ranges[idx];
        self.cov
            .view((r.start, r.start), (r.end - r.start, r.end - r.start))
            .into()
    }

    /// Fitted means as an `n x |kept|` matrix (regions by kept times).
    pub fn mu_matrix(&self) -> DMatrix<T> {
        let len_t = self.kept.len();
        DMatrix::from_fn(self.regions.len(), len_t, |i, l| self.mu[i * len_t + l])
    }

    /// Stacked linear predictor without the offset.
    pub fn eta_lin(&self) -> DVector<T> {
        let mut eta = DVector::zeros(self.n_obs());
        for (term, r) in self.terms.iter().zip(&self.ranges) {
            let theta: DVector<T> = self.theta.rows(r.start, r.end - r.start).into();
            eta += &term.phi * theta;
        }
        eta
    }

    /// Wald rows for every parametric term coefficient.
    pub fn wald_table(&self) -> Vec<WaldRow<T>> {
        let mut rows = Vec::new();
        for (idx, term) in self.terms.iter().enumerate() {
            if !term.meta.spec.is_parametric() {
                continue;
            }
            let theta = self.term_coefs(idx);
            let cov = self.term_cov(idx);
            for j in 0..theta.len() {
                let coef = match &term.meta.spec.kind {
                    TermKind::CompositionLinear { .. } => format!("{}.ilr{}", term.id, j + 1),
                    _ => term.id.clone(),
                };
                let se = cov[(j, j)].max(T::zero()).sqrt();
                let statistic = if se > T::zero() {
                    theta[j] / se
                } else {
                    T::zero()
                };
                rows.push(WaldRow {
                    term: term.id.clone(),
                    coef,
                    estimate: theta[j],
                    se,
                    statistic,
                    p_value: wald_p_value(statistic),
                });
            }
        }
        rows
    }
}

fn stack_cells<T: Real>(values: &DMatrix<T>, kept: &[usize]) -> DVector<T> {
    let n = values.nrows();
    let len_t = kept.len();
    DVector::from_fn(n * len_t, |row, _| {
        let (i, pos) = (row / len_t, row % len_t);
        values[(i, kept[pos])]
    })
}

/// Build all term designs, select smoothing parameters, and run the final
/// penalized fit. Deterministic: identical inputs give identical outputs.
pub fn fit_model<T: Real>(
    specs: &[TermSpec],
    data: &DataBundle<T>,
    opts: &FitOptions<T>,
) -> Result<FittedModel<T>, FitError> {
    if specs.is_empty() {
        return Err(FitError::NoTerms);
    }
    for (i, a) in specs.iter().enumerate() {
        if specs[i + 1..].iter().any(|b| b.id == a.id) {
            return Err(FitError::DuplicateTermId { id: a.id.clone() });
        }
    }

    let drop = max_lag(specs);
    let kept: Vec<usize> = (drop..data.n_times()).collect();
    let ctx = DesignContext { data, kept: &kept };
    let y = stack_cells(&data.y, &kept);
    let offsets = stack_cells(&data.offsets, &kept);

    let mut terms = Vec::with_capacity(specs.len());
    let mut ranges = Vec::with_capacity(specs.len());
    let mut p = 0usize;
    for spec in specs {
        let td = build_term(spec, &ctx)?;
        ranges.push(p..p + td.num_coefs());
        p += td.num_coefs();
        terms.push(td);
    }

    let n_obs = y.len();
    let mut phi = DMatrix::zeros(n_obs, p);
    for (term, r) in terms.iter().zip(&ranges) {
        phi.view_mut((0, r.start), (n_obs, r.end - r.start))
            .copy_from(&term.phi);
    }

    // embed each term's penalty blocks into the full coefficient space
    let mut slots: Vec<SlotPenalty<T>> = Vec::new();
    for (term, r) in terms.iter().zip(&ranges) {
        for block in &term.penalties {
            let mut full = DMatrix::zeros(p, p);
            full.view_mut((r.start, r.start), (block.matrix.nrows(), block.matrix.ncols()))
                .copy_from(&block.matrix);
            slots.push(SlotPenalty {
                slot: block.slot.clone(),
                matrix: full,
                pinned: opts.lambda_overrides.get(&block.slot).copied(),
            });
        }
    }
    for slot in opts.lambda_overrides.keys() {
        if !slots.iter().any(|s| &s.slot == slot) {
            return Err(FitError::UnknownSlot { slot: slot.clone() });
        }
    }

    let mut log: Vec<String> = Vec::new();
    for term in &terms {
        log.extend(term.meta.warnings.iter().cloned());
    }

    let (lambda, warm) = if slots.is_empty() {
        (BTreeMap::new(), None)
    } else if slots.iter().all(|s| s.pinned.is_some()) {
        let map = slots
            .iter()
            .map(|s| {
                (
                    s.slot.clone(),
                    LambdaChoice {
                        value: s.pinned.unwrap(),
                        fixed: true,
                        at_edge: false,
                    },
                )
            })
            .collect();
        log.push("all smoothing parameters fixed by override".to_string());
        (map, None)
    } else {
        let sel = select_lambda(&y, &offsets, &phi, &slots, &opts.grid, opts.max_sweeps, &opts.pirls)?;
        log.extend(sel.log.iter().cloned());
        log.push(format!("lambda selection finished after {} sweep(s)", sel.sweeps));
        (sel.lambdas, Some(sel.theta))
    };

    let mut s = DMatrix::zeros(p, p);
    for slot in &slots {
        s += &slot.matrix * lambda[&slot.slot].value;
    }

    let res = pirls(&y, &offsets, &phi, &s, warm.as_ref(), &opts.pirls)?;
    log.push(format!(
        "final P-IRLS: {} iteration(s), converged = {}, ridge = {}",
        res.iterations, res.converged, res.used_ridge
    ));

    let edf = res.edf;
    let dispersion = dispersion_estimate(&y, &res.mu, edf);
    let dev_expl = deviance_explained(&y, &res.mu, &offsets);

    // covariance at the converged weights
    let mut wphi = phi.clone();
    for i in 0..n_obs {
        wphi.row_mut(i).scale_mut(res.mu[i]);
    }
    let a = phi.transpose() * &wphi + &s;
    let chol = Cholesky::new(a).ok_or(FitError::SingularSystem)?;
    let cov = chol.inverse() * dispersion;

    log.push(format!(
        "edf = {:.3}, dispersion = {:.4}, deviance explained = {:.4}",
        to_f64(edf),
        to_f64(dispersion),
        to_f64(dev_expl)
    ));

    Ok(FittedModel {
        regions: data.regions.clone(),
        grid_t: data.grid_t.clone(),
        kept,
        y,
        offsets,
        terms,
        ranges,
        theta: res.theta,
        mu: res.mu,
        lambda,
        dispersion,
        edf,
        deviance: res.deviance,
        deviance_explained: dev_expl,
        cov,
        log,
    })
}
