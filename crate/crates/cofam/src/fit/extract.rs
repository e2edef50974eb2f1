//! Effect extraction: mapping fitted coefficients back to curves, surfaces,
//! simplicial gradients and relative-ratio tables, with pointwise bands.

use nalgebra::{DMatrix, DVector};

use super::model::FittedModel;
use super::FitError;
use crate::basis::SplineBasis;
use crate::real::{real, Real};
use crate::simplex::{
    clr, relative_ratio_effect, simplicial_gradient, ClrVector, Composition, IlrVector,
};
use crate::terms::{TermKind, TermMeta};

/// Half-width multiplier of the pointwise 95% bands.
pub const BAND_Z: f64 = 1.959964;

/// A curve effect on a one-dimensional argument grid.
#[derive(Debug, Clone)]
pub struct EffectCurve<T: Real> {
    pub arg: Vec<T>,
    pub estimate: DVector<T>,
    pub se: DVector<T>,
}

impl<T: Real> EffectCurve<T> {
    pub fn lower(&self) -> DVector<T> {
        let z = real::<T>(BAND_Z);
        DVector::from_fn(self.estimate.len(), |i, _| self.estimate[i] - z * self.se[i])
    }

    pub fn upper(&self) -> DVector<T> {
        let z = real::<T>(BAND_Z);
        DVector::from_fn(self.estimate.len(), |i, _| self.estimate[i] + z * self.se[i])
    }
}

/// A bivariate effect; `estimate[(a, b)]` pairs `arg1[a]` with `arg2[b]`.
#[derive(Debug, Clone)]
pub struct EffectSurface<T: Real> {
    pub arg1: Vec<T>,
    pub arg2: Vec<T>,
    pub estimate: DMatrix<T>,
    pub se: DMatrix<T>,
}

/// A time-constant compositional effect in every coordinate system.
#[derive(Debug, Clone)]
pub struct CompositionEffect<T: Real> {
    /// Estimated ilr coefficients and their covariance block.
    pub ilr: IlrVector<T>,
    pub cov: DMatrix<T>,
    /// Simplicial gradient `b = ilr⁻¹(β̂)`.
    pub gradient: Composition<T>,
    pub clr_b: ClrVector<T>,
}

impl<T: Real> CompositionEffect<T> {
    /// Multiplicative factor on the mean when part `j` is perturbed by `α`
    /// relative to the others: `α^{clr(b)_j}` for every part.
    pub fn ratio_factors(&self, alpha: T) -> Vec<T> {
        self.clr_b
            .coords()
            .iter()
            .map(|&c| relative_ratio_effect(c, alpha))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum Effect<T: Real> {
    Scalar { estimate: T, se: T },
    Curve(EffectCurve<T>),
    Surface(EffectSurface<T>),
    /// One curve per group level, labeled.
    LevelCurves(Vec<(String, EffectCurve<T>)>),
    Composition(CompositionEffect<T>),
    /// Per-ilr-coordinate coefficient curves of a time-varying composition
    /// effect.
    CompositionCurves(Vec<EffectCurve<T>>),
}

fn linspace<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    let step = (hi - lo) / real((n - 1) as f64);
    (0..n)
        // pin the endpoint: accumulated rounding in `lo + step*i` can
        // overshoot `hi` by an ulp and leave the basis domain
        .map(|i| if i + 1 == n { hi } else { lo + step * real(i as f64) })
        .collect()
}

/// Curve/surface evaluation from a design `R` mapping the term's reduced
/// coefficients to effect values: estimate `Rθ`, se `sqrt(diag(R Σ Rᵀ))`.
fn evaluate<T: Real>(r: &DMatrix<T>, theta: &DVector<T>, cov: &DMatrix<T>) -> (DVector<T>, DVector<T>) {
    let estimate = r * theta;
    let rc = r * cov;
    let se = DVector::from_fn(r.nrows(), |i, _| {
        let v = rc.row(i).dot(&r.row(i));
        v.max(T::zero()).sqrt()
    });
    (estimate, se)
}

fn curve_design<T: Real>(
    basis: &SplineBasis<T>,
    args: &[T],
    meta: &TermMeta<T>,
) -> Result<DMatrix<T>, FitError> {
    let raw = basis
        .eval(args)
        .map_err(|e| FitError::Term(crate::terms::TermError::Basis {
            term: meta.spec.id.clone(),
            source: e,
        }))?;
    Ok(match &meta.z_center {
        Some(z) => raw * z,
        None => raw,
    })
}

/// Tensor-style design rows over the grid `(a, b)` for coefficients ordered
/// a-slow / b-fast, with `ea`/`eb` the marginal evaluations.
fn surface_design<T: Real>(
    ea: &DMatrix<T>,
    eb: &DMatrix<T>,
    meta: &TermMeta<T>,
) -> DMatrix<T> {
    let (na, ka) = ea.shape();
    let (nb, kb) = eb.shape();
    let mut raw = DMatrix::zeros(na * nb, ka * kb);
    for a in 0..na {
        for b in 0..nb {
            let row = a * nb + b;
            for i in 0..ka {
                for j in 0..kb {
                    raw[(row, i * kb + j)] = ea[(a, i)] * eb[(b, j)];
                }
            }
        }
    }
    match &meta.z_center {
        Some(z) => raw * z,
        None => raw,
    }
}

fn to_surface<T: Real>(
    arg1: Vec<T>,
    arg2: Vec<T>,
    est: DVector<T>,
    se: DVector<T>,
) -> EffectSurface<T> {
    let (na, nb) = (arg1.len(), arg2.len());
    EffectSurface {
        arg1,
        arg2,
        estimate: DMatrix::from_fn(na, nb, |a, b| est[a * nb + b]),
        se: DMatrix::from_fn(na, nb, |a, b| se[a * nb + b]),
    }
}

/// Extract a term's effect on its natural evaluation grid: the response time
/// grid for `t`, 101 points across the covariate range for smooths, and the
/// density grid for `s`.
pub fn extract_effect<T: Real>(fitted: &FittedModel<T>, id: &str) -> Result<Effect<T>, FitError> {
    let idx = fitted.term_index(id)?;
    let term = &fitted.terms[idx];
    let meta = &term.meta;
    let theta = fitted.term_coefs(idx);
    let cov = fitted.term_cov(idx);
    let t_args: Vec<T> = fitted.grid_t.points().iter().copied().collect();

    match &meta.spec.kind {
        TermKind::Intercept { .. } => {
            let basis = meta.basis_t.as_ref().expect("intercept keeps its t-basis");
            let r = curve_design(basis, &t_args, meta)?;
            let (estimate, se) = evaluate(&r, &theta, &cov);
            Ok(Effect::Curve(EffectCurve { arg: t_args, estimate, se }))
        }
        TermKind::LinearScalar { .. } => Ok(Effect::Scalar {
            estimate: theta[0],
            se: cov[(0, 0)].max(T::zero()).sqrt(),
        }),
        TermKind::LinearScalarTv { .. } => {
            let basis = meta.basis_t.as_ref().expect("tv term keeps its t-basis");
            let r = curve_design(basis, &t_args, meta)?;
            let (estimate, se) = evaluate(&r, &theta, &cov);
            Ok(Effect::Curve(EffectCurve { arg: t_args, estimate, se }))
        }
        TermKind::SmoothScalar { .. } | TermKind::ConcurrentSmooth { .. } => {
            let basis = meta.basis_x.as_ref().expect("smooth keeps its x-basis");
            let args = linspace(basis.min(), basis.max(), 101);
            let r = curve_design(basis, &args, meta)?;
            let (estimate, se) = evaluate(&r, &theta, &cov);
            Ok(Effect::Curve(EffectCurve { arg: args, estimate, se }))
        }
        TermKind::SmoothScalarTv { .. } => {
            let bx = meta.basis_x.as_ref().expect("x-basis");
            let bt = meta.basis_t.as_ref().expect("t-basis");
            let xs = linspace(bx.min(), bx.max(), 41);
            let ea = bx.eval(&xs).map_err(term_basis_err(meta))?;
            let eb = bt.eval(&t_args).map_err(term_basis_err(meta))?;
            let r = surface_design(&ea, &eb, meta);
            let (est, se) = evaluate(&r, &theta, &cov);
            Ok(Effect::Surface(to_surface(xs, t_args, est, se)))
        }
        TermKind::TensorInteraction { .. } => {
            let b1 = meta.basis_x.as_ref().expect("x1-basis");
            let b2 = meta.basis_t.as_ref().expect("x2-basis");
            let a1 = linspace(b1.min(), b1.max(), 41);
            let a2 = linspace(b2.min(), b2.max(), 41);
            let e1 = b1.eval(&a1).map_err(term_basis_err(meta))?;
            let e2 = b2.eval(&a2).map_err(term_basis_err(meta))?;
            let r = surface_design(&e1, &e2, meta);
            let (est, se) = evaluate(&r, &theta, &cov);
            Ok(Effect::Surface(to_surface(a1, a2, est, se)))
        }
        TermKind::FunOnFun { .. } | TermKind::FunComposition { .. } => {
            let bs = meta.basis_x.as_ref().expect("s-basis");
            let bt = meta.basis_t.as_ref().expect("t-basis");
            let grid_s = meta.grid_s.as_ref().expect("s-grid");
            let s_args: Vec<T> = grid_s.points().iter().copied().collect();
            let mut es = bs.eval(&s_args).map_err(term_basis_err(meta))?;
            if let Some(z_s) = &meta.z_s {
                es = es * z_s;
            }
            let et = bt.eval(&t_args).map_err(term_basis_err(meta))?;
            let r = surface_design(&es, &et, meta);
            let (est, se) = evaluate(&r, &theta, &cov);
            Ok(Effect::Surface(to_surface(s_args, t_args, est, se)))
        }
        TermKind::CompositionLinear { .. } => {
            Ok(Effect::Composition(composition_effect(meta, &theta, &cov)))
        }
        TermKind::CompositionLinearTv { .. } => {
            let bt = meta.basis_t.as_ref().expect("t-basis");
            let k_t = bt.num_basis();
            let d1 = meta.ilr_dim.expect("ilr dimension") - 1;
            let et = bt.eval(&t_args).map_err(term_basis_err(meta))?;
            let mut curves = Vec::with_capacity(d1);
            for j in 0..d1 {
                // design rows selecting coordinate j's coefficient block
                let mut raw = DMatrix::zeros(t_args.len(), d1 * k_t);
                for (row, _) in t_args.iter().enumerate() {
                    for k in 0..k_t {
                        raw[(row, j * k_t + k)] = et[(row, k)];
                    }
                }
                let r = match &meta.z_center {
                    Some(z) => raw * z,
                    None => raw,
                };
                let (estimate, se) = evaluate(&r, &theta, &cov);
                curves.push(EffectCurve {
                    arg: t_args.clone(),
                    estimate,
                    se,
                });
            }
            Ok(Effect::CompositionCurves(curves))
        }
        TermKind::RandomIntercept { .. } => {
            let bt = meta.basis_t.as_ref().expect("t-basis");
            let k_t = bt.num_basis();
            let labels = meta.levels.as_ref().expect("group labels");
            let et = bt.eval(&t_args).map_err(term_basis_err(meta))?;
            let mut out = Vec::with_capacity(labels.len());
            for (m, label) in labels.iter().enumerate() {
                let mut raw = DMatrix::zeros(t_args.len(), labels.len() * k_t);
                for row in 0..t_args.len() {
                    for k in 0..k_t {
                        raw[(row, m * k_t + k)] = et[(row, k)];
                    }
                }
                let r = match &meta.z_center {
                    Some(z) => raw * z,
                    None => raw,
                };
                let (estimate, se) = evaluate(&r, &theta, &cov);
                out.push((
                    label.clone(),
                    EffectCurve {
                        arg: t_args.clone(),
                        estimate,
                        se,
                    },
                ));
            }
            Ok(Effect::LevelCurves(out))
        }
    }
}

fn term_basis_err<T: Real>(
    meta: &TermMeta<T>,
) -> impl Fn(crate::basis::BasisError) -> FitError + '_ {
    move |e| {
        FitError::Term(crate::terms::TermError::Basis {
            term: meta.spec.id.clone(),
            source: e,
        })
    }
}

fn composition_effect<T: Real>(
    meta: &TermMeta<T>,
    theta: &DVector<T>,
    cov: &DMatrix<T>,
) -> CompositionEffect<T> {
    let kappa = meta.kappa.unwrap_or_else(T::one);
    let ilr = IlrVector::new(theta.clone());
    let gradient = simplicial_gradient(&ilr, kappa);
    let clr_b = clr(&gradient);
    CompositionEffect {
        ilr,
        cov: cov.clone(),
        gradient,
        clr_b,
    }
}

/// Shortcut for time-constant compositional terms.
pub fn extract_composition_effect<T: Real>(
    fitted: &FittedModel<T>,
    id: &str,
) -> Result<CompositionEffect<T>, FitError> {
    match extract_effect(fitted, id)? {
        Effect::Composition(c) => Ok(c),
        _ => Err(FitError::UnknownTerm {
            id: format!("{id} (not a time-constant composition term)"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::to_f64;
    use approx::assert_relative_eq;

    #[test]
    fn zero_coefficients_give_uniform_gradient_and_unit_ratios() {
        let spec = crate::terms::TermSpec::new(
            "comp",
            TermKind::CompositionLinear { x: "c".into() },
        );
        let meta = {
            let mut m = dummy_meta(spec);
            m.ilr_dim = Some(4);
            m.kappa = Some(1.0);
            m
        };
        let theta = DVector::zeros(3);
        let cov = DMatrix::identity(3, 3);
        let eff = composition_effect(&meta, &theta, &cov);
        for p in eff.gradient.parts().iter() {
            assert_relative_eq!(*p, 0.25, epsilon = 1e-12);
        }
        for f in eff.ratio_factors(1.1) {
            assert_relative_eq!(f, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn clr_of_gradient_sums_to_zero() {
        let spec = crate::terms::TermSpec::new(
            "comp",
            TermKind::CompositionLinear { x: "c".into() },
        );
        let mut meta = dummy_meta(spec);
        meta.ilr_dim = Some(4);
        meta.kappa = Some(1.0);
        let theta = DVector::from_row_slice(&[1.3, -0.4, 0.9]);
        let eff = composition_effect(&meta, &theta, &DMatrix::identity(3, 3));
        assert!(to_f64(eff.clr_b.coords().sum()).abs() < 1e-10);
    }

    #[test]
    fn published_ratio_factor_from_extraction() {
        // clr coefficient 5.747 with a 10% relative increase
        assert_relative_eq!(relative_ratio_effect(5.747, 1.1), 1.729, epsilon = 1e-3);
    }

    #[test]
    fn bands_are_symmetric_about_the_estimate() {
        let c = EffectCurve {
            arg: vec![0.0, 1.0],
            estimate: DVector::from_row_slice(&[2.0, -1.0]),
            se: DVector::from_row_slice(&[0.5, 0.25]),
        };
        let lo = c.lower();
        let hi = c.upper();
        for i in 0..2 {
            assert_relative_eq!(
                c.estimate[i] - lo[i],
                hi[i] - c.estimate[i],
                epsilon = 1e-12
            );
        }
        assert_relative_eq!(hi[0] - lo[0], 2.0 * 1.959964 * 0.5, epsilon = 1e-9);
    }

    fn dummy_meta(spec: crate::terms::TermSpec) -> TermMeta<f64> {
        // minimal metadata for direct helper tests
        TermMeta {
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
}
