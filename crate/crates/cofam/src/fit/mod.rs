//! Penalized quasi-Poisson estimation: the P-IRLS inner loop, GCV
//! smoothing-parameter selection, dispersion and uncertainty, effect
//! extraction and residual diagnostics.

mod diagnostics;
mod extract;
mod model;
mod pirls;
mod select;

pub use diagnostics::{diagnostics, pooled_acf, ResidualBundle, ACF_MAX_LAG};
pub use extract::{
    extract_composition_effect, extract_effect, CompositionEffect, Effect, EffectCurve,
    EffectSurface,
};
pub use model::{fit_model, FitOptions, FittedModel, WaldRow};
pub use pirls::{penalized_score_norm, pirls, PirlsOptions, PirlsResult};
pub use select::{default_lambda_grid, select_lambda, LambdaChoice, SelectionResult, SlotPenalty};

use nalgebra::DVector;
use thiserror::Error;

use crate::real::{real, to_f64, Real};
use crate::terms::TermError;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("mean vector has a non-positive entry at index {index}")]
    NonPositiveMean { index: usize },
    #[error("penalized normal matrix is singular even after ridging")]
    SingularSystem,
    #[error("P-IRLS diverged at iteration {iter}: deviance kept increasing after 5 halvings")]
    Diverged { iter: usize },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("model must contain at least one term")]
    NoTerms,
    #[error("duplicate term id '{id}'")]
    DuplicateTermId { id: String },
    #[error("unknown term id '{id}'")]
    UnknownTerm { id: String },
    #[error("unknown smoothing slot '{slot}' in lambda override")]
    UnknownSlot { slot: String },
    #[error(transparent)]
    Term(#[from] TermError),
}

/// Quasi-Poisson log-likelihood kernel `Σ (y log μ − μ) / ξ`, up to
/// constants. Used for monitoring only.
pub fn quasi_poisson_loglik<T: Real>(
    y: &DVector<T>,
    mu: &DVector<T>,
    xi: T,
) -> Result<T, FitError> {
    if y.len() != mu.len() {
        return Err(FitError::DimensionMismatch {
            context: format!("y has {} entries, mu has {}", y.len(), mu.len()),
        });
    }
    let mut acc = T::zero();
    for (i, (&yi, &mi)) in y.iter().zip(mu.iter()).enumerate() {
        if mi <= T::zero() {
            return Err(FitError::NonPositiveMean { index: i });
        }
        acc += yi * mi.ln() - mi;
    }
    Ok(acc / xi)
}

/// Poisson deviance `2 Σ [y log(y/μ) − (y − μ)]`, with `y log(y/μ)` read as
/// zero when `y = 0`.
pub fn poisson_deviance<T: Real>(y: &DVector<T>, mu: &DVector<T>) -> T {
    let mut acc = T::zero();
    for (&yi, &mi) in y.iter().zip(mu.iter()) {
        let term = if yi > T::zero() {
            yi * (yi / mi).ln() - (yi - mi)
        } else {
            mi
        };
        acc += term;
    }
    acc + acc
}

/// Pearson statistic `Σ (y − μ)² / μ`.
pub fn pearson_statistic<T: Real>(y: &DVector<T>, mu: &DVector<T>) -> T {
    y.iter()
        .zip(mu.iter())
        .map(|(&yi, &mi)| (yi - mi) * (yi - mi) / mi)
        .fold(T::zero(), |a, b| a + b)
}

/// Dispersion `ξ̂ = PearsonSS / (n_obs − edf)`.
pub fn dispersion_estimate<T: Real>(y: &DVector<T>, mu: &DVector<T>, edf: T) -> T {
    pearson_statistic(y, mu) / (real::<T>(y.len() as f64) - edf)
}

/// Fraction of the offset-only null deviance explained by the model.
pub fn deviance_explained<T: Real>(y: &DVector<T>, mu: &DVector<T>, offsets: &DVector<T>) -> T {
    let total_y = y.sum();
    let total_exposure = offsets.map(|o| o.exp()).sum();
    let c = (total_y / total_exposure).ln();
    let mu_null = offsets.map(|o| (o + c).exp());
    let d_null = poisson_deviance(y, &mu_null);
    let d_model = poisson_deviance(y, mu);
    if d_null <= T::zero() {
        return T::zero();
    }
    T::one() - d_model / d_null
}

/// Standard normal survival function, accurate to about 1e-7.
pub fn normal_sf<T: Real>(z: T) -> T {
    let x = to_f64(z);
    real(0.5 * erfc_f64(x / std::f64::consts::SQRT_2))
}

/// Two-sided normal p-value for a Wald statistic.
pub fn wald_p_value<T: Real>(statistic: T) -> T {
    let p = to_f64(normal_sf(statistic.abs())) * 2.0;
    real(p.min(1.0))
}

// Abramowitz & Stegun 7.1.26 rational approximation, |error| < 1.5e-7.
fn erfc_f64(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc_f64(-x);
    }
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    poly * (-x * x).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn loglik_peaks_at_mu_equals_y() {
        let y = DVector::from_row_slice(&[3.0, 7.0, 1.0]);
        let at_y = quasi_poisson_loglik(&y, &y, 1.0).unwrap();
        for shift in [-0.5, -0.1, 0.1, 0.5] {
            let mu = y.map(|v: f64| (v + shift).max(0.05));
            let other = quasi_poisson_loglik(&y, &mu, 1.0).unwrap();
            assert!(other < at_y, "kernel not maximal at mu=y (shift {shift})");
        }
    }

    #[test]
    fn loglik_scaling_in_xi() {
        let y = DVector::from_row_slice(&[2.0, 4.0]);
        let mu = DVector::from_row_slice(&[2.5, 3.5]);
        let l1 = quasi_poisson_loglik(&y, &mu, 1.0).unwrap();
        let l5 = quasi_poisson_loglik(&y, &mu, 5.0).unwrap();
        assert_relative_eq!(l1 / 5.0, l5, epsilon = 1e-12);
    }

    #[test]
    fn loglik_rejects_nonpositive_mean() {
        let y = DVector::from_row_slice(&[1.0, 1.0]);
        let mu = DVector::from_row_slice(&[1.0, 0.0]);
        assert!(matches!(
            quasi_poisson_loglik(&y, &mu, 1.0),
            Err(FitError::NonPositiveMean { index: 1 })
        ));
    }

    #[test]
    fn deviance_zero_at_saturation_and_zero_counts() {
        let y = DVector::from_row_slice(&[0.0, 2.0, 5.0]);
        assert_relative_eq!(
            poisson_deviance(&y.map(|v: f64| v.max(1e-9)), &y.map(|v: f64| v.max(1e-9))),
            0.0,
            epsilon = 1e-6
        );
        // y = 0 contributes 2 mu
        let y0 = DVector::from_row_slice(&[0.0]);
        let mu = DVector::from_row_slice(&[3.0]);
        assert_relative_eq!(poisson_deviance(&y0, &mu), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn dispersion_zero_when_exact() {
        let y = DVector::from_row_slice(&[2.0, 3.0, 4.0]);
        assert_relative_eq!(dispersion_estimate(&y, &y, 1.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn deviance_explained_bounds() {
        let y = DVector::from_row_slice(&[1.0, 4.0, 2.0, 7.0]);
        let offsets = DVector::zeros(4);
        // saturated fit explains everything
        assert_relative_eq!(deviance_explained(&y, &y, &offsets), 1.0, epsilon = 1e-12);
        // the null fit itself explains nothing
        let c = y.sum() / 4.0;
        let mu_null = DVector::from_element(4, c);
        assert_relative_eq!(
            deviance_explained(&y, &mu_null, &offsets),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn normal_tail_values() {
        assert_relative_eq!(to_f64(normal_sf(0.0)), 0.5, epsilon = 1e-9);
        assert_relative_eq!(to_f64(normal_sf(1.959964)), 0.025, epsilon = 1e-6);
        assert_relative_eq!(wald_p_value(0.0), 1.0, epsilon = 1e-6);
        assert!(wald_p_value(5.0) < 1e-6);
    }
}
