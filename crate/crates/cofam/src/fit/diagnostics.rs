//! Residual diagnostics: scaled Pearson residuals and their pooled
//! autocorrelation across regions.

use nalgebra::{DMatrix, DVector};

use super::model::FittedModel;
use crate::real::{real, Real};

/// Number of lags reported by the pooled ACF.
pub const ACF_MAX_LAG: usize = 30;

#[derive(Debug, Clone)]
pub struct ResidualBundle<T: Real> {
    /// Scaled Pearson residuals `(y − μ)/sqrt(ξμ)`, stacked like the fit.
    pub scaled_pearson: DVector<T>,
    /// Pooled within-region autocorrelations at lags `1..=ACF_MAX_LAG`.
    pub acf: Vec<T>,
    /// Observed counts by region and kept time.
    pub observed: DMatrix<T>,
    /// Fitted means by region and kept time.
    pub fitted: DMatrix<T>,
}

/// Pooled ACF of per-region residual series: products are summed within
/// regions only, never across region boundaries.
pub fn pooled_acf<T: Real>(residuals: &DMatrix<T>, max_lag: usize) -> Vec<T> {
    let (n, len_t) = residuals.shape();
    let denom: T = residuals.iter().map(|&r| r * r).fold(T::zero(), |a, b| a + b);
    let mut out = Vec::with_capacity(max_lag);
    for lag in 1..=max_lag {
        let mut num = T::zero();
        if lag < len_t {
            for i in 0..n {
                for l in 0..len_t - lag {
                    num += residuals[(i, l)] * residuals[(i, l + lag)];
                }
            }
        }
        out.push(if denom > T::zero() { num / denom } else { T::zero() });
    }
    out
}

/// Residual bundle for a fitted model.
pub fn diagnostics<T: Real>(fitted: &FittedModel<T>) -> ResidualBundle<T> {
    let xi = fitted.dispersion.max(real(1e-12));
    let scaled = DVector::from_fn(fitted.n_obs(), |i, _| {
        (fitted.y[i] - fitted.mu[i]) / (xi * fitted.mu[i]).sqrt()
    });
    let n = fitted.regions.len();
    let len_t = fitted.kept.len();
    let resid_mat = DMatrix::from_fn(n, len_t, |i, l| scaled[i * len_t + l]);
    let observed = DMatrix::from_fn(n, len_t, |i, l| fitted.y[i * len_t + l]);
    ResidualBundle {
        scaled_pearson: scaled,
        acf: pooled_acf(&resid_mat, ACF_MAX_LAG),
        observed,
        fitted: fitted.mu_matrix(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn exact_fit_means_zero_residuals() {
        let r: DMatrix<f64> = DMatrix::zeros(3, 10);
        for a in pooled_acf(&r, 5) {
            assert_eq!(a, 0.0);
        }
    }

    #[test]
    fn white_noise_acf_stays_in_bounds() {
        let mut rng = StdRng::seed_from_u64(301);
        let n = 40;
        let len_t = 60;
        let r = DMatrix::from_fn(n, len_t, |_, _| rng.sample::<f64, _>(StandardNormal));
        let acf = pooled_acf(&r, ACF_MAX_LAG);
        let bound = 2.0 / ((n * len_t) as f64).sqrt();
        let inside = acf.iter().filter(|a| a.abs() <= bound).count();
        assert!(
            inside >= 28,
            "only {inside}/30 lags within ±{bound:.4} for white noise"
        );
    }

    #[test]
    fn perfectly_correlated_series_has_acf_near_one() {
        // constant residual within each region: every lag correlates fully
        let r = DMatrix::from_fn(5, 20, |i, _| (i as f64 + 1.0) * 0.5);
        let acf = pooled_acf(&r, 3);
        // lag h keeps (len_t − h)/len_t of the mass
        for (h, a) in acf.iter().enumerate() {
            assert_relative_eq!(*a, (20.0 - (h as f64 + 1.0)) / 20.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn acf_does_not_cross_region_boundaries() {
        // alternating-sign regions: any cross-boundary product would flip
        // the lag-1 value away from the within-region figure
        let mut r = DMatrix::zeros(2, 4);
        for l in 0..4 {
            r[(0, l)] = 1.0;
            r[(1, l)] = -1.0;
        }
        let acf = pooled_acf(&r, 1);
        assert_relative_eq!(acf[0], 0.75, epsilon = 1e-12);
    }
}
