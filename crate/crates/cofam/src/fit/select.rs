//! GCV smoothing-parameter selection by coordinate descent over a
//! per-slot log-spaced grid.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::pirls::{pirls, PirlsOptions};
use super::{pearson_statistic, FitError};
use crate::real::{real, to_f64, Real};

/// One smoothing slot, with its penalty already embedded in the full
/// coefficient space. A pinned slot keeps its value and is skipped by the
/// search.
#[derive(Debug, Clone)]
pub struct SlotPenalty<T: Real> {
    pub slot: String,
    pub matrix: DMatrix<T>,
    pub pinned: Option<T>,
}

/// A selected (or pinned) smoothing parameter.
#[derive(Debug, Clone, Copy)]
pub struct LambdaChoice<T: Real> {
    pub value: T,
    /// True when the user pinned this value instead of the search choosing it.
    pub fixed: bool,
    /// True when the search settled on a grid endpoint.
    pub at_edge: bool,
}

#[derive(Debug, Clone)]
pub struct SelectionResult<T: Real> {
    pub lambdas: BTreeMap<String, LambdaChoice<T>>,
    /// Coefficients of the best evaluation, reusable as a warm start.
    pub theta: DVector<T>,
    pub gcv: T,
    pub sweeps: usize,
    pub log: Vec<String>,
}

/// `10^{-4}, 10^{-3.5}, …, 10^{8}` — 25 grid points.
pub fn default_lambda_grid<T: Real>() -> Vec<T> {
    (0..25)
        .map(|i| real(10f64.powf(-4.0 + 0.5 * i as f64)))
        .collect()
}

fn total_penalty<T: Real>(slots: &[SlotPenalty<T>], lambdas: &[T], p: usize) -> DMatrix<T> {
    let mut s = DMatrix::zeros(p, p);
    for (slot, &lam) in slots.iter().zip(lambdas) {
        s += &slot.matrix * lam;
    }
    s
}

/// GCV score `n · PearsonSS / (n − edf)²` for a given fit.
fn gcv_score<T: Real>(n: usize, pearson: T, edf: T) -> T {
    let n_t = real::<T>(n as f64);
    let denom = n_t - edf;
    if denom <= T::zero() {
        return real(f64::INFINITY);
    }
    n_t * pearson / (denom * denom)
}

/// Coordinate-descent GCV search. Each free slot is profiled over the grid
/// in turn, warm-starting the coefficients between evaluations; sweeps stop
/// when no slot moves or after `max_sweeps`.
pub fn select_lambda<T: Real>(
    y: &DVector<T>,
    offsets: &DVector<T>,
    phi: &DMatrix<T>,
    slots: &[SlotPenalty<T>],
    grid: &[T],
    max_sweeps: usize,
    pirls_opts: &PirlsOptions<T>,
) -> Result<SelectionResult<T>, FitError> {
    assert!(!slots.is_empty(), "selection needs at least one slot");
    let n = y.len();
    let p = phi.ncols();
    let mut log = Vec::new();

    let mut lambdas: Vec<T> = slots
        .iter()
        .map(|s| s.pinned.unwrap_or_else(T::one))
        .collect();
    let mut warm: Option<DVector<T>>;
    let mut best_gcv: T;

    // evaluate the starting point so a fully-pinned problem still yields theta
    {
        let s = total_penalty(slots, &lambdas, p);
        let res = pirls(y, offsets, phi, &s, None, pirls_opts)?;
        best_gcv = gcv_score(n, pearson_statistic(y, &res.mu), res.edf);
        warm = Some(res.theta);
    }

    let mut sweeps = 0;
    for sweep in 1..=max_sweeps {
        sweeps = sweep;
        let mut changed = false;
        for (k, slot) in slots.iter().enumerate() {
            if slot.pinned.is_some() {
                continue;
            }
            let mut slot_best = lambdas[k];
            let mut slot_best_gcv = real::<T>(f64::INFINITY);
            let mut slot_best_theta = warm.clone();
            for &lam in grid {
                let mut trial = lambdas.clone();
                trial[k] = lam;
                let s = total_penalty(slots, &trial, p);
                let res = pirls(y, offsets, phi, &s, warm.as_ref(), pirls_opts)?;
                let g = gcv_score(n, pearson_statistic(y, &res.mu), res.edf);
                if g < slot_best_gcv {
                    slot_best_gcv = g;
                    slot_best = lam;
                    slot_best_theta = Some(res.theta);
                }
            }
            if slot_best != lambdas[k] {
                changed = true;
            }
            lambdas[k] = slot_best;
            best_gcv = slot_best_gcv;
            warm = slot_best_theta;
            log.push(format!(
                "sweep {sweep}: slot '{}' -> lambda {:.4e} (GCV {:.6e})",
                slot.slot,
                to_f64(slot_best),
                to_f64(slot_best_gcv)
            ));
        }
        if !changed {
            break;
        }
    }

    let lo = grid.first().copied().unwrap_or_else(T::one);
    let hi = grid.last().copied().unwrap_or_else(T::one);
    let mut out = BTreeMap::new();
    for (slot, &lam) in slots.iter().zip(&lambdas) {
        let fixed = slot.pinned.is_some();
        let at_edge = !fixed && (lam == lo || lam == hi);
        if at_edge {
            log.push(format!(
                "warning: slot '{}' selected a grid endpoint ({:.1e})",
                slot.slot,
                to_f64(lam)
            ));
        }
        out.insert(
            slot.slot.clone(),
            LambdaChoice {
                value: lam,
                fixed,
                at_edge,
            },
        );
    }
    Ok(SelectionResult {
        lambdas: out,
        theta: warm.expect("at least one evaluation ran"),
        gcv: best_gcv,
        sweeps,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{difference_penalty, SplineBasis};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn spline_problem(
        rng: &mut StdRng,
        n: usize,
        k: usize,
        truth: impl Fn(f64) -> f64,
    ) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let basis = SplineBasis::uniform(0.0, 1.0, k, 3).unwrap();
        let phi = basis.eval(&grid).unwrap();
        let y = DVector::from_fn(n, |i, _| {
            let lam: f64 = truth(grid[i]).exp();
            rng.sample(rand_distr::Poisson::new(lam).unwrap())
        });
        let s = difference_penalty::<f64>(k, 2).unwrap().matrix().clone();
        (y, phi, s)
    }

    #[test]
    fn single_slot_matches_exhaustive_search() {
        let mut rng = StdRng::seed_from_u64(101);
        let (y, phi, s) = spline_problem(&mut rng, 150, 10, |t| 1.5 + 0.9 * (4.0 * t).sin());
        let offsets = DVector::zeros(150);
        let slots = vec![SlotPenalty {
            slot: "f.t".into(),
            matrix: s.clone(),
            pinned: None,
        }];
        let grid = default_lambda_grid::<f64>();
        let opts = PirlsOptions::default();
        let sel = select_lambda(&y, &offsets, &phi, &slots, &grid, 5, &opts).unwrap();

        // exhaustive reference over the same grid, cold starts
        let mut best = (f64::INFINITY, grid[0]);
        for &lam in &grid {
            let res = pirls(&y, &offsets, &phi, &(&s * lam), None, &opts).unwrap();
            let g = gcv_score(150, pearson_statistic(&y, &res.mu), res.edf);
            if g < best.0 {
                best = (g, lam);
            }
        }
        assert_eq!(sel.lambdas["f.t"].value, best.1);
    }

    #[test]
    fn pure_noise_selects_heavy_smoothing() {
        let mut rng = StdRng::seed_from_u64(103);
        let (y, phi, s) = spline_problem(&mut rng, 200, 10, |_| 1.6);
        let offsets = DVector::zeros(200);
        let slots = vec![SlotPenalty {
            slot: "f.t".into(),
            matrix: s.clone(),
            pinned: None,
        }];
        let grid = default_lambda_grid::<f64>();
        let opts = PirlsOptions::default();
        let sel = select_lambda(&y, &offsets, &phi, &slots, &grid, 5, &opts).unwrap();
        let lam = sel.lambdas["f.t"].value;
        assert!(lam >= 1.0, "flat truth should smooth hard, got {lam}");
        let res = pirls(&y, &offsets, &phi, &(&s * lam), None, &opts).unwrap();
        // near the null-space dimension of a second-order penalty
        assert!(res.edf < 4.0, "edf {} too large for a flat truth", res.edf);
    }

    #[test]
    fn wiggly_truth_beats_maximal_smoothing() {
        let mut rng = StdRng::seed_from_u64(107);
        let truth = |t: f64| 2.5 + 1.2 * (14.0 * t).sin();
        let (y, phi, s) = spline_problem(&mut rng, 300, 18, truth);
        let offsets = DVector::zeros(300);
        let slots = vec![SlotPenalty {
            slot: "f.t".into(),
            matrix: s.clone(),
            pinned: None,
        }];
        let grid = default_lambda_grid::<f64>();
        let opts = PirlsOptions::default();
        let sel = select_lambda(&y, &offsets, &phi, &slots, &grid, 5, &opts).unwrap();
        let lam = sel.lambdas["f.t"].value;
        assert!(lam < 1e3, "wiggly truth wants light smoothing, got {lam}");

        let rise = |lam: f64| {
            let res = pirls(&y, &offsets, &phi, &(&s * lam), None, &opts).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..300 {
                let t = i as f64 / 299.0;
                let eta = res.mu[i].ln();
                num += (eta - truth(t)).powi(2);
                den += truth(t).powi(2);
            }
            num / den
        };
        assert!(rise(lam) < rise(*grid.last().unwrap()));
    }

    #[test]
    fn edf_monotone_in_lambda() {
        let mut rng = StdRng::seed_from_u64(109);
        let (y, phi, s) = spline_problem(&mut rng, 150, 12, |t| 1.8 + 0.7 * (5.0 * t).cos());
        let offsets = DVector::zeros(150);
        let opts = PirlsOptions::default();
        let mut last = f64::INFINITY;
        for &lam in &default_lambda_grid::<f64>() {
            let res = pirls(&y, &offsets, &phi, &(&s * lam), None, &opts).unwrap();
            assert!(
                res.edf <= last + 1e-6,
                "edf not monotone: {} after {}",
                res.edf,
                last
            );
            last = res.edf;
        }
    }

    #[test]
    fn pinned_slot_is_untouched() {
        let mut rng = StdRng::seed_from_u64(113);
        let (y, phi, s) = spline_problem(&mut rng, 120, 8, |t| 1.4 + 0.5 * (3.0 * t).sin());
        let offsets = DVector::zeros(120);
        let slots = vec![SlotPenalty {
            slot: "f.t".into(),
            matrix: s,
            pinned: Some(42.0),
        }];
        let grid = default_lambda_grid::<f64>();
        let sel = select_lambda(
            &y,
            &offsets,
            &phi,
            &slots,
            &grid,
            5,
            &PirlsOptions::default(),
        )
        .unwrap();
        let choice = &sel.lambdas["f.t"];
        assert_eq!(choice.value, 42.0);
        assert!(choice.fixed);
    }
}
