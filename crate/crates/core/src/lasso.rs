//! Weighted Gaussian Lasso by cyclic coordinate descent.
//!
//! Objective, with weights `w_i = n_i* / n` summing to one:
//!
//! ```text
//! sum_i w_i (y_i - b0 - x_i . b)^2 + lambda * ||b||_1
//! ```
//!
//! which is the unweighted objective of the explicitly expanded `n`-row
//! resample divided by `n`. The intercept is never penalized.

use serde::{Deserialize, Serialize};

use crate::design::{weighted_problem, Design};
use crate::error::{Error, Result};
use crate::model::{Family, FitResult, GroupedDataset, PenaltyConfig, PenaltyKind};
use crate::resample::WeightedSample;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcdSettings {
    pub max_sweeps: usize,
    /// Largest absolute coefficient change allowed in a converged sweep.
    pub tolerance: f64,
    pub active_set: bool,
}

impl Default for CcdSettings {
    fn default() -> Self {
        Self {
            max_sweeps: 10_000,
            tolerance: 1e-7,
            active_set: true,
        }
    }
}

impl CcdSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_sweeps == 0 {
            return Err(Error::InvalidConfig(
                "CCD needs tolerance > 0 and max_sweeps >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `sign(z) * max(|z| - t, 0)`.
pub fn soft_threshold<F: Scalar>(z: F, t: F) -> F {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        F::zero()
    }
}

/// Fits the weighted Lasso on the raw columns of `d` restricted to the rows of `w`.
pub fn fit_lasso_weighted<F: Scalar>(
    d: &GroupedDataset<F>,
    w: &WeightedSample,
    penalty: &PenaltyConfig<F>,
    settings: &CcdSettings,
) -> Result<FitResult<F>> {
    if d.family != Family::Gaussian {
        return Err(Error::Unsupported {
            penalty: "lasso (coordinate descent)",
            family: d.family.name(),
        });
    }
    if penalty.kind != PenaltyKind::Lasso {
        return Err(Error::InvalidConfig(
            "fit_lasso_weighted needs a Lasso penalty".into(),
        ));
    }
    penalty.validate()?;
    settings.validate()?;
    let (design, weights) = weighted_problem(d, w)?;
    Ok(lasso_ccd(&design, &weights, penalty.lambda, settings, None))
}

/// Maximum KKT violation of `beta` for the weighted Lasso on the raw columns.
pub fn kkt_check_lasso<F: Scalar>(
    d: &GroupedDataset<F>,
    w: &WeightedSample,
    penalty: &PenaltyConfig<F>,
    beta: &[F],
) -> Result<F> {
    if beta.len() != d.p() + 1 {
        return Err(Error::LengthMismatch(format!(
            "beta has {} entries, expected {}",
            beta.len(),
            d.p() + 1
        )));
    }
    let (design, weights) = weighted_problem(d, w)?;
    Ok(lasso_kkt(&design, &weights, penalty.lambda, beta))
}

pub(crate) fn residuals<F: Scalar>(design: &Design<F>, beta: &[F]) -> Vec<F> {
    design
        .linear_predictor(beta)
        .into_iter()
        .zip(design.y())
        .map(|(e, &y)| y - e)
        .collect()
}

pub(crate) fn lasso_objective<F: Scalar>(design: &Design<F>, w: &[F], lambda: F, beta: &[F]) -> F {
    let r = residuals(design, beta);
    let loss: F = r.iter().zip(w).map(|(&r, &w)| w * r * r).sum();
    loss + lambda * beta[1..].iter().map(|b| b.abs()).sum::<F>()
}

/// KKT violation for the working-set problem: intercept gradient plus the
/// worst subgradient violation over penalized coordinates.
pub(crate) fn lasso_kkt<F: Scalar>(design: &Design<F>, w: &[F], lambda: F, beta: &[F]) -> F {
    let r = residuals(design, beta);
    let two = F::two();
    let g0 = -two * r.iter().zip(w).map(|(&r, &w)| w * r).sum::<F>();
    let mut worst = g0.abs();
    for j in 0..design.p() {
        if design.is_pinned(j) {
            continue;
        }
        let grad = -two
            * design
                .col(j)
                .iter()
                .zip(&r)
                .zip(w)
                .map(|((&x, &r), &w)| w * x * r)
                .sum::<F>();
        let b = beta[j + 1];
        let v = if b != F::zero() {
            (grad + lambda * b.signum()).abs()
        } else {
            (grad.abs() - lambda).max(F::zero())
        };
        worst = worst.max(v);
    }
    worst
}

/// Core CCD on a prepared design. `warm` is an optional starting point on the design's scale.
pub(crate) fn lasso_ccd<F: Scalar>(
    design: &Design<F>,
    w: &[F],
    lambda: F,
    settings: &CcdSettings,
    warm: Option<&[F]>,
) -> FitResult<F> {
    let p = design.p();
    let mut beta = match warm {
        Some(b) => b.to_vec(),
        None => vec![F::zero(); p + 1],
    };
    for j in 0..p {
        if design.is_pinned(j) {
            beta[j + 1] = F::zero();
        }
    }
    let second_moment: Vec<F> = (0..p)
        .map(|j| design.col(j).iter().zip(w).map(|(&x, &w)| w * x * x).sum())
        .collect();
    let usable: Vec<bool> = (0..p)
        .map(|j| !design.is_pinned(j) && second_moment[j] > F::zero())
        .collect();
    for j in 0..p {
        if !usable[j] {
            beta[j + 1] = F::zero();
        }
    }
    let mut r = residuals(design, &beta);
    let half_lambda = lambda * F::half();
    let tol = F::of(settings.tolerance);

    // one coordinate pass over `coords`; returns the largest change
    let sweep = |coords: &mut dyn Iterator<Item = usize>, beta: &mut [F], r: &mut [F]| -> F {
        let mut max_change = F::zero();
        let shift: F = r.iter().zip(w).map(|(&r, &w)| w * r).sum();
        if shift != F::zero() {
            beta[0] = beta[0] + shift;
            r.iter_mut().for_each(|v| *v = *v - shift);
            max_change = shift.abs();
        }
        for j in coords {
            let col = design.col(j);
            let old = beta[j + 1];
            let rho = col
                .iter()
                .zip(r.iter())
                .zip(w)
                .map(|((&x, &r), &w)| w * x * r)
                .sum::<F>()
                + old * second_moment[j];
            let new = soft_threshold(rho, half_lambda) / second_moment[j];
            if new != old {
                let delta = new - old;
                for (ri, &x) in r.iter_mut().zip(col) {
                    *ri = *ri - x * delta;
                }
                beta[j + 1] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    };

    let all: Vec<usize> = (0..p).filter(|&j| usable[j]).collect();
    let mut sweeps = 0;
    let mut converged = false;
    #[cfg(debug_assertions)]
    let mut last_obj = lasso_objective(design, w, lambda, &beta);
    while sweeps < settings.max_sweeps {
        sweeps += 1;
        let change = sweep(&mut all.iter().copied(), &mut beta, &mut r);
        #[cfg(debug_assertions)]
        {
            let obj = lasso_objective(design, w, lambda, &beta);
            debug_assert!(
                obj <= last_obj + F::of(1e-9) * (last_obj.abs() + F::one()),
                "objective increased: {last_obj} -> {obj}"
            );
            last_obj = obj;
        }
        if change < tol {
            converged = true;
            break;
        }
        if settings.active_set {
            let active: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&j| beta[j + 1] != F::zero())
                .collect();
            while sweeps < settings.max_sweeps {
                sweeps += 1;
                if sweep(&mut active.iter().copied(), &mut beta, &mut r) < tol {
                    break;
                }
            }
        }
    }
    let objective = lasso_objective(design, w, lambda, &beta);
    FitResult {
        selected: FitResult::selection(design.groups(), &beta),
        beta,
        objective,
        iterations: sweeps,
        converged,
        separated: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GroupStructure;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0f64, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5f64, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0f64, 1.0), -2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let z: f64 = rng.random_range(-10.0..10.0);
            assert_eq!(soft_threshold(z, 0.0), z);
        }
    }

    fn random_problem(n: usize, p: usize, seed: u64) -> GroupedDataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-2.0..2.0));
        let y = (0..n)
            .map(|i| 1.0 + 2.0 * x[[i, 0]] - x[[i, 1]] + rng.random_range(-0.5..0.5))
            .collect();
        GroupedDataset::new(x, y, GroupStructure::singletons(p), Family::Gaussian).unwrap()
    }

    #[test]
    fn single_predictor_matches_grid_search() {
        // oracle: brute-force minimisation of the 1-D objective over a fine grid
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40;
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let x: Vec<f64> = raw.iter().map(|v| (v - mean) / sd).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| 1.5 * v + rng.random_range(-0.3..0.3))
            .collect();
        let ybar = y.iter().sum::<f64>() / n as f64;
        let lambda = 0.4;
        let d = GroupedDataset::new(
            Array2::from_shape_vec((n, 1), x.clone()).unwrap(),
            y.clone(),
            GroupStructure::singletons(1),
            Family::Gaussian,
        )
        .unwrap();
        let fit = fit_lasso_weighted(
            &d,
            &WeightedSample::unit(n),
            &PenaltyConfig::lasso(lambda),
            &CcdSettings::default(),
        )
        .unwrap();
        // intercept is ybar for centered x, so the grid is over the slope only
        let obj = |b: f64| {
            x.iter()
                .zip(&y)
                .map(|(&xi, &yi)| (yi - ybar - b * xi).powi(2))
                .sum::<f64>()
                / n as f64
                + lambda * b.abs()
        };
        let mut best = (f64::INFINITY, 0.0);
        let mut k = 0i64;
        while k <= 2_000_000 {
            let b = -10.0 + k as f64 * 1e-5;
            let o = obj(b);
            if o < best.0 {
                best = (o, b);
            }
            k += 1;
        }
        assert!(
            (fit.beta[1] - best.1).abs() < 1e-5,
            "{} vs {}",
            fit.beta[1],
            best.1
        );
        let xty = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        assert!((fit.beta[1] - soft_threshold(xty, lambda / 2.0)).abs() < 1e-9);
        assert!((fit.beta[0] - ybar).abs() < 1e-9);
    }

    #[test]
    fn zero_lambda_is_least_squares() {
        let d = random_problem(30, 3, 9);
        let fit = fit_lasso_weighted(
            &d,
            &WeightedSample::unit(30),
            &PenaltyConfig::lasso(0.0),
            &CcdSettings {
                tolerance: 1e-12,
                ..Default::default()
            },
        )
        .unwrap();
        // normal equations X'X b = X'y with intercept column
        let n = 30;
        let mut a = [[0.0f64; 4]; 4];
        let mut rhs = [0.0f64; 4];
        for i in 0..n {
            let row = [1.0, d.x[[i, 0]], d.x[[i, 1]], d.x[[i, 2]]];
            for r in 0..4 {
                rhs[r] += row[r] * d.y[i];
                for c in 0..4 {
                    a[r][c] += row[r] * row[c];
                }
            }
        }
        for r in 0..4 {
            let lhs: f64 = (0..4).map(|c| a[r][c] * fit.beta[c]).sum();
            assert!((lhs - rhs[r]).abs() < 1e-8 * n as f64, "row {r}");
        }
    }

    #[test]
    fn huge_lambda_zeroes_everything() {
        let d = random_problem(25, 4, 2);
        let fit = fit_lasso_weighted(
            &d,
            &WeightedSample::unit(25),
            &PenaltyConfig::lasso(1e6),
            &CcdSettings::default(),
        )
        .unwrap();
        assert!(fit.beta[1..].iter().all(|&b| b == 0.0));
        let ybar = d.y.iter().sum::<f64>() / 25.0;
        assert!((fit.beta[0] - ybar).abs() < 1e-12);
        assert!(fit.selected.iter().all(|s| !s));
        assert_eq!(
            kkt_check_lasso(
                &d,
                &WeightedSample::unit(25),
                &PenaltyConfig::lasso(1e6),
                &fit.beta
            )
            .unwrap()
                < 1e-12,
            true
        );
    }

    #[test]
    fn solver_output_passes_kkt_and_beats_perturbations() {
        let d = random_problem(50, 5, 17);
        let w = WeightedSample::unit(50);
        let pen = PenaltyConfig::lasso(0.1);
        let fit = fit_lasso_weighted(&d, &w, &pen, &CcdSettings::default()).unwrap();
        assert!(fit.converged);
        let opt = kkt_check_lasso(&d, &w, &pen, &fit.beta).unwrap();
        assert!(opt < 1e-5, "kkt {opt}");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let b: Vec<f64> = fit
                .beta
                .iter()
                .map(|v| v + rng.random_range(-0.3..0.3))
                .collect();
            assert!(kkt_check_lasso(&d, &w, &pen, &b).unwrap() > opt);
        }
    }

    #[test]
    fn rejects_binomial() {
        let mut d = random_problem(10, 2, 1);
        d.family = Family::Binomial;
        assert!(fit_lasso_weighted(
            &d,
            &WeightedSample::unit(10),
            &PenaltyConfig::lasso(0.1),
            &CcdSettings::default()
        )
        .is_err());
    }
}
