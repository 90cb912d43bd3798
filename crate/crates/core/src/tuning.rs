//! Regularization paths and weighted K-fold cross-validation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{renormalize, weighted_problem, Design};
use crate::error::{Error, Result};
use crate::fit::{fit_design, prediction_loss, SolverSettings};
use crate::model::{Family, FitResult, GroupedDataset, PenaltyConfig, PenaltyKind};
use crate::resample::WeightedSample;
use crate::scalar::Scalar;

/// Descending, log-spaced penalty grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPath<F> {
    pub lambda_max: F,
    pub grid: Vec<F>,
}

impl<F: Scalar> LambdaPath<F> {
    /// `len` values from `lambda_max` down to `lambda_max * ratio`.
    ///
    /// A degenerate `lambda_max` of zero (nothing to penalize) yields a
    /// single-point grid at the smallest positive value.
    pub fn new(lambda_max: F, len: usize, ratio: F) -> Result<Self> {
        if len == 0 || !(ratio > F::zero() && ratio < F::one()) {
            return Err(Error::InvalidConfig(
                "lambda path needs len >= 1 and ratio in (0, 1)".into(),
            ));
        }
        if !(lambda_max > F::zero()) {
            return Ok(Self {
                lambda_max: F::zero(),
                grid: vec![F::min_positive_value()],
            });
        }
        let grid = if len == 1 {
            vec![lambda_max]
        } else {
            let step = ratio.ln() / F::of_count(len - 1);
            (0..len)
                .map(|k| lambda_max * (step * F::of_count(k)).exp())
                .collect()
        };
        Ok(Self { lambda_max, grid })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvRule {
    #[default]
    Min,
    OneStandardError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult<F> {
    pub per_lambda_error: Vec<F>,
    /// Standard error of the fold-level losses at each grid point.
    pub per_lambda_se: Vec<F>,
    pub chosen_lambda: F,
    pub chosen_index: usize,
    pub rule: CvRule,
}

/// Knobs of the per-resample tuning procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    pub path_len: usize,
    pub min_ratio: f64,
    pub folds: usize,
    pub rule: CvRule,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            path_len: 50,
            min_ratio: 1e-3,
            folds: 10,
            rule: CvRule::Min,
        }
    }
}

/// Smallest penalty at which every penalized coefficient of `d` is zero.
pub fn lambda_max<F: Scalar>(
    d: &GroupedDataset<F>,
    w: &WeightedSample,
    penalty: &PenaltyConfig<F>,
) -> Result<F> {
    let (design, weights) = weighted_problem(d, w)?;
    Ok(lambda_max_design(&design, &weights, penalty))
}

/// Null-model intercept: weighted mean, or its logit.
pub(crate) fn null_intercept<F: Scalar>(design: &Design<F>, w: &[F]) -> F {
    let total: F = w.iter().copied().sum();
    let ybar = design.y().iter().zip(w).map(|(&y, &w)| w * y).sum::<F>() / total;
    match design.family() {
        Family::Gaussian => ybar,
        Family::Binomial => (ybar / (F::one() - ybar)).ln(),
    }
}

pub fn lambda_max_design<F: Scalar>(design: &Design<F>, w: &[F], penalty: &PenaltyConfig<F>) -> F {
    let total: F = w.iter().copied().sum();
    let ybar = design.y().iter().zip(w).map(|(&y, &w)| w * y).sum::<F>() / total;
    let scores: Vec<F> = design
        .y()
        .iter()
        .map(|&y| match design.family() {
            Family::Gaussian => -F::two() * (y - ybar),
            Family::Binomial => ybar - y,
        })
        .collect();
    let grad = |j: usize| -> F {
        design
            .col(j)
            .iter()
            .zip(&scores)
            .zip(w)
            .map(|((&x, &s), &w)| w * x * s)
            .sum::<F>()
            / total
    };
    let mut best = F::zero();
    match penalty.kind {
        PenaltyKind::Lasso => {
            for j in (0..design.p()).filter(|&j| !design.is_pinned(j)) {
                best = best.max(grad(j).abs());
            }
        }
        PenaltyKind::GroupLasso => {
            for g in design.groups().iter() {
                let norm = g
                    .iter()
                    .filter(|&&j| !design.is_pinned(j))
                    .map(|&j| {
                        let v = grad(j);
                        v * v
                    })
                    .sum::<F>()
                    .sqrt();
                best = best.max(norm / penalty.rescale.weight::<F>(g.len()));
            }
        }
    }
    best
}

/// Fits every grid point in order, warm-starting each from the previous solution.
pub fn fit_path<F: Scalar>(
    design: &Design<F>,
    w: &[F],
    penalty: &PenaltyConfig<F>,
    path: &LambdaPath<F>,
    settings: &SolverSettings,
) -> Vec<FitResult<F>> {
    let mut out: Vec<FitResult<F>> = Vec::with_capacity(path.len());
    for &lambda in &path.grid {
        let warm = out.last().map(|f| f.beta.clone()).unwrap_or_else(|| {
            let mut b = vec![F::zero(); design.p() + 1];
            b[0] = null_intercept(design, w);
            b
        });
        let warm = if warm[0].is_finite() {
            Some(warm)
        } else {
            None
        };
        out.push(fit_design(
            design,
            w,
            &penalty.with_lambda(lambda),
            settings,
            warm.as_deref(),
        ));
    }
    out
}

/// Random fold label for each of `rows` rows; fold sizes differ by at most one.
pub fn assign_folds<R: Rng + ?Sized>(rows: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidConfig("cross-validation needs K >= 2".into()));
    }
    if k > rows {
        return Err(Error::FoldTooSmall {
            fold: rows,
            k,
            rows,
        });
    }
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(rng);
    let mut folds = vec![0; rows];
    for (pos, &row) in order.iter().enumerate() {
        folds[row] = pos % k;
    }
    Ok(folds)
}

/// K-fold cross-validation over the distinct rows of a weighted design.
///
/// Every row keeps its resample weight in whichever fold it lands; training
/// weights are renormalized so the penalty keeps its scale.
pub fn cross_validate_design<F: Scalar, R: Rng + ?Sized>(
    design: &Design<F>,
    w: &[F],
    penalty: &PenaltyConfig<F>,
    path: &LambdaPath<F>,
    k: usize,
    rule: CvRule,
    settings: &SolverSettings,
    rng: &mut R,
) -> Result<CvResult<F>> {
    let folds = assign_folds(design.rows(), k, rng)?;
    let total: F = w.iter().copied().sum();
    if total == F::zero() {
        return Err(Error::ZeroWeightTotal);
    }
    let l = path.len();
    let mut err = vec![F::zero(); l];
    let mut fold_losses: Vec<Vec<F>> = Vec::with_capacity(k);
    let mut fold_weights: Vec<F> = Vec::with_capacity(k);
    for fold in 0..k {
        let (val, train): (Vec<usize>, Vec<usize>) =
            (0..design.rows()).partition(|&i| folds[i] == fold);
        if val.is_empty() {
            return Err(Error::FoldTooSmall {
                fold,
                k,
                rows: design.rows(),
            });
        }
        let val_w: Vec<F> = val.iter().map(|&i| w[i]).collect();
        let val_total: F = val_w.iter().copied().sum();
        let train_w_raw: Vec<F> = train.iter().map(|&i| w[i]).collect();
        let Some(train_w) = renormalize(&train_w_raw) else {
            // nothing to train on: predict with the null model of the whole design
            let mut null = vec![F::zero(); design.p() + 1];
            null[0] = null_intercept(design, w);
            let loss = prediction_loss(&design.select_rows(&val), &val_w, &null);
            err.iter_mut().for_each(|e| *e = *e + val_total * loss);
            fold_losses.push(vec![loss; l]);
            fold_weights.push(val_total);
            continue;
        };
        let train_design = design.select_rows(&train);
        let val_design = design.select_rows(&val);
        let fits = fit_path(&train_design, &train_w, penalty, path, settings);
        let losses: Vec<F> = fits
            .iter()
            .map(|f| {
                if val_total == F::zero() {
                    F::zero()
                } else {
                    prediction_loss(&val_design, &val_w, &f.beta)
                }
            })
            .collect();
        for (e, &loss) in err.iter_mut().zip(&losses) {
            *e = *e + val_total * loss;
        }
        fold_losses.push(losses);
        fold_weights.push(val_total);
    }
    let per_lambda_error: Vec<F> = err.into_iter().map(|e| e / total).collect();
    let kf = F::of_count(k);
    let per_lambda_se: Vec<F> = (0..l)
        .map(|t| {
            let var = fold_losses
                .iter()
                .zip(&fold_weights)
                .map(|(fl, &fw)| {
                    let d = fl[t] - per_lambda_error[t];
                    fw * d * d
                })
                .sum::<F>()
                / total;
            (var / (kf - F::one()).max(F::one())).sqrt()
        })
        .collect();
    let min_index = per_lambda_error
        .iter()
        .enumerate()
        .fold(
            0,
            |best, (i, &e)| if e < per_lambda_error[best] { i } else { best },
        );
    let chosen_index = match rule {
        CvRule::Min => min_index,
        CvRule::OneStandardError => {
            let limit = per_lambda_error[min_index] + per_lambda_se[min_index];
            (0..=min_index)
                .find(|&i| per_lambda_error[i] <= limit)
                .unwrap_or(min_index)
        }
    };
    Ok(CvResult {
        per_lambda_error,
        per_lambda_se,
        chosen_lambda: path.grid[chosen_index],
        chosen_index,
        rule,
    })
}

/// Cross-validation on the raw columns of `d` over the rows of `w`.
pub fn cross_validate<F: Scalar, R: Rng + ?Sized>(
    d: &GroupedDataset<F>,
    w: &WeightedSample,
    penalty: &PenaltyConfig<F>,
    path: &LambdaPath<F>,
    k: usize,
    rule: CvRule,
    rng: &mut R,
) -> Result<CvResult<F>> {
    let (design, weights) = weighted_problem(d, w)?;
    cross_validate_design(
        &design,
        &weights,
        penalty,
        path,
        k,
        rule,
        &SolverSettings::default(),
        rng,
    )
}

/// Builds the default path for a weighted design.
pub fn default_path<F: Scalar>(
    design: &Design<F>,
    w: &[F],
    penalty: &PenaltyConfig<F>,
    tuning: &TuningConfig,
) -> Result<LambdaPath<F>> {
    LambdaPath::new(
        lambda_max_design(design, w, penalty),
        tuning.path_len,
        F::of(tuning.min_ratio),
    )
}

/// Cross-validates `lambda`, then refits on the whole weighted design along the
/// warm-started path down to the chosen value.
pub fn tune_and_fit<F: Scalar, R: Rng + ?Sized>(
    design: &Design<F>,
    w: &[F],
    penalty: &PenaltyConfig<F>,
    tuning: &TuningConfig,
    settings: &SolverSettings,
    rng: &mut R,
) -> Result<(FitResult<F>, F)> {
    let path = default_path(design, w, penalty, tuning)?;
    let cv = cross_validate_design(
        design,
        w,
        penalty,
        &path,
        tuning.folds,
        tuning.rule,
        settings,
        rng,
    )?;
    let head = LambdaPath {
        lambda_max: path.lambda_max,
        grid: path.grid[..=cv.chosen_index].to_vec(),
    };
    let fit = fit_path(design, w, penalty, &head, settings)
        .pop()
        .expect("path has at least one point");
    Ok((fit, cv.chosen_lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::kkt_design;
    use crate::model::GroupStructure;
    use crate::resample::{RngSpec, StreamKind};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(n: usize, p: usize, seed: u64, signal: f64) -> GroupedDataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
        let y = (0..n)
            .map(|i| signal * (x[[i, 0]] - x[[i, 1]]) + rng.random_range(-1.0..1.0))
            .collect();
        GroupedDataset::new(x, y, GroupStructure::singletons(p), Family::Gaussian).unwrap()
    }

    #[test]
    fn path_is_strictly_descending_and_positive() {
        let p = LambdaPath::new(2.0f64, 50, 1e-3).unwrap();
        assert_eq!(p.len(), 50);
        assert!((p.grid[0] - 2.0).abs() < 1e-15);
        assert!((p.grid[49] - 2e-3).abs() < 1e-12);
        assert!(p.grid.windows(2).all(|w| w[0] > w[1] && w[1] > 0.0));
        assert_eq!(LambdaPath::new(0.0f64, 10, 0.01).unwrap().len(), 1);
    }

    #[test]
    fn constant_response_has_zero_lambda_max() {
        let mut d = gaussian(20, 3, 1, 1.0);
        d.y = vec![4.0; 20];
        let lm = lambda_max(&d, &WeightedSample::unit(20), &PenaltyConfig::lasso(0.0)).unwrap();
        assert_eq!(lm, 0.0);
    }

    #[test]
    fn lambda_max_matches_bisection_oracle() {
        let d = gaussian(100, 10, 7, 1.0);
        let w = WeightedSample::unit(100);
        let pen = PenaltyConfig::lasso(0.0);
        let closed = lambda_max(&d, &w, &pen).unwrap();
        let settings = crate::lasso::CcdSettings::default();
        let zeroes = |l: f64| {
            crate::lasso::fit_lasso_weighted(&d, &w, &PenaltyConfig::lasso(l), &settings)
                .unwrap()
                .beta[1..]
                .iter()
                .all(|&b| b == 0.0)
        };
        let (mut lo, mut hi) = (0.0, 10.0 * closed);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if zeroes(mid) {
                hi = mid
            } else {
                lo = mid
            }
        }
        assert!(
            (hi - closed).abs() < 1e-6,
            "bisection {hi} vs closed {closed}"
        );
        assert!(zeroes(1.01 * closed));
    }

    #[test]
    fn group_lambda_max_zeroes_all_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((60, 4), |_| rng.random_range(-1.0..1.0));
        let y = (0..60)
            .map(|i| {
                if x[[i, 0]] + 0.3 * rng.random_range(-1.0..1.0) > 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let d = GroupedDataset::new(
            x,
            y,
            GroupStructure::from_sizes(&[2, 2]).unwrap(),
            Family::Binomial,
        )
        .unwrap();
        let w = WeightedSample::unit(60);
        let pen = PenaltyConfig::group_lasso(0.0);
        let lm = lambda_max(&d, &w, &pen).unwrap();
        let fit = crate::grouplasso::fit_grouplasso_logistic(
            &d,
            &w,
            &pen.with_lambda(1.01 * lm),
            &Default::default(),
        )
        .unwrap();
        assert!(fit.beta[1..].iter().all(|&b| b == 0.0));
        let fit = crate::grouplasso::fit_grouplasso_logistic(
            &d,
            &w,
            &pen.with_lambda(0.9 * lm),
            &Default::default(),
        )
        .unwrap();
        assert!(fit.selected.iter().any(|&s| s));
    }

    #[test]
    fn warm_path_equals_cold_fits() {
        let d = gaussian(80, 6, 11, 2.0);
        let design = Design::from_dataset(&d, true);
        let w = vec![1.0 / 80.0; 80];
        let pen = PenaltyConfig::lasso(0.0);
        let path = default_path(
            &design,
            &w,
            &pen,
            &TuningConfig {
                path_len: 15,
                ..Default::default()
            },
        )
        .unwrap();
        let settings = SolverSettings::default();
        let warm = fit_path(&design, &w, &pen, &path, &settings);
        for (fit, &l) in warm.iter().zip(&path.grid) {
            let cold = fit_design(&design, &w, &pen.with_lambda(l), &settings, None);
            for (a, b) in fit.beta.iter().zip(&cold.beta) {
                assert!((a - b).abs() < 1e-5);
            }
            assert!(kkt_design(&design, &w, &pen.with_lambda(l), &fit.beta) < 1e-5);
        }
    }

    #[test]
    fn leave_one_out_runs() {
        let d = gaussian(10, 2, 5, 1.0);
        let design = Design::from_dataset(&d, true);
        let w = vec![0.1; 10];
        let pen = PenaltyConfig::lasso(0.0);
        let path = default_path(
            &design,
            &w,
            &pen,
            &TuningConfig {
                path_len: 8,
                ..Default::default()
            },
        )
        .unwrap();
        let mut rng = RngSpec::new(1).stream(StreamKind::Folds, 0, 0);
        let cv = cross_validate_design(
            &design,
            &w,
            &pen,
            &path,
            10,
            CvRule::Min,
            &SolverSettings::default(),
            &mut rng,
        )
        .unwrap();
        assert!(cv.per_lambda_error.iter().all(|e| e.is_finite()));
        assert!(path.grid.contains(&cv.chosen_lambda));
        let mut rng = RngSpec::new(1).stream(StreamKind::Folds, 0, 0);
        assert!(matches!(
            cross_validate_design(
                &design,
                &w,
                &pen,
                &path,
                11,
                CvRule::Min,
                &SolverSettings::default(),
                &mut rng
            ),
            Err(Error::FoldTooSmall { .. })
        ));
    }

    #[test]
    fn null_model_error_at_top_of_grid() {
        let d = gaussian(60, 4, 9, 1.0);
        let design = Design::from_dataset(&d, true);
        let w = vec![1.0 / 60.0; 60];
        let pen = PenaltyConfig::lasso(0.0);
        // top of the grid well above every fold's own lambda_max
        let top = 10.0 * lambda_max_design(&design, &w, &pen);
        let path = LambdaPath::new(top, 5, 0.01).unwrap();
        let k = 5;
        let mut rng = RngSpec::new(4).stream(StreamKind::Folds, 0, 0);
        let cv = cross_validate_design(
            &design,
            &w,
            &pen,
            &path,
            k,
            CvRule::Min,
            &SolverSettings::default(),
            &mut rng,
        )
        .unwrap();
        // oracle: fold-wise training means as predictions
        let mut rng = RngSpec::new(4).stream(StreamKind::Folds, 0, 0);
        let folds = assign_folds(60, k, &mut rng).unwrap();
        let y = design.y();
        let mut total = 0.0;
        for f in 0..k {
            let train: Vec<f64> = (0..60).filter(|&i| folds[i] != f).map(|i| y[i]).collect();
            let mean = train.iter().sum::<f64>() / train.len() as f64;
            total += (0..60)
                .filter(|&i| folds[i] == f)
                .map(|i| (y[i] - mean).powi(2))
                .sum::<f64>();
        }
        assert!((cv.per_lambda_error[0] - total / 60.0).abs() < 1e-12);
    }

    #[test]
    fn one_se_rule_picks_larger_lambda() {
        let d = gaussian(80, 8, 13, 0.5);
        let design = Design::from_dataset(&d, true);
        let w = vec![1.0 / 80.0; 80];
        let pen = PenaltyConfig::lasso(0.0);
        let path = default_path(
            &design,
            &w,
            &pen,
            &TuningConfig {
                path_len: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let run = |rule| {
            let mut rng = RngSpec::new(2).stream(StreamKind::Folds, 0, 0);
            cross_validate_design(
                &design,
                &w,
                &pen,
                &path,
                5,
                rule,
                &SolverSettings::default(),
                &mut rng,
            )
            .unwrap()
        };
        assert!(run(CvRule::OneStandardError).chosen_lambda >= run(CvRule::Min).chosen_lambda);
    }
}
