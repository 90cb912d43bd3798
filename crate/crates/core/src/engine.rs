//! BLBVS and BootVS drivers: fan-out of weighted fits, vote and standard-error
//! aggregation, percentile intervals and progress checkpoints.
//!
//! Work units are (subset `i`, resample `j`) fits. Each unit draws its
//! randomness from its own stream, units run on a private thread pool, and
//! results are reduced in `(i, j)` order, so the report does not depend on the
//! number of workers.

use std::time::Instant;

use num_rational::Ratio;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{normalized_weights, Design};
use crate::diagnostics::RdReference;
use crate::error::{Error, Result};
use crate::fit::{fit_design, kkt_design, SolverSettings};
use crate::model::{
    Family, FitResult, GroupedDataset, PenaltyConfig, PenaltyKind, Rescale, Standardization,
};
use crate::resample::{
    compress_indices, draw_bootstrap_indices, draw_subsets, draw_weights, subset_size, RngSpec,
    StreamKind,
};
use crate::scalar::Scalar;
use crate::tuning::{cross_validate_design, default_path, tune_and_fit, TuningConfig};

/// How the penalty level of each fit is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum LambdaMode {
    /// K-fold cross-validation inside every resample.
    #[default]
    PerResample,
    /// One cross-validation per subset (uniform weights), reused by its resamples.
    /// For BootVS this tunes once on the full data.
    PerSubset,
    /// A fixed level on the standardized scale.
    Fixed { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Blbvs,
    Bootvs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlbvsConfig {
    pub gamma: f64,
    /// Number of subsets; `None` uses `floor(n / b)`.
    pub subsets: Option<usize>,
    /// Resamples per subset.
    pub resamples: usize,
    pub cutoff: f64,
    pub penalty: PenaltyKind,
    pub rescale: Rescale,
    pub lambda: LambdaMode,
    pub tuning: TuningConfig,
    pub solver: SolverSettings,
    pub seed: u64,
    /// Thread count. Not echoed in reports, which are identical for every value.
    #[serde(skip, default = "one")]
    pub workers: usize,
    /// Subsets drawn without overlap.
    pub disjoint: bool,
    pub standardize: bool,
    /// Coverage of the percentile intervals.
    pub interval_level: f64,
}

fn one() -> usize {
    1
}

impl Default for BlbvsConfig {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            subsets: None,
            resamples: 100,
            cutoff: 0.5,
            penalty: PenaltyKind::GroupLasso,
            rescale: Rescale::Sqrt,
            lambda: LambdaMode::PerResample,
            tuning: TuningConfig::default(),
            solver: SolverSettings::default(),
            seed: 0,
            workers: 1,
            disjoint: true,
            standardize: true,
            interval_level: 0.95,
        }
    }
}

impl BlbvsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::GammaOutOfRange(self.gamma));
        }
        if self.resamples < 1 {
            return Err(Error::InvalidConfig("r must be at least 1".into()));
        }
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "cutoff {} outside (0, 1)",
                self.cutoff
            )));
        }
        if self.subsets == Some(0) {
            return Err(Error::InvalidConfig("need at least one subset".into()));
        }
        if self.workers < 1 {
            return Err(Error::InvalidConfig("need at least one worker".into()));
        }
        if !(self.interval_level > 0.0 && self.interval_level < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "interval level {} outside (0, 1)",
                self.interval_level
            )));
        }
        if let LambdaMode::Fixed { lambda } = self.lambda {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "fixed lambda {lambda} is not a finite non-negative number"
                )));
            }
        }
        if !matches!(self.lambda, LambdaMode::Fixed { .. }) && self.tuning.folds < 2 {
            return Err(Error::InvalidConfig("cross-validation needs K >= 2".into()));
        }
        self.solver.ccd.validate()?;
        self.solver.bcd.validate()
    }

    fn penalty<F: Scalar>(&self, lambda: F) -> PenaltyConfig<F> {
        PenaltyConfig {
            kind: self.penalty,
            lambda,
            rescale: match self.penalty {
                PenaltyKind::Lasso => Rescale::Unit,
                PenaltyKind::GroupLasso => self.rescale,
            },
            penalize_intercept: false,
        }
    }
}

/// Per-subset results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSummary<F> {
    pub subset_index: usize,
    pub b: usize,
    /// Resamples selecting each group.
    pub votes: Vec<u64>,
    pub fits: usize,
    pub converged: usize,
    /// Standard deviation of each back-transformed coefficient across converged resamples.
    pub xi: Vec<F>,
    /// Percentile bounds `[lower, upper]` per coefficient.
    pub interval: Vec<[F; 2]>,
}

/// Progress snapshot after a subset (BLBVS) or a batch of resamples (BootVS).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<F> {
    pub step: usize,
    pub fits: usize,
    /// Running mean of the standard-error vector.
    pub mean_xi: F,
    /// Sum of squared running standard errors over the tracked coefficients.
    pub trace: Option<F>,
    pub rd: Option<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlbvsReport<F> {
    pub method: Method,
    pub config: BlbvsConfig,
    pub family: Family,
    pub n: usize,
    pub p: usize,
    pub group_sizes: Vec<usize>,
    /// Rows per subset (`n` for BootVS).
    pub b: usize,
    pub s: usize,
    /// Resamples per subset.
    pub r: usize,
    pub vote_counts: Vec<u64>,
    pub total_fits: u64,
    pub proportions: Vec<F>,
    /// One-based labels of the groups with proportion above the cutoff.
    pub selected: Vec<usize>,
    /// Standard error per coefficient (intercept first).
    pub xi: Vec<F>,
    pub mean_xi: F,
    pub intervals: Vec<[F; 2]>,
    /// Mean back-transformed estimate across converged fits.
    pub coefficients: Vec<F>,
    pub mean_lambda: F,
    pub subsets: Vec<SubsetSummary<F>>,
    pub trajectory: Vec<Checkpoint<F>>,
    pub non_converged_count: usize,
    pub separated_count: usize,
    /// Largest optimality violation among converged fits.
    pub max_kkt_violation: F,
    pub warnings: Vec<String>,
    /// Wall-clock seconds at each checkpoint. Kept out of the JSON document so
    /// reports stay reproducible.
    #[serde(skip)]
    pub timings: Vec<f64>,
}

impl<F: Scalar> BlbvsReport<F> {
    /// `(seconds, checkpoint)` pairs.
    pub fn timed_trajectory(&self) -> impl Iterator<Item = (f64, &Checkpoint<F>)> {
        self.timings.iter().copied().zip(&self.trajectory)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Result of one weighted fit, coefficients on the raw scale.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitFit<F> {
    pub beta: Vec<F>,
    pub selected: Vec<bool>,
    pub converged: bool,
    pub separated: bool,
    pub lambda: F,
    pub kkt: F,
}

fn is_degenerate<F: Scalar>(design: &Design<F>, w: &[F]) -> bool {
    if design.family() != Family::Binomial {
        return false;
    }
    let ones: F = design.y().iter().zip(w).map(|(&y, &w)| y * w).sum();
    let total: F = w.iter().copied().sum();
    ones <= F::zero() || ones >= total
}

/// Fits one weighted problem, choosing `lambda` per `cfg` unless `preset` is given.
fn fit_unit<F: Scalar, R: Rng + ?Sized>(
    cfg: &BlbvsConfig,
    design: &Design<F>,
    w: &[F],
    preset: Option<F>,
    rng: &mut R,
) -> Result<UnitFit<F>> {
    let groups = design.groups().len();
    if is_degenerate(design, w) {
        // every weighted response equal: the logistic likelihood has no finite optimum
        return Ok(UnitFit {
            beta: vec![F::zero(); design.p() + 1],
            selected: vec![false; groups],
            converged: false,
            separated: true,
            lambda: F::zero(),
            kkt: F::zero(),
        });
    }
    let base = cfg.penalty(F::zero());
    let (fit, lambda): (FitResult<F>, F) = match (preset, cfg.lambda) {
        (Some(lambda), _) => (
            fit_design(design, w, &base.with_lambda(lambda), &cfg.solver, None),
            lambda,
        ),
        (None, LambdaMode::Fixed { lambda }) => {
            let lambda = F::of(lambda);
            (
                fit_design(design, w, &base.with_lambda(lambda), &cfg.solver, None),
                lambda,
            )
        }
        (None, _) => tune_and_fit(design, w, &base, &cfg.tuning, &cfg.solver, rng)?,
    };
    let kkt = if fit.converged {
        kkt_design(design, w, &base.with_lambda(lambda), &fit.beta)
    } else {
        F::zero()
    };
    Ok(UnitFit {
        selected: fit.selected.clone(),
        beta: design.standardization().to_original(&fit.beta),
        converged: fit.converged,
        separated: fit.separated,
        lambda,
        kkt,
    })
}

/// Cross-validated penalty level for a design with uniform weights.
fn tune_uniform<F: Scalar, R: Rng + ?Sized>(
    cfg: &BlbvsConfig,
    design: &Design<F>,
    rng: &mut R,
) -> Result<Option<F>> {
    match cfg.lambda {
        LambdaMode::PerSubset => {
            let w = vec![F::one() / F::of_count(design.rows()); design.rows()];
            if is_degenerate(design, &w) {
                return Ok(None);
            }
            let base = cfg.penalty(F::zero());
            let path = default_path(design, &w, &base, &cfg.tuning)?;
            let cv = cross_validate_design(
                design,
                &w,
                &base,
                &path,
                cfg.tuning.folds,
                cfg.tuning.rule,
                &cfg.solver,
                rng,
            )?;
            Ok(Some(cv.chosen_lambda))
        }
        _ => Ok(None),
    }
}

/// The full-data procedure: one fit of `d` with unit weights, tuned as `cfg`
/// tunes a single resample. Used for ground-truth realizations.
pub fn fit_full<F: Scalar>(
    d: &GroupedDataset<F>,
    cfg: &BlbvsConfig,
    rng: &RngSpec,
) -> Result<UnitFit<F>> {
    let design = Design::from_dataset(d, cfg.standardize);
    let w = vec![F::one() / F::of_count(d.n()); d.n()];
    fit_unit(
        cfg,
        &design,
        &w,
        None,
        &mut rng.stream(StreamKind::Tuning, 0, 0),
    )
}

/// Proportion of resamples selecting each group, from an `s x r x G` indicator tensor.
pub fn aggregate_votes<F: Scalar>(indicators: &[Vec<Vec<bool>>]) -> Result<Vec<F>> {
    let (counts, total) = count_votes(indicators)?;
    Ok(proportions(&counts, total))
}

/// Exact rational form of [`aggregate_votes`].
pub fn aggregate_votes_exact(indicators: &[Vec<Vec<bool>>]) -> Result<Vec<Ratio<u64>>> {
    let (counts, total) = count_votes(indicators)?;
    if total == 0 {
        return Err(Error::InvalidConfig("no resamples to aggregate".into()));
    }
    Ok(counts.into_iter().map(|c| Ratio::new(c, total)).collect())
}

fn count_votes(indicators: &[Vec<Vec<bool>>]) -> Result<(Vec<u64>, u64)> {
    let g = indicators
        .iter()
        .flat_map(|s| s.first())
        .map(Vec::len)
        .next()
        .unwrap_or(0);
    let r = indicators.first().map_or(0, Vec::len);
    let mut counts = vec![0u64; g];
    let mut total = 0u64;
    for (i, subset) in indicators.iter().enumerate() {
        if subset.len() != r {
            return Err(Error::LengthMismatch(format!(
                "subset {i} has {} resamples, expected {r}",
                subset.len()
            )));
        }
        for row in subset {
            if row.len() != g {
                return Err(Error::LengthMismatch(format!(
                    "indicator row of length {}, expected {g}",
                    row.len()
                )));
            }
            total += 1;
            for (c, &v) in counts.iter_mut().zip(row) {
                *c += u64::from(v);
            }
        }
    }
    Ok((counts, total))
}

fn proportions<F: Scalar>(counts: &[u64], total: u64) -> Vec<F> {
    if total == 0 {
        return vec![F::zero(); counts.len()];
    }
    // both integers are exact in f64 up to 2^53, so the quotient is correctly rounded
    counts
        .iter()
        .map(|&c| F::of(c as f64 / total as f64))
        .collect()
}

/// Element-wise mean of per-subset standard-error vectors.
pub fn aggregate_xi<F: Scalar>(xi_list: &[Vec<F>]) -> Result<Vec<F>> {
    let Some(first) = xi_list.first() else {
        return Err(Error::LengthMismatch(
            "no subset standard errors to average".into(),
        ));
    };
    if let Some(bad) = xi_list.iter().find(|v| v.len() != first.len()) {
        return Err(Error::LengthMismatch(format!(
            "standard-error vectors of lengths {} and {}",
            first.len(),
            bad.len()
        )));
    }
    let s = F::of_count(xi_list.len());
    Ok((0..first.len())
        .map(|k| xi_list.iter().map(|v| v[k]).sum::<F>() / s)
        .collect())
}

/// Sample standard deviation (divisor `m - 1`) of each coordinate; `None` below two samples.
fn column_sd<F: Scalar>(betas: &[&[F]], len: usize) -> Option<Vec<F>> {
    let m = betas.len();
    if m < 2 {
        return None;
    }
    let mf = F::of_count(m);
    Some(
        (0..len)
            .map(|k| {
                let mean = betas.iter().map(|b| b[k]).sum::<F>() / mf;
                let ss = betas
                    .iter()
                    .map(|b| {
                        let d = b[k] - mean;
                        d * d
                    })
                    .sum::<F>();
                (ss / (mf - F::one())).sqrt()
            })
            .collect(),
    )
}

/// Linear-interpolation quantile of sorted values.
fn quantile<F: Scalar>(sorted: &[F], q: f64) -> F {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = F::of(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn percentile_intervals<F: Scalar>(betas: &[&[F]], len: usize, level: f64) -> Vec<[F; 2]> {
    if betas.is_empty() {
        return vec![[F::zero(); 2]; len];
    }
    let tail = (1.0 - level) / 2.0;
    (0..len)
        .map(|k| {
            let mut v: Vec<F> = betas.iter().map(|b| b[k]).collect();
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite coefficients"));
            [quantile(&v, tail), quantile(&v, 1.0 - tail)]
        })
        .collect()
}

/// Summary of one bag of unit fits.
fn summarize<F: Scalar>(
    index: usize,
    b: usize,
    fits: &[UnitFit<F>],
    len: usize,
    groups: usize,
    level: f64,
) -> (SubsetSummary<F>, bool) {
    let mut votes = vec![0u64; groups];
    for f in fits {
        for (v, &sel) in votes.iter_mut().zip(&f.selected) {
            *v += u64::from(sel);
        }
    }
    let good: Vec<&[F]> = fits
        .iter()
        .filter(|f| f.converged)
        .map(|f| f.beta.as_slice())
        .collect();
    let sd = column_sd(&good, len);
    let defined = sd.is_some();
    (
        SubsetSummary {
            subset_index: index,
            b,
            votes,
            fits: fits.len(),
            converged: good.len(),
            xi: sd.unwrap_or_else(|| vec![F::zero(); len]),
            interval: percentile_intervals(&good, len, level),
        },
        defined,
    )
}

fn mean<F: Scalar>(v: &[F]) -> F {
    if v.is_empty() {
        F::zero()
    } else {
        v.iter().copied().sum::<F>() / F::of_count(v.len())
    }
}

fn checkpoint<F: Scalar>(
    step: usize,
    fits: usize,
    xi: &[F],
    reference: Option<&RdReference<F>>,
) -> Checkpoint<F> {
    let (trace, rd) = match reference {
        Some(r) => (Some(r.trace_of(xi)), Some(r.rd_of(xi))),
        None => (None, None),
    };
    Checkpoint {
        step,
        fits,
        mean_xi: mean(xi),
        trace,
        rd,
    }
}

struct Tally<F> {
    fits: Vec<UnitFit<F>>,
}

impl<F: Scalar> Tally<F> {
    fn non_converged(&self) -> usize {
        self.fits.iter().filter(|f| !f.converged).count()
    }

    fn separated(&self) -> usize {
        self.fits.iter().filter(|f| f.separated).count()
    }

    fn max_kkt(&self) -> F {
        self.fits
            .iter()
            .filter(|f| f.converged)
            .fold(F::zero(), |m, f| m.max(f.kkt))
    }

    fn mean_lambda(&self) -> F {
        mean(&self.fits.iter().map(|f| f.lambda).collect::<Vec<_>>())
    }

    fn coefficients(&self, len: usize) -> Vec<F> {
        let good: Vec<&UnitFit<F>> = self.fits.iter().filter(|f| f.converged).collect();
        (0..len)
            .map(|k| mean(&good.iter().map(|f| f.beta[k]).collect::<Vec<_>>()))
            .collect()
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
}

#[allow(clippy::too_many_arguments)]
fn finish<F: Scalar>(
    method: Method,
    cfg: &BlbvsConfig,
    d: &GroupedDataset<F>,
    b: usize,
    s: usize,
    r: usize,
    summaries: Vec<SubsetSummary<F>>,
    tally: Tally<F>,
    xi: Vec<F>,
    intervals: Vec<[F; 2]>,
    trajectory: Vec<Checkpoint<F>>,
    timings: Vec<f64>,
    mut warnings: Vec<String>,
) -> BlbvsReport<F> {
    let len = d.p() + 1;
    let g = d.groups.len();
    let mut vote_counts = vec![0u64; g];
    for sm in &summaries {
        for (c, &v) in vote_counts.iter_mut().zip(&sm.votes) {
            *c += v;
        }
    }
    let total_fits = tally.fits.len() as u64;
    let proportions: Vec<F> = proportions(&vote_counts, total_fits);
    let cutoff = F::of(cfg.cutoff);
    let selected = (0..g)
        .filter(|&k| proportions[k] > cutoff)
        .map(|k| k + 1)
        .collect();
    let non_converged_count = tally.non_converged();
    if non_converged_count > 0 {
        warnings.push(format!(
            "{non_converged_count} of {total_fits} fits did not converge; they vote but are left out of the standard errors"
        ));
    }
    BlbvsReport {
        method,
        config: cfg.clone(),
        family: d.family,
        n: d.n(),
        p: d.p(),
        group_sizes: (0..g).map(|k| d.groups.df(k)).collect(),
        b,
        s,
        r,
        vote_counts,
        total_fits,
        proportions,
        selected,
        mean_xi: mean(&xi),
        xi,
        intervals,
        coefficients: tally.coefficients(len),
        mean_lambda: tally.mean_lambda(),
        subsets: summaries,
        trajectory,
        non_converged_count,
        separated_count: tally.separated(),
        max_kkt_violation: tally.max_kkt(),
        warnings,
        timings,
    }
}

/// Bag of little bootstraps variable selection.
pub fn run_blbvs<F: Scalar>(d: &GroupedDataset<F>, cfg: &BlbvsConfig) -> Result<BlbvsReport<F>> {
    run_blbvs_with(d, cfg, None)
}

/// [`run_blbvs`] that also tracks the relative deviation against a reference trace.
pub fn run_blbvs_with<F: Scalar>(
    d: &GroupedDataset<F>,
    cfg: &BlbvsConfig,
    reference: Option<&RdReference<F>>,
) -> Result<BlbvsReport<F>> {
    cfg.validate()?;
    crate::model::validate_dataset(d)?;
    let start = Instant::now();
    let n = d.n();
    let b = subset_size(n, cfg.gamma)?;
    let s = cfg.subsets.unwrap_or((n / b).max(1));
    let rng = RngSpec::new(cfg.seed);
    let subsets = draw_subsets(n, s, cfg.gamma, &rng, cfg.disjoint)?;
    let len = d.p() + 1;
    let g = d.groups.len();
    let pool = pool(cfg.workers)?;

    let mut summaries = Vec::with_capacity(s);
    let mut all = Vec::with_capacity(s * cfg.resamples);
    let mut trajectory = Vec::with_capacity(s);
    let mut timings = Vec::with_capacity(s);
    let mut warnings = Vec::new();
    for (i, subset) in subsets.iter().enumerate() {
        let design = Design::from_rows(d, &subset.indices, cfg.standardize);
        let preset = tune_uniform(
            cfg,
            &design,
            &mut rng.stream(StreamKind::Tuning, i as u64, 0),
        )?;
        let fits: Vec<UnitFit<F>> = pool.install(|| {
            (0..cfg.resamples)
                .into_par_iter()
                .map(|j| {
                    let ws = draw_weights(
                        subset,
                        &mut rng.stream(StreamKind::Weights, i as u64, j as u64),
                    );
                    let w = normalized_weights(&ws.weights)?;
                    let mut tune = rng.stream(StreamKind::Tuning, i as u64, j as u64 + 1);
                    fit_unit(cfg, &design, &w, preset, &mut tune)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let (summary, defined) = summarize(i, subset.b(), &fits, len, g, cfg.interval_level);
        if !defined {
            warnings.push(format!(
                "subset {i}: fewer than two converged fits, standard error set to zero"
            ));
        }
        summaries.push(summary);
        all.extend(fits);
        let xi_list: Vec<Vec<F>> = summaries.iter().map(|sm| sm.xi.clone()).collect();
        let running = aggregate_xi(&xi_list)?;
        trajectory.push(checkpoint(i + 1, all.len(), &running, reference));
        timings.push(start.elapsed().as_secs_f64());
    }
    let xi_list: Vec<Vec<F>> = summaries.iter().map(|sm| sm.xi.clone()).collect();
    let xi = aggregate_xi(&xi_list)?;
    let intervals = (0..len)
        .map(|k| {
            let lo = mean(
                &summaries
                    .iter()
                    .map(|sm| sm.interval[k][0])
                    .collect::<Vec<_>>(),
            );
            let hi = mean(
                &summaries
                    .iter()
                    .map(|sm| sm.interval[k][1])
                    .collect::<Vec<_>>(),
            );
            [lo, hi]
        })
        .collect();
    Ok(finish(
        Method::Blbvs,
        cfg,
        d,
        b,
        s,
        cfg.resamples,
        summaries,
        Tally { fits: all },
        xi,
        intervals,
        trajectory,
        timings,
        warnings,
    ))
}

/// Resamples per BootVS checkpoint.
pub const BOOTVS_BATCH: usize = 10;

/// Conventional n-out-of-n bootstrap selection with `r_total` resamples.
///
/// `cfg.gamma`, `cfg.subsets`, `cfg.resamples` and `cfg.disjoint` are ignored.
pub fn run_bootvs<F: Scalar>(
    d: &GroupedDataset<F>,
    r_total: usize,
    cfg: &BlbvsConfig,
) -> Result<BlbvsReport<F>> {
    run_bootvs_with(d, r_total, cfg, None)
}

pub fn run_bootvs_with<F: Scalar>(
    d: &GroupedDataset<F>,
    r_total: usize,
    cfg: &BlbvsConfig,
    reference: Option<&RdReference<F>>,
) -> Result<BlbvsReport<F>> {
    cfg.validate()?;
    crate::model::validate_dataset(d)?;
    if r_total < 1 {
        return Err(Error::InvalidConfig(
            "BootVS needs at least one resample".into(),
        ));
    }
    let start = Instant::now();
    let n = d.n();
    let rng = RngSpec::new(cfg.seed);
    let len = d.p() + 1;
    let g = d.groups.len();
    let all_rows: Vec<usize> = (0..n).collect();
    let standardization = if cfg.standardize {
        Standardization::fit(&d.x, &all_rows)
    } else {
        let mut id = Standardization::identity(d.p());
        id.constant = Standardization::fit(&d.x, &all_rows).constant;
        id
    };
    let preset = if matches!(cfg.lambda, LambdaMode::PerSubset) {
        let full = Design::from_rows_with(d, &all_rows, standardization.clone());
        tune_uniform(cfg, &full, &mut rng.stream(StreamKind::Tuning, 0, 0))?
    } else {
        None
    };
    let pool = pool(cfg.workers)?;

    let mut all: Vec<UnitFit<F>> = Vec::with_capacity(r_total);
    let mut trajectory = Vec::new();
    let mut timings = Vec::new();
    let mut warnings = Vec::new();
    let mut batch_start = 0;
    while batch_start < r_total {
        let batch_end = (batch_start + BOOTVS_BATCH).min(r_total);
        let fits: Vec<UnitFit<F>> = pool.install(|| {
            (batch_start..batch_end)
                .into_par_iter()
                .map(|j| {
                    let idx = draw_bootstrap_indices(
                        n,
                        &mut rng.stream(StreamKind::Bootstrap, 0, j as u64),
                    );
                    let ws = compress_indices(&idx, n);
                    let design =
                        Design::from_rows_with(d, &ws.subset.indices, standardization.clone());
                    let w = normalized_weights(&ws.weights)?;
                    let mut tune = rng.stream(StreamKind::Tuning, 0, j as u64 + 1);
                    fit_unit(cfg, &design, &w, preset, &mut tune)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        all.extend(fits);
        let good: Vec<&[F]> = all
            .iter()
            .filter(|f| f.converged)
            .map(|f| f.beta.as_slice())
            .collect();
        let running = column_sd(&good, len).unwrap_or_else(|| vec![F::zero(); len]);
        trajectory.push(checkpoint(
            trajectory.len() + 1,
            all.len(),
            &running,
            reference,
        ));
        timings.push(start.elapsed().as_secs_f64());
        batch_start = batch_end;
    }
    let (summary, defined) = summarize(0, n, &all, len, g, cfg.interval_level);
    if !defined {
        warnings.push("fewer than two converged fits, standard error set to zero".to_string());
    }
    let xi = summary.xi.clone();
    let intervals = summary.interval.clone();
    Ok(finish(
        Method::Bootvs,
        cfg,
        d,
        n,
        1,
        r_total,
        vec![summary],
        Tally { fits: all },
        xi,
        intervals,
        trajectory,
        timings,
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn votes_examples() {
        let all_true = vec![vec![vec![true; 3]; 2]; 2];
        assert_eq!(aggregate_votes::<f64>(&all_true).unwrap(), vec![1.0; 3]);
        let all_false = vec![vec![vec![false; 3]; 2]; 2];
        assert_eq!(aggregate_votes::<f64>(&all_false).unwrap(), vec![0.0; 3]);
        let checker = vec![vec![vec![true], vec![false]], vec![vec![false], vec![true]]];
        assert_eq!(aggregate_votes::<f64>(&checker).unwrap(), vec![0.5]);
        let six = vec![
            vec![vec![true], vec![true], vec![false]],
            vec![vec![true], vec![false], vec![true]],
        ];
        assert_eq!(aggregate_votes_exact(&six).unwrap(), vec![Ratio::new(4, 6)]);
        let ragged = vec![vec![vec![true]], vec![vec![true], vec![false]]];
        assert!(matches!(
            aggregate_votes::<f64>(&ragged),
            Err(Error::LengthMismatch(_))
        ));
    }

    #[test]
    fn xi_examples() {
        assert_eq!(aggregate_xi(&[vec![0.2, 1.0]]).unwrap(), vec![0.2, 1.0]);
        let m = aggregate_xi(&[vec![0.2], vec![0.4]]).unwrap();
        assert!((m[0] - 0.3f64).abs() < 1e-15);
        assert!(matches!(
            aggregate_xi(&[vec![0.2], vec![0.4, 1.0]]),
            Err(Error::LengthMismatch(_))
        ));
        assert!(aggregate_xi::<f64>(&[]).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0f64, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.0), 0.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.025) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sample_sd_uses_m_minus_one() {
        let a = [1.0, 0.0];
        let b = [3.0, 0.0];
        let sd = column_sd(&[&a[..], &b[..]], 2).unwrap();
        assert!((sd[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(sd[1], 0.0);
        assert!(column_sd(&[&a[..]], 2).is_none());
    }

    #[test]
    fn config_validation() {
        assert!(BlbvsConfig::default().validate().is_ok());
        let bad = |c: BlbvsConfig| c.validate().is_err();
        assert!(bad(BlbvsConfig {
            gamma: 1.5,
            ..Default::default()
        }));
        assert!(bad(BlbvsConfig {
            gamma: 0.0,
            ..Default::default()
        }));
        assert!(bad(BlbvsConfig {
            resamples: 0,
            ..Default::default()
        }));
        assert!(bad(BlbvsConfig {
            cutoff: 1.0,
            ..Default::default()
        }));
        assert!(bad(BlbvsConfig {
            workers: 0,
            ..Default::default()
        }));
        assert!(bad(BlbvsConfig {
            lambda: LambdaMode::Fixed { lambda: -1.0 },
            ..Default::default()
        }));
    }

    #[test]
    fn workers_not_echoed() {
        let json = serde_json::to_string(&BlbvsConfig {
            workers: 8,
            ..Default::default()
        })
        .unwrap();
        assert!(!json.contains("workers"));
    }
}
