//! Weighted Group Lasso for logistic and squared-error losses.
//!
//! Objective, with weights `w_i = n_i* / n` summing to one:
//!
//! ```text
//! sum_i w_i loss(y_i, eta_i) + lambda * sum_g s(df_g) * ||beta_g||_2
//! loss = (y - eta)^2                    (Gaussian)
//! loss = log(1 + exp(eta)) - y * eta    (Binomial)
//! ```
//!
//! The loss is replaced by its local quadratic model, which block coordinate
//! descent minimizes with the group penalty attached: a block is set exactly
//! to zero when `||grad_g(beta_g = 0)|| <= lambda * s(df_g)` holds for the
//! model, otherwise it is solved in closed form up to one scalar root. A
//! backtracking step along the model minimizer keeps the objective decreasing.
//! Groups whose zero condition holds stay outside the working set.

use serde::{Deserialize, Serialize};

use crate::design::{weighted_problem, Design};
use crate::error::{Error, Result};
use crate::model::{
    Family, FitResult, GroupStructure, GroupedDataset, PenaltyConfig, PenaltyKind, Rescale,
};
use crate::resample::WeightedSample;
use crate::scalar::{log1p_exp, sigmoid, Scalar};

/// Mean logistic loss below which the data are treated as perfectly separated.
const SEPARATION_DEVIANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcdSettings {
    pub max_outer: usize,
    /// Largest absolute coefficient change allowed in a converged outer pass.
    pub tolerance: f64,
    pub max_inner: usize,
    /// `||beta||_inf` beyond which a logistic fit is declared separated.
    pub separation_bound: f64,
    /// Relative objective change treated as a plateau.
    pub plateau: f64,
    pub active_set: bool,
}

impl Default for BcdSettings {
    fn default() -> Self {
        Self {
            max_outer: 5_000,
            tolerance: 1e-6,
            max_inner: 50,
            separation_bound: 1e4,
            plateau: 1e-9,
            active_set: true,
        }
    }
}

impl BcdSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::InvalidConfig(
                "BCD needs tolerance > 0 and at least one outer and inner iteration".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Loss {
    Squared,
    Logistic,
}

impl Loss {
    pub(crate) fn for_family(f: Family) -> Self {
        match f {
            Family::Gaussian => Loss::Squared,
            Family::Binomial => Loss::Logistic,
        }
    }

    fn value<F: Scalar>(self, y: F, eta: F) -> F {
        match self {
            Loss::Squared => (y - eta) * (y - eta),
            Loss::Logistic => log1p_exp(eta) - y * eta,
        }
    }

    /// Derivative of the loss with respect to `eta`.
    fn score<F: Scalar>(self, y: F, eta: F) -> F {
        match self {
            Loss::Squared => -F::two() * (y - eta),
            Loss::Logistic => sigmoid(eta) - y,
        }
    }

    /// Second derivative with respect to `eta`.
    fn hessian<F: Scalar>(self, _y: F, eta: F) -> F {
        match self {
            Loss::Squared => F::two(),
            Loss::Logistic => {
                let p = sigmoid(eta);
                p * (F::one() - p)
            }
        }
    }
}

/// Penalized blocks: column sets with their penalty level `lambda * s(df_g)`.
#[derive(Debug, Clone)]
pub(crate) struct Blocks<F> {
    pub cols: Vec<Vec<usize>>,
    pub level: Vec<F>,
}

impl<F: Scalar> Blocks<F> {
    pub(crate) fn new(
        design: &Design<F>,
        groups: &GroupStructure,
        lambda: F,
        rescale: Rescale,
    ) -> Self {
        let mut cols = Vec::with_capacity(groups.len());
        let mut level = Vec::with_capacity(groups.len());
        for g in groups.iter() {
            cols.push(
                g.iter()
                    .copied()
                    .filter(|&j| !design.is_pinned(j))
                    .collect(),
            );
            level.push(lambda * rescale.weight::<F>(g.len()));
        }
        Self { cols, level }
    }
}

pub(crate) fn objective<F: Scalar>(
    loss: Loss,
    design: &Design<F>,
    w: &[F],
    blocks: &Blocks<F>,
    beta: &[F],
) -> F {
    let eta = design.linear_predictor(beta);
    data_loss(loss, design.y(), w, &eta) + penalty_value(blocks, beta)
}

fn data_loss<F: Scalar>(loss: Loss, y: &[F], w: &[F], eta: &[F]) -> F {
    y.iter()
        .zip(eta)
        .zip(w)
        .map(|((&y, &e), &w)| {
            if w == F::zero() {
                F::zero()
            } else {
                w * loss.value(y, e)
            }
        })
        .sum()
}

fn penalty_value<F: Scalar>(blocks: &Blocks<F>, beta: &[F]) -> F {
    blocks
        .cols
        .iter()
        .zip(&blocks.level)
        .map(|(cols, &lv)| lv * block_norm(cols, beta))
        .sum()
}

fn block_norm<F: Scalar>(cols: &[usize], beta: &[F]) -> F {
    cols.iter()
        .map(|&j| beta[j + 1] * beta[j + 1])
        .sum::<F>()
        .sqrt()
}

fn block_gradient<F: Scalar>(design: &Design<F>, cols: &[usize], w: &[F], scores: &[F]) -> Vec<F> {
    cols.iter()
        .map(|&j| {
            design
                .col(j)
                .iter()
                .zip(scores)
                .zip(w)
                .map(|((&x, &s), &w)| w * x * s)
                .sum()
        })
        .collect()
}

fn norm<F: Scalar>(v: &[F]) -> F {
    v.iter().map(|&x| x * x).sum::<F>().sqrt()
}

/// KKT violation: worst group violation plus the absolute intercept gradient.
pub(crate) fn group_kkt<F: Scalar>(
    loss: Loss,
    design: &Design<F>,
    w: &[F],
    blocks: &Blocks<F>,
    beta: &[F],
) -> F {
    let eta = design.linear_predictor(beta);
    let scores: Vec<F> = design
        .y()
        .iter()
        .zip(&eta)
        .map(|(&y, &e)| loss.score(y, e))
        .collect();
    let g0: F = scores.iter().zip(w).map(|(&s, &w)| w * s).sum();
    let mut worst = F::zero();
    for (cols, &lv) in blocks.cols.iter().zip(&blocks.level) {
        if cols.is_empty() {
            continue;
        }
        let grad = block_gradient(design, cols, w, &scores);
        let bn = block_norm(cols, beta);
        let v = if bn == F::zero() {
            (norm(&grad) - lv).max(F::zero())
        } else {
            let resid: Vec<F> = grad
                .iter()
                .zip(cols)
                .map(|(&g, &j)| g + lv * beta[j + 1] / bn)
                .collect();
            norm(&resid)
        };
        worst = worst.max(v);
    }
    worst + g0.abs()
}

/// Minimizes `0.5 u'Hu + c'u + level ||u||` for a symmetric positive definite
/// block `H` given by its eigen-decomposition, assuming `||c|| > level`.
///
/// The minimizer is `u = -(H + (level / t) I)^{-1} c` with `t = ||u||`, where
/// `t` solves `sum_k c_k^2 / (vals_k t + level)^2 = 1` in the eigenbasis. That
/// function of `t` is convex and decreasing, so Newton's method started to the
/// left of the root climbs to it monotonically.
fn solve_block<F: Scalar>(vals: &[F], vecs: &[F], c: &[F], level: F) -> Vec<F> {
    let k = vals.len();
    let ct: Vec<F> = (0..k)
        .map(|a| (0..k).map(|r| vecs[r * k + a] * c[r]).sum())
        .collect();
    let cn = norm(c);
    let vmax = vals.iter().copied().fold(F::zero(), F::max);
    let mut t = (cn - level) / vmax;
    for _ in 0..200 {
        let (mut psi, mut dpsi) = (-F::one(), F::zero());
        for (&v, &cv) in vals.iter().zip(&ct) {
            let den = v * t + level;
            psi = psi + cv * cv / (den * den);
            dpsi = dpsi - F::two() * cv * cv * v / (den * den * den);
        }
        if psi <= F::zero() || dpsi >= F::zero() {
            break;
        }
        let next = t - psi / dpsi;
        if next - t <= F::epsilon() * t {
            t = next;
            break;
        }
        t = next;
    }
    let ut: Vec<F> = vals
        .iter()
        .zip(&ct)
        .map(|(&v, &cv)| -cv * t / (v * t + level))
        .collect();
    (0..k)
        .map(|r| (0..k).map(|a| vecs[r * k + a] * ut[a]).sum())
        .collect()
}

/// Block layout of the coefficients kept in the working model: position 0 is
/// the intercept, each block occupies a contiguous range.
struct WorkingSet {
    /// Coefficient index (0 = intercept, `j + 1` = column `j`) per position.
    idx: Vec<usize>,
    blocks: Vec<(usize, std::ops::Range<usize>)>,
}

impl WorkingSet {
    fn new<F>(blocks: &Blocks<F>, in_model: &[bool]) -> Self {
        let mut idx = vec![0];
        let mut ranges = Vec::new();
        for (g, cols) in blocks.cols.iter().enumerate() {
            if in_model[g] {
                let start = idx.len();
                idx.extend(cols.iter().map(|&j| j + 1));
                ranges.push((g, start..idx.len()));
            }
        }
        Self {
            idx,
            blocks: ranges,
        }
    }
}

/// Proximal Newton with block coordinate descent on the quadratic model.
///
/// Each outer pass builds the weighted Hessian of the loss over the working
/// set, minimizes the penalized quadratic model block by block (the intercept
/// exactly, each group in closed form up to a scalar root), then takes an
/// Armijo step along the model minimizer. For the squared loss the model is
/// exact and the first step lands on the solution.
pub(crate) fn group_bcd<F: Scalar>(
    loss: Loss,
    design: &Design<F>,
    w: &[F],
    blocks: &Blocks<F>,
    settings: &BcdSettings,
    warm: Option<&[F]>,
) -> FitResult<F> {
    let p = design.p();
    let y = design.y();
    let rows = design.rows();
    let mut beta = match warm {
        Some(b) => b.to_vec(),
        None => vec![F::zero(); p + 1],
    };
    for j in 0..p {
        if design.is_pinned(j) {
            beta[j + 1] = F::zero();
        }
    }
    let mut eta = design.linear_predictor(&beta);
    let bound = F::of(settings.separation_bound);
    let plateau = F::of(settings.plateau);
    let n_blocks = blocks.cols.len();
    let mut in_model: Vec<bool> = (0..n_blocks)
        .map(|g| {
            !blocks.cols[g].is_empty()
                && (!settings.active_set || block_norm(&blocks.cols[g], &beta) > F::zero())
        })
        .collect();

    let column = |k: usize| -> Option<&[F]> { (k > 0).then(|| design.col(k - 1)) };
    let mut passes = 0;
    let mut converged = false;
    let mut separated = false;
    let mut last_step = F::infinity();
    let mut last_obj = objective(loss, design, w, blocks, &beta);
    loop {
        let scores: Vec<F> = y
            .iter()
            .zip(&eta)
            .zip(w)
            .map(|((&y, &e), &w)| w * loss.score(y, e))
            .collect();
        let grad_of = |k: usize| -> F {
            match column(k) {
                None => scores.iter().copied().sum(),
                Some(x) => x.iter().zip(&scores).map(|(&x, &s)| x * s).sum(),
            }
        };
        let mut added = false;
        for g in 0..n_blocks {
            if !in_model[g] && !blocks.cols[g].is_empty() {
                let gg: Vec<F> = blocks.cols[g].iter().map(|&j| grad_of(j + 1)).collect();
                if norm(&gg) > blocks.level[g] {
                    in_model[g] = true;
                    added = true;
                }
            }
        }
        // the coefficient scale limits the attainable accuracy in low precision
        let scale = beta.iter().fold(F::one(), |m, b| m.max(b.abs()));
        let tol = F::of(settings.tolerance).max(F::of(100.0) * F::epsilon() * scale);
        if last_step < tol && !added {
            converged = true;
            break;
        }
        if passes >= settings.max_outer {
            break;
        }
        passes += 1;

        let ws = WorkingSet::new(blocks, &in_model);
        let m = ws.idx.len();
        let grad: Vec<F> = ws.idx.iter().map(|&k| grad_of(k)).collect();
        let hw: Vec<F> = y
            .iter()
            .zip(&eta)
            .zip(w)
            .map(|((&y, &e), &w)| w * loss.hessian(y, e))
            .collect();
        let mut h = vec![F::zero(); m * m];
        let mut scratch = vec![F::zero(); rows];
        for a in 0..m {
            match column(ws.idx[a]) {
                None => scratch.copy_from_slice(&hw),
                Some(x) => scratch
                    .iter_mut()
                    .zip(x)
                    .zip(&hw)
                    .for_each(|((s, &x), &h)| *s = x * h),
            }
            for b in a..m {
                let v: F = match column(ws.idx[b]) {
                    None => scratch.iter().copied().sum(),
                    Some(x) => scratch.iter().zip(x).map(|(&s, &x)| s * x).sum(),
                };
                h[a * m + b] = v;
                h[b * m + a] = v;
            }
        }
        let max_diag = (0..m).map(|a| h[a * m + a]).fold(F::zero(), F::max);
        let ridge = max_diag * F::of(1e-10) + F::min_positive_value().sqrt();
        (0..m).for_each(|a| h[a * m + a] = h[a * m + a] + ridge);

        let eig: Vec<(Vec<F>, Vec<F>)> = ws
            .blocks
            .iter()
            .map(|(_, r)| {
                let k = r.len();
                let sub: Vec<F> = r
                    .clone()
                    .flat_map(|a| r.clone().map(move |b| (a, b)))
                    .map(|(a, b)| h[a * m + b])
                    .collect();
                crate::design::sym_eigen(&sub, k)
            })
            .collect();

        // quadratic model: q = grad + H (z - beta) is its smooth gradient at z
        let mut z: Vec<F> = ws.idx.iter().map(|&k| beta[k]).collect();
        let mut q = grad.clone();
        let inner_tol = tol * F::of(1e-3);
        let shift = |q: &mut [F], h: &[F], a: usize, d: F| {
            if d != F::zero() {
                q.iter_mut()
                    .zip(&h[a * m..(a + 1) * m])
                    .for_each(|(qv, &hv)| *qv = *qv + hv * d);
            }
        };
        for _ in 0..settings.max_inner.max(1) * 20 {
            let d0 = -q[0] / h[0];
            z[0] = z[0] + d0;
            shift(&mut q, &h, 0, d0);
            let mut moved = d0.abs();
            for ((g, r), (vals, vecs)) in ws.blocks.iter().zip(&eig) {
                let level = blocks.level[*g];
                let c: Vec<F> = r
                    .clone()
                    .map(|a| q[a] - r.clone().map(|b| h[a * m + b] * z[b]).sum::<F>())
                    .collect();
                let u = if norm(&c) <= level {
                    vec![F::zero(); r.len()]
                } else if r.len() == 1 {
                    let cv = c[0];
                    vec![-(cv - level * cv.signum()) / h[r.start * m + r.start]]
                } else {
                    solve_block(vals, vecs, &c, level)
                };
                for (a, &ua) in r.clone().zip(&u) {
                    let d = ua - z[a];
                    z[a] = ua;
                    shift(&mut q, &h, a, d);
                    moved = moved.max(d.abs());
                }
            }
            if moved <= inner_tol {
                break;
            }
        }

        let d: Vec<F> = ws
            .idx
            .iter()
            .zip(&z)
            .map(|(&k, &zv)| zv - beta[k])
            .collect();
        let dmax = d.iter().fold(F::zero(), |acc, v| acc.max(v.abs()));
        if dmax == F::zero() {
            last_step = F::zero();
            continue;
        }
        let mut xd = vec![d[0]; rows];
        for (&k, &dv) in ws.idx.iter().zip(&d).skip(1) {
            if dv != F::zero() {
                xd.iter_mut()
                    .zip(design.col(k - 1))
                    .for_each(|(e, &x)| *e = *e + x * dv);
            }
        }
        let mut trial_beta = beta.clone();
        let set_trial = |t: F, tb: &mut Vec<F>| {
            for (&k, &dv) in ws.idx.iter().zip(&d) {
                tb[k] = beta[k] + t * dv;
            }
        };
        let pen_now = penalty_value(blocks, &beta);
        set_trial(F::one(), &mut trial_beta);
        let decrease = grad.iter().zip(&d).map(|(&g, &dv)| g * dv).sum::<F>()
            + penalty_value(blocks, &trial_beta)
            - pen_now;
        let base = data_loss(loss, y, w, &eta) + pen_now;
        let mut t = F::one();
        let mut accepted = None;
        for _ in 0..60 {
            set_trial(t, &mut trial_beta);
            let trial_eta: Vec<F> = eta.iter().zip(&xd).map(|(&e, &x)| e + t * x).collect();
            let f = data_loss(loss, y, w, &trial_eta) + penalty_value(blocks, &trial_beta);
            let slack = F::of(10.0) * F::epsilon() * (base.abs() + F::one());
            if f <= base + F::of(1e-4) * t * decrease.min(F::zero()) + slack {
                accepted = Some((trial_eta, f));
                break;
            }
            t = t * F::half();
        }
        let Some((new_eta, obj)) = accepted else {
            // no representable descent left along the model direction
            converged = group_kkt(loss, design, w, blocks, &beta) < F::of(1e-5);
            break;
        };
        // a step below the representable resolution moves nothing
        let step = t * dmax;
        beta = trial_beta;
        for g in 0..n_blocks {
            if in_model[g] && settings.active_set && block_norm(&blocks.cols[g], &beta) == F::zero()
            {
                in_model[g] = false;
            }
        }
        eta = new_eta;
        if beta.iter().any(|b| b.abs() > bound || !b.is_finite())
            || (loss == Loss::Logistic && data_loss(loss, y, w, &eta) < F::of(SEPARATION_DEVIANCE))
        {
            separated = loss == Loss::Logistic;
            break;
        }
        debug_assert!(
            obj <= last_obj
                + F::of(1e-9).max(F::of(100.0) * F::epsilon()) * (last_obj.abs() + F::one()),
            "objective increased: {last_obj} -> {obj}"
        );
        let flat = (last_obj - obj).abs() <= plateau * (obj.abs() + F::of(1e-12));
        last_obj = obj;
        last_step = step;
        if flat && step >= tol && group_kkt(loss, design, w, blocks, &beta) < F::of(1e-5) {
            converged = true;
            break;
        }
    }
    // eta was updated incrementally; the reported objective is recomputed from scratch
    let objective = objective(loss, design, w, blocks, &beta);
    FitResult {
        selected: FitResult::selection(design.groups(), &beta),
        beta,
        objective,
        iterations: passes,
        converged: converged && objective.is_finite(),
        separated,
    }
}

fn check_inputs<F: Scalar>(
    d: &GroupedDataset<F>,
    penalty: &PenaltyConfig<F>,
    family: Family,
) -> Result<()> {
    if d.family != family {
        return Err(Error::Unsupported {
            penalty: "group lasso",
            family: d.family.name(),
        });
    }
    if penalty.kind != PenaltyKind::GroupLasso {
        return Err(Error::InvalidConfig("expected a GroupLasso penalty".into()));
    }
    penalty.validate()
}

/// Weighted logistic Group Lasso on the raw columns of `d`.
pub fn fit_grouplasso_logistic<F: Scalar>(
    d: &GroupedDataset<F>,
    w: &WeightedSample,
    penalty: &PenaltyConfig<F>,
    settings: &BcdSettings,
) -> Result<FitResult<F>> {
    check_inputs(d, penalty, Family::Binomial)?;
    settings.validate()?;
    let (design, weights) = weighted_problem(d, w)?;
    let blocks = Blocks::new(&design, &d.groups, penalty.lambda, penalty.rescale);
    Ok(group_bcd(
        Loss::Logistic,
        &design,
        &weights,
        &blocks,
        settings,
        None,
    ))
}

/// Weighted squared-error Group Lasso on the raw columns of `d`.
pub fn group_lasso_gaussian<F: Scalar>(
    d: &GroupedDataset<F>,
    w: &WeightedSample,
    penalty: &PenaltyConfig<F>,
    settings: &BcdSettings,
) -> Result<FitResult<F>> {
    check_inputs(d, penalty, Family::Gaussian)?;
    settings.validate()?;
    let (design, weights) = weighted_problem(d, w)?;
    let blocks = Blocks::new(&design, &d.groups, penalty.lambda, penalty.rescale);
    Ok(group_bcd(
        Loss::Squared,
        &design,
        &weights,
        &blocks,
        settings,
        None,
    ))
}

/// KKT violation of `beta` for the Group Lasso objective of `d`'s family.
pub fn kkt_check_grouplasso<F: Scalar>(
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
    let blocks = Blocks::new(&design, &d.groups, penalty.lambda, penalty.rescale);
    Ok(group_kkt(
        Loss::for_family(d.family),
        &design,
        &weights,
        &blocks,
        beta,
    ))
}
