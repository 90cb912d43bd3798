//! Routes a (family, penalty) pair to the matching solver on a prepared design.

use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::grouplasso::{group_bcd, group_kkt, BcdSettings, Blocks, Loss};
use crate::lasso::{lasso_ccd, lasso_kkt, CcdSettings};
use crate::model::{Family, FitResult, GroupStructure, PenaltyConfig, PenaltyKind, Rescale};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverSettings {
    pub ccd: CcdSettings,
    pub bcd: BcdSettings,
}

fn blocks_for<F: Scalar>(design: &Design<F>, penalty: &PenaltyConfig<F>) -> Blocks<F> {
    match penalty.kind {
        // groups are ignored by the Lasso: every column is its own block with unit weight
        PenaltyKind::Lasso => Blocks::new(
            design,
            &GroupStructure::singletons(design.p()),
            penalty.lambda,
            Rescale::Unit,
        ),
        PenaltyKind::GroupLasso => {
            Blocks::new(design, design.groups(), penalty.lambda, penalty.rescale)
        }
    }
}

/// Fits the penalized model for `design.family()` at `penalty.lambda`.
pub fn fit_design<F: Scalar>(
    design: &Design<F>,
    w: &[F],
    penalty: &PenaltyConfig<F>,
    settings: &SolverSettings,
    warm: Option<&[F]>,
) -> FitResult<F> {
    match (design.family(), penalty.kind) {
        (Family::Gaussian, PenaltyKind::Lasso) => {
            lasso_ccd(design, w, penalty.lambda, &settings.ccd, warm)
        }
        (family, _) => group_bcd(
            Loss::for_family(family),
            design,
            w,
            &blocks_for(design, penalty),
            &settings.bcd,
            warm,
        ),
    }
}

/// KKT violation of `beta` for the objective [`fit_design`] minimizes.
pub fn kkt_design<F: Scalar>(
    design: &Design<F>,
    w: &[F],
    penalty: &PenaltyConfig<F>,
    beta: &[F],
) -> F {
    match (design.family(), penalty.kind) {
        (Family::Gaussian, PenaltyKind::Lasso) => lasso_kkt(design, w, penalty.lambda, beta),
        (family, _) => group_kkt(
            Loss::for_family(family),
            design,
            w,
            &blocks_for(design, penalty),
            beta,
        ),
    }
}

/// Penalized objective value of `beta`.
pub fn objective_design<F: Scalar>(
    design: &Design<F>,
    w: &[F],
    penalty: &PenaltyConfig<F>,
    beta: &[F],
) -> F {
    crate::grouplasso::objective(
        Loss::for_family(design.family()),
        design,
        w,
        &blocks_for(design, penalty),
        beta,
    )
}

/// Weighted mean loss of `beta` on a design: squared error or binomial deviance.
pub fn prediction_loss<F: Scalar>(design: &Design<F>, w: &[F], beta: &[F]) -> F {
    let eta = design.linear_predictor(beta);
    let total: F = w.iter().copied().sum();
    if total == F::zero() {
        return F::zero();
    }
    let s: F = design
        .y()
        .iter()
        .zip(&eta)
        .zip(w)
        .map(|((&y, &e), &w)| {
            if w == F::zero() {
                return F::zero();
            }
            w * match design.family() {
                Family::Gaussian => (y - e) * (y - e),
                Family::Binomial => F::two() * (crate::scalar::log1p_exp(e) - y * e),
            }
        })
        .sum();
    s / total
}
