//! Reproducible grouped-Gaussian design with a logistic (or Gaussian) response.
//!
//! Defaults reproduce the benchmark setting: 35 standard normal predictors in
//! 8 groups of sizes (5, 4, 6, 5, 5, 3, 3, 4), groups 1, 2, 4, 6 and 7 active
//! with every coordinate equal to 10, the remaining coefficients drawn once
//! from N(0, 1), and `Y ~ Bernoulli(1 / (1 + exp(-x'beta)))` with no intercept.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Family, GroupStructure, GroupedDataset};
use crate::resample::{RngSpec, StreamKind};
use crate::scalar::{sigmoid, Scalar};

pub const DEFAULT_GROUP_SIZES: [usize; 8] = [5, 4, 6, 5, 5, 3, 3, 4];
/// One-based labels of the active groups.
pub const DEFAULT_TRUE_GROUPS: [usize; 5] = [1, 2, 4, 6, 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaStyle {
    /// Every coordinate of an active group equals `beta_true`.
    #[default]
    Scalar,
    /// Active group norm equals `beta_true`, split evenly over coordinates.
    Spread,
}

/// Coefficients of the inactive groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum NoiseBeta {
    /// Drawn once per dataset from N(0, sd^2).
    Normal {
        sd: f64,
    },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub groups: GroupStructure,
    /// One-based group labels.
    pub true_groups: Vec<usize>,
    pub beta_true: f64,
    pub beta_style: BetaStyle,
    pub noise_beta: NoiseBeta,
    pub family: Family,
    /// Residual standard deviation for the Gaussian family.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            n: 20_000,
            groups: GroupStructure::from_sizes(&DEFAULT_GROUP_SIZES).expect("valid sizes"),
            true_groups: DEFAULT_TRUE_GROUPS.to_vec(),
            beta_true: 10.0,
            beta_style: BetaStyle::Scalar,
            noise_beta: NoiseBeta::Normal { sd: 1.0 },
            family: Family::Binomial,
            sigma: 1.0,
            seed: 0,
        }
    }
}

impl SimSpec {
    pub fn with_n(self, n: usize) -> Self {
        Self { n, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.groups.len();
        if self.n < 1 {
            return Err(Error::InvalidConfig("simulation needs n >= 1".into()));
        }
        if let Some(&bad) = self.true_groups.iter().find(|&&t| t == 0 || t > g) {
            return Err(Error::InvalidConfig(format!(
                "true group {bad} outside 1..={g}"
            )));
        }
        Ok(())
    }

    fn is_true(&self, g: usize) -> bool {
        self.true_groups.contains(&(g + 1))
    }

    /// Zero-based column indices of the active groups.
    pub fn true_columns(&self) -> Vec<usize> {
        (0..self.groups.len())
            .filter(|&g| self.is_true(g))
            .flat_map(|g| self.groups.group(g).to_vec())
            .collect()
    }
}

/// Draws a dataset and returns it with the realized coefficient vector
/// (length `p + 1`, intercept first and equal to zero).
pub fn generate<F: Scalar>(spec: &SimSpec) -> Result<(GroupedDataset<F>, Vec<F>)> {
    spec.validate()?;
    let rng = RngSpec::new(spec.seed);
    let p = spec.groups.n_columns();
    let mut beta = vec![0.0f64; p + 1];
    let mut coef_rng = rng.stream(StreamKind::Simulation, 0, 0);
    for (g, cols) in spec.groups.iter().enumerate() {
        if spec.is_true(g) {
            let v = match spec.beta_style {
                BetaStyle::Scalar => spec.beta_true,
                BetaStyle::Spread => spec.beta_true / (cols.len() as f64).sqrt(),
            };
            cols.iter().for_each(|&j| beta[j + 1] = v);
        } else if let NoiseBeta::Normal { sd } = spec.noise_beta {
            let dist = Normal::new(0.0, sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            cols.iter()
                .for_each(|&j| beta[j + 1] = dist.sample(&mut coef_rng));
        }
    }

    let mut x_rng = rng.stream(StreamKind::Simulation, 1, 0);
    let x64 = Array2::from_shape_simple_fn((spec.n, p), || StandardNormal.sample(&mut x_rng));
    let mut y_rng = rng.stream(StreamKind::Simulation, 2, 0);
    let y: Vec<F> = x64
        .rows()
        .into_iter()
        .map(|row| {
            let eta: f64 = row.iter().zip(&beta[1..]).map(|(x, b)| x * b).sum::<f64>() + beta[0];
            match spec.family {
                Family::Binomial => {
                    let u: f64 = y_rng.random();
                    if u < sigmoid(eta) {
                        F::one()
                    } else {
                        F::zero()
                    }
                }
                Family::Gaussian => {
                    let e: f64 = StandardNormal.sample(&mut y_rng);
                    F::of(eta + spec.sigma * e)
                }
            }
        })
        .collect();
    let x = x64.mapv(F::of);
    let beta = beta.into_iter().map(F::of).collect();
    let d = if spec.n >= 2 {
        GroupedDataset::new(x, y, spec.groups.clone(), spec.family)?
    } else {
        GroupedDataset {
            x,
            y,
            groups: spec.groups.clone(),
            family: spec.family,
            standardized: false,
        }
    };
    Ok((d, beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionAccuracy {
    pub exact_match: bool,
    pub true_positives: usize,
    pub false_positives: usize,
}

/// Compares a set of selected (one-based) group labels with the truth.
pub fn selection_accuracy_of(
    selected: &[usize],
    n_groups: usize,
    spec: &SimSpec,
) -> Result<SelectionAccuracy> {
    if n_groups != spec.groups.len() {
        return Err(Error::GroupCountMismatch {
            report: n_groups,
            spec: spec.groups.len(),
        });
    }
    let tp = selected
        .iter()
        .filter(|g| spec.true_groups.contains(g))
        .count();
    let fp = selected.len() - tp;
    let mut a = selected.to_vec();
    let mut b = spec.true_groups.clone();
    a.sort_unstable();
    b.sort_unstable();
    Ok(SelectionAccuracy {
        exact_match: a == b,
        true_positives: tp,
        false_positives: fp,
    })
}

/// Selection accuracy of a finished run.
pub fn selection_accuracy<F: Scalar>(
    report: &crate::engine::BlbvsReport<F>,
    spec: &SimSpec,
) -> Result<SelectionAccuracy> {
    selection_accuracy_of(&report.selected, report.proportions.len(), spec)
}
