//! Domain types shared by every module: datasets, group structure,
//! penalty configuration and fit results.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Partition of the predictor columns into groups.
///
/// Column indices are zero-based and exclude the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStructure {
    groups: Vec<Vec<usize>>,
}

impl GroupStructure {
    /// Builds a structure from explicit index sets. The sets must be
    /// non-empty, pairwise disjoint and together cover `0..p` where `p` is
    /// the total number of indices.
    pub fn new(groups: Vec<Vec<usize>>) -> Result<Self> {
        check_partition(&groups)?;
        Ok(Self { groups })
    }

    /// Consecutive groups with the given sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        let mut groups = Vec::with_capacity(sizes.len());
        for &size in sizes {
            groups.push((start..start + size).collect());
            start += size;
        }
        Self::new(groups)
    }

    /// One group per column.
    pub fn singletons(p: usize) -> Self {
        Self {
            groups: (0..p).map(|j| vec![j]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.groups.iter().map(Vec::as_slice)
    }

    /// Degrees of freedom of group `g`, i.e. its size.
    pub fn df(&self, g: usize) -> usize {
        self.groups[g].len()
    }

    /// Number of predictor columns covered.
    pub fn n_columns(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn all_singletons(&self) -> bool {
        self.groups.iter().all(|g| g.len() == 1)
    }

    /// Maps each column to its group.
    pub fn column_to_group(&self) -> Vec<usize> {
        let mut map = vec![0; self.n_columns()];
        for (g, cols) in self.groups.iter().enumerate() {
            for &j in cols {
                map[j] = g;
            }
        }
        map
    }
}

fn check_partition(groups: &[Vec<usize>]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::EmptyGroup(0));
    }
    let p: usize = groups.iter().map(Vec::len).sum();
    let mut seen = vec![false; p];
    for (g, cols) in groups.iter().enumerate() {
        if cols.is_empty() {
            return Err(Error::EmptyGroup(g));
        }
        for &j in cols {
            if j >= p {
                return Err(Error::UncoveredColumn {
                    column: seen.iter().position(|s| !s).unwrap_or(0),
                });
            }
            if seen[j] {
                return Err(Error::OverlappingGroups { column: j });
            }
            seen[j] = true;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
        }
    }
}

/// Design matrix, response and group structure.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset<F> {
    /// `n x p` predictors, no intercept column.
    pub x: Array2<F>,
    pub y: Vec<F>,
    pub groups: GroupStructure,
    pub family: Family,
    /// Set once the columns have been centered and scaled.
    pub standardized: bool,
}

impl<F: Scalar> GroupedDataset<F> {
    /// Builds and validates a dataset.
    pub fn new(x: Array2<F>, y: Vec<F>, groups: GroupStructure, family: Family) -> Result<Self> {
        let d = Self {
            x,
            y,
            groups,
            family,
            standardized: false,
        };
        validate_dataset(&d)?;
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Linear predictor `beta[0] + x_i . beta[1..]` for row `i`.
    pub fn linear_predictor(&self, i: usize, beta: &[F]) -> F {
        self.x
            .row(i)
            .iter()
            .zip(&beta[1..])
            .fold(beta[0], |acc, (&x, &b)| acc + x * b)
    }
}

/// Checks every dataset invariant and reports the first violation.
pub fn validate_dataset<F: Scalar>(d: &GroupedDataset<F>) -> Result<()> {
    let (n, p) = d.x.dim();
    if n < 2 {
        return Err(Error::DimensionMismatch(format!(
            "need at least 2 rows, got {n}"
        )));
    }
    if p < 1 {
        return Err(Error::DimensionMismatch("need at least 1 column".into()));
    }
    if d.y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "x has {n} rows but y has {} entries",
            d.y.len()
        )));
    }
    check_partition(&d.groups.groups)?;
    if d.groups.n_columns() != p {
        return Err(Error::DimensionMismatch(format!(
            "groups cover {} columns but x has {p}",
            d.groups.n_columns()
        )));
    }
    for (row, &v) in d.y.iter().enumerate() {
        let ok = match d.family {
            Family::Gaussian => v.is_finite(),
            Family::Binomial => v == F::zero() || v == F::one(),
        };
        if !ok {
            return Err(Error::BadResponse {
                row,
                value: v.as_f64(),
            });
        }
    }
    if d.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DimensionMismatch(
            "x contains non-finite values".into(),
        ));
    }
    Ok(())
}

/// Column centers and scales, with the back-transformation of coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization<F> {
    pub centers: Vec<F>,
    pub scales: Vec<F>,
    /// Columns with zero variance; their coefficients are pinned to zero.
    pub constant: Vec<bool>,
}

impl<F: Scalar> Standardization<F> {
    /// Identity transformation for `p` columns.
    pub fn identity(p: usize) -> Self {
        Self {
            centers: vec![F::zero(); p],
            scales: vec![F::one(); p],
            constant: vec![false; p],
        }
    }

    /// Population mean and standard deviation of the given rows of `x`.
    pub fn fit(x: &Array2<F>, rows: &[usize]) -> Self {
        let p = x.ncols();
        let m = F::of_count(rows.len());
        let mut centers = vec![F::zero(); p];
        let mut scales = vec![F::one(); p];
        let mut constant = vec![false; p];
        for j in 0..p {
            let col = x.column(j);
            let mean = rows.iter().map(|&i| col[i]).sum::<F>() / m;
            let var = rows
                .iter()
                .map(|&i| {
                    let d = col[i] - mean;
                    d * d
                })
                .sum::<F>()
                / m;
            centers[j] = mean;
            let sd = var.sqrt();
            // relative threshold so that tiny rounding noise on a constant column is not amplified
            let tiny = F::epsilon() * F::of(64.0) * (mean.abs() + F::one());
            if sd <= tiny {
                constant[j] = true;
            } else {
                scales[j] = sd;
            }
        }
        Self {
            centers,
            scales,
            constant,
        }
    }

    pub fn apply(&self, j: usize, v: F) -> F {
        (v - self.centers[j]) / self.scales[j]
    }

    /// Maps coefficients fitted on standardized columns back to the raw scale.
    pub fn to_original(&self, beta_std: &[F]) -> Vec<F> {
        let mut out = Vec::with_capacity(beta_std.len());
        let mut intercept = beta_std[0];
        out.push(F::zero());
        for (j, &b) in beta_std[1..].iter().enumerate() {
            let raw = b / self.scales[j];
            intercept = intercept - raw * self.centers[j];
            out.push(raw);
        }
        out[0] = intercept;
        out
    }

    /// Inverse of [`Standardization::to_original`].
    pub fn to_standardized(&self, beta: &[F]) -> Vec<F> {
        let mut out = Vec::with_capacity(beta.len());
        let mut intercept = beta[0];
        out.push(F::zero());
        for (j, &b) in beta[1..].iter().enumerate() {
            intercept = intercept + b * self.centers[j];
            out.push(b * self.scales[j]);
        }
        out[0] = intercept;
        out
    }
}

/// Centers every column to mean zero and scales to unit population standard
/// deviation. Constant columns are centered, keep scale one and are flagged.
pub fn standardize_columns<F: Scalar>(
    d: &GroupedDataset<F>,
) -> (GroupedDataset<F>, Standardization<F>) {
    let rows: Vec<usize> = (0..d.n()).collect();
    let st = Standardization::fit(&d.x, &rows);
    let mut out = d.clone();
    for ((_, j), v) in out.x.indexed_iter_mut() {
        *v = st.apply(j, *v);
    }
    out.standardized = true;
    (out, st)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Lasso,
    GroupLasso,
}

impl PenaltyKind {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::Lasso => "lasso",
            PenaltyKind::GroupLasso => "grouplasso",
        }
    }
}

/// Group weight `s(df)` multiplying each group norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rescale {
    #[default]
    Sqrt,
    Unit,
    Linear,
}

impl Rescale {
    pub fn weight<F: Scalar>(self, df: usize) -> F {
        match self {
            Rescale::Sqrt => F::of_count(df).sqrt(),
            Rescale::Unit => F::one(),
            Rescale::Linear => F::of_count(df),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig<F> {
    pub kind: PenaltyKind,
    pub lambda: F,
    pub rescale: Rescale,
    /// Always false: the intercept is never penalized.
    pub penalize_intercept: bool,
}

impl<F: Scalar> PenaltyConfig<F> {
    pub fn lasso(lambda: F) -> Self {
        Self {
            kind: PenaltyKind::Lasso,
            lambda,
            rescale: Rescale::Unit,
            penalize_intercept: false,
        }
    }

    pub fn group_lasso(lambda: F) -> Self {
        Self {
            kind: PenaltyKind::GroupLasso,
            lambda,
            rescale: Rescale::Sqrt,
            penalize_intercept: false,
        }
    }

    pub fn with_lambda(self, lambda: F) -> Self {
        Self { lambda, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= F::zero()) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lambda must be a finite non-negative number, got {}",
                self.lambda
            )));
        }
        if self.penalize_intercept {
            return Err(Error::InvalidConfig(
                "the intercept is never penalized".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one penalized fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<F> {
    /// Length `p + 1`; index 0 is the intercept.
    pub beta: Vec<F>,
    /// Per group: true iff any coefficient of the group is nonzero.
    pub selected: Vec<bool>,
    pub objective: F,
    pub iterations: usize,
    pub converged: bool,
    /// Logistic fits only: coefficients diverged past the separation bound.
    pub separated: bool,
}

impl<F: Scalar> FitResult<F> {
    pub fn selection(groups: &GroupStructure, beta: &[F]) -> Vec<bool> {
        groups
            .iter()
            .map(|cols| cols.iter().any(|&j| beta[j + 1] != F::zero()))
            .collect()
    }
}
