//! Column-major working copy of the rows a fit touches.
//!
//! A [`Design`] holds the `b` distinct rows of one subset (optionally
//! standardized); resamples of that subset only differ in the weight vector,
//! so one design serves all `r` fits and every sweep costs `O(b * p)`.

use crate::error::{Error, Result};
use crate::model::{Family, GroupStructure, GroupedDataset, Standardization};
use crate::resample::WeightedSample;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Design<F> {
    rows: usize,
    p: usize,
    cols: Vec<F>,
    y: Vec<F>,
    groups: GroupStructure,
    family: Family,
    standardization: Standardization<F>,
}

impl<F: Scalar> Design<F> {
    /// Copies `rows` of `d`. With `standardize`, columns are centered and
    /// scaled using the (unweighted) statistics of those rows.
    pub fn from_rows(d: &GroupedDataset<F>, rows: &[usize], standardize: bool) -> Self {
        let mut standardization = Standardization::fit(&d.x, rows);
        if !standardize {
            let constant = standardization.constant;
            standardization = Standardization::identity(d.p());
            standardization.constant = constant;
        }
        Self::from_rows_with(d, rows, standardization)
    }

    /// Copies `rows` of `d` and applies a transformation fitted elsewhere
    /// (BootVS scales every resample with the statistics of the full data).
    pub fn from_rows_with(
        d: &GroupedDataset<F>,
        rows: &[usize],
        standardization: Standardization<F>,
    ) -> Self {
        let p = d.p();
        let mut cols = Vec::with_capacity(rows.len() * p);
        for j in 0..p {
            let col = d.x.column(j);
            cols.extend(rows.iter().map(|&i| {
                if standardization.constant[j] {
                    F::zero()
                } else {
                    standardization.apply(j, col[i])
                }
            }));
        }
        Self {
            rows: rows.len(),
            p,
            cols,
            y: rows.iter().map(|&i| d.y[i]).collect(),
            groups: d.groups.clone(),
            family: d.family,
            standardization,
        }
    }

    pub fn from_dataset(d: &GroupedDataset<F>, standardize: bool) -> Self {
        let rows: Vec<usize> = (0..d.n()).collect();
        Self::from_rows(d, &rows, standardize)
    }

    /// Restricts to a subset of this design's rows, keeping its scaling.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut cols = Vec::with_capacity(rows.len() * self.p);
        for j in 0..self.p {
            let c = self.col(j);
            cols.extend(rows.iter().map(|&i| c[i]));
        }
        Self {
            rows: rows.len(),
            p: self.p,
            cols,
            y: rows.iter().map(|&i| self.y[i]).collect(),
            groups: self.groups.clone(),
            family: self.family,
            standardization: self.standardization.clone(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn col(&self, j: usize) -> &[F] {
        &self.cols[j * self.rows..(j + 1) * self.rows]
    }

    pub fn y(&self) -> &[F] {
        &self.y
    }

    pub fn groups(&self) -> &GroupStructure {
        &self.groups
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn standardization(&self) -> &Standardization<F> {
        &self.standardization
    }

    /// True when column `j` carries no information and its coefficient is pinned to zero.
    pub fn is_pinned(&self, j: usize) -> bool {
        self.standardization.constant[j]
    }

    /// `eta_i = beta[0] + x_i . beta[1..]` for every row.
    pub fn linear_predictor(&self, beta: &[F]) -> Vec<F> {
        let mut eta = vec![beta[0]; self.rows];
        for (j, &b) in beta[1..].iter().enumerate() {
            if b != F::zero() {
                for (e, &x) in eta.iter_mut().zip(self.col(j)) {
                    *e = *e + x * b;
                }
            }
        }
        eta
    }
}

/// Normalizes multiplicities to weights summing to one.
pub fn normalized_weights<F: Scalar>(counts: &[u64]) -> Result<Vec<F>> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::ZeroWeightTotal);
    }
    let t = F::from_u64(total).expect("u64 converts");
    Ok(counts
        .iter()
        .map(|&c| F::from_u64(c).expect("u64 converts") / t)
        .collect())
}

/// Builds the working set of a weighted sample on the raw (unstandardized) columns.
pub fn weighted_problem<F: Scalar>(
    d: &GroupedDataset<F>,
    w: &WeightedSample,
) -> Result<(Design<F>, Vec<F>)> {
    if let Some(&bad) = w.subset.indices.iter().find(|&&i| i >= d.n()) {
        return Err(Error::DimensionMismatch(format!(
            "row index {bad} out of range for {} rows",
            d.n()
        )));
    }
    let weights = normalized_weights(&w.weights)?;
    Ok((Design::from_rows(d, &w.subset.indices, false), weights))
}

/// Rescales a weight sub-vector to sum to one (zero if the subset carries no weight).
pub(crate) fn renormalize<F: Scalar>(w: &[F]) -> Option<Vec<F>> {
    let total: F = w.iter().copied().sum();
    (total > F::zero()).then(|| w.iter().map(|&v| v / total).collect())
}

/// Eigenvalues and eigenvectors of a small symmetric matrix by cyclic Jacobi
/// rotations. Column `i` of the returned row-major `k x k` matrix is the
/// eigenvector of value `i`.
pub(crate) fn sym_eigen<F: Scalar>(a: &[F], k: usize) -> (Vec<F>, Vec<F>) {
    debug_assert_eq!(a.len(), k * k);
    let mut m = a.to_vec();
    let mut v = vec![F::zero(); k * k];
    (0..k).for_each(|i| v[i * k + i] = F::one());
    for _ in 0..100 {
        let off: F = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * k + j] * m[i * k + j])
            .sum();
        let diag: F = (0..k).map(|i| m[i * k + i] * m[i * k + i]).sum();
        if off <= F::epsilon() * F::epsilon() * diag || off == F::zero() {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = m[p * k + q];
                if apq == F::zero() {
                    continue;
                }
                let theta = (m[q * k + q] - m[p * k + p]) / (F::two() * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + F::one()).sqrt());
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                for mat in [&mut m, &mut v] {
                    for r in 0..k {
                        let arp = mat[r * k + p];
                        let arq = mat[r * k + q];
                        mat[r * k + p] = c * arp - s * arq;
                        mat[r * k + q] = s * arp + c * arq;
                    }
                }
                for r in 0..k {
                    let apr = m[p * k + r];
                    let aqr = m[q * k + r];
                    m[p * k + r] = c * apr - s * aqr;
                    m[q * k + r] = s * apr + c * aqr;
                }
            }
        }
    }
    ((0..k).map(|i| m[i * k + i]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn max_eigenvalue_sym(a: &[f64], k: usize) -> f64 {
        sym_eigen(a, k)
            .0
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn jacobi_matches_closed_form_2x2() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let e = max_eigenvalue_sym(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((e - 3.0).abs() < 1e-12);
        // diag(1, 5, 2) rotated stays 5
        let e = max_eigenvalue_sym(&[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 2.0], 3);
        assert!((e - 5.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_on_rank_one() {
        let v = [1.0f64, 2.0, -2.0, 0.5];
        let a: Vec<f64> = (0..16).map(|t| v[t / 4] * v[t % 4]).collect();
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        assert!((max_eigenvalue_sym(&a, 4) - norm2).abs() < 1e-10);
        let (vals, vecs) = sym_eigen(&a, 4);
        // reconstruct A = V diag(vals) V'
        for i in 0..4 {
            for j in 0..4 {
                let r: f64 = (0..4)
                    .map(|l| vecs[i * 4 + l] * vals[l] * vecs[j * 4 + l])
                    .sum();
                assert!((r - a[i * 4 + j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn design_column_major_and_pinning() {
        let d = GroupedDataset {
            x: array![[1.0, 3.0], [2.0, 3.0], [4.0, 3.0]],
            y: vec![1.0, 2.0, 3.0],
            groups: GroupStructure::singletons(2),
            family: Family::Gaussian,
            standardized: false,
        };
        let des = Design::from_rows(&d, &[2, 0], false);
        assert_eq!(des.col(0), &[4.0, 1.0]);
        assert_eq!(des.y(), &[3.0, 1.0]);
        assert!(des.is_pinned(1));
        assert!(!des.is_pinned(0));
        assert_eq!(des.linear_predictor(&[1.0, 2.0, 9.0]), vec![9.0, 3.0]);
    }

    #[test]
    fn weights_normalize() {
        let w: Vec<f64> = normalized_weights(&[1, 3]).unwrap();
        assert_eq!(w, vec![0.25, 0.75]);
        assert!(matches!(
            normalized_weights::<f64>(&[0, 0]),
            Err(Error::ZeroWeightTotal)
        ));
    }
}
