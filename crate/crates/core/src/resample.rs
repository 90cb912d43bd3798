//! Subset sampling, multinomial resample weights and conventional bootstrap
//! indices. Every draw is a pure function of an [`RngSpec`] and a stream key.

use num_bigint::BigUint;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `(i, j)` coordinate a stream key can hold.
pub const MAX_STREAM_INDEX: u64 = (1 << 28) - 1;

/// Purpose of a random stream. Part of the stream key so that, for example,
/// the weights and the CV folds of resample `(i, j)` never share randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum StreamKind {
    Subsets = 1,
    Weights = 2,
    Folds = 3,
    Bootstrap = 4,
    Simulation = 5,
    GroundTruth = 6,
    Tuning = 7,
}

/// Master seed plus the rule mapping `(kind, i, j)` to an independent stream.
///
/// The master seed is expanded into a ChaCha key; the stream key is an
/// injective packing of `(kind, i, j)` into ChaCha's 64-bit stream id, so
/// distinct coordinates always produce distinct streams and no stream depends
/// on the order in which others were consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub master_seed: u64,
}

impl RngSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn stream_id(kind: StreamKind, i: u64, j: u64) -> u64 {
        assert!(
            i <= MAX_STREAM_INDEX && j <= MAX_STREAM_INDEX,
            "stream index overflow"
        );
        ((kind as u64) << 56) | (i << 28) | j
    }

    pub fn stream(&self, kind: StreamKind, i: u64, j: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.master_seed;
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(Self::stream_id(kind, i, j));
        rng
    }

    /// A fresh spec whose master seed is derived from this one; used to give
    /// nested procedures (e.g. one simulation realization) their own tree.
    pub fn child(&self, kind: StreamKind, i: u64) -> RngSpec {
        RngSpec::new(self.stream(kind, i, 0).random())
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `b` distinct row indices drawn without replacement from `0..parent_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSample {
    /// Sorted ascending.
    pub indices: Vec<usize>,
    pub parent_n: usize,
    /// Exponent used to size the subset; `None` for a compressed bootstrap.
    pub gamma: Option<f64>,
}

impl SubsetSample {
    pub fn b(&self) -> usize {
        self.indices.len()
    }

    /// Every row of a dataset of size `n`.
    pub fn full(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
            parent_n: n,
            gamma: None,
        }
    }
}

/// A virtual size-`n` resample: distinct rows plus multiplicities summing to `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub subset: SubsetSample,
    pub weights: Vec<u64>,
}

impl WeightedSample {
    pub fn new(subset: SubsetSample, weights: Vec<u64>) -> Result<Self> {
        if weights.len() != subset.b() {
            return Err(Error::LengthMismatch(format!(
                "{} weights for {} rows",
                weights.len(),
                subset.b()
            )));
        }
        let total: u64 = weights.iter().sum();
        if total != subset.parent_n as u64 {
            return Err(Error::InvalidConfig(format!(
                "weights sum to {total}, expected {}",
                subset.parent_n
            )));
        }
        Ok(Self { subset, weights })
    }

    /// Each of the `n` rows once.
    pub fn unit(n: usize) -> Self {
        Self {
            subset: SubsetSample::full(n),
            weights: vec![1; n],
        }
    }

    pub fn total(&self) -> u64 {
        self.weights.iter().sum()
    }

    /// Rows repeated according to their weights, in subset order.
    pub fn expand(&self) -> Vec<usize> {
        self.subset
            .indices
            .iter()
            .zip(&self.weights)
            .flat_map(|(&i, &w)| std::iter::repeat_n(i, w as usize))
            .collect()
    }
}

/// `floor(n^gamma)`.
///
/// When `gamma` is (to 1e-12) a fraction `p/q` with `q <= 64` the result is
/// certified with exact integer arithmetic, so values such as
/// `100_000^0.6 = 1000` never fall to 999 through rounding.
pub fn subset_size(n: usize, gamma: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::GammaOutOfRange(gamma));
    }
    if n <= 1 {
        return Ok(n.max(1));
    }
    let approx = (n as f64).powf(gamma).floor().clamp(1.0, n as f64) as usize;
    let Some((p, q)) = simple_fraction(gamma) else {
        return Ok(approx);
    };
    let target = BigUint::from(n).pow(p);
    let pow_q = |b: usize| BigUint::from(b).pow(q);
    let mut b = approx;
    while b > 1 && pow_q(b) > target {
        b -= 1;
    }
    while b < n && pow_q(b + 1) <= target {
        b += 1;
    }
    Ok(b)
}

fn simple_fraction(x: f64) -> Option<(u32, u32)> {
    (1..=64u32).find_map(|q| {
        let p = (x * q as f64).round();
        ((x - p / q as f64).abs() < 1e-12).then_some((p as u32, q))
    })
}

/// Draws `s` subsets of size `floor(n^gamma)`.
///
/// With `disjoint` the subsets are mutually exclusive (a single draw of
/// `s * b` distinct rows split into chunks); otherwise each subset is drawn
/// independently from its own stream and subsets may overlap.
pub fn draw_subsets(
    n: usize,
    s: usize,
    gamma: f64,
    rng: &RngSpec,
    disjoint: bool,
) -> Result<Vec<SubsetSample>> {
    let b = subset_size(n, gamma)?;
    if s == 0 {
        return Err(Error::InvalidConfig("need at least one subset".into()));
    }
    let make = |mut indices: Vec<usize>| {
        indices.sort_unstable();
        SubsetSample {
            indices,
            parent_n: n,
            gamma: Some(gamma),
        }
    };
    if disjoint {
        if s.checked_mul(b).is_none_or(|total| total > n) {
            return Err(Error::NotEnoughRows { n, subsets: s, b });
        }
        let mut stream = rng.stream(StreamKind::Subsets, 0, 0);
        let drawn = index::sample(&mut stream, n, s * b).into_vec();
        Ok(drawn.chunks_exact(b).map(|c| make(c.to_vec())).collect())
    } else {
        Ok((0..s)
            .map(|i| {
                let mut stream = rng.stream(StreamKind::Subsets, i as u64, 1);
                make(index::sample(&mut stream, n, b).into_vec())
            })
            .collect())
    }
}

/// Multinomial(`parent_n`, uniform over the `b` rows) weights, drawn by the
/// conditional-binomial method in `O(b)` time.
pub fn draw_weights<R: Rng + ?Sized>(subset: &SubsetSample, rng: &mut R) -> WeightedSample {
    let b = subset.b();
    let mut remaining = subset.parent_n as u64;
    let mut weights = Vec::with_capacity(b);
    for k in 0..b.saturating_sub(1) {
        let w = if remaining == 0 {
            0
        } else {
            let p = 1.0 / (b - k) as f64;
            Binomial::new(remaining, p)
                .expect("probability in (0, 1]")
                .sample(rng)
        };
        remaining -= w;
        weights.push(w);
    }
    if b > 0 {
        weights.push(remaining);
    }
    WeightedSample {
        subset: subset.clone(),
        weights,
    }
}

/// `n` indices drawn uniformly from `0..n` with replacement.
pub fn draw_bootstrap_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Compresses a with-replacement index list into distinct rows and counts.
pub fn compress_indices(indices: &[usize], parent_n: usize) -> WeightedSample {
    let mut counts = vec![0u64; parent_n];
    for &i in indices {
        counts[i] += 1;
    }
    let (rows, weights): (Vec<usize>, Vec<u64>) = counts
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .unzip();
    WeightedSample {
        subset: SubsetSample {
            indices: rows,
            parent_n: indices.len(),
            gamma: None,
        },
        weights,
    }
}
