//! Monte Carlo ground truth for coefficient variances, the relative-deviation
//! metric and comparison of RD-versus-time trajectories.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{fit_full, BlbvsConfig, BlbvsReport};
use crate::error::{Error, Result};
use crate::model::GroupedDataset;
use crate::resample::{RngSpec, StreamKind};
use crate::scalar::Scalar;
use crate::simgen::{generate, SimSpec};

/// Per-coefficient variance of an estimator across dataset realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth<F> {
    /// Length `p + 1`, intercept first.
    pub v: Vec<F>,
    /// Mean estimate across realizations.
    pub mean: Vec<F>,
    /// Coefficient indices (0 = intercept) summed into `trace`.
    pub tracked: Vec<usize>,
    pub trace: F,
    pub realizations: usize,
}

/// Tracked coefficients for a simulation: every coefficient of a true group.
pub fn default_tracked(spec: &SimSpec) -> Vec<usize> {
    let mut t: Vec<usize> = spec.true_columns().into_iter().map(|j| j + 1).collect();
    t.sort_unstable();
    t
}

/// All penalized coefficients of a `p`-column design.
pub fn all_penalized(p: usize) -> Vec<usize> {
    (1..=p).collect()
}

/// Generates `m` datasets from `spec`, fits each with `procedure` and returns
/// the empirical variance (divisor `m - 1`) of every coefficient.
///
/// `procedure` receives the dataset and a seed for any randomness it needs
/// (cross-validation folds), and returns coefficients on the raw scale.
pub fn estimate_ground_truth<F, P>(
    spec: &SimSpec,
    m: usize,
    tracked: &[usize],
    workers: usize,
    procedure: P,
) -> Result<GroundTruth<F>>
where
    F: Scalar,
    P: Fn(&GroundTruthInput<'_, F>) -> Result<Vec<F>> + Sync,
{
    let rng = RngSpec::new(spec.seed);
    let seeds: Vec<u64> = (0..m)
        .map(|k| {
            use rand::RngCore;
            rng.stream(StreamKind::GroundTruth, k as u64, 0).next_u64()
        })
        .collect();
    ground_truth_from_seeds(spec, &seeds, tracked, workers, procedure)
}

/// What a ground-truth procedure sees for one realization.
pub struct GroundTruthInput<'a, F> {
    pub data: &'a GroupedDataset<F>,
    pub seed: u64,
}

/// [`estimate_ground_truth`] with explicit per-realization seeds.
pub fn ground_truth_from_seeds<F, P>(
    spec: &SimSpec,
    seeds: &[u64],
    tracked: &[usize],
    workers: usize,
    procedure: P,
) -> Result<GroundTruth<F>>
where
    F: Scalar,
    P: Fn(&GroundTruthInput<'_, F>) -> Result<Vec<F>> + Sync,
{
    let m = seeds.len();
    if m < 2 {
        return Err(Error::InvalidConfig(
            "ground truth needs at least two realizations".into(),
        ));
    }
    let len = spec.groups.n_columns() + 1;
    if let Some(&bad) = tracked.iter().find(|&&k| k >= len) {
        return Err(Error::InvalidConfig(format!(
            "tracked coefficient {bad} out of range"
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let estimates: Vec<Vec<F>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let (data, _) = generate::<F>(&spec.clone().with_seed(seed))?;
                let beta = procedure(&GroundTruthInput { data: &data, seed })?;
                if beta.len() != len {
                    return Err(Error::LengthMismatch(format!(
                        "procedure returned {} coefficients, expected {len}",
                        beta.len()
                    )));
                }
                Ok(beta)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mf = F::of_count(m);
    let mean: Vec<F> = (0..len)
        .map(|k| estimates.iter().map(|b| b[k]).sum::<F>() / mf)
        .collect();
    let v: Vec<F> = (0..len)
        .map(|k| {
            estimates
                .iter()
                .map(|b| {
                    let d = b[k] - mean[k];
                    d * d
                })
                .sum::<F>()
                / (mf - F::one())
        })
        .collect();
    let trace = tracked.iter().map(|&k| v[k]).sum();
    Ok(GroundTruth {
        v,
        mean,
        tracked: tracked.to_vec(),
        trace,
        realizations: m,
    })
}

/// Ground truth for the CV-tuned penalized fit configured by `cfg`.
pub fn ground_truth_for<F: Scalar>(
    spec: &SimSpec,
    m: usize,
    cfg: &BlbvsConfig,
    tracked: &[usize],
) -> Result<GroundTruth<F>> {
    estimate_ground_truth(
        spec,
        m,
        tracked,
        cfg.workers,
        |input: &GroundTruthInput<'_, F>| {
            let fit = fit_full(input.data, cfg, &RngSpec::new(input.seed))?;
            Ok(fit.beta)
        },
    )
}

/// `|estimate - truth| / truth`.
pub fn relative_deviation<F: Scalar>(estimate_trace: F, truth_trace: F) -> Result<F> {
    if !(truth_trace > F::zero()) {
        return Err(Error::ZeroTruthTrace);
    }
    Ok((estimate_trace - truth_trace).abs() / truth_trace)
}

/// Sum over tracked coefficients of `|xi_k^2 - v_k| / v_k`.
pub fn relative_deviation_per_coefficient<F: Scalar>(
    xi: &[F],
    v: &[F],
    tracked: &[usize],
) -> Result<F> {
    tracked
        .iter()
        .map(|&k| relative_deviation(xi[k] * xi[k], v[k]))
        .sum()
}

/// Sum of squared standard errors over the tracked coefficients.
pub fn trace_of_estimate<F: Scalar>(xi: &[F], tracked: &[usize]) -> F {
    tracked.iter().map(|&k| xi[k] * xi[k]).sum()
}

/// Trace of a finished report's standard errors.
pub fn trace_of_report<F: Scalar>(report: &BlbvsReport<F>, tracked: &[usize]) -> F {
    trace_of_estimate(&report.xi, tracked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RdForm {
    /// `|T_hat - T| / T` on the traces.
    #[default]
    Trace,
    /// Sum of per-coefficient relative deviations.
    PerCoefficient,
}

/// What the engine compares running standard errors against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdReference<F> {
    pub tracked: Vec<usize>,
    pub v: Vec<F>,
    pub truth_trace: F,
    pub form: RdForm,
}

impl<F: Scalar> RdReference<F> {
    pub fn new(truth: &GroundTruth<F>, form: RdForm) -> Result<Self> {
        if !(truth.trace > F::zero()) {
            return Err(Error::ZeroTruthTrace);
        }
        Ok(Self {
            tracked: truth.tracked.clone(),
            v: truth.v.clone(),
            truth_trace: truth.trace,
            form,
        })
    }

    pub fn trace_of(&self, xi: &[F]) -> F {
        trace_of_estimate(xi, &self.tracked)
    }

    pub fn rd_of(&self, xi: &[F]) -> F {
        let rd = match self.form {
            RdForm::Trace => relative_deviation(self.trace_of(xi), self.truth_trace),
            RdForm::PerCoefficient => {
                relative_deviation_per_coefficient(xi, &self.v, &self.tracked)
            }
        };
        // a reference with a zero tracked variance is reported as unbounded deviation
        rd.unwrap_or(F::infinity())
    }
}

/// RD against processing time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<(f64, f64)>,
}

impl Trajectory {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidConfig(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        if points.iter().any(|p| !(p.1 >= 0.0)) {
            return Err(Error::InvalidConfig(
                "relative deviation must be non-negative".into(),
            ));
        }
        Ok(Self { points })
    }

    /// RD checkpoints of a report tracked against a reference.
    pub fn from_report<F: Scalar>(report: &BlbvsReport<F>) -> Result<Self> {
        let mut points: Vec<(f64, f64)> = Vec::with_capacity(report.trajectory.len());
        for (t, c) in report.timed_trajectory() {
            let rd = c
                .rd
                .ok_or_else(|| Error::InvalidConfig("report was run without a reference".into()))?;
            // timer ticks can coincide; keep the order strict
            let t = points.last().map_or(t, |&(prev, _)| t.max(prev + 1e-9));
            points.push((t, rd.as_f64()));
        }
        Self::new(points)
    }

    pub fn final_rd(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    pub fn final_time(&self) -> Option<f64> {
        self.points.last().map(|p| p.0)
    }

    /// First time the RD is at or below `threshold`.
    pub fn time_to(&self, threshold: f64) -> Option<f64> {
        self.points.iter().find(|p| p.1 <= threshold).map(|p| p.0)
    }

    /// RD of the latest checkpoint at or before `seconds`.
    pub fn rd_at(&self, seconds: f64) -> Option<f64> {
        self.points
            .iter()
            .take_while(|p| p.0 <= seconds)
            .last()
            .map(|p| p.1)
    }

    /// Writes `seconds,rd` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seconds", "rd"])?;
        for &(t, rd) in &self.points {
            w.write_record([t.to_string(), rd.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leader {
    A,
    B,
    Tie,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCrossing {
    pub threshold: f64,
    pub a_seconds: Option<f64>,
    pub b_seconds: Option<f64>,
    pub first: Leader,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryComparison {
    pub final_rd_a: f64,
    pub final_rd_b: f64,
    pub crossings: Vec<ThresholdCrossing>,
    /// RD of both trajectories at the shorter of the two run times.
    pub equal_budget_seconds: f64,
    pub equal_budget_rd: (Option<f64>, Option<f64>),
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [1.0, 0.5, 0.2];

pub fn compare_trajectories(a: &Trajectory, b: &Trajectory) -> Result<TrajectoryComparison> {
    compare_trajectories_at(a, b, &DEFAULT_THRESHOLDS)
}

pub fn compare_trajectories_at(
    a: &Trajectory,
    b: &Trajectory,
    thresholds: &[f64],
) -> Result<TrajectoryComparison> {
    let (Some(final_rd_a), Some(final_rd_b)) = (a.final_rd(), b.final_rd()) else {
        return Err(Error::InvalidConfig(
            "cannot compare an empty trajectory".into(),
        ));
    };
    let crossings = thresholds
        .iter()
        .map(|&threshold| {
            let a_seconds = a.time_to(threshold);
            let b_seconds = b.time_to(threshold);
            let first = match (a_seconds, b_seconds) {
                (None, None) => Leader::Neither,
                (Some(_), None) => Leader::A,
                (None, Some(_)) => Leader::B,
                (Some(x), Some(y)) if x < y => Leader::A,
                (Some(x), Some(y)) if y < x => Leader::B,
                _ => Leader::Tie,
            };
            ThresholdCrossing {
                threshold,
                a_seconds,
                b_seconds,
                first,
            }
        })
        .collect();
    let budget = a
        .final_time()
        .unwrap_or(0.0)
        .min(b.final_time().unwrap_or(0.0));
    Ok(TrajectoryComparison {
        final_rd_a,
        final_rd_b,
        crossings,
        equal_budget_seconds: budget,
        equal_budget_rd: (a.rd_at(budget), b.rd_at(budget)),
    })
}
