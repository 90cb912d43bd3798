use blbvs::dataio::{ingest_reader, ColumnSpec};
use blbvs::engine::run_blbvs_with;
use blbvs::simgen::{selection_accuracy, NoiseBeta};
use blbvs::{
    aggregate_xi, generate, run_blbvs, run_bootvs, BlbvsConfig, Dataset32, Family, LambdaMode,
    Report, SimSpec, Standardization,
};
use ndarray::Array2;
use proptest::prelude::*;

fn fixed(lambda: f64) -> BlbvsConfig {
    BlbvsConfig {
        lambda: LambdaMode::Fixed { lambda },
        ..BlbvsConfig::default()
    }
}

fn check_report(r: &Report, cutoff: f64) {
    let g = r.group_sizes.len();
    assert_eq!(r.total_fits, (r.s * r.r) as u64);
    assert_eq!(r.proportions.len(), g);
    for k in 0..g {
        let p = r.proportions[k];
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(p, r.vote_counts[k] as f64 / r.total_fits as f64);
        assert_eq!(r.selected.contains(&(k + 1)), p > cutoff);
        let from_subsets: u64 = r.subsets.iter().map(|s| s.votes[k]).sum();
        assert_eq!(from_subsets, r.vote_counts[k]);
    }
    let xi_list: Vec<Vec<f64>> = r.subsets.iter().map(|s| s.xi.clone()).collect();
    assert_eq!(aggregate_xi(&xi_list).unwrap(), r.xi);
    assert!(r.xi.iter().all(|&x| x >= 0.0));
    assert_eq!(r.trajectory.len(), r.timed_trajectory().count());
    for (lo_hi, c) in r.intervals.iter().zip(&r.coefficients) {
        assert!(lo_hi[0] <= lo_hi[1]);
        assert!(c.is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reports_are_internally_consistent(
        seed in 0u64..1000,
        n in 200usize..500,
        gamma in 0.55f64..0.9,
        r in 2usize..8,
        cutoff in 0.1f64..0.9,
        lambda in 0.002f64..0.2,
    ) {
        let (d, _) = generate::<f64>(&SimSpec::default().with_n(n).with_seed(seed)).unwrap();
        let cfg = BlbvsConfig { gamma, resamples: r, cutoff, seed, ..fixed(lambda) };
        let rep = run_blbvs(&d, &cfg).unwrap();
        check_report(&rep, cutoff);
        prop_assert_eq!(rep.b, (n as f64).powf(gamma).floor() as usize);
        prop_assert_eq!(rep.s, n / rep.b);
        let boot = run_bootvs(&d, r * 3, &cfg).unwrap();
        check_report(&boot, cutoff);
        prop_assert_eq!(boot.trajectory.len(), (r * 3).div_ceil(10));
    }

    #[test]
    fn standardization_round_trips(
        rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 2..30),
        beta in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let n = rows.len();
        let x = Array2::from_shape_fn((n, 3), |(i, j)| rows[i][j]);
        let all: Vec<usize> = (0..n).collect();
        let st = Standardization::fit(&x, &all);
        let back = st.to_original(&st.to_standardized(&beta));
        for (k, (a, b)) in back.iter().zip(&beta).enumerate() {
            if k > 0 && st.constant[k - 1] {
                continue;
            }
            prop_assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{} vs {}", a, b);
        }
        // raw predictions under beta equal standardized predictions under its transform
        let bs = st.to_standardized(&beta);
        for i in 0..n {
            let raw: f64 = beta[0] + (0..3).map(|j| x[[i, j]] * beta[j + 1]).sum::<f64>();
            let std: f64 = bs[0]
                + (0..3)
                    .filter(|&j| !st.constant[j])
                    .map(|j| st.apply(j, x[[i, j]]) * bs[j + 1])
                    .sum::<f64>();
            let skipped: f64 = (0..3).filter(|&j| st.constant[j]).map(|j| x[[i, j]] * beta[j + 1]).sum();
            prop_assert!((raw - std - skipped).abs() < 1e-7 * (1.0 + raw.abs()), "{} vs {}", raw, std);
        }
    }
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let (d, _) = generate::<f64>(&SimSpec::default().with_n(600).with_seed(2)).unwrap();
    let cfg = BlbvsConfig {
        resamples: 6,
        lambda: LambdaMode::PerSubset,
        ..BlbvsConfig::default()
    };
    let one = run_blbvs(&d, &cfg).unwrap().to_json().unwrap();
    let four = run_blbvs(
        &d,
        &BlbvsConfig {
            workers: 4,
            ..cfg.clone()
        },
    )
    .unwrap()
    .to_json()
    .unwrap();
    assert_eq!(one, four);
    let b1 = run_bootvs(&d, 13, &cfg).unwrap().to_json().unwrap();
    let b3 = run_bootvs(&d, 13, &BlbvsConfig { workers: 3, ..cfg })
        .unwrap()
        .to_json()
        .unwrap();
    assert_eq!(b1, b3);
}

#[test]
fn null_model_selects_nothing() {
    let spec = SimSpec {
        beta_true: 0.0,
        noise_beta: NoiseBeta::Zero,
        ..SimSpec::default().with_n(1500).with_seed(4)
    };
    let (d, _) = generate::<f64>(&spec).unwrap();
    let cfg = BlbvsConfig {
        resamples: 10,
        lambda: LambdaMode::PerSubset,
        ..BlbvsConfig::default()
    };
    let r = run_blbvs(&d, &cfg).unwrap();
    assert!(r.selected.len() <= 1, "selected {:?}", r.selected);
}

#[test]
fn zero_noise_signal_is_recovered_exactly() {
    let spec = SimSpec {
        noise_beta: NoiseBeta::Zero,
        ..SimSpec::default().with_n(3000).with_seed(9)
    };
    let (d, _) = generate::<f64>(&spec).unwrap();
    let cfg = BlbvsConfig {
        resamples: 10,
        ..fixed(0.02)
    };
    let r = run_blbvs(&d, &cfg).unwrap();
    assert!(
        selection_accuracy(&r, &spec).unwrap().exact_match,
        "{:?}",
        r.selected
    );
    assert_eq!(r.non_converged_count, 0);
    assert!(r.max_kkt_violation < 1e-4);
}

#[test]
fn single_precision_matches_double_on_selection() {
    let spec = SimSpec::default().with_n(1200).with_seed(6);
    let (d64, _) = generate::<f64>(&spec).unwrap();
    let (d32, _): (Dataset32, _) = generate::<f32>(&spec).unwrap();
    let cfg = BlbvsConfig {
        resamples: 5,
        ..fixed(0.03)
    };
    let a = run_blbvs(&d64, &cfg).unwrap();
    let b = run_blbvs(&d32, &cfg).unwrap();
    assert_eq!(a.selected, b.selected);
    for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
        assert!((x - *y as f64).abs() < 1e-2 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

/// A four-level factor and a continuous column that both drive the response.
fn factor_csv(seed: u64) -> String {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let effect = [("a", -2.0), ("b", 0.0), ("c", 0.0), ("d", 2.5)];
    let mut out = String::from("grade,size,y\n");
    for _ in 0..800 {
        let (level, e) = effect[rng.random_range(0..4)];
        let size: f64 = rng.random_range(-1.0..1.0);
        let eta = e + 1.5 * size;
        let y = u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta as f64).exp()));
        out.push_str(&format!("{level},{size:.4},{y}\n"));
    }
    out
}

#[test]
fn group_selection_ignores_the_reference_level() {
    let text = factor_csv(3);
    let cfg = BlbvsConfig {
        resamples: 10,
        ..BlbvsConfig::default()
    };
    for reference in ["a", "b", "c", "d"] {
        let specs = [ColumnSpec::categorical("grade").with_reference(reference)];
        let data = ingest_reader::<f64, _>(text.as_bytes(), "y", &specs, Family::Binomial).unwrap();
        assert_eq!(data.dataset.groups.df(0), 3);
        let unpenalized = run_blbvs(
            &data.dataset,
            &BlbvsConfig {
                resamples: 2,
                ..fixed(0.0)
            },
        )
        .unwrap();
        assert_eq!(unpenalized.selected, vec![1, 2]);
        let rep = run_blbvs_with(&data.dataset, &cfg, None).unwrap();
        assert_eq!(
            rep.selected,
            vec![1, 2],
            "reference {reference}: {:?}",
            rep.proportions
        );
    }
}
