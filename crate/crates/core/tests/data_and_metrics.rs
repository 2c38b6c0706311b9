use mfrde::diagnostics::{clean_block_fraction, local_outliers};
use mfrde::evaluation::{
    anomaly_scores, auc, mae, mae_values, make_grid, run_benchmark, BenchmarkConfig, Estimator,
    RunStatus,
};
use mfrde::rng::seeded;
use mfrde::synth::{
    contaminated_sample, gen_inliers, gen_outliers, synth_domain, true_density, Dataset, Label,
    OutlierScheme,
};
use mfrde::theory::{gammas, recommend, TheoryInputs};
use mfrde::{AxisBox, BlockAssignment, Forest, Points};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Kolmogorov-Smirnov distance between a sample and a continuous cdf.
fn ks_distance(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Critical value at level 0.001.
fn ks_critical(n: usize) -> f64 {
    1.95 / (n as f64).sqrt()
}

#[test]
fn inliers_follow_exponential_by_uniform() {
    let n = 20_000;
    let p = gen_inliers(n, &mut seeded(1));
    let x1: Vec<f64> = p.iter().map(|x| x[0]).collect();
    let x2: Vec<f64> = p.iter().map(|x| x[1]).collect();
    let mean = x1.iter().sum::<f64>() / n as f64;
    assert!((mean - 2.0).abs() < 4.0 * 2.0 / (n as f64).sqrt());
    assert!(ks_distance(x1, |x| 1.0 - (-x / 2.0).exp()) < ks_critical(n));
    assert!(ks_distance(x2, |x| x / 5.0) < ks_critical(n));
}

#[test]
fn beta_outliers_follow_their_cdf() {
    let n = 20_000;
    let p = gen_outliers(&OutlierScheme::beta(), n, &mut seeded(2)).unwrap();
    for j in 0..2 {
        let xs: Vec<f64> = p.iter().map(|x| x[j]).collect();
        assert!(xs.iter().all(|&v| (0.0..5.0).contains(&v)));
        assert!(ks_distance(xs, |x| 1.0 - (1.0 - x / 5.0).sqrt()) < ks_critical(n));
    }
}

#[test]
fn discrete_outliers_visit_atoms_uniformly() {
    let n = 30_000;
    let p = gen_outliers(&OutlierScheme::discrete(), n, &mut seeded(3)).unwrap();
    let mut atoms: Vec<(u64, u64)> = p.iter().map(|x| (x[0].to_bits(), x[1].to_bits())).collect();
    atoms.sort_unstable();
    let mut counts = Vec::new();
    for chunk in atoms.chunk_by(|a, b| a == b) {
        counts.push(chunk.len());
    }
    assert_eq!(counts.len(), 30);
    for x in p.iter() {
        assert!((0.0..=5.0).contains(&x[0]) && (2.5..=5.0).contains(&x[1]));
    }
    let expected = n as f64 / 30.0;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let p_value = 1.0 - ChiSquared::new(29.0).unwrap().cdf(stat);
    assert!(p_value > 0.001);
}

#[test]
fn contaminated_sample_layout() {
    let a = contaminated_sample(&OutlierScheme::uniform(), 500, 0.2, 7).unwrap();
    let b = contaminated_sample(&OutlierScheme::uniform(), 500, 0.2, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 500);
    assert_eq!(a.outlier_indices().len(), 100);
    assert_eq!(a.provenance.outliers, 100);
    let clean = contaminated_sample(&OutlierScheme::discrete(), 100, 0.0, 7).unwrap();
    assert!(clean.outlier_indices().is_empty());
    assert!(contaminated_sample(&OutlierScheme::uniform(), 10, 1.5, 0).is_err());
}

#[test]
fn csv_round_trip_is_exact() {
    let data = contaminated_sample(&OutlierScheme::beta(), 300, 0.3, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    data.write_csv(&path).unwrap();
    let back = Dataset::read_csv(&path).unwrap();
    assert_eq!(back.points.as_flat(), data.points.as_flat());
    assert_eq!(back.labels, data.labels);

    let unlabelled = Dataset::new(data.points.clone(), None).unwrap();
    unlabelled.write_csv(&path).unwrap();
    assert!(Dataset::read_csv(&path).unwrap().labels.is_none());
}

#[test]
fn csv_errors_name_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    for (body, row) in [
        ("x1,x2\n1,2\n3\n", 2),
        ("x1,x2\n1,2\n3,4\nfoo,1\n", 3),
        ("x1,x2,label\n1,2,0\n3,4,7\n", 2),
    ] {
        std::fs::write(&path, body).unwrap();
        match Dataset::read_csv(&path) {
            Err(mfrde::Error::Parse { row: r, .. }) => assert_eq!(r, row, "{body:?}"),
            other => panic!("{body:?} gave {other:?}"),
        }
    }
    assert!(Dataset::read_csv(dir.path().join("missing.csv")).is_err());
}

#[test]
fn grid_mae_of_zero_estimate_is_grid_mean_of_truth() {
    let grid = make_grid(&synth_domain(), 100).unwrap();
    let reference: f64 =
        grid.points.iter().map(true_density).sum::<f64>() / grid.points.len() as f64;
    assert!((mae(&grid, |_| 0.0, true_density) - reference).abs() < 1e-15);
    let zeros = vec![0.0; grid.points.len()];
    let truth: Vec<f64> = grid.points.iter().map(true_density).collect();
    assert!((mae_values(&zeros, &truth) - reference).abs() < 1e-15);
    assert_eq!(mae_values(&truth, &truth), 0.0);
}

#[test]
fn anomaly_scores_negate_densities() {
    assert_eq!(anomaly_scores(&[0.5, 0.0, 2.0]), vec![-0.5, -0.0, -2.0]);
}

fn labels_from(bits: &[bool]) -> Vec<Label> {
    bits.iter()
        .map(|&b| if b { Label::Outlier } else { Label::Inlier })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auc_is_rank_invariant(
        scores in prop::collection::vec(-5.0f64..5.0, 2..60),
        bits in prop::collection::vec(any::<bool>(), 60),
    ) {
        let mut bits = bits[..scores.len()].to_vec();
        bits[0] = true;
        bits[1] = false;
        let labels = labels_from(&bits);
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let warped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
        prop_assert_eq!(auc(&warped, &labels).unwrap(), a);
    }

    #[test]
    fn auc_of_reversed_scores_is_complementary(
        n in 2usize..60,
        seed in any::<u64>(),
        bits in prop::collection::vec(any::<bool>(), 60),
    ) {
        let mut scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
        scores.shuffle(&mut seeded(seed));
        let mut bits = bits[..n].to_vec();
        bits[0] = true;
        bits[1] = false;
        let labels = labels_from(&bits);
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = auc(&scores, &labels).unwrap() + auc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mae_vanishes_only_on_equality(values in prop::collection::vec(-1.0f64..1.0, 1..50), k in 0usize..50, bump in 1e-6f64..1.0) {
        prop_assert_eq!(mae_values(&values, &values), 0.0);
        let mut other = values.clone();
        let k = k % other.len();
        other[k] += bump;
        prop_assert!(mae_values(&values, &other) > 0.0);
    }

    #[test]
    fn gammas_are_monotone(alpha in 0.05f64..1.0, beta in 0.0f64..0.95, dim in 2usize..6) {
        let e = gammas(alpha, beta, dim).unwrap();
        prop_assert!(e.gamma1 > 0.0 && e.gamma1 < 0.5);
        prop_assert!(e.gamma2 >= 1.0);
        let more_beta = gammas(alpha, beta + 0.05, dim).unwrap();
        prop_assert!(more_beta.gamma2 > e.gamma2);
        let more_alpha = gammas((alpha + 0.05).min(1.0), beta, dim).unwrap();
        prop_assert!(more_alpha.gamma1 > e.gamma1);
    }

    #[test]
    fn recommended_block_size_shrinks_with_outliers(n in 50usize..5000, a in 1usize..50, extra in 1usize..50) {
        let rec = |o: usize| recommend(&TheoryInputs { alpha: 1.0, beta: 0.5, dim: 2, n, n_outliers: o }).unwrap();
        let few = rec(a.min(n));
        let many = rec((a + extra).min(n));
        prop_assert!(many.m <= few.m);
        prop_assert!(few.m <= n && few.trees >= 1);
    }

    #[test]
    fn enough_blocks_outvote_the_outliers(seed in any::<u64>(), outliers in 0usize..20, spare in 0usize..10, m in 1usize..8, rest in 0usize..8) {
        let s = 2 * outliers + 1 + spare;
        let n = s * m + rest.min(m - 1);
        let mut rng = seeded(seed);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let assignment = BlockAssignment::new(n, m, &mut rng).unwrap();
        prop_assert!(clean_block_fraction(&assignment, &idx[..outliers]) > 0.5);
    }
}

#[test]
fn local_outliers_match_a_cell_scan() {
    let domain = AxisBox::cube(2, 0.0, 5.0).unwrap();
    let forest = Forest::build(domain.clone(), 4, 5, 77).unwrap();
    let mut rng = seeded(78);
    let mut outliers = Points::new(2);
    for _ in 0..200 {
        outliers
            .push(&[rng.random_range(0.0..=5.0), rng.random_range(0.0..=5.0)])
            .unwrap();
    }
    let x = [1.1, 3.9];
    let expected: Vec<usize> = (0..outliers.len())
        .filter(|&i| {
            forest.trees().iter().any(|t| {
                t.leaf_index(&domain, &x).unwrap()
                    == t.leaf_index(&domain, outliers.get(i)).unwrap()
            })
        })
        .collect();
    assert_eq!(local_outliers(&forest, &x, &outliers).unwrap(), expected);
}

fn one_cell() -> BenchmarkConfig {
    serde_json::from_str(
        r#"{"schemes":["uniform"],"ratios":[0.2],"m_ratios":[0.1],"trees":[20],
            "depths":[6],"repeats":10,"seed":3,"grid_G":100}"#,
    )
    .unwrap()
}

#[test]
fn benchmark_summaries_recompute_from_rows() {
    let report = run_benchmark(&one_cell()).unwrap();
    let mfrde: Vec<_> = report
        .summaries
        .iter()
        .filter(|s| s.estimator == Estimator::Mfrde)
        .collect();
    assert_eq!(mfrde.len(), 1);
    let rows: Vec<f64> = report.rows_for(mfrde[0]).map(|r| r.mae.unwrap()).collect();
    assert_eq!(rows.len(), 10);
    let mean = rows.iter().sum::<f64>() / 10.0;
    assert!((mean - mfrde[0].mae_mean.unwrap()).abs() < 1e-12);
    assert!(report.rows.iter().all(|r| r.status == RunStatus::Ok));
    assert!(report.best_for("uniform", 0.2, Estimator::Forest).is_some());
}

#[test]
fn benchmark_reports_do_not_depend_on_threads() {
    let config = BenchmarkConfig {
        repeats: 3,
        m_ratios: vec![0.05, 0.1, 2.0],
        ..one_cell()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let mut report = pool.install(|| run_benchmark(&config)).unwrap();
        report.timing.elapsed_ms = 0;
        report.to_json().unwrap()
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn benchmark_summary_csv_has_one_line_per_configuration() {
    let config = BenchmarkConfig {
        repeats: 2,
        ..one_cell()
    };
    let report = run_benchmark(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.csv");
    report.write_summary_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + report.summaries.len());
    assert!(text.starts_with("scheme,ratio,estimator"));
}
