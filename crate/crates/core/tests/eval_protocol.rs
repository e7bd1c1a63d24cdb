mod common;

use common::*;
use gmml::eval::{
    cross_validate_t, default_constraint_count, evaluate_split, evaluate_with_metric, knn_predict,
    run_benchmark, sample_constraints, BenchmarkOptions, CvFolds, CvPolicy, MetricMode, SplitPlan,
    TScore, TSelection, DEFAULT_COARSE_GRID, DEFAULT_K,
};
use gmml::synthetic::{anisotropic_two_class, gaussian_blobs, rank_deficient};
use gmml::{GmmlConfig, LabeledDataset, Prior, SpdMatrix, SymMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn blobs(seed: u64, per_class: usize) -> LabeledDataset {
    let mut r = rng(seed);
    gaussian_blobs(&mut r, &[vec![0.0, 0.0], vec![10.0, 0.0]], 1.0, per_class).with_name("blobs")
}

#[test]
fn protocol_defaults() {
    assert_eq!(DEFAULT_K, 5);
    assert_eq!(DEFAULT_COARSE_GRID, [0.1, 0.3, 0.5, 0.7, 0.9]);
    assert_eq!(CvPolicy::default().coarse_grid, vec![0.1, 0.3, 0.5, 0.7, 0.9]);
    assert_eq!(CvPolicy::default().fine_count, 12);
    assert_eq!(CvPolicy::default().cv_folds, 5);
    assert_eq!(default_constraint_count(3), 240);
    let opts = BenchmarkOptions::default();
    assert_eq!(opts.k, 5);
    assert_eq!(opts.constraint_count, None);
}

#[test]
fn sampled_constraint_total_matches_request() {
    let mut r = rng(1);
    let ds = gaussian_blobs(&mut r, &[vec![0.0], vec![5.0], vec![10.0]], 1.0, 30);
    let count = default_constraint_count(ds.num_classes());
    let p = sample_constraints(&ds, count, 5).unwrap();
    assert_eq!(p.sim_pairs().len() + p.dis_pairs().len(), 240);
    for &(i, j) in p.sim_pairs() {
        assert_ne!(i, j);
        assert_eq!(ds.label(i), ds.label(j));
    }
    for &(i, j) in p.dis_pairs() {
        assert_ne!(ds.label(i), ds.label(j));
    }
}

#[test]
fn knn_matches_exhaustive_sort() {
    let ds = LabeledDataset::new(vec![0.0, 1.0, 2.0, 3.0, 4.0], 1, vec![0, 1, 0, 1, 1]).unwrap();
    let id = SymMatrix::identity(1);
    for q in [-1.0, 4.5, 1.2, 2.9] {
        let mut order: Vec<(f64, usize)> = (0..5).map(|i| ((q - i as f64).powi(2), ds.label(i))).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ones = order[..3].iter().filter(|(_, l)| *l == 1).count();
        let expected = usize::from(ones >= 2);
        assert_eq!(knn_predict(&ds, &id, &[q], 3).unwrap(), expected, "query {q}");
    }
}

#[test]
fn knn_trivial_cases() {
    let ds = blobs(2, 10);
    let id = SymMatrix::identity(2);
    for i in 0..ds.len() {
        assert_eq!(knn_predict(&ds, &id, ds.point(i), 1).unwrap(), ds.label(i));
    }
    let one_class = LabeledDataset::with_num_classes(vec![0.0, 1.0, 5.0], 1, vec![1, 1, 1], 2).unwrap();
    assert_eq!(knn_predict(&one_class, &SymMatrix::identity(1), &[-100.0], 3).unwrap(), 1);
}

#[test]
fn self_evaluation_has_zero_error() {
    let ds = blobs(3, 25);
    let cfg = GmmlConfig::default();
    let out = evaluate_split(&ds, &ds, &cfg, 1, 80, 9).unwrap();
    assert_eq!(out.error, 0.0);
    assert!(out.learn_secs >= 0.0 && out.classify_secs >= 0.0);
}

#[test]
fn blobs_classified_well() {
    let train = blobs(4, 50);
    let test = blobs(5, 50);
    let out = evaluate_split(&train, &test, &GmmlConfig::default(), 5, 80, 1).unwrap();
    assert!(out.error <= 0.05, "error {}", out.error);
}

#[test]
fn regularized_handles_rank_deficient_data() {
    let mut r = rng(6);
    let ds = rank_deficient(&mut r, 6, 3, 3, 20);
    let plain = evaluate_split(&ds, &ds, &GmmlConfig::default(), 5, 240, 2);
    assert!(matches!(plain, Err(gmml::Error::SingularScatter { .. })));
    let cfg = GmmlConfig::new(0.5, 0.1, Prior::Identity).unwrap();
    let out = evaluate_split(&ds, &ds, &cfg, 5, 240, 2).unwrap();
    assert!((0.0..=1.0).contains(&out.error));
}

#[test]
fn cv_single_candidate() {
    let ds = blobs(7, 20);
    let policy = CvPolicy::new(vec![0.5], 1, 0.02, 5).unwrap();
    let out = cross_validate_t(&ds, &policy, &GmmlConfig::default(), 5, None, 3).unwrap();
    assert_eq!(out.chosen_t, 0.5);
}

#[test]
fn cv_flat_error_prefers_midpoint() {
    // blobs this far apart are classified perfectly for every t
    let mut r = rng(8);
    let ds = gaussian_blobs(&mut r, &[vec![0.0, 0.0], vec![100.0, 100.0]], 1.0, 20);
    let out = cross_validate_t(&ds, &CvPolicy::default(), &GmmlConfig::default(), 5, None, 3).unwrap();
    assert!(out.scores.iter().all(|s| s.error == Some(0.0)));
    assert_eq!(out.chosen_t, 0.5);
}

#[test]
fn cv_choice_matches_exhaustive_scan() {
    let mut r = rng(9);
    let ds = anisotropic_two_class(&mut r, 40, 9, 3.0, 3.0);
    let policy = CvPolicy::default();
    let cfg = GmmlConfig::default();
    let seed = 21;
    let out = cross_validate_t(&ds, &policy, &cfg, 5, None, seed).unwrap();

    // independent scan: score the full union of the coarse grid and every
    // possible fine window, then take the argmin with the same tie rule
    let folds = CvFolds::new(&ds, policy.cv_folds, &cfg, None, seed).unwrap();
    let coarse: Vec<TScore> = policy
        .coarse_grid
        .iter()
        .map(|&t| TScore { t, error: folds.score(t, 5).ok() })
        .collect();
    let coarse_best = coarse
        .iter()
        .filter_map(|s| s.error.map(|e| (s.t, e)))
        .fold(None::<(f64, f64)>, |acc, (t, e)| match acc {
            Some((bt, be)) if be < e || (be == e && (bt - 0.5).abs() <= (t - 0.5).abs()) => Some((bt, be)),
            _ => Some((t, e)),
        })
        .unwrap()
        .0;
    let mut union: Vec<f64> = policy.coarse_grid.clone();
    for t in policy.fine_grid(coarse_best) {
        if !union.iter().any(|u| (u - t).abs() < 1e-12) {
            union.push(t);
        }
    }
    let mut scored: Vec<(f64, f64)> = union.iter().map(|&t| (t, folds.score(t, 5).unwrap())).collect();
    scored.sort_by(|a, b| {
        a.1.total_cmp(&b.1)
            .then((a.0 - 0.5).abs().total_cmp(&(b.0 - 0.5).abs()))
            .then(a.0.total_cmp(&b.0))
    });
    assert_eq!(out.chosen_t, scored[0].0);
    assert_eq!(out.scores.len(), union.len());
    assert!(out.chosen_t > 0.0 && out.chosen_t < 1.0);
}

#[test]
fn benchmark_counts_and_determinism() {
    let ds = blobs(10, 30);
    let plan = SplitPlan::new(2, 2, 77).unwrap();
    let opts = BenchmarkOptions {
        t_selection: TSelection::CrossValidate(CvPolicy::new(vec![0.3, 0.5, 0.7], 2, 0.02, 3).unwrap()),
        ..BenchmarkOptions::default()
    };
    let a = run_benchmark(&ds, &plan, &opts).unwrap();
    assert_eq!(a.records.len(), 4);
    assert_eq!(a.failures, 0);
    assert!(a.records.iter().all(|r| r.chosen_t.is_some()));
    for run in 0..2 {
        let tested: usize = a.records.iter().filter(|r| r.run == run).map(|r| r.test_size).sum();
        assert_eq!(tested, ds.len());
    }
    let b = run_benchmark(&ds, &plan, &BenchmarkOptions { jobs: 1, ..opts.clone() }).unwrap();
    assert_eq!(a.without_timings(), b.without_timings());
    let c = run_benchmark(&ds, &SplitPlan::new(2, 2, 78).unwrap(), &opts).unwrap();
    assert_ne!(a.without_timings(), c.without_timings());
}

#[test]
fn single_run_blob_benchmark() {
    let ds = blobs(11, 40);
    let plan = SplitPlan::new(1, 2, 5).unwrap();
    let report = run_benchmark(&ds, &plan, &BenchmarkOptions::default()).unwrap();
    assert_eq!(report.records.len(), 2);
    for r in &report.records {
        assert!(r.error.unwrap() <= 0.05);
    }
}

#[test]
fn euclidean_mode_is_plain_knn() {
    let mut r = rng(12);
    let ds = anisotropic_two_class(&mut r, 30, 4, 3.0, 3.0);
    let plan = SplitPlan::new(1, 2, 4).unwrap();
    let opts = BenchmarkOptions {
        mode: MetricMode::Euclidean,
        ..BenchmarkOptions::default()
    };
    let report = run_benchmark(&ds, &plan, &opts).unwrap();
    // rebuild the same folds and classify by hand with squared Euclidean distance
    for rec in &report.records {
        let mut fr = rand_chacha::ChaCha8Rng::seed_from_u64(gmml::eval::derive_seed(4, &[0]));
        let folds = gmml::eval::stratified_folds(ds.labels(), 2, &mut fr);
        let test_idx = &folds[rec.fold];
        let train_idx: Vec<usize> = (0..ds.len()).filter(|i| !test_idx.contains(i)).collect();
        let train = ds.subset(&train_idx).unwrap();
        let mut wrong = 0;
        for &q in test_idx {
            let mut d: Vec<(f64, usize)> = (0..train.len())
                .map(|i| {
                    let s: f64 = train.point(i).iter().zip(ds.point(q)).map(|(a, b)| (a - b).powi(2)).sum();
                    (s, train.label(i))
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0));
            let ones = d[..5].iter().filter(|x| x.1 == 1).count();
            if usize::from(ones >= 3) != ds.label(q) {
                wrong += 1;
            }
        }
        assert_eq!(rec.error.unwrap(), wrong as f64 / test_idx.len() as f64);
    }
    assert!(report.fixed_t.is_none() && report.cv_policy.is_none());
}


#[test]
fn near_singular_runs_complete_with_regularization() {
    // constant and duplicated features make the similarity scatter singular
    let mut r = rng(13);
    let base = gaussian_blobs(&mut r, &[vec![0.0, 0.0, 0.0], vec![3.0, 1.0, 0.0], vec![0.0, 4.0, 2.0]], 1.0, 25);
    let mut pts = Vec::new();
    for i in 0..base.len() {
        let p = base.point(i);
        pts.extend_from_slice(&[p[0], p[1], p[2], 5.0, p[0] + 1e-9 * p[1]]);
    }
    let ds = LabeledDataset::new(pts, 5, base.labels().to_vec()).unwrap().with_name("segment-like");
    let plan = SplitPlan::new(3, 2, 1).unwrap();
    let fixed = BenchmarkOptions {
        t_selection: TSelection::Fixed,
        ..BenchmarkOptions::default()
    };
    let plain = run_benchmark(&ds, &plan, &fixed).unwrap();
    assert_eq!(plain.failures, plain.records.len());
    assert!(plain.records[0].failure.as_deref().unwrap().contains("lambda"));
    let reg = BenchmarkOptions {
        config: GmmlConfig::new(0.5, 0.1, Prior::Identity).unwrap(),
        t_selection: TSelection::CrossValidate(CvPolicy::default()),
        ..BenchmarkOptions::default()
    };
    let report = run_benchmark(&ds, &plan, &reg).unwrap();
    assert_eq!(report.failures, 0);
    assert_eq!(report.records.len(), 6);
}

#[test]
fn standardization_fits_on_training_fold() {
    let mut r = rng(14);
    let mut ds = anisotropic_two_class(&mut r, 20, 2, 4.0, 1.0);
    let scaled: Vec<f64> = ds.points().iter().enumerate().map(|(i, v)| if i % 3 == 2 { v * 1e3 } else { *v }).collect();
    ds = LabeledDataset::new(scaled, 3, ds.labels().to_vec()).unwrap();
    let plan = SplitPlan::new(1, 2, 3).unwrap();
    let opts = BenchmarkOptions {
        mode: MetricMode::Euclidean,
        standardize: true,
        ..BenchmarkOptions::default()
    };
    let report = run_benchmark(&ds, &plan, &opts).unwrap();
    assert!(report.standardize);
    assert!(report.mean_error.unwrap() < 0.3);
}

fn labelled_cloud() -> impl Strategy<Value = (LabeledDataset, Dense, Vec<f64>, usize)> {
    (1usize..5, 6usize..20, any::<u64>(), 1usize..6).prop_map(|(d, n, seed, k)| {
        let mut r = rng(seed);
        let pts: Vec<f64> = (0..n * d).map(|_| r.random_range(-3.0..3.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let a = random_dense_spd(&mut r, d, 0.1);
        let q: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
        (LabeledDataset::new(pts, d, labels).unwrap(), a, q, k)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_knn_equals_euclidean_knn_after_transform((ds, a, q, k) in labelled_cloud()) {
        let metric = spd(&a);
        let direct = knn_predict(&ds, metric.as_sym(), &q, k).unwrap();
        // map every point through Lᵀ where A = L Lᵀ, then use the identity metric
        let l = metric.cholesky();
        let lt = |x: &[f64]| -> Vec<f64> {
            (0..x.len()).map(|i| (0..x.len()).map(|j| l[(j, i)] * x[j]).sum()).collect()
        };
        let mut pts = Vec::new();
        for i in 0..ds.len() {
            pts.extend(lt(ds.point(i)));
        }
        let moved = LabeledDataset::new(pts, ds.dim(), ds.labels().to_vec()).unwrap();
        let euclid = knn_predict(&moved, &SymMatrix::identity(ds.dim()), &lt(&q), k).unwrap();
        prop_assert_eq!(direct, euclid);
        let query = LabeledDataset::new([q.clone(), q.clone()].concat(), ds.dim(), vec![direct, direct]).unwrap();
        let batch = evaluate_with_metric(&ds, &query, Some(&metric), k).unwrap();
        prop_assert_eq!(batch, 0.0);
    }

    #[test]
    fn sampled_pairs_are_valid(n in 2usize..30, count in 1usize..200, seed in any::<u64>()) {
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let ds = LabeledDataset::new((0..n).map(|i| i as f64).collect(), 1, labels).unwrap();
        let p = sample_constraints(&ds, count, seed).unwrap();
        prop_assert_eq!(p.len(), count);
        for &(i, j) in p.sim_pairs().iter().chain(p.dis_pairs()) {
            prop_assert!(i < j && j < n);
        }
        if count <= n * (n - 1) / 2 {
            let mut all: Vec<_> = p.sim_pairs().iter().chain(p.dis_pairs()).copied().collect();
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), count);
        }
    }

    #[test]
    fn cv_result_inside_open_interval(seed in 0u64..1000) {
        let mut r = rng(seed);
        let ds = anisotropic_two_class(&mut r, 12, 2, 2.0, 1.0);
        let policy = CvPolicy::new(vec![0.1, 0.9], 12, 0.02, 3).unwrap();
        let out = cross_validate_t(&ds, &policy, &GmmlConfig::default(), 3, Some(40), seed).unwrap();
        prop_assert!(out.chosen_t >= 0.01 && out.chosen_t <= 0.99);
    }
}

#[test]
fn learned_metric_dimension_checked() {
    let ds = blobs(15, 5);
    let m = SpdMatrix::identity(3);
    assert!(matches!(
        evaluate_with_metric(&ds, &ds, Some(&m), 1),
        Err(gmml::Error::DimensionMismatch { expected: 2, found: 3 })
    ));
}
