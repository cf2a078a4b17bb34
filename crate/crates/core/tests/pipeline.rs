use nlts::bench::{
    emit_report, empirical_l2, parse_report_json, run_benchmark, run_replication, BenchConfig, Estimator, EvalSet,
    ReportFormat, DEFAULT_BURN_IN,
};
use nlts::dgp::{embed, mean_function, simulate, DgpSpec};
use nlts::FnRegressor;

fn small_config(estimators: Vec<Estimator>) -> BenchConfig {
    let mut cfg = BenchConfig::new(DgpSpec::tar());
    cfg.t = 150;
    cfg.n_eval = 1000;
    cfg.replications = 3;
    cfg.estimators = estimators;
    cfg.base_seed = 42;
    cfg.arch.widths = vec![16, 16];
    cfg.train.max_epochs = 30;
    cfg.baselines.forest.n_trees = 30;
    cfg
}

#[test]
fn zero_predictor_matches_two_pass_mean_square() {
    let spec = DgpSpec::tar();
    let zero = FnRegressor::new(2, |_: &[f64]| 0.0);
    let l2 = empirical_l2(&zero, &spec, 100_000, 1).unwrap();

    // Independent second pass: regenerate the path and average m(X)^2 directly.
    let series = simulate(&spec, 100_000 + 2, DEFAULT_BURN_IN, 1).unwrap();
    let mut total = 0.0;
    for t in 2..series.len() {
        let m = mean_function(&spec, &[series[t - 1], series[t - 2]]).unwrap();
        total += m * m;
    }
    let naive = total / 100_000.0;
    assert!((l2 - naive).abs() <= 1e-12 * naive, "{l2} vs {naive}");
}

#[test]
fn eval_set_targets_are_oracle_means() {
    let spec = DgpSpec::aar();
    let e = EvalSet::generate(&spec, 50, 20, 4).unwrap();
    for (row, m) in e.x.rows().into_iter().zip(e.target.iter()) {
        assert_eq!(mean_function(&spec, &row.to_vec()).unwrap(), *m);
    }
}

#[test]
fn networks_share_training_data() {
    let cfg = small_config(vec![Estimator::Npdnn, Estimator::Spdnn]);
    let rows = run_replication(&cfg, 1).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.error.is_none()));
    // Both fits see the same sample, so the SPDNN grid is that sample's grid.
    let s = simulate(&cfg.dgp, cfg.t + 2, cfg.burn_in, cfg.training_seed(1)).unwrap();
    let data = embed(&s, 2).unwrap();
    let grid = nlts::penalty::lambda_grid(data.response_variance(), data.len()).unwrap();
    assert!(grid.contains(&rows[1].selected_lambda.unwrap()));
    assert_eq!(rows[0].selected_lambda, None);
}

#[test]
fn thread_count_does_not_change_report() {
    let cfg = small_config(vec![Estimator::Krr, Estimator::Knn, Estimator::Rf, Estimator::Npdnn]);
    let one = run_benchmark(&cfg, 1).unwrap();
    let three = run_benchmark(&cfg, 3).unwrap();
    assert_eq!(one, three);
    assert_eq!(one.rows.len(), 12);
    let order: Vec<(usize, Estimator)> = one.rows.iter().map(|r| (r.replication, r.estimator)).collect();
    assert_eq!(
        order[..4],
        [
            (0, Estimator::Krr),
            (0, Estimator::Knn),
            (0, Estimator::Rf),
            (0, Estimator::Npdnn)
        ]
    );
    assert!(one.rows.iter().all(|r| r.empirical_l2.unwrap() >= 0.0));
}

#[test]
fn reports_written_to_disk() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_benchmark(&small_config(vec![Estimator::Knn]), 1).unwrap();
    let csv_path = dir.path().join("r.csv");
    emit_report(&report, &csv_path, ReportFormat::Csv).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.ends_with('\n') && !text.contains("\r\n"));

    let json_path = dir.path().join("r.json");
    emit_report(&report, &json_path, ReportFormat::Json).unwrap();
    let back = parse_report_json(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(back, report);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);

    let missing = dir.path().join("no/such/dir/r.csv");
    assert!(emit_report(&report, &missing, ReportFormat::Csv).is_err());
}
