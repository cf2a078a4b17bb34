//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use nlts::bench::{run_benchmark, BenchConfig, Estimator};
use nlts::dgp::{drift_check, embed, mean_function, simulate, DgpSpec, SeriesDataset};
use nlts::net::{Activation, Architecture, Mlp};
use nlts::penalty::{clipped_norm, lambda_grid, ClippedPenalty};
use nlts::theory::{
    covering_bound_clipped, covering_bound_sparse, indicator_net, l2_distance, phi_rate, CompositionClass,
    NetworkClassParams, Region,
};
use nlts::train::{early_stop_train, fit_npdnn, fit_spdnn, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Signs of every hidden pre-activation for every input row.
fn activation_pattern(net: &Mlp, x: &Array2<f64>) -> Vec<bool> {
    let depth = net.arch().depth();
    let mut out = Vec::new();
    for row in x.rows() {
        let mut h = row.to_owned();
        for l in 0..depth {
            let (w, b) = net.layer(l);
            let z = w.dot(&h) + b;
            out.extend(z.iter().map(|v| *v > 0.0));
            h = z.mapv(|v| v.max(0.0));
        }
    }
    out
}

fn weighted_output(net: &Mlp, x: &Array2<f64>, r: &Array1<f64>) -> f64 {
    net.forward_batch(x.view()).unwrap().dot(r)
}

fn c1_gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for i in 0..100 {
        let d = rng.random_range(1..=3);
        let depth = rng.random_range(1..=3);
        let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=8)).collect();
        let act = if i % 4 == 3 {
            Activation::Sigmoid
        } else {
            Activation::Relu
        };
        let arch = Architecture::new(d, widths, act).unwrap();
        let mut net = Mlp::init(arch, 1.0, rng.random()).unwrap();
        for b in net.params_mut().iter_mut() {
            if *b == 0.0 {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let n = rng.random_range(1..=16);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let r = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
        let grad = net.backprop(x.view(), r.view()).unwrap();
        let base = activation_pattern(&net, &x);
        for (j, &g) in grad.iter().enumerate() {
            let mut plus = net.clone();
            plus.params_mut()[j] += h;
            let mut minus = net.clone();
            minus.params_mut()[j] -= h;
            if act == Activation::Relu
                && (activation_pattern(&plus, &x) != base || activation_pattern(&minus, &x) != base)
            {
                skipped += 1;
                continue;
            }
            let fd = (weighted_output(&plus, &x, &r) - weighted_output(&minus, &x, &r)) / (2.0 * h);
            let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-4 && within(elapsed, 10),
        format!("max rel err {worst:.2e} over {checked} params ({skipped} kink-adjacent skipped), {elapsed:.2?}"),
    )
}

fn c2_clipped_norm_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut failures = Vec::new();
    let h = 1e-7;
    for draw in 0..10_000 {
        let p = rng.random_range(1..=12);
        let theta: Vec<f64> = (0..p)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    let mag = 10f64.powf(rng.random_range(-4.0..1.0));
                    if rng.random_bool(0.5) {
                        mag
                    } else {
                        -mag
                    }
                }
            })
            .collect();
        let tau = 10f64.powf(rng.random_range(-4.0..1.0));
        let l0 = theta.iter().filter(|v| **v != 0.0).count() as f64;
        let c = clipped_norm(&theta, tau).unwrap();

        // Bounds.
        if !(0.0 <= c && c <= l0 + 1e-12 && l0 <= p as f64) {
            failures.push(format!("draw {draw}: bounds"));
        }
        // Monotone in tau.
        let tau2 = tau * rng.random_range(1.0..10.0);
        if clipped_norm(&theta, tau2).unwrap() > c + 1e-12 {
            failures.push(format!("draw {draw}: monotonicity"));
        }
        // Closed-form regimes.
        let nonzero: Vec<f64> = theta.iter().filter(|v| **v != 0.0).map(|v| v.abs()).collect();
        if let Some(min) = nonzero.iter().copied().reduce(f64::min) {
            let small = min * rng.random_range(0.01..1.0);
            if clipped_norm(&theta, small).unwrap() != l0 {
                failures.push(format!("draw {draw}: l0 regime"));
            }
            let max = nonzero.iter().copied().fold(0.0, f64::max);
            let large = max * rng.random_range(1.0..100.0);
            let l1: f64 = theta.iter().map(|v| v.abs()).sum();
            if rel_err(clipped_norm(&theta, large).unwrap(), l1 / large) > 1e-12 {
                failures.push(format!("draw {draw}: l1 regime"));
            }
        }
        // Subgradient against finite differences away from kinks.
        let lambda = rng.random_range(0.0..3.0);
        let pen = ClippedPenalty::new(lambda, tau).unwrap();
        let sub = pen.subgradient(&theta);
        for j in 0..p {
            let a = theta[j].abs();
            if a < 2.0 * h || (a - tau).abs() < 2.0 * h {
                continue;
            }
            let mut plus = theta.clone();
            plus[j] += h;
            let mut minus = theta.clone();
            minus[j] -= h;
            let fd = (pen.value(&plus) - pen.value(&minus)) / (2.0 * h);
            if (sub[j] - fd).abs() > 1e-6 * sub[j].abs().max(1.0) {
                failures.push(format!("draw {draw}: subgradient coord {j} ({} vs {fd})", sub[j]));
            }
        }
        // Scale law.
        let unit = ClippedPenalty::new(1.0, tau).unwrap();
        if rel_err(pen.value(&theta), unit.value(&theta) * lambda) > 1e-12 {
            failures.push(format!("draw {draw}: scale law"));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && within(elapsed, 5),
        format!(
            "{} violations in 10^4 draws{}, {elapsed:.2?}",
            failures.len(),
            failures.first().map_or(String::new(), |f| format!(" (first: {f})"))
        ),
    )
}

fn c3_covering_oracle() -> Outcome {
    let p = NetworkClassParams::new;
    let sparse_cases = [
        (p(2.0, 1.0, 1.0, 1.0), 0.5, 8.0 * 8f64.ln()),
        (p(1.0, 2.0, 3.0, 2.0), 0.25, 6.0 * 96f64.ln()),
        (p(10.0, 3.0, 127.0, 1.0), 0.1, 80.0 * 5120f64.ln()),
    ];
    let clipped_cases = [
        (p(1.0, 1.0, 1.0, 1.0).with_tau(0.01), 0.5, 4.0 * (4.0f64 / 0.42).ln()),
        (p(2.0, 1.0, 1.0, 1.0).with_tau(0.001), 0.5, 8.0 * (4.0f64 / 0.492).ln()),
        (p(1.0, 2.0, 1.0, 1.0).with_tau(1e-4), 0.1, 6.0 * (6.0f64 / 0.0976).ln()),
    ];
    let mut worst = 0.0f64;
    for (params, delta, expected) in sparse_cases {
        worst = worst.max(rel_err(covering_bound_sparse(&params, delta).unwrap(), expected));
    }
    for (params, delta, expected) in clipped_cases {
        worst = worst.max(rel_err(covering_bound_clipped(&params, delta).unwrap(), expected));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let params = NetworkClassParams::new(
            rng.random_range(1.0..1e4),
            rng.random_range(1.0..10.0),
            rng.random_range(1.0..512.0),
            rng.random_range(1.0..10.0),
        )
        .with_tau(0.0);
        let delta = rng.random_range(1e-6..1.0);
        if covering_bound_clipped(&params, delta).unwrap() != covering_bound_sparse(&params, delta).unwrap() {
            mismatches += 1;
        }
    }
    outcome(
        worst <= 1e-12 && mismatches == 0,
        format!("max rel err {worst:.2e} on 6 hand values, {mismatches}/1000 tau=0 mismatches"),
    )
}

fn c4_rate_calculator() -> Outcome {
    let additive = CompositionClass::dense(vec![1], vec![2.0]).unwrap();
    let phi = phi_rate(&additive, 1e5).unwrap().phi;
    let err_additive = rel_err(phi, 1e-4);
    let comp = CompositionClass::dense(vec![1, 1], vec![2.0, 0.5]).unwrap();
    let mut err_comp = 0.0f64;
    for t in [2.0, 400.0, 1e5, 1e8] {
        err_comp = err_comp.max(rel_err(phi_rate(&comp, t).unwrap().phi, t.powf(-0.5)));
    }
    let pass = err_additive <= 4.0 * f64::EPSILON && err_comp <= 4.0 * f64::EPSILON;
    outcome(
        pass,
        format!("phi(beta=2,t=1,T=1e5) = {phi:e} (rel err {err_additive:.1e}); composition rel err {err_comp:.1e}"),
    )
}

fn c5_indicator() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for eps in [0.5 - 1e-12, 0.1, 0.01] {
        let net = indicator_net(eps).unwrap();
        let f = |x: &[f64]| net.forward(x).unwrap();
        let step = |x: &[f64]| if x[0] >= 0.0 { 1.0 } else { 0.0 };
        let d2 = l2_distance(f, step, Region::Interval(-2.0, 2.0), 100_000).unwrap();
        pass &= d2 <= eps;
        parts.push(format!("eps={eps:.2}: {d2:.3e}"));
    }
    let elapsed = start.elapsed();
    outcome(
        pass && within(elapsed, 5),
        format!("{} ({elapsed:.2?})", parts.join(", ")),
    )
}

fn c6_noiseless_capacity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let n = 500;
    let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
    let y = Array1::from_shape_fn(n, |i| 0.5 * x[[i, 0]] + 0.01 * rng.sample::<f64, _>(StandardNormal));
    let data = SeriesDataset::new(x, y).unwrap();
    let arch = Architecture::uniform(2, 3, 128, Activation::Relu).unwrap();
    let cfg = TrainConfig {
        max_epochs: 200,
        seed: 6,
        ..TrainConfig::default()
    };
    let fit = fit_npdnn(&data, &arch, &cfg).unwrap();
    let eval = Array2::from_shape_fn((10_000, 2), |_| rng.random_range(-1.0..1.0));
    let pred = fit.estimator.predict_batch(eval.view()).unwrap();
    let l2 = pred
        .iter()
        .zip(eval.rows())
        .map(|(p, r)| (p - 0.5 * r[0]).powi(2))
        .sum::<f64>()
        / 10_000.0;
    let elapsed = start.elapsed();
    outcome(
        l2 <= 0.01 && fit.epochs_used <= 200 && within(elapsed, 120),
        format!("L2 = {l2:.3e} after {} epochs, {elapsed:.2?}", fit.epochs_used),
    )
}

/// Criteria 7 and 8 share the TAR benchmark run.
fn c7_and_8_tar() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut cfg = BenchConfig::new(DgpSpec::tar());
    cfg.t = 400;
    cfg.burn_in = 100;
    cfg.replications = 20;
    cfg.n_eval = 10_000;
    cfg.estimators = vec![Estimator::Knn, Estimator::Npdnn, Estimator::Spdnn];
    cfg.base_seed = 20_240_707;
    let report = run_benchmark(&cfg, 0).unwrap();
    let elapsed = start.elapsed();
    let failed = report.failures().count();
    let med = |e| report.median(e).unwrap_or(f64::NAN);
    let (knn, np, sp) = (med(Estimator::Knn), med(Estimator::Npdnn), med(Estimator::Spdnn));
    let c7 = outcome(
        failed == 0 && sp < knn && np < knn && within(elapsed, 30 * 60),
        format!("median L2 spdnn {sp:.4} npdnn {np:.4} knn {knn:.4}; {failed} failed cells; {elapsed:.1?}"),
    );

    // Sparsity response on one fixed replication.
    let series = simulate(&DgpSpec::tar(), 402, 100, 8).unwrap();
    let data = embed(&series, 2).unwrap();
    let arch = Architecture::uniform(2, 3, 128, Activation::Relu).unwrap();
    let grid = lambda_grid(data.response_variance(), data.len()).unwrap();
    let tau = nlts::penalty::DEFAULT_TAU;
    let fit_at = |lambda: f64| {
        let cfg = TrainConfig {
            penalty: Some(ClippedPenalty::new(lambda, tau).unwrap()),
            seed: 8,
            ..TrainConfig::default()
        };
        let fit = early_stop_train(&data, &arch, &cfg).unwrap();
        clipped_norm(fit.estimator.net.params(), tau).unwrap()
    };
    let at_max = fit_at(grid[4]);
    let at_zero = fit_at(0.0);
    let spdnn = fit_spdnn(
        &data,
        &arch,
        &TrainConfig {
            seed: 8,
            ..TrainConfig::default()
        },
        None,
    )
    .unwrap();
    let selected_ok = spdnn.selected_lambda.is_some_and(|l| grid.contains(&l));
    let bench_ok = report.rows.iter().filter(|r| r.estimator == Estimator::Spdnn).all(|r| {
        r.selected_lambda.is_some() && {
            // Grid of that replication's own sample.
            let s = simulate(&cfg.dgp, cfg.t + 2, cfg.burn_in, cfg.training_seed(r.replication)).unwrap();
            let d = embed(&s, 2).unwrap();
            lambda_grid(d.response_variance(), d.len())
                .unwrap()
                .contains(&r.selected_lambda.unwrap())
        }
    });
    let c8 = outcome(
        at_max <= 1.05 * at_zero && selected_ok && bench_ok,
        format!(
            "clipped norm {at_max:.1} at lambda_max vs {at_zero:.1} at 0; selected lambda on grid: single fit {selected_ok}, all 20 bench fits {bench_ok}"
        ),
    );
    (c7, c8)
}

fn c9_cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.json");
    std::fs::write(
        &cfg,
        r#"{
  "schema_version": 1,
  "dgp": {"name": "tar", "d": 2, "noise_sd": 1.0},
  "T": 200,
  "n_eval": 5000,
  "replications": 4,
  "estimators": ["krr", "knn", "rf", "npdnn", "spdnn"],
  "base_seed": 99,
  "arch": {"widths": [16, 16]},
  "train": {"max_epochs": 40},
  "baselines": {"forest": {"n_trees": 100}}
}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "1", "4"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_nlts"))
            .args([
                "bench",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .args(["--threads", threads])
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(false, format!("bench exited with {:?}", status.status.code()));
        }
        outputs.push(std::fs::read(&out).unwrap());
    }
    let rows = String::from_utf8_lossy(&outputs[0]).lines().count() - 1;
    let same_twice = outputs[0] == outputs[1];
    let same_threads = outputs[0] == outputs[2];
    outcome(
        same_twice && same_threads && rows == 20,
        format!("{rows} rows; identical reruns {same_twice}; --threads 1 vs 4 identical {same_threads}"),
    )
}

fn c10_dgp_fidelity() -> Outcome {
    let expar = mean_function(&DgpSpec::expar(), &[1.0, 0.0]).unwrap();
    let tar = mean_function(&DgpSpec::tar(), &[2.0, 1.0]).unwrap();
    let sim = mean_function(&DgpSpec::sim(), &[0.75, 0.0]).unwrap();
    let zero = DgpSpec::linear_ar(&[0.0], 0.0, 1.0);
    let drift = drift_check(&zero, &[1.0, 0.5], &[1.0], 5000, 10).unwrap();
    let pass = (expar - 0.16454).abs() <= 1e-4 && tar == -1.4 && sim == 1.0 && drift.pass && drift.gamma_hat < 1.0;
    outcome(
        pass,
        format!(
            "expar(1,0) = {expar:.6}, tar(2,1) = {tar}, sim(0.75,0) = {sim}; drift gamma_hat = {:.4}",
            drift.gamma_hat
        ),
    )
}

fn main() {
    let (c7, c8) = c7_and_8_tar();
    let results: Vec<(u32, &str, Outcome)> = vec![
        (1, "gradient oracle", c1_gradient_oracle()),
        (2, "clipped-norm suite", c2_clipped_norm_suite()),
        (3, "covering-bound oracle", c3_covering_oracle()),
        (4, "rate calculator", c4_rate_calculator()),
        (5, "indicator approximation", c5_indicator()),
        (6, "noiseless capacity", c6_noiseless_capacity()),
        (7, "scaled TAR ordering", c7),
        (8, "sparsity response", c8),
        (9, "bench determinism", c9_cli_determinism()),
        (10, "DGP fidelity", c10_dgp_fidelity()),
    ];

    let mut failed = 0;
    for (id, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("acceptance {id:>2} [{tag}] {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
