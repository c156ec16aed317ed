use std::process::Command;

use resque::dp_solvers::{dp_erm, dp_erm_with_params, sample_indices, DpConstants, DpErmParams, DpOptions};
use resque::harness::{run_experiment, ExperimentConfig, Mode, CSV_COLUMNS};
use resque::parallel_solvers::{solve_parallel, BallMethod, ParallelOptions};
use resque::problem_core::{make_synthetic_objective, make_synthetic_objective_n, ExactOracle, Objective, ObjectiveKind, QueryLedger};
use resque::testing::{lad_minimizer, normal_cdf};
use resque::Error;

/// Upper tail of a chi-square with `k` degrees of freedom, Wilson-Hilferty.
fn chi_square_sf(x: f64, k: f64) -> f64 {
    let z = ((x / k).cbrt() - (1.0 - 2.0 / (9.0 * k))) / (2.0 / (9.0 * k)).sqrt();
    1.0 - normal_cdf(z)
}

#[test]
fn sampled_indices_are_uniform() {
    let (n, count) = (50, 200_000);
    for seed in [1, 2, 3] {
        let mut hits = vec![0u64; n];
        for i in sample_indices(n, count, seed) {
            hits[i] += 1;
        }
        let e = count as f64 / n as f64;
        let stat: f64 = hits.iter().map(|&h| (h as f64 - e).powi(2) / e).sum();
        let p = chi_square_sf(stat, (n - 1) as f64);
        assert!(p > 1e-4, "seed {seed}: χ² = {stat:.1}, p = {p:.2e}");
    }
}

#[test]
fn chi_square_tail_reference() {
    // 95th percentile of χ²₄₉ is 66.34.
    assert!((chi_square_sf(66.34, 49.0) - 0.05).abs() < 2e-3);
}

fn small_parallel() -> ExperimentConfig {
    let mut c = ExperimentConfig { kappas: vec![4.0, 8.0], seeds: vec![0, 1, 2], ..Default::default() };
    c.constants.c_ba = 3.0;
    c.c_agg = 1.0;
    c
}

#[test]
fn reruns_produce_identical_csv() {
    let cfg = small_parallel();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    let csv = a.to_csv().unwrap();
    assert_eq!(csv, b.to_csv().unwrap());
    assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(a.rows.len(), cfg.kappas.len() * cfg.seeds.len());
    assert!(a.passed(), "{}", a.summary());
}

#[test]
fn thread_count_does_not_change_results() {
    let mut cfg = small_parallel();
    cfg.kappas = vec![4.0];
    let one = resque::par::with_threads(1, || run_experiment(&cfg).unwrap().to_csv().unwrap());
    let three = resque::par::with_threads(3, || run_experiment(&cfg).unwrap().to_csv().unwrap());
    assert_eq!(one, three);
}

#[test]
fn group_means_recompute_from_rows() {
    let r = run_experiment(&small_parallel()).unwrap();
    for (g, s) in r.groups.iter().enumerate() {
        let rows: Vec<_> = r.rows.iter().filter(|x| x.group == g).collect();
        assert_eq!(s.count, rows.len());
        let mean = rows.iter().map(|x| x.error).sum::<f64>() / rows.len() as f64;
        let depth = rows.iter().map(|x| x.depth as f64).sum::<f64>() / rows.len() as f64;
        assert!((s.mean_error - mean).abs() <= 1e-15 * mean.abs().max(1.0));
        assert!((s.mean_depth - depth).abs() <= 1e-12 * depth);
    }
}

#[test]
fn ball_methods_meet_target_on_max_linear() {
    let fx = make_synthetic_objective(ObjectiveKind::MaxLinear, 4, 5).unwrap();
    let f = fx.objective.as_ref();
    let f_star = f.value(f.optimum().unwrap());
    let opts = ParallelOptions { c_ba: 3.0, c_agg: 1.0 };
    for method in [BallMethod::EpochSgd, BallMethod::AcSa] {
        let mut ledger = QueryLedger::new();
        let out = solve_parallel(&ExactOracle(f), f.domain_radius(), 0.25, method, &mut ledger, 9, &opts).unwrap();
        assert!(f.value(&out.x) - f_star <= 0.25, "{method}");
        assert!(ledger.query_depth() > 0);
    }
}

#[test]
fn trivial_target_returns_origin_without_queries() {
    let fx = make_synthetic_objective(ObjectiveKind::DistanceToPoint, 3, 0).unwrap();
    let f = fx.objective.as_ref();
    let mut ledger = QueryLedger::new();
    let target = f.lipschitz() * f.domain_radius();
    let out =
        solve_parallel(&ExactOracle(f), f.domain_radius(), target, BallMethod::AcSa, &mut ledger, 0, &ParallelOptions::default())
            .unwrap();
    assert_eq!(out.x, vec![0.0; 3]);
    assert_eq!(ledger.query_depth(), 0);
}

/// Runs the private driver outside its privacy regime, with a target small
/// enough that the full ball acceleration stack does real work.
#[test]
fn dp_erm_machinery_reaches_target_when_privacy_is_off() {
    // C_priv = 1 keeps the MLMC level cap above T at this n.
    let consts = DpConstants { c_ba: 3.0, c_priv: 1.0, ..Default::default() };
    let mut errors = Vec::new();
    for seed in 0..3 {
        let fx = make_synthetic_objective_n(ObjectiveKind::AbsRegression, 2, 256, seed).unwrap();
        let data = fx.dataset.unwrap();
        let f_star = data.value(&lad_minimizer(&data, data.radius));
        let params = DpErmParams::with_target(256, 2, data.lipschitz, data.radius, 1.0, 1e-5, 0.2, 0.1, 0.05, 1.0, &consts);
        assert!(!params.trivial);
        let opts = DpOptions { constants: consts, enforce_privacy: false, seed };
        let mut ledger = QueryLedger::new();
        let out = dp_erm_with_params(&data, &params, 0.0, &[0.0, 0.0], &opts, &mut ledger).unwrap();
        assert!(out.dp.is_none());
        assert!(out.accel.as_ref().is_some_and(|a| a.iterations > 0));
        assert!(ledger.total_queries() > 0);
        errors.push(data.value(&out.x) - f_star);
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    assert!(mean <= 0.2, "mean excess risk {mean:.4e} ({errors:?})");
}

#[test]
fn dp_erm_refuses_tiny_datasets() {
    let fx = make_synthetic_objective_n(ObjectiveKind::AbsRegression, 2, 16, 0).unwrap();
    let data = fx.dataset.unwrap();
    let mut ledger = QueryLedger::new();
    let err = dp_erm(&data, 1.0, 1e-5, &DpOptions::default(), &mut ledger).unwrap_err();
    assert!(matches!(err, Error::Infeasible(_) | Error::Config(_)), "{err}");
    assert!(dp_erm(&data, 1.5, 1e-5, &DpOptions::default(), &mut ledger).is_err());
}

#[test]
fn dp_erm_report_stays_within_budget() {
    let cfg = ExperimentConfig {
        mode: Mode::DpErm,
        problem: ObjectiveKind::AbsRegression,
        seeds: vec![0, 1],
        ..Default::default()
    };
    let r = run_experiment(&cfg).unwrap();
    assert!(r.passed(), "{}", r.summary());
    for row in &r.rows {
        assert!(row.eps_total <= 1.0 && row.delta_total <= 1e-5);
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_resque-opt"))
}

#[test]
fn cli_verify_passes_and_writes_outputs() {
    let dir = std::env::temp_dir().join(format!("resque-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = dir.join("run.cfg");
    std::fs::write(&config, "# accountant only\nsuite = accountant\n").unwrap();
    let out = dir.join("verify.csv");
    let status = cli()
        .args(["verify", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with(&CSV_COLUMNS.join(",")));
    let summary = std::fs::read_to_string(out.with_extension("txt")).unwrap();
    assert!(summary.contains("PASS"));
    assert!(!summary.contains("FAIL"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn cli_rejects_bad_input() {
    let bad_mode = cli().arg("bogus").output().unwrap();
    assert_ne!(bad_mode.status.code(), Some(0));
    let bad_key = cli().args(["parallel", "--override", "nope=1"]).output().unwrap();
    assert_eq!(bad_key.status.code(), Some(2));
    let bad_problem = cli().args(["dp_erm", "--override", "problem=max_linear"]).output().unwrap();
    assert_eq!(bad_problem.status.code(), Some(2));
}

#[test]
fn cli_overrides_reach_the_run() {
    let out = cli()
        .args(["dp_erm", "--override", "problem=abs_regression", "--override", "seeds=0..2", "--override", "n=128"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("n=128 seeds=2"), "{text}");
}
