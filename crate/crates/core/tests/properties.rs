use proptest::prelude::*;

use resque::ballaccel::BallAccelConfig;
use resque::dp_solvers::{aggregate, SubsampledRunConfig};
use resque::linalg::{dist, norm, projected};
use resque::parallel_solvers::{AcSaParams, EpochSgdParams};
use resque::privacy::{amplify_subsample, rdp_to_dp, PrivacyLedger};
use resque::problem_core::{make_synthetic_objective, ObjectiveKind, QueryLedger};
use resque::resque::ResqueSampler;

fn unit_dir(raw: &[f64]) -> Vec<f64> {
    let n = norm(raw).max(1e-12);
    raw.iter().map(|v| v / n).collect()
}

fn vec_in(d: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, d)
}

#[derive(Debug, Clone)]
enum LedgerOp {
    Batch(u64),
    Seq(Vec<u64>),
    Par(Vec<Vec<u64>>),
    Compute(u64, u64),
}

fn ledger_from(sizes: &[u64]) -> QueryLedger {
    let mut l = QueryLedger::new();
    for &s in sizes {
        l.record_batch(s, "t");
    }
    l
}

fn ledger_op() -> impl Strategy<Value = LedgerOp> {
    let sizes = || prop::collection::vec(0u64..50, 0..6);
    prop_oneof![
        (0u64..100).prop_map(LedgerOp::Batch),
        sizes().prop_map(LedgerOp::Seq),
        prop::collection::vec(sizes(), 0..4).prop_map(LedgerOp::Par),
        (0u64..10, 0u64..100).prop_map(|(a, b)| LedgerOp::Compute(a, b)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ledger_is_monotone_and_exact(ops in prop::collection::vec(ledger_op(), 1..20)) {
        let mut l = QueryLedger::new();
        let (mut depth, mut total) = (0u64, 0u64);
        for op in ops {
            let before = l.report();
            match op {
                LedgerOp::Batch(s) => {
                    l.record_batch(s, "b");
                    depth += u64::from(s > 0);
                    total += s;
                }
                LedgerOp::Seq(sizes) => {
                    l.extend_sequential(&ledger_from(&sizes));
                    depth += sizes.iter().filter(|&&s| s > 0).count() as u64;
                    total += sizes.iter().sum::<u64>();
                }
                LedgerOp::Par(subs) => {
                    let ledgers: Vec<QueryLedger> = subs.iter().map(|s| ledger_from(s)).collect();
                    l.merge_parallel(&ledgers);
                    // Rounds of each sub-ledger line up; an all-empty column adds nothing.
                    let cols = subs.iter().map(|s| s.iter().filter(|&&v| v > 0).count()).max().unwrap_or(0);
                    depth += cols as u64;
                    total += subs.iter().flatten().sum::<u64>();
                }
                LedgerOp::Compute(a, b) => l.add_compute(a, b),
            }
            let after = l.report();
            prop_assert!(after.query_depth >= before.query_depth);
            prop_assert!(after.total_queries >= before.total_queries);
            prop_assert!(after.comp_depth >= before.comp_depth && after.comp_work >= before.comp_work);
            prop_assert_eq!(after.query_depth, depth);
            prop_assert_eq!(after.total_queries, total);
            let sizes = l.batch_sizes();
            prop_assert_eq!(sizes.len() as u64, depth);
            prop_assert_eq!(sizes.iter().sum::<u64>(), total);
        }
    }

    #[test]
    fn aggregation_lands_within_delta(
        d in 1usize..8,
        k in 1usize..60,
        delta in 0.01f64..10.0,
        center in vec_in(8, 5.0),
        seed_dirs in prop::collection::vec(vec_in(8, 1.0), 60),
        radii in prop::collection::vec(0.0f64..1.0, 60),
        far in 1.0f64..20.0,
    ) {
        let y = &center[..d];
        let inliers = (0.51 * k as f64).ceil() as usize;
        let points: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let u = unit_dir(&seed_dirs[i][..d]);
                let r = if i < inliers { radii[i] * delta / 3.0 } else { far * delta * (1.0 + radii[i]) };
                y.iter().zip(&u).map(|(a, b)| a + r * b).collect()
            })
            .collect();
        let out = aggregate(&points, delta);
        prop_assert!(!out.degraded);
        prop_assert!(dist(&out.point, y) <= delta * (1.0 + 1e-12));
    }

    #[test]
    fn private_epochs_keep_noise_ratio(
        t in 1usize..5000,
        r in 0.01f64..2.0,
        beta in 0.01f64..5.0,
        l in 0.1f64..10.0,
        d in 1usize..32,
    ) {
        let cfg = SubsampledRunConfig::new(vec![0.0; d], r, r, beta, t, 0);
        let epochs = cfg.epochs(l);
        prop_assert!(epochs.iter().map(|e| e.steps).sum::<usize>() <= t);
        for (i, e) in epochs.iter().enumerate() {
            prop_assert!((e.sigma / e.eta - l / beta).abs() <= 1e-12 * l / beta);
            prop_assert_eq!(e.steps, cfg.t_hat() >> (i + 1));
        }
    }

    #[test]
    fn epoch_sgd_schedule_couples_length_and_step(l in 0.1f64..10.0, lambda in 0.01f64..10.0, phi in 1e-4f64..1.0) {
        let p = EpochSgdParams::new(l, lambda, phi);
        prop_assert!(p.steps() <= p.total);
        let c0 = p.epochs.first().map(|e| e.0 as f64 * e.1);
        for &(tk, eta) in &p.epochs {
            prop_assert!((tk as f64 * eta - c0.unwrap()).abs() <= 1e-12 * c0.unwrap());
        }
    }

    #[test]
    fn ac_sa_weights_are_convex(t in 1usize..500, l in 0.1f64..10.0, rho in 0.01f64..2.0, lambda in 0.01f64..10.0) {
        let (alpha, gamma) = AcSaParams::weights(t, l, rho, lambda);
        prop_assert!(alpha > 0.0 && alpha <= 1.0);
        prop_assert!(gamma > 0.0);
        let (a, b) = AcSaParams::md_coefficients(alpha, gamma, lambda);
        prop_assert!(a >= 0.0 && b >= 0.0);
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn schedule_arithmetic_recomputes(ratio in 1.0f64..200.0, kappa in 1.0f64..1e4, c_ba in 1.0f64..16.0) {
        let (l, big_r) = (1.0, 1.0);
        let r = big_r / ratio;
        let eps = l * big_r / kappa;
        let Ok(cfg) = BallAccelConfig::derive(l, big_r, r, eps, c_ba) else { return Ok(()) };
        let kap = kappa.max(std::f64::consts::E);
        let k = ratio.powf(2.0 / 3.0);
        let lam = eps * k * k * kap.ln().powi(2);
        prop_assert!((cfg.kappa - kap).abs() <= 1e-12 * kap);
        prop_assert!((cfg.k - k).abs() <= 1e-9 * k);
        prop_assert!((cfg.lambda_star - lam).abs() <= 1e-9 * lam);
        prop_assert_eq!(cfg.max_iters, ((c_ba * k * kap.ln()).ceil() as usize).max(1));
        prop_assert!((cfg.lambda_lo * c_ba - lam).abs() <= 1e-9 * lam);
        prop_assert!((cfg.lambda_hi - c_ba * kappa).abs() <= 1e-9 * c_ba * kappa);
    }

    #[test]
    fn composed_totals_are_sums(events in prop::collection::vec((0.0f64..2.0, 0.0f64..1e-4), 1..12), alpha in 1.5f64..50.0) {
        let mut ledger = PrivacyLedger::new(alpha).unwrap();
        for (i, &(e, d)) in events.iter().enumerate() {
            ledger.record(e, d, &format!("e{i}")).unwrap();
        }
        let (e, d) = ledger.totals();
        let se: f64 = events.iter().map(|p| p.0).sum();
        let sd: f64 = events.iter().map(|p| p.1).sum();
        prop_assert!((e - se).abs() <= 1e-12 * se.max(1.0));
        prop_assert!((d - sd).abs() <= 1e-15_f64.max(1e-12 * sd));
    }

    #[test]
    fn conversion_is_monotone(alpha in 1.5f64..50.0, e in 0.0f64..2.0, de in 0.0f64..1.0, d in 0.0f64..1e-4, dd in 0.0f64..1e-4) {
        let dp = 1e-6;
        let base = rdp_to_dp(alpha, e, d, dp).unwrap();
        let more = rdp_to_dp(alpha, e + de, d + dd, dp).unwrap();
        prop_assert!(more.eps_dp >= base.eps_dp);
        prop_assert!(more.delta >= base.delta);
    }

    #[test]
    fn amplification_strictly_helps(s in 1e-6f64..(1.0 / 40.0), tau in 1e-6f64..(1.0 / 3.0), a in 0.0f64..1.0) {
        let alpha = 1.0 + a * (3.0 / tau - 1.0) * 0.999;
        prop_assume!(alpha > 1.0 && alpha * tau < 3.0);
        let amp = amplify_subsample(alpha, tau, s).unwrap();
        prop_assert!(amp < alpha * tau);
    }

    #[test]
    fn amplification_rejects_out_of_range(s in 1.0f64 / 40.0..1.0, tau in 0.34f64..5.0) {
        prop_assert!(amplify_subsample(2.0, 0.1, s).is_err());
        prop_assert!(amplify_subsample(2.0, tau, 0.01).is_err());
        prop_assert!(amplify_subsample(1.0, 0.1, 0.01).is_err());
        prop_assert!(amplify_subsample(31.0, 0.1, 0.01).is_err());
    }

    #[test]
    fn projection_is_feasible_and_idempotent(x in vec_in(6, 10.0), c in vec_in(6, 2.0), r in 0.01f64..5.0) {
        let p = projected(&x, &c, r);
        prop_assert!(dist(&p, &c) <= r * (1.0 + 1e-12));
        let q = projected(&p, &c, r);
        prop_assert!(dist(&p, &q) <= 1e-12 * (1.0 + norm(&p)));
        if dist(&x, &c) <= r {
            prop_assert_eq!(p, x);
        }
    }

    #[test]
    fn weight_is_positive_inside_and_refused_far_away(
        u in vec_in(4, 1.0),
        xi in vec_in(4, 3.0),
        scale in 0.0f64..1.0,
        rho in 0.05f64..2.0,
    ) {
        let sampler = ResqueSampler::new(vec![0.0; 4], rho).unwrap();
        let dir = unit_dir(&u);
        let x: Vec<f64> = dir.iter().map(|v| v * scale * rho).collect();
        let w = sampler.weight(&x, &xi).unwrap();
        prop_assert!(w.is_finite() && w > 0.0);
        let far: Vec<f64> = dir.iter().map(|v| v * 10.5 * rho).collect();
        prop_assert!(sampler.weight(&far, &xi).is_err());
    }
}

/// Convexity and Lipschitz spot checks on 1000 random pairs per kind.
#[test]
fn synthetic_objectives_are_convex_and_lipschitz() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for kind in [ObjectiveKind::DistanceToPoint, ObjectiveKind::MaxLinear, ObjectiveKind::AbsRegression] {
        for d in [2, 8] {
            let fx = make_synthetic_objective(kind, d, 3).unwrap();
            let f = fx.objective.as_ref();
            let (l, big_r) = (f.lipschitz(), f.domain_radius());
            let mut point = || -> Vec<f64> {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                projected(&v, &vec![0.0; d], big_r)
            };
            for _ in 0..1000 {
                let (x, y) = (point(), point());
                let (fx_, fy) = (f.value(&x), f.value(&y));
                assert!((fx_ - fy).abs() <= l * dist(&x, &y) + 1e-12, "{kind} Lipschitz");
                let g = f.subgradient(&x);
                assert!(norm(&g) <= l + 1e-12, "{kind} subgradient norm");
                let lin: f64 = g.iter().zip(y.iter().zip(&x)).map(|(gi, (yi, xi))| gi * (yi - xi)).sum();
                assert!(fy >= fx_ + lin - 1e-12, "{kind} first-order convexity");
                let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
                assert!(f.value(&mid) <= 0.5 * (fx_ + fy) + 1e-12, "{kind} midpoint convexity");
            }
        }
    }
}
