//! Verification batteries. Each check compares an implementation quantity with
//! an independent reference: a closed form, quadrature, direct Monte Carlo or
//! hand-written arithmetic.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dp_solvers::{
    aggregate, mlmc_level, mlmc_loop, psgd_epoch, subsampled_strongly_convex, MlmcConfig, StepContext,
    SubsampledRunConfig,
};
use crate::error::Result;
use crate::harness::config::Suite;
use crate::linalg::{dist, dist_sq, norm_sq};
use crate::par;
use crate::parallel_solvers::{ac_sa_run, epoch_sgd};
use crate::privacy::{
    amplify_subsample, drift_rdp_coefficient, gaussian_mechanism_rdp, rdp_to_dp, solver_rdp_event, PrivacyLedger,
    RdpEvent, SolverVariant,
};
use crate::problem_core::{
    make_synthetic_objective, make_synthetic_objective_n, ExactOracle, GradientOracle, Objective, ObjectiveKind,
    Quadratic, QueryLedger, SampledDataset, SubsampledOracle,
};
use crate::resque::{log_weight, weight_moment_exact, ResqueSampler, SmoothedObjective};
use crate::rng::{self, tags, Stream};
use crate::testing::{
    quadratic_ball_optimum, smoothed_dataset_gradient, smoothed_distance_gradient, weight_moment_quadrature,
};

/// Samples per ReSQue unbiasedness configuration.
pub const RESQUE_SAMPLES: usize = 200_000;
/// Draws per weight-moment configuration.
pub const MOMENT_DRAWS: usize = 1_000_000;
/// Relative tolerance on weight moments.
pub const MOMENT_RTOL: f64 = 0.05;
pub const DRIFT_TRIALS: usize = 500;
pub const MLMC_LOOPS: usize = 10_000;
pub const AGGREGATION_INSTANCES: usize = 1000;
pub const BALL_ORACLE_SEEDS: u64 = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: String, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub fn verify_suite(suite: Suite, seed: u64) -> Result<Vec<Check>> {
    match suite {
        Suite::Moments => {
            let mut c = resque_unbiasedness(seed)?;
            c.extend(weight_moments(seed));
            Ok(c)
        }
        Suite::Drift => drift(seed),
        Suite::Aggregation => Ok(aggregation(seed)),
        Suite::Accountant => Ok(accountant()),
        Suite::Mlmc => mlmc(seed),
        Suite::BallOracles => ball_oracles(seed),
    }
}

fn unit(rng: &mut Stream, d: usize) -> Vec<f64> {
    let g = rng::gaussian_vec(rng, 1.0, d);
    let n = norm_sq(&g).sqrt();
    g.iter().map(|v| v / n).collect()
}

fn offset(x: &[f64], u: &[f64], s: f64) -> Vec<f64> {
    x.iter().zip(u).map(|(a, b)| a + s * b).collect()
}

/// Running sums for a mean and its standard error.
#[derive(Default, Clone)]
struct Moments {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }
    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }
    fn se(&self) -> f64 {
        let m = self.mean();
        let var = (self.sum_sq / self.n as f64 - m * m).max(0.0) * self.n as f64 / (self.n as f64 - 1.0);
        (var / self.n as f64).sqrt()
    }
}

// ---------------------------------------------------------------------------
// Moments

/// ReSQue means against `∇f̂_ρ` and second moments against `3L²`, for three
/// objectives in `d ∈ {2, 8}` with `‖x − x̄‖ = 0.9ρ`.
fn resque_unbiasedness(seed: u64) -> Result<Vec<Check>> {
    let kinds = [ObjectiveKind::DistanceToPoint, ObjectiveKind::MaxLinear, ObjectiveKind::AbsRegression];
    let dims = [2usize, 8];
    let rho = 0.25;
    let configs: Vec<(ObjectiveKind, usize)> = kinds.iter().flat_map(|&k| dims.iter().map(move |&d| (k, d))).collect();
    let results = par::map_range(configs.len(), |i| -> Result<Check> {
        let (kind, d) = configs[i];
        let s = rng::derive(seed, tags::SEED, i as u64);
        let fixture = make_synthetic_objective(kind, d, s)?;
        let f = fixture.objective.as_ref();
        let mut geo = rng::substream(s, tags::PROBE, 0);
        // Put the center near the nonsmooth point so smoothing matters.
        let x_star = f.optimum().map_or_else(|| vec![0.0; d], <[f64]>::to_vec);
        let x_bar = offset(&x_star, &unit(&mut geo, d), 0.5 * rho);
        let x = offset(&x_bar, &unit(&mut geo, d), 0.9 * rho);
        let oracle: Box<dyn GradientOracle> = match &fixture.dataset {
            Some(ds) => Box::new(SubsampledOracle(ds)),
            None => Box::new(ExactOracle(f)),
        };
        let l2 = oracle.second_moment_bound();
        let sampler = ResqueSampler::new(x_bar.clone(), rho)?;
        let mut stream = rng::substream(s, tags::XI, 0);
        let mut coords = vec![Moments::default(); d];
        let mut sq = Moments::default();
        for _ in 0..RESQUE_SAMPLES {
            let g = sampler.sample(&x, oracle.as_ref(), &mut stream)?.gradient;
            for (m, v) in coords.iter_mut().zip(&g) {
                m.push(*v);
            }
            sq.push(norm_sq(&g));
        }
        let (reference, ref_var): (Vec<f64>, f64) = match kind {
            ObjectiveKind::DistanceToPoint => (smoothed_distance_gradient(&x_star, f.lipschitz(), &x, rho), 0.0),
            ObjectiveKind::AbsRegression => {
                (smoothed_dataset_gradient(fixture.dataset.as_deref().expect("dataset"), &x, rho), 0.0)
            }
            ObjectiveKind::MaxLinear => {
                let est = SmoothedObjective { base: f, rho }.gradient_mc(&x, RESQUE_SAMPLES, rng::derive(s, tags::ORACLE, 1));
                (est.iter().map(|e| e.mean).collect(), est.iter().map(|e| e.se * e.se).sum())
            }
        };
        let diff: f64 = coords.iter().zip(&reference).map(|(m, r)| (m.mean() - r).powi(2)).sum::<f64>().sqrt();
        let se = (coords.iter().map(|m| m.se().powi(2)).sum::<f64>() + ref_var).sqrt();
        let bound = 3.0 * l2 + 3.0 * sq.se();
        let ok = diff <= 3.0 * se && sq.mean() <= bound;
        Ok(Check::new(
            format!("resque {kind} d={d}"),
            ok,
            format!(
                "‖mean − ∇f̂‖ = {diff:.3e} ≤ 3·SE = {:.3e}; E‖∇̃‖² = {:.4} ≤ {bound:.4}",
                3.0 * se,
                sq.mean()
            ),
        ))
    });
    results.into_iter().collect()
}

/// Weight moments `E w^p` against `exp((p² − p)‖v‖²/2ρ²)` at `‖v‖ = ρ/p`, the
/// identity against one-dimensional quadrature, and difference moments against
/// `(24p‖x − x'‖/ρ)^p`.
fn weight_moments(seed: u64) -> Vec<Check> {
    let rho = 1.0;
    let mut cases = Vec::new();
    for (pi, &p) in [2.0f64, 4.0].iter().enumerate() {
        for (di, &d) in [2usize, 8].iter().enumerate() {
            cases.push((p, d, rng::derive(seed, tags::LEVEL, (pi * 2 + di) as u64)));
        }
    }
    let mut checks: Vec<Check> = par::map_range(cases.len(), |i| {
        let (p, d, s) = cases[i];
        let mut geo = rng::substream(s, tags::PROBE, 0);
        let v = offset(&vec![0.0; d], &unit(&mut geo, d), rho / p);
        let v2 = offset(&vec![0.0; d], &unit(&mut geo, d), rho / p);
        let (vsq, v2sq) = (norm_sq(&v), norm_sq(&v2));
        let mut stream = rng::substream(s, tags::XI, 0);
        let mut xi = vec![0.0; d];
        let (mut m, mut diff) = (Moments::default(), Moments::default());
        for _ in 0..MOMENT_DRAWS {
            rng::fill_gaussian(&mut stream, rho, &mut xi);
            let w = log_weight(&v, vsq, &xi, rho).exp();
            let w2 = log_weight(&v2, v2sq, &xi, rho).exp();
            m.push(w.powf(p));
            diff.push((w - w2).abs().powf(p));
        }
        let exact = weight_moment_exact(&v, rho, p);
        let rel = (m.mean() / exact - 1.0).abs();
        let diff_bound = (24.0 * p * dist(&v, &v2) / rho).powf(p);
        Check::new(
            format!("weight moment p={p} d={d}"),
            rel <= MOMENT_RTOL && diff.mean() <= diff_bound,
            format!(
                "E w^p = {:.5} vs {exact:.5} (rel {rel:.2e}); E|Δw|^p = {:.3e} ≤ {diff_bound:.3e}",
                m.mean(),
                diff.mean()
            ),
        )
    });
    let worst = [0.1, 0.25, 0.5, 1.0]
        .iter()
        .flat_map(|&v| [2.0, 3.0, 4.0].map(|p| (v, p)))
        .map(|(v, p)| (weight_moment_quadrature(v, rho, p) / weight_moment_exact(&[v], rho, p) - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "weight moment identity vs quadrature".into(),
        worst <= 1e-9,
        format!("max relative gap {worst:.2e}"),
    ));
    checks
}

// ---------------------------------------------------------------------------
// Drift

/// Two datasets differing in row `i*`: the neighbor flips the feature and target.
fn neighbor(data: &SampledDataset, i_star: usize) -> Result<SampledDataset> {
    let mut feats: Vec<Vec<f64>> = (0..data.len()).map(|i| data.feature(i).to_vec()).collect();
    let mut targets: Vec<f64> = (0..data.len()).map(|i| data.target(i)).collect();
    feats[i_star].iter_mut().for_each(|v| *v = -*v);
    targets[i_star] = -targets[i_star] + 0.5;
    SampledDataset::from_parts(feats, targets, data.x_gen.clone())
}

/// Coupled epochs on neighboring datasets with `b` forced hits of the
/// differing row; the `(1 − δ/log T)` quantile of `‖y_T − y'_T‖²` against
/// `1500 b²(η_i L)²`.
fn drift(seed: u64) -> Result<Vec<Check>> {
    let (d, n, t, delta) = (4usize, 64usize, 64usize, 1e-5);
    let fixture = make_synthetic_objective_n(ObjectiveKind::AbsRegression, d, n, seed)?;
    let data = fixture.dataset.as_deref().expect("dataset").clone();
    let i_star = 0;
    let other = neighbor(&data, i_star)?;
    let l = data.lipschitz;
    let center = vec![0.0; d];
    let cfg = SubsampledRunConfig::new(center.clone(), 0.1, 1.0, 0.5, t, seed);
    let quantile = 1.0 - delta / (t as f64).ln();
    let rank = ((quantile * DRIFT_TRIALS as f64).ceil() as usize).clamp(1, DRIFT_TRIALS) - 1;
    let mut checks = Vec::new();
    for (ei, epoch) in cfg.epochs(l).iter().enumerate() {
        for b in [1usize, 2, 4] {
            if b > epoch.steps {
                continue;
            }
            let mut phi: Vec<f64> = par::map_range(DRIFT_TRIALS, |trial| {
                let s = rng::derive(seed, tags::REPLICA, ((ei * 8 + b) * DRIFT_TRIALS + trial) as u64);
                let mut r = rng::substream(s, tags::INDEX, 0);
                let mut idx: Vec<usize> = (0..epoch.steps).map(|_| r.random_range(1..n)).collect();
                let mut pos: Vec<usize> = (0..epoch.steps).collect();
                pos.shuffle(&mut r);
                for &p in &pos[..b] {
                    idx[p] = i_star;
                }
                let mut xi = vec![0.0; epoch.steps * d];
                rng::fill_gaussian(&mut rng::substream(s, tags::XI, 0), cfg.rho, &mut xi);
                let ctx = |ds| StepContext { data: ds, center: &center, r: cfg.r, rho: cfg.rho, lambda: 0.0, reg_center: &center };
                let (y, _) = psgd_epoch(&ctx(&data), epoch.eta, &center, &idx, &xi);
                let (y2, _) = psgd_epoch(&ctx(&other), epoch.eta, &center, &idx, &xi);
                dist_sq(&y, &y2)
            });
            phi.sort_by(f64::total_cmp);
            let q = phi[rank];
            let bound = drift_rdp_coefficient(1.0, b as u64) * (epoch.eta * l).powi(2);
            checks.push(Check::new(
                format!("drift epoch {} (T_i = {}) b={b}", ei + 1, epoch.steps),
                q <= bound,
                format!("quantile {q:.3e} ≤ {bound:.3e}"),
            ));
        }
    }
    Ok(checks)
}

// ---------------------------------------------------------------------------
// Aggregation

/// Clusters of `⌈0.51k⌉` inliers within `Δ/3` of a center and the rest at
/// distance `10Δ`; the output must land within `Δ` of the center.
fn aggregation(seed: u64) -> Vec<Check> {
    let fails: Vec<Option<String>> = par::map_range(AGGREGATION_INSTANCES, |i| {
        let mut r = rng::substream(seed, tags::REPLICA, i as u64);
        let k = r.random_range(3..80usize);
        let d = r.random_range(1..12usize);
        let delta = 10f64.powf(r.random_range(-3.0..1.0));
        let c = rng::gaussian_vec(&mut r, 1.0, d);
        let inliers = (0.51 * k as f64).ceil() as usize;
        let mut pts = Vec::with_capacity(k);
        for _ in 0..inliers {
            let rad = delta / 3.0 * r.random::<f64>().powf(1.0 / d as f64);
            pts.push(offset(&c, &unit(&mut r, d), rad));
        }
        // Adversarial outliers: one tight clump or a spread shell.
        let clump = offset(&c, &unit(&mut r, d), 10.0 * delta);
        let tight = r.random_bool(0.5);
        for _ in inliers..k {
            let p = if tight { offset(&clump, &unit(&mut r, d), 0.01 * delta) } else { offset(&c, &unit(&mut r, d), 10.0 * delta) };
            pts.push(p);
        }
        pts.shuffle(&mut r);
        let out = aggregate(&pts, delta);
        let e = dist(&out.point, &c);
        (e > delta).then(|| format!("instance {i}: k={k} d={d} error {e:.3e} > Δ = {delta:.3e}"))
    });
    let bad: Vec<String> = fails.into_iter().flatten().collect();
    vec![Check::new(
        format!("aggregation {AGGREGATION_INSTANCES} adversarial instances"),
        bad.is_empty(),
        if bad.is_empty() { "all within Δ".into() } else { format!("{} failures, first: {}", bad.len(), bad[0]) },
    )]
}

// ---------------------------------------------------------------------------
// Accountant

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1e-300)
}

fn accountant() -> Vec<Check> {
    let mut c = Vec::new();
    let mut push = |name: &str, ok: bool, detail: String| c.push(Check::new(name.into(), ok, detail));

    let g = gaussian_mechanism_rdp(3.0, 2.0, 4.0).unwrap_or(f64::NAN);
    push("gaussian mechanism α·Δ²/(2σ²)", close(g, 0.375), format!("{g} vs 0.375"));

    let dp = rdp_to_dp(11.0, 0.5, 1e-6, 1e-5).ok();
    let eps = 0.5 + 1e5f64.ln() / 10.0;
    let ok = dp.is_some_and(|d| close(d.eps_dp, eps) && close(d.delta, 1e-5 + (1.0 + eps.exp()) * 1e-6));
    push("conversion to (ε, δ)-DP", ok, format!("{dp:?} vs ε = {eps}"));

    let mut ledger = PrivacyLedger::new(5.0).expect("order");
    let composed = ledger.record(0.1, 1e-7, "a").is_ok() && ledger.record(0.25, 2e-7, "b").is_ok();
    let (e, d) = ledger.totals();
    let mismatch = ledger.compose(RdpEvent::new(6.0, 0.1, 0.0, "c").expect("event")).is_err();
    push("composition adds ε and δ", composed && close(e, 0.35) && close(d, 3e-7) && mismatch, format!("({e}, {d:e})"));

    let a = amplify_subsample(2.0, 0.1, 0.01).unwrap_or(f64::NAN);
    push("amplification 13s²ατ", close(a, 13.0 * 1e-4 * 2.0 * 0.1), format!("{a:e}"));
    let rejects = [(2.0, 0.34, 0.01), (2.0, 0.1, 0.025), (2.0, 0.1, 0.0), (30.0, 0.1, 0.01), (1.0, 0.1, 0.01)]
        .iter()
        .all(|&(al, t, s)| amplify_subsample(al, t, s).is_err());
    push("amplification rejects τ > 1/3, s ∉ (0, 1/40), α ∉ (1, 3/τ)", rejects, format!("{rejects}"));

    let dc = drift_rdp_coefficient(0.2, 3);
    push("drift coefficient 1500β²b²", close(dc, 1500.0 * 0.04 * 9.0), format!("{dc}"));

    let (beta, t, n, delta, cp) = (0.01, 10usize, 1000usize, 1e-5, 60.0);
    let sp = solver_rdp_event(beta, t, n, delta, cp, SolverVariant::Convex).ok();
    let lg = (1.0 / delta).ln();
    let tau = cp * (beta * lg * t as f64 / n as f64).powi(2);
    let amax = 1.0 / (cp * beta * beta * lg * lg);
    let ok = sp.is_some_and(|s| close(s.tau, tau) && close(s.alpha_max, amax));
    push("solver guarantee τ = C_priv(β log(1/δ)·T/n)²", ok, format!("{sp:?}"));
    let bad = solver_rdp_event(beta, n, n, delta, cp, SolverVariant::Convex).is_err()
        && solver_rdp_event(0.5, t, n, delta, cp, SolverVariant::Convex).is_err()
        && solver_rdp_event(beta, t, n, 0.2, cp, SolverVariant::Convex).is_err();
    push("solver guarantee preconditions enforced", bad, format!("{bad}"));
    c
}

// ---------------------------------------------------------------------------
// Multilevel estimator

struct MlmcFixture {
    data: SampledDataset,
    cfg: SubsampledRunConfig,
    mlmc: MlmcConfig,
}

fn mlmc_fixture(seed: u64, t: usize) -> Result<MlmcFixture> {
    let fixture = make_synthetic_objective_n(ObjectiveKind::AbsRegression, 1, 256, seed)?;
    let data = fixture.dataset.as_deref().expect("dataset").clone();
    let mut cfg = SubsampledRunConfig::new(vec![0.0], 0.5, 5.0, 0.5, t, seed);
    cfg.lambda = 1.0;
    cfg.reg_center = Some(vec![0.2]);
    // C_priv = 2 only sets T_max = n/2 here; nothing private runs.
    let mlmc = MlmcConfig::new(data.len(), t, 2.0)?;
    Ok(MlmcFixture { data, cfg, mlmc })
}

/// Per-loop estimates `x̂` for `loops` independent draws of `J`.
fn loop_estimates(fx: &MlmcFixture, loops: usize, seed: u64) -> Result<Vec<f64>> {
    par::map_range(loops, |k| {
        let s = rng::derive(seed, tags::REPLICA, k as u64);
        let level = mlmc_level(rng::derive(s, tags::GEOM, 0), fx.mlmc.j_max);
        let cfg = SubsampledRunConfig { seed: s, ..fx.cfg.clone() };
        mlmc_loop(&fx.data, &cfg, &fx.mlmc, level, 8.0, s, &mut QueryLedger::new()).map(|x| x[0])
    })
    .into_iter()
    .collect()
}

fn mlmc(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let fx = mlmc_fixture(seed, 8)?;
    let est = loop_estimates(&fx, MLMC_LOOPS, seed)?;
    let (beta_top, t_top) = fx.mlmc.level(fx.cfg.beta, fx.mlmc.j_max);
    let top: Vec<f64> = par::map_range(MLMC_LOOPS, |k| {
        let s = rng::derive(seed, tags::LEVEL, k as u64);
        let cfg = SubsampledRunConfig { beta: beta_top, t: t_top, seed: s, ..fx.cfg.clone() };
        subsampled_strongly_convex(&fx.data, &cfg, 8.0, None, &mut QueryLedger::new()).map(|x| x[0])
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let (mut a, mut b) = (Moments::default(), Moments::default());
    est.iter().for_each(|v| a.push(*v));
    top.iter().for_each(|v| b.push(*v));
    let gap = (a.mean() - b.mean()).abs();
    let se = (a.se().powi(2) + b.se().powi(2)).sqrt();
    checks.push(Check::new(
        format!("telescoping mean E x̂ = E x_jmax (j_max = {})", fx.mlmc.j_max),
        gap <= 3.0 * se,
        format!("{:.5} vs {:.5}, gap {gap:.2e} ≤ 3·SE = {:.2e}", a.mean(), b.mean(), 3.0 * se),
    ));

    // Variance of the j_max-loop average against C_var·L²/λ²·(d/(β²T²) + 1/T):
    // calibrate C_var at the first T, then check the others within a factor 4.
    let l = fx.data.lipschitz;
    let formula = |fx: &MlmcFixture| {
        let tf = fx.cfg.t as f64;
        l * l / fx.cfg.lambda.powi(2) * (1.0 / (fx.cfg.beta * fx.cfg.beta * tf * tf) + 1.0 / tf)
    };
    let avg_var = |fx: &MlmcFixture, est: &[f64]| {
        let mut m = Moments::default();
        est.iter().for_each(|v| m.push(*v));
        (m.se() * (est.len() as f64).sqrt()).powi(2) / fx.mlmc.j_max as f64
    };
    let c_var = avg_var(&fx, &est) / formula(&fx);
    checks.push(Check::new("calibrated C_var at T = 8".into(), c_var.is_finite() && c_var > 0.0, format!("{c_var:.4e}")));
    for t in [4usize, 16] {
        let f2 = mlmc_fixture(seed, t)?;
        let e2 = loop_estimates(&f2, MLMC_LOOPS, rng::derive(seed, tags::ITER, t as u64))?;
        let ratio = avg_var(&f2, &e2) / (c_var * formula(&f2));
        checks.push(Check::new(
            format!("variance formula at T = {t}"),
            (0.25..=4.0).contains(&ratio),
            format!("empirical / formula = {ratio:.3}"),
        ));
    }
    Ok(checks)
}

// ---------------------------------------------------------------------------
// Ball oracles

/// Suboptimality on `q + λ/2‖· − x̄‖²` against the closed-form ball optimum;
/// smoothing a quadratic only shifts it by a constant.
fn ball_oracles(seed: u64) -> Result<Vec<Check>> {
    let (d, r, lambda, phi) = (4usize, 0.1, 1.0, 2e-4);
    let mut checks = Vec::new();
    for (case, gap) in [("interior", 0.05), ("boundary", 0.3)] {
        let mut geo = rng::substream(seed, tags::PROBE, (gap * 100.0) as u64);
        let x_bar = offset(&vec![0.0; d], &unit(&mut geo, d), 0.2);
        let q = Quadratic { mu: 1.0, center: offset(&x_bar, &unit(&mut geo, d), gap), lipschitz: 1.0, radius: 1.0 };
        let x_opt = quadratic_ball_optimum(&q, &x_bar, r, lambda);
        let g_val = |x: &[f64]| q.value(x) + lambda / 2.0 * dist_sq(x, &x_bar);
        let g_star = g_val(&x_opt);
        let oracle = ExactOracle(&q);
        let l = oracle.second_moment_bound().sqrt();
        let runs = par::map_range(BALL_ORACLE_SEEDS as usize, |i| -> Result<(f64, u64, f64, u64, bool)> {
            let s = rng::derive(seed, tags::ITER, i as u64);
            let mut l1 = QueryLedger::new();
            let x1 = epoch_sgd(&oracle, &x_bar, r, r, lambda, phi, &mut l1, s)?;
            let mut l2 = QueryLedger::new();
            let run = ac_sa_run(&oracle, &x_bar, r, r, lambda, phi, &mut l2, s)?;
            // T·K from the schedule formulas, computed here independently.
            let k = (lambda * r * r / phi).log2().ceil() as usize;
            let t = (4.0 * (l / (r * lambda) + 1.0).sqrt()).ceil() as usize;
            Ok((g_val(&x1) - g_star, l1.query_depth(), g_val(&run.x) - g_star, l2.query_depth(), run.inner_steps == t * k))
        });
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let m = runs.len() as f64;
        let (e1, e2) = (runs.iter().map(|r| r.0).sum::<f64>() / m, runs.iter().map(|r| r.2).sum::<f64>() / m);
        let one_batch = runs.iter().all(|r| r.1 == 1 && r.3 == 1);
        checks.push(Check::new(format!("epoch_sgd {case} suboptimality ≤ φ"), e1 <= phi, format!("{e1:.3e} vs {phi:.1e}")));
        checks.push(Check::new(format!("ac_sa {case} suboptimality ≤ φ"), e2 <= phi, format!("{e2:.3e} vs {phi:.1e}")));
        checks.push(Check::new(format!("{case} single query batch"), one_batch, format!("{one_batch}")));
        checks.push(Check::new(
            format!("ac_sa {case} inner depth = T·K"),
            runs.iter().all(|r| r.4),
            format!("{}", runs.iter().all(|r| r.4)),
        ));
    }
    Ok(checks)
}
