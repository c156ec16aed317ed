//! Ball acceleration: an accelerated proximal-point outer loop whose
//! subproblems are regularized minimizations over small balls.
//!
//! Each iteration picks a regularization `λ` by line search so that the ball
//! solution moves a constant fraction of the ball radius, takes the accepted
//! point as the next primal iterate and updates the dual iterate with an
//! (approximately unbiased) estimate of the proximal point.

use crate::dp_solvers::aggregate;
use crate::error::{Error, Result};
use crate::linalg::{dist, project_ball};
use crate::par;
use crate::problem_core::QueryLedger;
use crate::rng::{self, tags};

pub const DEFAULT_C_BA: f64 = 8.0;

/// Fraction of the ball radius the accepted movement must reach.
pub const MOVEMENT_LOWER: f64 = 0.75;
/// Movements above `(1 − SATURATION_SLACK)·r` count as pinned to the ball boundary.
pub const SATURATION_SLACK: f64 = 1.0 / 32.0;

/// The schedule derived from `(L, R, r, ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallAccelConfig {
    pub lipschitz: f64,
    pub domain_radius: f64,
    pub ball_radius: f64,
    pub eps_opt: f64,
    pub c_ba: f64,
    /// `LR/ε`, floored at `e`.
    pub kappa: f64,
    /// `(R/r)^{2/3}`.
    pub k: f64,
    pub lambda_star: f64,
    pub max_iters: usize,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
}

impl BallAccelConfig {
    pub fn derive(l: f64, big_r: f64, r: f64, eps_opt: f64, c_ba: f64) -> Result<Self> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(l) && pos(big_r) && pos(r) && pos(eps_opt) && pos(c_ba)) {
            return Err(Error::Config("L, R, r, ε and C_ba must be positive and finite".into()));
        }
        if r > big_r {
            return Err(Error::Config(format!("ball radius {r} exceeds domain radius {big_r}")));
        }
        if eps_opt > l * big_r {
            return Err(Error::Config(format!("target {eps_opt} exceeds LR = {}", l * big_r)));
        }
        let kappa = (l * big_r / eps_opt).max(std::f64::consts::E);
        let k = (big_r / r).powf(2.0 / 3.0);
        let log_k = kappa.ln();
        let lambda_star = eps_opt * k * k * log_k * log_k / (big_r * big_r);
        let max_iters = ((c_ba * k * log_k).ceil() as usize).max(1);
        let lambda_lo = lambda_star / c_ba;
        let lambda_hi = c_ba * l / eps_opt;
        if lambda_lo > lambda_hi {
            return Err(Error::Config(format!(
                "empty λ range [{lambda_lo:.4e}, {lambda_hi:.4e}]; increase C_ba"
            )));
        }
        Ok(Self {
            lipschitz: l,
            domain_radius: big_r,
            ball_radius: r,
            eps_opt,
            c_ba,
            kappa,
            k,
            lambda_star,
            max_iters,
            lambda_lo,
            lambda_hi,
        })
    }

    /// `log(Rκ/r)`.
    pub fn log_rkr(&self) -> f64 {
        (self.domain_radius * self.kappa / self.ball_radius).ln()
    }

    /// Line-search calls allowed per iteration, `⌈C_ba log(Rκ/r)⌉`.
    pub fn line_search_budget(&self) -> usize {
        (self.c_ba * self.log_rkr()).ceil() as usize
    }

    /// Probe cap of the bracketing search, `⌈log₂(λ_hi/λ_lo)⌉ + ⌈log₂(R/r)⌉`.
    pub fn probe_cap(&self) -> usize {
        let range = (self.lambda_hi / self.lambda_lo).log2().ceil().max(0.0) as usize;
        let span = (self.domain_radius / self.ball_radius).log2().ceil().max(0.0) as usize;
        (range + span).max(1)
    }

    pub fn line_search_delta(&self) -> f64 {
        self.ball_radius / self.c_ba
    }

    /// `λr² / (C_ba log³κ)`.
    pub fn ball_opt_accuracy(&self, lambda: f64) -> f64 {
        lambda * self.ball_radius.powi(2) / (self.c_ba * self.kappa.ln().powi(3))
    }

    /// `(ε/(C_ba R), ε√K/(C_ba R))`.
    pub fn prox_targets(&self) -> (f64, f64) {
        let b = self.eps_opt / (self.c_ba * self.domain_radius);
        (b, b * self.k.sqrt())
    }

    /// Deepest level of the multilevel estimate, `⌈log₂K + C_ba⌉`.
    pub fn j_max(&self) -> usize {
        (self.k.log2() + self.c_ba).ceil().max(1.0) as usize
    }

    /// Ball-oracle accuracy at level `j`: `λr²/C_ba` at `j = 0`, otherwise
    /// `λr²·2^{−j} / (C_ba log²(Rκ/r))`.
    pub fn level_accuracy(&self, j: usize, lambda: f64) -> f64 {
        let base = lambda * self.ball_radius.powi(2) / self.c_ba;
        if j == 0 {
            base
        } else {
            base * 0.5f64.powi(j as i32) / self.log_rkr().powi(2)
        }
    }

    /// `A` at which the potential certifies error `ε`.
    pub fn termination_threshold(&self) -> f64 {
        self.domain_radius.powi(2) / self.eps_opt
    }

    pub fn clamp_lambda(&self, lambda: f64) -> f64 {
        lambda.clamp(self.lambda_lo, self.lambda_hi)
    }
}

pub fn derive_schedule(l: f64, big_r: f64, r: f64, eps_opt: f64, c_ba: f64) -> Result<BallAccelConfig> {
    BallAccelConfig::derive(l, big_r, r, eps_opt, c_ba)
}

/// Outer-loop state: growth coefficient `A`, primal `x` and dual `v`.
#[derive(Debug, Clone)]
pub struct AccelState {
    pub a_sum: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub iter: usize,
    pub lambda_history: Vec<f64>,
    /// Query points and dual iterates are kept in `B(domain_radius)`.
    pub domain_radius: f64,
}

impl AccelState {
    pub fn new(x0: Vec<f64>, domain_radius: f64) -> Self {
        Self { a_sum: 0.0, v: x0.clone(), x: x0, iter: 0, lambda_history: Vec::new(), domain_radius }
    }

    /// Positive root of `λa² = A + a`.
    pub fn step_coefficient(&self, lambda: f64) -> Result<f64> {
        if lambda <= 0.0 || !lambda.is_finite() {
            return Err(Error::Domain(format!("λ must be positive, got {lambda}")));
        }
        Ok((1.0 + (1.0 + 4.0 * lambda * self.a_sum).sqrt()) / (2.0 * lambda))
    }

    /// `(a, y)` with `y = (A·x + a·v)/(A + a)` projected onto `B(R)`.
    pub fn query_point(&self, lambda: f64) -> Result<(f64, Vec<f64>)> {
        let a = self.step_coefficient(lambda)?;
        let t = a / (self.a_sum + a);
        let mut y: Vec<f64> = self.x.iter().zip(&self.v).map(|(x, v)| (1.0 - t) * x + t * v).collect();
        let origin = vec![0.0; y.len()];
        project_ball(&mut y, &origin, self.domain_radius);
        Ok((a, y))
    }

    /// Take the step with `x ← prox_point` and `v ← v − aλ(y − prox_point)`.
    pub fn ms_step(&mut self, lambda: f64, prox_point: &[f64]) -> Result<()> {
        let (a, y) = self.query_point(lambda)?;
        self.apply(lambda, a, &y, prox_point, prox_point);
        Ok(())
    }

    /// Step with separate primal point and proximal estimate.
    pub fn apply(&mut self, lambda: f64, a: f64, y: &[f64], x_next: &[f64], prox_estimate: &[f64]) {
        self.a_sum += a;
        self.x = x_next.to_vec();
        for ((v, yi), p) in self.v.iter_mut().zip(y).zip(prox_estimate) {
            *v -= a * lambda * (yi - p);
        }
        let zero = vec![0.0; self.v.len()];
        project_ball(&mut self.v, &zero, self.domain_radius);
        self.iter += 1;
        self.lambda_history.push(lambda);
    }

    /// `A(F(x) − F*) + ½‖v − x*‖²`.
    pub fn potential(&self, gap: f64, x_star: &[f64]) -> f64 {
        self.a_sum * gap + 0.5 * crate::linalg::dist_sq(&self.v, x_star)
    }
}

/// How the line search ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearchKind {
    /// Movement landed in `[3r/4, (1 − slack) r]`.
    Window,
    /// Movement stayed small down to the smallest allowed λ.
    LowerBoundary,
    /// Probe budget ran out or the top of the range was still pinned.
    Exhausted,
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub lambda: f64,
    pub a: f64,
    pub y: Vec<f64>,
    pub point: Vec<f64>,
    pub movement: f64,
    pub probes: usize,
    pub kind: LineSearchKind,
}

impl LineSearchOutcome {
    pub fn is_valid(&self) -> bool {
        self.kind != LineSearchKind::Exhausted
    }
}

/// Bracketing search for λ: double while the ball solution is pinned to the
/// boundary, halve while it barely moves, then bisect in log space.
///
/// `probe(y, λ)` must return an approximate ball solution centered at `y`.
pub fn line_search_lambda(
    state: &AccelState,
    config: &BallAccelConfig,
    warm_start: f64,
    probe: &mut dyn FnMut(&[f64], f64) -> Result<Vec<f64>>,
) -> Result<LineSearchOutcome> {
    let r = config.ball_radius;
    let lower = MOVEMENT_LOWER * r;
    let upper = (1.0 - SATURATION_SLACK) * r;
    let cap = config.probe_cap();
    let mut lambda = config.clamp_lambda(warm_start);
    let mut pinned: Option<f64> = None;
    let mut small: Option<LineSearchOutcome> = None;
    let mut last: Option<LineSearchOutcome> = None;
    let mut probes = 0;
    while probes < cap {
        let (a, y) = state.query_point(lambda)?;
        let point = probe(&y, lambda)?;
        probes += 1;
        let movement = dist(&point, &y);
        let out = LineSearchOutcome { lambda, a, y, point, movement, probes, kind: LineSearchKind::Window };
        if (lower..=upper).contains(&movement) {
            return Ok(out);
        }
        let next = if movement > upper {
            pinned = Some(lambda);
            if lambda >= config.lambda_hi {
                last = Some(out);
                break;
            }
            match &small {
                Some(s) => (lambda * s.lambda).sqrt(),
                None => (2.0 * lambda).min(config.lambda_hi),
            }
        } else {
            if lambda <= config.lambda_lo {
                return Ok(LineSearchOutcome { kind: LineSearchKind::LowerBoundary, ..out });
            }
            let next = match pinned {
                Some(p) => (lambda * p).sqrt(),
                None => (0.5 * lambda).max(config.lambda_lo),
            };
            small = Some(out.clone());
            next
        };
        last = Some(out);
        lambda = next;
    }
    // Prefer the unpinned side: its ball constraint is inactive.
    let best = small.or(last).expect("at least one probe ran");
    Ok(LineSearchOutcome { kind: LineSearchKind::Exhausted, probes, ..best })
}

/// Per-iteration record, kept when requested.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub lambda: f64,
    pub a_sum: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub y: Vec<f64>,
    pub probes: usize,
    pub movement: f64,
    pub kind: LineSearchKind,
}

#[derive(Debug, Clone)]
pub struct AccelOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Set when `max_iters` ran out before the termination test passed.
    pub hit_iteration_cap: bool,
    pub final_a: f64,
    /// Every λ passed to an oracle.
    pub lambdas_requested: Vec<f64>,
    pub probes_per_iter: Vec<usize>,
    /// Iterations that requested each multilevel depth; index 0 counts base runs.
    pub level_requests: Vec<u64>,
    pub history: Vec<IterRecord>,
}

/// Knobs that do not change the schedule.
#[derive(Debug, Clone)]
pub struct BallAccelOptions {
    /// Line-search replicas are `⌈c_agg · log(1/ζ)⌉` with `ζ = 1/(κ·max_iters)`.
    pub c_agg: f64,
    pub record_history: bool,
}

impl Default for BallAccelOptions {
    fn default() -> Self {
        Self { c_agg: 20.0, record_history: false }
    }
}

/// Callbacks for the private variant: each receives the query center and λ.
pub trait OracleSuite {
    /// A point within `delta` of the regularized ball minimizer, with high probability.
    fn line_search(&mut self, center: &[f64], lambda: f64, delta: f64, ledger: &mut QueryLedger) -> Result<Vec<f64>>;
    /// A point with expected regularized suboptimality at most `phi`.
    fn ball_opt(&mut self, center: &[f64], lambda: f64, phi: f64, ledger: &mut QueryLedger) -> Result<Vec<f64>>;
    /// A point with bias at most `bias/λ` and root mean square error at most `sigma/λ`.
    fn stochastic_prox(
        &mut self,
        center: &[f64],
        lambda: f64,
        bias: f64,
        sigma: f64,
        ledger: &mut QueryLedger,
    ) -> Result<Vec<f64>>;
}

/// A ball optimization oracle: approximately minimizes `F + λ/2‖· − c‖²` over `B_c(r)`.
pub trait BallOptimizer: Sync {
    fn solve(&self, center: &[f64], lambda: f64, phi: f64, ledger: &mut QueryLedger, seed: u64) -> Result<Vec<f64>>;
}

/// Per-iteration oracle plumbing shared by both variants.
trait Iteration {
    fn probe(&mut self, y: &[f64], lambda: f64, ledger: &mut QueryLedger) -> Result<Vec<f64>>;
    /// Returns `(x_next, prox_estimate)`.
    fn complete(&mut self, y: &[f64], lambda: f64, probe_point: Vec<f64>, ledger: &mut QueryLedger)
        -> Result<(Vec<f64>, Vec<f64>)>;
    fn lambdas(&mut self) -> &mut Vec<f64>;
}

/// Shared outer loop.
fn run_loop(
    config: &BallAccelConfig,
    dim: usize,
    it: &mut dyn Iteration,
    ledger: &mut QueryLedger,
    record: bool,
) -> Result<AccelOutcome> {
    let mut state = AccelState::new(vec![0.0; dim], config.domain_radius);
    let mut warm = config.clamp_lambda(config.lipschitz / config.ball_radius);
    let mut probes_per_iter = Vec::new();
    let mut history = Vec::new();
    let mut terminated = false;
    while state.iter < config.max_iters {
        let ls = {
            let mut probe = |y: &[f64], lambda: f64| it.probe(y, lambda, ledger);
            line_search_lambda(&state, config, warm, &mut probe)?
        };
        warm = ls.lambda;
        probes_per_iter.push(ls.probes);
        let (x_next, prox) = it.complete(&ls.y, ls.lambda, ls.point.clone(), ledger)?;
        state.apply(ls.lambda, ls.a, &ls.y, &x_next, &prox);
        if record {
            history.push(IterRecord {
                lambda: ls.lambda,
                a_sum: state.a_sum,
                x: state.x.clone(),
                v: state.v.clone(),
                y: ls.y.clone(),
                probes: ls.probes,
                movement: ls.movement,
                kind: ls.kind,
            });
        }
        if ls.is_valid() && state.a_sum >= config.termination_threshold() {
            terminated = true;
            break;
        }
    }
    let mut x = state.x.clone();
    project_ball(&mut x, &vec![0.0; dim], config.domain_radius);
    Ok(AccelOutcome {
        x,
        iterations: state.iter,
        hit_iteration_cap: !terminated,
        final_a: state.a_sum,
        lambdas_requested: std::mem::take(it.lambdas()),
        probes_per_iter,
        level_requests: Vec::new(),
        history,
    })
}

struct SuiteIteration<'a> {
    suite: &'a mut dyn OracleSuite,
    config: &'a BallAccelConfig,
    lambdas: Vec<f64>,
}

impl Iteration for SuiteIteration<'_> {
    fn probe(&mut self, y: &[f64], lambda: f64, ledger: &mut QueryLedger) -> Result<Vec<f64>> {
        self.lambdas.push(lambda);
        self.suite.line_search(y, lambda, self.config.line_search_delta(), ledger)
    }
    fn complete(
        &mut self,
        y: &[f64],
        lambda: f64,
        _probe_point: Vec<f64>,
        ledger: &mut QueryLedger,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.lambdas.push(lambda);
        self.lambdas.push(lambda);
        let x_next = self.suite.ball_opt(y, lambda, self.config.ball_opt_accuracy(lambda), ledger)?;
        let (bias, sigma) = self.config.prox_targets();
        let prox = self.suite.stochastic_prox(y, lambda, bias, sigma, ledger)?;
        Ok((x_next, prox))
    }
    fn lambdas(&mut self) -> &mut Vec<f64> {
        &mut self.lambdas
    }
}

/// The outer loop driven by line-search, ball-optimization and
/// stochastic-proximal callbacks. Starts at the origin.
pub fn run_ball_accel(
    config: &BallAccelConfig,
    dim: usize,
    suite: &mut dyn OracleSuite,
    ledger: &mut QueryLedger,
    record_history: bool,
) -> Result<AccelOutcome> {
    let mut it = SuiteIteration { suite, config, lambdas: Vec::new() };
    run_loop(config, dim, &mut it, ledger, record_history)
}

struct BallOnlyIteration<'a> {
    oracle: &'a dyn BallOptimizer,
    config: &'a BallAccelConfig,
    replicas: usize,
    seed: u64,
    calls: u64,
    lambdas: Vec<f64>,
    level_requests: Vec<u64>,
}

impl BallOnlyIteration<'_> {
    fn next_seed(&mut self) -> u64 {
        self.calls += 1;
        rng::derive(self.seed, tags::ITER, self.calls)
    }

    /// Solve several ball problems side by side as one round.
    fn parallel_solves(&self, jobs: &[(f64, u64)], y: &[f64], lambda: f64, ledger: &mut QueryLedger) -> Result<Vec<Vec<f64>>> {
        let results = par::map_range(jobs.len(), |i| {
            let (phi, seed) = jobs[i];
            let mut l = QueryLedger::new();
            self.oracle.solve(y, lambda, phi, &mut l, seed).map(|x| (x, l))
        });
        let mut points = Vec::with_capacity(jobs.len());
        let mut subs = Vec::with_capacity(jobs.len());
        for r in results {
            let (x, l) = r?;
            points.push(x);
            subs.push(l);
        }
        ledger.merge_parallel(&subs);
        Ok(points)
    }
}

impl Iteration for BallOnlyIteration<'_> {
    fn probe(&mut self, y: &[f64], lambda: f64, ledger: &mut QueryLedger) -> Result<Vec<f64>> {
        self.lambdas.push(lambda);
        let phi = self.config.level_accuracy(0, lambda);
        let base = self.next_seed();
        let jobs: Vec<(f64, u64)> =
            (0..self.replicas).map(|i| (phi, rng::derive(base, tags::REPLICA, i as u64))).collect();
        let points = self.parallel_solves(&jobs, y, lambda, ledger)?;
        let radius = 9.0 * (2.0 * phi / lambda).sqrt();
        Ok(aggregate(&points, radius).point)
    }

    fn complete(
        &mut self,
        y: &[f64],
        lambda: f64,
        probe_point: Vec<f64>,
        ledger: &mut QueryLedger,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.lambdas.push(lambda);
        let seed = self.next_seed();
        let j = geometric_half(rng::derive(seed, tags::GEOM, 0));
        let j_max = self.config.j_max();
        let acc = |l: usize| self.config.level_accuracy(l, lambda);
        let mut jobs = vec![(acc(0), rng::derive(seed, tags::LEVEL, 0))];
        self.level_requests[0] += 1;
        if j <= j_max {
            jobs.push((acc(j), rng::derive(seed, tags::LEVEL, 1)));
            jobs.push((acc(j - 1), rng::derive(seed, tags::LEVEL, 2)));
            self.level_requests[j] += 1;
        }
        let pts = self.parallel_solves(&jobs, y, lambda, ledger)?;
        let prox = if pts.len() == 3 {
            let scale = 2f64.powi(j as i32);
            pts[0].iter().zip(&pts[1]).zip(&pts[2]).map(|((b, hi), lo)| b + scale * (hi - lo)).collect()
        } else {
            pts[0].clone()
        };
        Ok((probe_point, prox))
    }

    fn lambdas(&mut self) -> &mut Vec<f64> {
        &mut self.lambdas
    }
}

/// `J ≥ 1` with `P(J = j) = 2^{−j}`.
pub fn geometric_half(seed: u64) -> usize {
    use rand::Rng;
    let mut s = rng::stream(seed);
    let mut j = 1;
    while s.random::<bool>() {
        j += 1;
    }
    j
}

/// Replica count for the high-probability line-search oracle.
pub fn aggregation_replicas(config: &BallAccelConfig, c_agg: f64) -> usize {
    let zeta = 1.0 / (config.kappa * config.max_iters as f64);
    ((c_agg * (1.0 / zeta).ln()).ceil() as usize).max(1)
}

/// The outer loop using a single ball optimization oracle: line-search probes
/// aggregate replicated base-accuracy solves, and the proximal estimate is
/// the multilevel combination `x₀ + 2^J (x_J − x_{J−1})`.
pub fn run_ball_accel_nonprivate(
    config: &BallAccelConfig,
    dim: usize,
    oracle: &dyn BallOptimizer,
    ledger: &mut QueryLedger,
    seed: u64,
    options: &BallAccelOptions,
) -> Result<AccelOutcome> {
    let mut it = BallOnlyIteration {
        oracle,
        config,
        replicas: aggregation_replicas(config, options.c_agg),
        seed,
        calls: 0,
        lambdas: Vec::new(),
        level_requests: vec![0; config.j_max() + 1],
    };
    let mut out = run_loop(config, dim, &mut it, ledger, options.record_history)?;
    out.level_requests = std::mem::take(&mut it.level_requests);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_coefficient_roots() {
        let s = AccelState::new(vec![0.0], 1.0);
        assert!((s.step_coefficient(1.0).unwrap() - 1.0).abs() < 1e-15);
        let mut s = s;
        s.a_sum = 1.0;
        assert!((s.step_coefficient(1.0).unwrap() - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!(s.step_coefficient(0.0).is_err());
    }

    #[test]
    fn schedule_k_is_two_thirds_power() {
        let c = BallAccelConfig::derive(1.0, 1.0, 1e-3, 1e-3, 8.0).unwrap();
        assert!((c.k - 100.0).abs() < 1e-9);
    }

    #[test]
    fn kappa_is_floored() {
        let c = BallAccelConfig::derive(1.0, 1.0, 0.5, 1.0, 8.0).unwrap();
        assert_eq!(c.kappa, std::f64::consts::E);
        assert!(c.lambda_star > 0.0);
    }

    #[test]
    fn geometric_levels_start_at_one() {
        for s in 0..200 {
            assert!(geometric_half(s) >= 1);
        }
    }
}
