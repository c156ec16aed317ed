//! Ball optimization oracles with all gradient queries issued in one round,
//! and the end-to-end low-depth solver built on them.
//!
//! Both oracles draw every perturbation `ξ_i` up front, query `g(x̄ + ξ_i)` in a
//! single batch and then run their sequential recursion on reweighted copies of
//! those gradients. The query depth of one oracle call is therefore one.

use std::str::FromStr;

use crate::ballaccel::{self, AccelOutcome, BallAccelConfig, BallAccelOptions, BallOptimizer};
use crate::error::{Error, Result};
use crate::linalg::project_ball;
use crate::problem_core::{oracle_query_flat, GradientOracle, QueryLedger};
use crate::resque::{log_weight, presample_flat};
use crate::rng::{self, tags};

/// Minibatch size cap for the accelerated oracle.
pub const MAX_MINIBATCH: usize = 1 << 20;

/// Cost of one inner step in scalar operations, per dimension.
const STEP_OPS_PER_DIM: u64 = 4;

fn check_common(r: f64, rho: f64, lambda: f64, phi: f64) -> Result<()> {
    if !(r > 0.0 && rho > 0.0) {
        return Err(Error::Domain("radii must be positive".into()));
    }
    if (rho - r).abs() > 1e-12 * r.max(rho) {
        return Err(Error::Contract(format!("smoothing radius {rho} must equal ball radius {r}")));
    }
    if !(lambda > 0.0 && lambda.is_finite() && phi > 0.0 && phi.is_finite()) {
        return Err(Error::Domain(format!("λ and φ must be positive, got λ={lambda}, φ={phi}")));
    }
    Ok(())
}

/// Rows per materialized block of perturbations and gradients.
const BLOCK_ROWS: usize = 4096;

/// The `count` perturbed queries `g(x̄ + ξ_i)` of one round.
///
/// The round is recorded on the ledger up front as a single batch. Rows are
/// then materialized in fixed blocks, each with its own substream, as the
/// sequential recursion reaches them; this bounds memory and skips blocks the
/// recursion never reads, without changing any value it does read.
struct PerturbedRound<'a> {
    g: &'a dyn GradientOracle,
    center: &'a [f64],
    rho: f64,
    seed: u64,
    count: usize,
    block: usize,
    xi: Vec<f64>,
    grads: Vec<f64>,
}

impl<'a> PerturbedRound<'a> {
    fn issue(
        g: &'a dyn GradientOracle,
        center: &'a [f64],
        rho: f64,
        count: usize,
        ledger: &mut QueryLedger,
        tag: &str,
        seed: u64,
    ) -> Self {
        ledger.record_batch(count as u64, tag);
        Self { g, center, rho, seed, count, block: usize::MAX, xi: Vec::new(), grads: Vec::new() }
    }

    /// `(ξ_i, g(x̄ + ξ_i))`. Access is expected to be mostly sequential.
    fn row(&mut self, i: usize) -> Result<(&[f64], &[f64])> {
        debug_assert!(i < self.count);
        let d = self.center.len();
        let b = i / BLOCK_ROWS;
        if b != self.block {
            let start = b * BLOCK_ROWS;
            let len = BLOCK_ROWS.min(self.count - start);
            let xi = presample_flat(self.rho, d, len, rng::derive(self.seed, tags::XI, b as u64));
            let mut points = xi.clone();
            for row in points.chunks_mut(d) {
                for (p, c) in row.iter_mut().zip(self.center) {
                    *p += c;
                }
            }
            // The round was already recorded; this scratch ledger is discarded.
            let mut scratch = QueryLedger::new();
            self.grads = oracle_query_flat(self.g, &points, d, &mut scratch, "block", rng::derive(self.seed, tags::ORACLE, b as u64))?;
            self.xi = xi;
            self.block = b;
        }
        let k = i % BLOCK_ROWS;
        Ok((&self.xi[k * d..(k + 1) * d], &self.grads[k * d..(k + 1) * d]))
    }
}

/// Schedule of the epoch SGD oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSgdParams {
    pub eta1: f64,
    pub t1: usize,
    pub total: usize,
    /// `(T_k, η_k)` for every epoch that runs.
    pub epochs: Vec<(usize, f64)>,
}

impl EpochSgdParams {
    pub fn new(l: f64, lambda: f64, phi: f64) -> Self {
        let eta1 = 1.0 / (4.0 * lambda);
        let t1 = 16;
        let total = (48.0 * l * l / (lambda * phi)).ceil() as usize;
        let mut epochs = Vec::new();
        let (mut tk, mut eta, mut used) = (t1, eta1, 0usize);
        while used + tk <= total {
            epochs.push((tk, eta));
            used += tk;
            tk *= 2;
            eta /= 2.0;
        }
        Self { eta1, t1, total, epochs }
    }

    pub fn steps(&self) -> usize {
        self.epochs.iter().map(|e| e.0).sum()
    }
}

/// Epoch SGD on `f̂_ρ + λ/2‖· − x̄‖²` over `B_x̄(r)` with one batch of `2T` queries.
pub fn epoch_sgd(
    g: &dyn GradientOracle,
    center: &[f64],
    r: f64,
    rho: f64,
    lambda: f64,
    phi: f64,
    ledger: &mut QueryLedger,
    seed: u64,
) -> Result<Vec<f64>> {
    check_common(r, rho, lambda, phi)?;
    let d = center.len();
    let params = EpochSgdParams::new(g.second_moment_bound().sqrt(), lambda, phi);
    let mut round = PerturbedRound::issue(g, center, rho, 2 * params.total, ledger, "epoch_sgd", seed);

    let mut x0 = center.to_vec();
    let mut x = vec![0.0; d];
    let mut delta = vec![0.0; d];
    let mut avg = vec![0.0; d];
    let mut offset = 0usize;
    for &(tk, eta) in &params.epochs {
        let shrink = 1.0 / (1.0 + eta * lambda);
        for k in 0..d {
            x[k] = (x0[k] + eta * lambda * center[k]) * shrink;
        }
        project_ball(&mut x, center, r);
        avg.copy_from_slice(&x);
        for t in 1..tk {
            let (xi_i, g_i) = round.row(offset + t - 1)?;
            let mut dsq = 0.0;
            for k in 0..d {
                delta[k] = x[k] - center[k];
                dsq += delta[k] * delta[k];
            }
            let w = log_weight(&delta, dsq, xi_i, rho).exp();
            for k in 0..d {
                x[k] = (x[k] + eta * lambda * center[k] - eta * w * g_i[k]) * shrink;
            }
            project_ball(&mut x, center, r);
            for k in 0..d {
                avg[k] += x[k];
            }
        }
        for k in 0..d {
            x0[k] = avg[k] / tk as f64;
        }
        offset += tk;
    }
    let ops = params.steps() as u64 * STEP_OPS_PER_DIM * d as u64;
    ledger.add_compute(ops, ops);
    Ok(x0)
}

/// Schedule of the accelerated (AC-SA) oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct AcSaParams {
    /// Restart rounds `⌈log₂(λr²/φ)⌉`; zero or negative means nothing to do.
    pub rounds: i64,
    pub steps_per_round: usize,
    pub minibatch: Vec<usize>,
    pub truncated: bool,
}

impl AcSaParams {
    pub fn new(l: f64, r: f64, rho: f64, lambda: f64, phi: f64) -> Self {
        let rounds = (lambda * r * r / phi).log2().ceil() as i64;
        let steps_per_round = (4.0 * (l / (rho * lambda) + 1.0).sqrt()).ceil() as usize;
        let mut truncated = false;
        let minibatch = (1..=rounds.max(0))
            .map(|k| {
                let n = (48.0 * 2f64.powi(k as i32) * l * l / (lambda * lambda * r * r * steps_per_round as f64)).ceil();
                if n > MAX_MINIBATCH as f64 {
                    truncated = true;
                    MAX_MINIBATCH
                } else {
                    (n as usize).max(1)
                }
            })
            .collect();
        Self { rounds, steps_per_round, minibatch, truncated }
    }

    /// `N = T·Σ N_k`.
    pub fn total_queries(&self) -> usize {
        self.steps_per_round * self.minibatch.iter().sum::<usize>()
    }

    /// Sequential inner steps `T·K`.
    pub fn inner_steps(&self) -> usize {
        self.steps_per_round * self.rounds.max(0) as usize
    }

    /// `α_t = 2/(t+1)`, `γ_t = 4(L/ρ + λ)/(t(t+1))`.
    pub fn weights(t: usize, l: f64, rho: f64, lambda: f64) -> (f64, f64) {
        let tf = t as f64;
        (2.0 / (tf + 1.0), 4.0 * (l / rho + lambda) / (tf * (tf + 1.0)))
    }

    /// Coefficients of `x_ag` and `x` in the middle point; they sum to one.
    pub fn md_coefficients(alpha: f64, gamma: f64, lambda: f64) -> (f64, f64) {
        let den = gamma + (1.0 - alpha * alpha) * lambda;
        ((1.0 - alpha) * (lambda + gamma) / den, alpha * ((1.0 - alpha) * lambda + gamma) / den)
    }
}

#[derive(Debug, Clone)]
pub struct AcSaRun {
    pub x: Vec<f64>,
    pub params: AcSaParams,
    pub inner_steps: usize,
}

/// AC-SA with restarts on `f̂_ρ + λ/2‖· − x̄‖²` over `B_x̄(r)`, one batch of `N` queries.
pub fn ac_sa(
    g: &dyn GradientOracle,
    center: &[f64],
    r: f64,
    rho: f64,
    lambda: f64,
    phi: f64,
    ledger: &mut QueryLedger,
    seed: u64,
) -> Result<Vec<f64>> {
    ac_sa_run(g, center, r, rho, lambda, phi, ledger, seed).map(|run| run.x)
}

pub fn ac_sa_run(
    g: &dyn GradientOracle,
    center: &[f64],
    r: f64,
    rho: f64,
    lambda: f64,
    phi: f64,
    ledger: &mut QueryLedger,
    seed: u64,
) -> Result<AcSaRun> {
    check_common(r, rho, lambda, phi)?;
    let d = center.len();
    let l = g.second_moment_bound().sqrt();
    let params = AcSaParams::new(l, r, rho, lambda, phi);
    if params.rounds <= 0 {
        return Ok(AcSaRun { x: center.to_vec(), params, inner_steps: 0 });
    }
    let mut round = PerturbedRound::issue(g, center, rho, params.total_queries(), ledger, "ac_sa", seed);

    let steps = params.steps_per_round;
    let mut x_ag = center.to_vec();
    let mut x = center.to_vec();
    let mut x_md = vec![0.0; d];
    let mut delta = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut offset = 0usize;
    let (mut depth, mut work) = (0u64, 0u64);
    for &nk in &params.minibatch {
        for t in 1..=steps {
            let (alpha, gamma) = AcSaParams::weights(t, l, rho, lambda);
            let (c_ag, c_x) = AcSaParams::md_coefficients(alpha, gamma, lambda);
            let mut dsq = 0.0;
            for k in 0..d {
                x_md[k] = c_ag * x_ag[k] + c_x * x[k];
                delta[k] = x_md[k] - center[k];
                dsq += delta[k] * delta[k];
            }
            grad.iter_mut().for_each(|v| *v = 0.0);
            let base = offset + (t - 1) * nk;
            for n in 0..nk {
                let i = base + n;
                let (xi_i, g_i) = round.row(i)?;
                let w = log_weight(&delta, dsq, xi_i, rho).exp();
                for (gk, gi) in grad.iter_mut().zip(g_i) {
                    *gk += w * gi;
                }
            }
            let c1 = gamma + (1.0 - alpha) * lambda;
            let c2 = alpha * lambda;
            let den = gamma + lambda;
            for k in 0..d {
                let lin = alpha * (grad[k] / nk as f64 + lambda * delta[k]);
                x[k] = (c1 * x[k] + c2 * x_md[k] - lin) / den;
            }
            project_ball(&mut x, center, r);
            for k in 0..d {
                x_ag[k] = alpha * x[k] + (1.0 - alpha) * x_ag[k];
            }
            let reduce = (nk as f64).log2().ceil() as u64;
            depth += (STEP_OPS_PER_DIM + reduce) * d as u64;
            work += (STEP_OPS_PER_DIM + 3 * nk as u64) * d as u64;
        }
        offset += steps * nk;
        x.copy_from_slice(&x_ag);
    }
    ledger.add_compute(depth, work);
    Ok(AcSaRun { x: x_ag, inner_steps: params.inner_steps(), params })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BallMethod {
    EpochSgd,
    AcSa,
}

impl FromStr for BallMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epoch_sgd" => Ok(Self::EpochSgd),
            "ac_sa" => Ok(Self::AcSa),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

impl std::fmt::Display for BallMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::EpochSgd => "epoch_sgd",
            Self::AcSa => "ac_sa",
        })
    }
}

/// A ReSQue-backed ball optimization oracle for `f̂_ρ` with `ρ = r`.
pub struct ResqueBallOracle<'a> {
    pub oracle: &'a dyn GradientOracle,
    pub radius: f64,
    pub method: BallMethod,
}

impl BallOptimizer for ResqueBallOracle<'_> {
    fn solve(&self, center: &[f64], lambda: f64, phi: f64, ledger: &mut QueryLedger, seed: u64) -> Result<Vec<f64>> {
        match self.method {
            BallMethod::EpochSgd => epoch_sgd(self.oracle, center, self.radius, self.radius, lambda, phi, ledger, seed),
            BallMethod::AcSa => ac_sa(self.oracle, center, self.radius, self.radius, lambda, phi, ledger, seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParallelOptions {
    pub c_ba: f64,
    pub c_agg: f64,
}

impl Default for ParallelOptions {
    fn default() -> Self {
        Self { c_ba: ballaccel::DEFAULT_C_BA, c_agg: BallAccelOptions::default().c_agg }
    }
}

#[derive(Debug, Clone)]
pub struct ParallelOutcome {
    pub x: Vec<f64>,
    /// `None` when the target was trivial and the origin was returned.
    pub accel: Option<AccelOutcome>,
    pub config: Option<BallAccelConfig>,
}

/// Minimize `f` over `B(R)` to expected error `ε` with low query depth.
///
/// The outer loop runs on `f̂_ρ` with `r = ρ = ε'/(√d L)` and internal target
/// `ε' = ε/3`, which absorbs the smoothing bias `Lρ√d = ε'`.
pub fn solve_parallel(
    g: &dyn GradientOracle,
    domain_radius: f64,
    eps_opt: f64,
    method: BallMethod,
    ledger: &mut QueryLedger,
    seed: u64,
    options: &ParallelOptions,
) -> Result<ParallelOutcome> {
    let d = g.dim();
    let l = g.second_moment_bound().sqrt();
    if !(eps_opt > 0.0) {
        return Err(Error::Config("target accuracy must be positive".into()));
    }
    if eps_opt >= l * domain_radius {
        return Ok(ParallelOutcome { x: vec![0.0; d], accel: None, config: None });
    }
    let eps_int = eps_opt / 3.0;
    let r = eps_int / ((d as f64).sqrt() * l);
    let config = BallAccelConfig::derive(l, domain_radius, r, eps_int, options.c_ba)?;
    let oracle = ResqueBallOracle { oracle: g, radius: r, method };
    let opts = BallAccelOptions { c_agg: options.c_agg, record_history: false };
    let out = ballaccel::run_ball_accel_nonprivate(&config, d, &oracle, ledger, seed, &opts)?;
    Ok(ParallelOutcome { x: out.x.clone(), accel: Some(out), config: Some(config) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_schedule_doubles_and_halves() {
        let p = EpochSgdParams::new(1.0, 1.0, 0.1);
        assert_eq!(p.total, 480);
        assert_eq!(p.epochs.iter().map(|e| e.0).collect::<Vec<_>>(), vec![16, 32, 64, 128]);
        let prod: Vec<f64> = p.epochs.iter().map(|(t, e)| *t as f64 * e).collect();
        assert!(prod.iter().all(|v| (v - prod[0]).abs() < 1e-12));
    }

    #[test]
    fn md_coefficients_sum_to_one() {
        for t in 1..50 {
            let (a, g) = AcSaParams::weights(t, 1.0, 0.1, 3.0);
            let (c1, c2) = AcSaParams::md_coefficients(a, g, 3.0);
            assert!((c1 + c2 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn method_parsing() {
        assert_eq!("ac_sa".parse::<BallMethod>().unwrap(), BallMethod::AcSa);
        assert!("sgd".parse::<BallMethod>().is_err());
    }
}
