//! Private solvers for smoothed empirical risk over small balls, and the
//! end-to-end DP-ERM and DP-SCO drivers built on ball acceleration.
//!
//! Every solver draws its sample indices uniformly with replacement and its
//! perturbations `ξ` from seeded substreams, queries per-sample subgradients at
//! `x̄ + ξ` and reweights them with the ReSQue density ratio. Because the query
//! points do not depend on the iterates, each solver run is one query round.

use rand::Rng;

use crate::ballaccel::{self, AccelOutcome, BallAccelConfig, OracleSuite};
use crate::error::{Error, Result};
use crate::linalg::{dist, dist_sq, project_ball, projected};
use crate::par;
use crate::privacy::{
    min_radius_ratio, solver_rdp_event, DpGuarantee, PrivacyLedger, SolverPrivacy, SolverVariant,
    DEFAULT_C_PRIV,
};
use crate::problem_core::{Objective, QueryLedger, SampledDataset};
use crate::resque::{log_weight, presample_flat};
use crate::rng::{self, tags};

/// Named universal constants. None of them is fixed by the analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConstants {
    pub c: f64,
    pub c_priv: f64,
    pub c_cvx: f64,
    pub c_sc: f64,
    pub c_ls: f64,
    pub c_ba: f64,
}

impl Default for DpConstants {
    fn default() -> Self {
        Self { c: 64.0, c_priv: DEFAULT_C_PRIV, c_cvx: 8.0, c_sc: 32.0, c_ls: 16.0, c_ba: ballaccel::DEFAULT_C_BA }
    }
}

// ---------------------------------------------------------------------------
// Aggregation

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub point: Vec<f64>,
    /// No input had a 0.51 majority within `2Δ/3`; `point` is the coordinate-wise median.
    pub degraded: bool,
}

/// Returns an input point with at least `0.51k` inputs (itself included)
/// within `2Δ/3`. If some `y` has `0.51k` inputs within `Δ/3`, any such point
/// is within `Δ` of `y`.
pub fn aggregate(points: &[Vec<f64>], delta: f64) -> Aggregate {
    assert!(!points.is_empty(), "aggregate needs at least one point");
    let k = points.len();
    let need = (0.51 * k as f64).ceil() as usize;
    let reach_sq = (2.0 * delta / 3.0).powi(2);
    for p in points {
        let close = points.iter().filter(|q| dist_sq(p, q) <= reach_sq).count();
        if close >= need {
            return Aggregate { point: p.clone(), degraded: false };
        }
    }
    Aggregate { point: coordinate_median(points), degraded: true }
}

fn coordinate_median(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points[0].len();
    (0..d)
        .map(|j| {
            let mut col: Vec<f64> = points.iter().map(|p| p[j]).collect();
            col.sort_by(f64::total_cmp);
            let m = col.len() / 2;
            if col.len() % 2 == 1 {
                col[m]
            } else {
                0.5 * (col[m - 1] + col[m])
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Subsampled projected SGD

/// Inputs of one subsampled solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsampledRunConfig {
    pub center: Vec<f64>,
    pub r: f64,
    pub rho: f64,
    /// Privacy parameter; `f64::INFINITY` switches the noise off.
    pub beta: f64,
    /// Regularization weight, 0 for the plain convex solver.
    pub lambda: f64,
    /// Center of the regularizer; defaults to `center`.
    pub reg_center: Option<Vec<f64>>,
    pub t: usize,
    pub seed: u64,
    /// `(r', x₀)`: distance bound and warm start.
    pub warm: Option<(f64, Vec<f64>)>,
}

/// One epoch of the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epoch {
    pub steps: usize,
    pub eta: f64,
    pub sigma: f64,
}

impl SubsampledRunConfig {
    pub fn new(center: Vec<f64>, r: f64, rho: f64, beta: f64, t: usize, seed: u64) -> Self {
        Self { center, r, rho, beta, lambda: 0.0, reg_center: None, t, seed, warm: None }
    }

    /// `T̂ = 2^⌊log₂T⌋`.
    pub fn t_hat(&self) -> usize {
        if self.t == 0 {
            0
        } else {
            1 << (usize::BITS - 1 - self.t.leading_zeros())
        }
    }

    /// Number of epochs `k = log₂T̂`.
    pub fn k(&self) -> usize {
        self.t_hat().max(1).trailing_zeros() as usize
    }

    /// `η = (r/L)·min(1/√T, β/√d)` with `r'` in place of `r` when warm started.
    pub fn eta(&self, l: f64) -> f64 {
        let radius = self.warm.as_ref().map_or(self.r, |w| w.0);
        let d = self.center.len() as f64;
        radius / l * (1.0 / (self.t.max(1) as f64).sqrt()).min(self.beta / d.sqrt())
    }

    /// `T_i = 2^{−i}T̂`, `η_i = 4^{−i}η`, `σ_i = Lη_i/β` for `i ∈ [k]`.
    pub fn epochs(&self, l: f64) -> Vec<Epoch> {
        let (t_hat, eta) = (self.t_hat(), self.eta(l));
        (1..=self.k())
            .map(|i| {
                let eta_i = eta * 0.25f64.powi(i as i32);
                Epoch { steps: t_hat >> i, eta: eta_i, sigma: l * eta_i / self.beta }
            })
            .collect()
    }

    fn regularizer_center(&self) -> &[f64] {
        self.reg_center.as_deref().unwrap_or(&self.center)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.r > 0.0 && self.rho > 0.0 && self.beta > 0.0) {
            return Err(Error::Config("r, ρ and β must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("λ must be finite and nonnegative, got {}", self.lambda)));
        }
        if n == 0 {
            return Err(Error::Config("empty dataset".into()));
        }
        if let Some((rp, x0)) = &self.warm {
            if !(*rp >= 0.0 && *rp <= 2.0 * self.r) {
                return Err(Error::Config(format!("r' = {rp} must lie in [0, 2r]")));
            }
            if dist(x0, &self.center) > self.r * (1.0 + 1e-9) {
                return Err(Error::Config("warm start lies outside the ball".into()));
            }
        }
        Ok(())
    }
}

/// Geometry shared by every step of a run.
pub struct StepContext<'a> {
    pub data: &'a SampledDataset,
    pub center: &'a [f64],
    pub r: f64,
    pub rho: f64,
    pub lambda: f64,
    pub reg_center: &'a [f64],
}

/// `steps = indices.len()` composite ReSQue steps from `y0`; row `j` of `xi`
/// is the perturbation of step `j`. Returns the last iterate and the average
/// of `y_1, …, y_T`.
pub fn psgd_epoch(ctx: &StepContext<'_>, eta: f64, y0: &[f64], indices: &[usize], xi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = ctx.center.len();
    let mut y = y0.to_vec();
    let mut avg = vec![0.0; d];
    let mut delta = vec![0.0; d];
    let mut q = vec![0.0; d];
    let mut g = vec![0.0; d];
    let shrink = 1.0 / (1.0 + eta * ctx.lambda);
    for (j, &z) in indices.iter().enumerate() {
        let xi_j = &xi[j * d..(j + 1) * d];
        let mut dsq = 0.0;
        for k in 0..d {
            delta[k] = y[k] - ctx.center[k];
            dsq += delta[k] * delta[k];
            q[k] = ctx.center[k] + xi_j[k];
        }
        ctx.data.sample_subgradient_into(z, &q, &mut g);
        let w = log_weight(&delta, dsq, xi_j, ctx.rho).exp();
        for k in 0..d {
            y[k] = (y[k] + eta * ctx.lambda * ctx.reg_center[k] - eta * w * g[k]) * shrink;
        }
        project_ball(&mut y, ctx.center, ctx.r);
        for k in 0..d {
            avg[k] += y[k];
        }
    }
    let t = indices.len().max(1) as f64;
    avg.iter_mut().for_each(|v| *v /= t);
    (y, avg)
}

/// `count` indices uniform over `[n]`, with replacement.
pub fn sample_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut s = rng::substream(seed, tags::INDEX, 0);
    (0..count).map(|_| s.random_range(0..n)).collect()
}

/// Privacy bookkeeping handed to a standalone solver call.
pub struct PrivacyAccount<'a> {
    pub ledger: &'a mut PrivacyLedger,
    pub delta: f64,
    pub c_priv: f64,
}

impl PrivacyAccount<'_> {
    fn charge(
        &mut self,
        cfg: &SubsampledRunConfig,
        n: usize,
        variant: SolverVariant,
        zeta: Option<f64>,
        ratio_factor: f64,
        label: &str,
    ) -> Result<SolverPrivacy> {
        let sp = check_solver_privacy(cfg, n, self.delta, self.c_priv, variant, zeta, ratio_factor)?;
        let ev = sp.event(self.ledger.alpha(), self.delta, label)?;
        self.ledger.compose(ev)?;
        Ok(sp)
    }
}

fn check_solver_privacy(
    cfg: &SubsampledRunConfig,
    n: usize,
    delta: f64,
    c_priv: f64,
    variant: SolverVariant,
    zeta: Option<f64>,
    ratio_factor: f64,
) -> Result<SolverPrivacy> {
    let sp = solver_rdp_event(cfg.beta, cfg.t, n, delta, c_priv, variant)?;
    let need = min_radius_ratio(cfg.t, delta, c_priv, zeta, ratio_factor);
    if cfg.rho / cfg.r < need {
        return Err(Error::Precondition(format!("ρ/r = {:.4e} < required {need:.4e}", cfg.rho / cfg.r)));
    }
    Ok(sp)
}

/// The subsampled noisy PSGD core, covering both the convex and the
/// regularized warm-started variants. The output is projected onto `B_x̄(r)`.
fn run_psgd(data: &SampledDataset, cfg: &SubsampledRunConfig, ledger: &mut QueryLedger) -> Result<Vec<f64>> {
    cfg.validate(data.len())?;
    let d = cfg.center.len();
    let l = data.lipschitz;
    let epochs = cfg.epochs(l);
    let total: usize = epochs.iter().map(|e| e.steps).sum();
    let indices = sample_indices(data.len(), total, cfg.seed);
    let xi = presample_flat(cfg.rho, d, total, rng::derive(cfg.seed, tags::XI, 0));
    let mut noise = rng::substream(cfg.seed, tags::NOISE, 0);
    let ctx = StepContext {
        data,
        center: &cfg.center,
        r: cfg.r,
        rho: cfg.rho,
        lambda: cfg.lambda,
        reg_center: cfg.regularizer_center(),
    };
    let mut x = cfg.warm.as_ref().map_or_else(|| cfg.center.clone(), |w| w.1.clone());
    let mut offset = 0;
    let mut zeta = vec![0.0; d];
    for e in &epochs {
        let idx = &indices[offset..offset + e.steps];
        let (_, avg) = psgd_epoch(&ctx, e.eta, &x, idx, &xi[offset * d..(offset + e.steps) * d]);
        x = avg;
        if e.sigma > 0.0 {
            rng::fill_gaussian(&mut noise, e.sigma, &mut zeta);
            x.iter_mut().zip(&zeta).for_each(|(a, b)| *a += b);
        }
        offset += e.steps;
    }
    ledger.record_batch(total as u64, "psgd");
    project_ball(&mut x, &cfg.center, cfg.r);
    Ok(x)
}

/// Subsampled ReSQue PSGD on `f̂_ρ^erm` over `B_x̄(r)` with Gaussian noise after
/// every epoch average; uses at most `T` gradients.
pub fn subsampled_psgd_convex(
    data: &SampledDataset,
    cfg: &SubsampledRunConfig,
    privacy: Option<&mut PrivacyAccount<'_>>,
    ledger: &mut QueryLedger,
) -> Result<Vec<f64>> {
    if cfg.lambda != 0.0 || cfg.warm.is_some() {
        return Err(Error::Config("the convex solver takes λ = 0 and no warm start".into()));
    }
    if let Some(acct) = privacy {
        acct.charge(cfg, data.len(), SolverVariant::Convex, None, 1.0, "psgd_convex")?;
    }
    run_psgd(data, cfg, ledger)
}

/// The regularized variant: composite steps absorb `λ/2‖· − c‖²`, and the run
/// may start from a warm point `x₀` with `E‖x₀ − x*‖² ≤ r'²`.
pub fn subsampled_psgd_regularized(
    data: &SampledDataset,
    cfg: &SubsampledRunConfig,
    privacy: Option<&mut PrivacyAccount<'_>>,
    ledger: &mut QueryLedger,
) -> Result<Vec<f64>> {
    if let Some(acct) = privacy {
        acct.charge(cfg, data.len(), SolverVariant::Convex, None, 2.0, "psgd_regularized")?;
    }
    run_psgd(data, cfg, ledger)
}

// ---------------------------------------------------------------------------
// Strongly convex staging

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub beta: f64,
    pub t: usize,
    pub r_prime: f64,
}

/// `(E_i, D_i)` for `i = 0..=k`, with `E_i = 2C_cvx²L²/λ·(√d/(β_iT_i) + 1/√T_i)²`
/// and `D_i = 4E_i (2L²/(4λE_0))^{2^{−i}}`, using the real-valued `T_i = 2^{i−k}T`.
pub fn stage_error_bounds(l: f64, d: usize, lambda: f64, beta: f64, t: usize, k: usize, c_cvx: f64) -> (Vec<f64>, Vec<f64>) {
    let sd = (d as f64).sqrt();
    let e: Vec<f64> = (0..=k)
        .map(|i| {
            let shift = k as i32 - i as i32;
            let beta_i = beta * 2f64.powf(shift as f64 / 2.0);
            let t_i = t as f64 * 0.5f64.powi(shift);
            2.0 * c_cvx * c_cvx * l * l / lambda * (sd / (beta_i * t_i) + 1.0 / t_i.sqrt()).powi(2)
        })
        .collect();
    let base = 2.0 * l * l / lambda / (4.0 * e[0]);
    let dd = (0..=k).map(|i| 4.0 * e[i] * base.powf(0.5f64.powi(i as i32))).collect();
    (e, dd)
}

/// `k = ⌈log₂log₂T⌉`, zero for `T < 3`.
pub fn stage_count(t: usize) -> usize {
    if t < 3 {
        0
    } else {
        (t as f64).log2().log2().ceil() as usize
    }
}

/// Stage `i ∈ [k]` runs with `β_{i−1} = 2^{(k−i+1)/2}β`, `T_{i−1} = ⌊2^{i−1−k}T⌋`
/// and `r_{i−1} = min(2r, √(2D_{i−1}/λ))`.
pub fn strongly_convex_stages(l: f64, d: usize, lambda: f64, beta: f64, t: usize, r: f64, c_cvx: f64) -> Vec<Stage> {
    let k = stage_count(t);
    if k == 0 {
        return Vec::new();
    }
    let (_, dd) = stage_error_bounds(l, d, lambda, beta, t, k, c_cvx);
    (1..=k)
        .map(|i| Stage {
            beta: beta * 2f64.powf((k - i + 1) as f64 / 2.0),
            t: ((t as f64) * 0.5f64.powi((k - i + 1) as i32)).floor() as usize,
            r_prime: (2.0 * r).min((2.0 * dd[i - 1] / lambda).sqrt()),
        })
        .collect()
}

fn run_strongly_convex(
    data: &SampledDataset,
    cfg: &SubsampledRunConfig,
    c_cvx: f64,
    ledger: &mut QueryLedger,
) -> Result<Vec<f64>> {
    if !(cfg.lambda > 0.0) {
        return Err(Error::Config("the strongly convex solver needs λ > 0".into()));
    }
    cfg.validate(data.len())?;
    let stages = strongly_convex_stages(data.lipschitz, cfg.center.len(), cfg.lambda, cfg.beta, cfg.t, cfg.r, c_cvx);
    // The regularizer center need not lie in the ball; start from its projection.
    let mut x = projected(cfg.regularizer_center(), &cfg.center, cfg.r);
    for (i, s) in stages.iter().enumerate() {
        let stage_cfg = SubsampledRunConfig {
            beta: s.beta,
            t: s.t,
            seed: rng::derive(cfg.seed, tags::STAGE, i as u64),
            warm: Some((s.r_prime, x)),
            ..cfg.clone()
        };
        x = run_psgd(data, &stage_cfg, ledger)?;
    }
    Ok(x)
}

/// Restarted regularized PSGD reaching the `1/T`-type rate on the
/// `λ`-strongly convex regularized objective; at most `T` gradients.
pub fn subsampled_strongly_convex(
    data: &SampledDataset,
    cfg: &SubsampledRunConfig,
    c_cvx: f64,
    privacy: Option<&mut PrivacyAccount<'_>>,
    ledger: &mut QueryLedger,
) -> Result<Vec<f64>> {
    if let Some(acct) = privacy {
        acct.charge(cfg, data.len(), SolverVariant::StronglyConvex, None, 1.0, "strongly_convex")?;
    }
    run_strongly_convex(data, cfg, c_cvx, ledger)
}

// ---------------------------------------------------------------------------
// Bias reduction

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmcConfig {
    pub t: usize,
    pub t_max: usize,
    pub j_max: usize,
}

impl MlmcConfig {
    pub fn new(n: usize, t: usize, c_priv: f64) -> Result<Self> {
        let t_max = (n as f64 / c_priv).floor() as usize;
        let cap = (n as f64 / (2.0 * c_priv)).floor() as usize;
        if t == 0 || t > cap {
            return Err(Error::Precondition(format!("T = {t} must lie in [1, ⌊n/(2C_priv)⌋ = {cap}]")));
        }
        let j_max = (t_max as f64 / t as f64).log2().floor() as usize;
        Ok(Self { t, t_max, j_max })
    }

    /// `(β_j, T_j) = (2^{−j/2}β, 2^j T)`.
    pub fn level(&self, beta: f64, j: usize) -> (f64, usize) {
        (beta * 0.5f64.powf(j as f64 / 2.0), self.t << j)
    }
}

/// One loop's estimate `x₀ + 2^J(x_J − x_{J−1})` when `level = Some(J)`,
/// otherwise the base run alone. The runs execute side by side.
pub fn mlmc_loop(
    data: &SampledDataset,
    cfg: &SubsampledRunConfig,
    mlmc: &MlmcConfig,
    level: Option<usize>,
    c_cvx: f64,
    seed: u64,
    ledger: &mut QueryLedger,
) -> Result<Vec<f64>> {
    let mut jobs = vec![(cfg.beta, cfg.t)];
    if let Some(j) = level {
        jobs.push(mlmc.level(cfg.beta, j));
        jobs.push(mlmc.level(cfg.beta, j - 1));
    }
    let results = par::map_range(jobs.len(), |i| {
        let mut l = QueryLedger::new();
        let run = SubsampledRunConfig {
            beta: jobs[i].0,
            t: jobs[i].1,
            seed: rng::derive(seed, tags::LEVEL, i as u64),
            ..cfg.clone()
        };
        run_strongly_convex(data, &run, c_cvx, &mut l).map(|x| (x, l))
    });
    let mut pts = Vec::with_capacity(3);
    let mut subs = Vec::with_capacity(3);
    for r in results {
        let (x, l) = r?;
        pts.push(x);
        subs.push(l);
    }
    ledger.merge_parallel(&subs);
    Ok(match level {
        Some(j) => {
            let scale = 2f64.powi(j as i32);
            pts[0].iter().zip(&pts[1]).zip(&pts[2]).map(|((b, hi), lo)| b + scale * (hi - lo)).collect()
        }
        None => pts.swap_remove(0),
    })
}

/// `J ≥ 1` with `P(J = j) = 2^{−j}`; the level when `J ≤ j_max`.
pub fn mlmc_level(seed: u64, j_max: usize) -> Option<usize> {
    let j = ballaccel::geometric_half(seed);
    (j <= j_max).then_some(j)
}

/// Spending cap on the levels of the bias-reduced estimator. A draw whose
/// loop would overrun the remaining budget falls back to the base run. The
/// decision depends only on the data-independent draws.
#[derive(Debug, Clone)]
pub struct MlmcBudget {
    pub remaining: f64,
    /// Per-order cost `α·τ` of the base run; a level-`J` loop costs `2^J` times this.
    pub unit: f64,
    pub capped: u64,
}

impl MlmcBudget {
    fn admit(&mut self, level: Option<usize>) -> Option<usize> {
        let cost = |l: Option<usize>| l.map_or(self.unit, |j| self.unit * 2f64.powi(j as i32));
        let chosen = if level.is_some() && cost(level) > self.remaining {
            self.capped += 1;
            None
        } else {
            level
        };
        self.remaining -= cost(chosen);
        chosen
    }
}

/// Average of `j_max` independent multilevel loops. Returns the estimate and
/// the level drawn by each loop.
pub fn bias_reduced_prox(
    data: &SampledDataset,
    cfg: &SubsampledRunConfig,
    mlmc: &MlmcConfig,
    c_cvx: f64,
    mut budget: Option<&mut MlmcBudget>,
    ledger: &mut QueryLedger,
) -> Result<(Vec<f64>, Vec<Option<usize>>)> {
    if mlmc.j_max == 0 {
        return Err(Error::Precondition("j_max = 0: T_max < 2T".into()));
    }
    let levels: Vec<Option<usize>> = (0..mlmc.j_max)
        .map(|k| {
            let lv = mlmc_level(rng::derive(cfg.seed, tags::GEOM, k as u64), mlmc.j_max);
            match budget.as_deref_mut() {
                Some(b) => b.admit(lv),
                None => lv,
            }
        })
        .collect();
    let results = par::map_range(levels.len(), |k| {
        let mut l = QueryLedger::new();
        let seed = rng::derive(cfg.seed, tags::REPLICA, k as u64);
        mlmc_loop(data, cfg, mlmc, levels[k], c_cvx, seed, &mut l).map(|x| (x, l))
    });
    let d = cfg.center.len();
    let mut mean = vec![0.0; d];
    let mut subs = Vec::with_capacity(levels.len());
    for r in results {
        let (x, l) = r?;
        mean.iter_mut().zip(&x).for_each(|(m, v)| *m += v);
        subs.push(l);
    }
    ledger.merge_parallel(&subs);
    let kf = levels.len() as f64;
    mean.iter_mut().for_each(|m| *m /= kf);
    Ok((mean, levels))
}

// ---------------------------------------------------------------------------
// High-probability solver

/// `⌈20 log(1/ζ)⌉`.
pub fn repeat_count(zeta: f64) -> usize {
    ((20.0 * (1.0 / zeta).ln()).ceil() as usize).max(1)
}

/// `9√(2C_sc)·(L/λ)·(d/(β²T²) + 1/T)^{1/2}`.
pub fn aggregation_radius(c_sc: f64, l: f64, lambda: f64, d: usize, beta: f64, t: usize) -> f64 {
    let tf = t as f64;
    9.0 * (2.0 * c_sc).sqrt() * l / lambda * (d as f64 / (beta * beta * tf * tf) + 1.0 / tf).sqrt()
}

/// Aggregated independent strongly convex runs: within distance
/// `O(L/λ·(√d/(βT) + 1/√T))` of the regularized ball optimum with
/// probability `1 − ζ`.
pub fn high_prob_solver(
    data: &SampledDataset,
    cfg: &SubsampledRunConfig,
    zeta: f64,
    consts: &DpConstants,
    privacy: Option<&mut PrivacyAccount<'_>>,
    ledger: &mut QueryLedger,
) -> Result<Aggregate> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::Config(format!("ζ must lie in (0, 1), got {zeta}")));
    }
    if let Some(acct) = privacy {
        acct.charge(cfg, data.len(), SolverVariant::LineSearch { zeta }, Some(zeta), 1.0, "high_prob")?;
    }
    let k = repeat_count(zeta);
    let results = par::map_range(k, |i| {
        let mut l = QueryLedger::new();
        let run = SubsampledRunConfig { seed: rng::derive(cfg.seed, tags::REPLICA, i as u64), ..cfg.clone() };
        run_strongly_convex(data, &run, consts.c_cvx, &mut l).map(|x| (x, l))
    });
    let mut pts = Vec::with_capacity(k);
    let mut subs = Vec::with_capacity(k);
    for r in results {
        let (x, l) = r?;
        pts.push(x);
        subs.push(l);
    }
    ledger.merge_parallel(&subs);
    let radius = aggregation_radius(consts.c_sc, data.lipschitz, cfg.lambda, cfg.center.len(), cfg.beta, cfg.t);
    Ok(aggregate(&pts, radius))
}

// ---------------------------------------------------------------------------
// DP-ERM

/// The parameter block of the private ERM driver.
#[derive(Debug, Clone, PartialEq)]
pub struct DpErmParams {
    pub n: usize,
    pub d: usize,
    pub lipschitz: f64,
    pub radius: f64,
    pub eps_dp: f64,
    pub delta: f64,
    pub eps_opt: f64,
    /// `LR/ε_opt`.
    pub kappa: f64,
    /// `(R/r)^{2/3}`.
    pub k_ball: f64,
    pub rho: f64,
    pub r: f64,
    /// The single RDP order used throughout, `4 log(2/δ)/ε_dp`.
    pub alpha: f64,
    pub beta: f64,
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
    pub zeta: f64,
    /// `ε_opt ≥ LR`: the data-independent answer already meets the target.
    pub trivial: bool,
}

fn check_dp_targets(eps_dp: f64, delta: f64) -> Result<()> {
    // The endpoint ε = 1 is admitted; the analysis only uses ε ≤ 1.
    if !(eps_dp > 0.0 && eps_dp <= 1.0) {
        return Err(Error::Config(format!("ε_dp must lie in (0, 1], got {eps_dp}")));
    }
    if !(delta > 0.0 && delta < 1.0 / 6.0) {
        return Err(Error::Config(format!("δ must lie in (0, 1/6), got {delta}")));
    }
    Ok(())
}

/// `ε_opt = C·LR(1/√n + √(d log(1/δ)) log^{1.5}(n/δ) log n / (nε))`.
pub fn erm_target(n: usize, d: usize, l: f64, big_r: f64, eps_dp: f64, delta: f64, c: f64) -> f64 {
    let nf = n as f64;
    let lnd = (nf / delta).ln();
    let privacy = (d as f64 * (1.0 / delta).ln()).sqrt() * lnd.powf(1.5) * nf.ln() / (nf * eps_dp);
    c * l * big_r * (1.0 / nf.sqrt() + privacy)
}

impl DpErmParams {
    pub fn derive(
        n: usize,
        d: usize,
        l: f64,
        big_r: f64,
        eps_dp: f64,
        delta: f64,
        consts: &DpConstants,
    ) -> Result<Self> {
        check_dp_targets(eps_dp, delta)?;
        if n < 2 || d == 0 {
            return Err(Error::Config("need n ≥ 2 and d ≥ 1".into()));
        }
        let eps_opt = erm_target(n, d, l, big_r, eps_dp, delta, consts.c);
        let lnd = (n as f64 / delta).ln();
        let rho = eps_opt / (l * (d as f64).sqrt());
        let r = rho / (consts.c.sqrt() * lnd * lnd);
        let beta = eps_dp / (consts.c * lnd * (1.0 / delta).ln().sqrt());
        Ok(Self::with_target(n, d, l, big_r, eps_dp, delta, eps_opt, rho, r, beta, consts))
    }

    /// Fill in the derived quantities for explicit `(ε_opt, ρ, r, β)`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_target(
        n: usize,
        d: usize,
        l: f64,
        big_r: f64,
        eps_dp: f64,
        delta: f64,
        eps_opt: f64,
        rho: f64,
        r: f64,
        beta: f64,
        consts: &DpConstants,
    ) -> Self {
        let kappa = l * big_r / eps_opt;
        let kf = kappa.max(std::f64::consts::E);
        let lk = kf.ln();
        let k_ball = (big_r / r).powf(2.0 / 3.0);
        let lnd = (n as f64 / delta).ln();
        let sd = (d as f64).sqrt();
        let sc = consts.c.sqrt();
        let sk = k_ball.sqrt();
        let t1 = sc * (kf * sd / (sk * beta * lk * lk) + kf * kf / (k_ball * lk.powi(3) * lnd));
        let t2 = sc * (kf * sd / (sk * beta * lk.sqrt()) + kf * kf / (k_ball * lk));
        let t3 = sc * (kf * sd / (sk * beta) + kf * kf / k_ball);
        let to_count = |t: f64| (t.ceil().min(u32::MAX as f64) as usize).max(1);
        Self {
            n,
            d,
            lipschitz: l,
            radius: big_r,
            eps_dp,
            delta,
            eps_opt,
            kappa,
            k_ball,
            rho,
            r,
            alpha: 4.0 * (2.0 / delta).ln() / eps_dp,
            beta,
            t1: to_count(t1),
            t2: to_count(t2),
            t3: to_count(t3),
            zeta: 1.0 / (kf * consts.c_ba * k_ball * lk),
            trivial: eps_opt >= l * big_r,
        }
    }
}

/// `C·log⁶(n/δ)·(min(n, n²ε²/d) + min((nd)^{2/3}/ε, n^{4/3}ε^{1/3}))`.
pub fn erm_gradient_cap(n: usize, d: usize, eps_dp: f64, delta: f64, c: f64) -> f64 {
    let (nf, df) = (n as f64, d as f64);
    let a = nf.min(nf * nf * eps_dp * eps_dp / df);
    let b = ((nf * df).powf(2.0 / 3.0) / eps_dp).min(nf.powf(4.0 / 3.0) * eps_dp.powf(1.0 / 3.0));
    c * (nf / delta).ln().powi(6) * (a + b)
}

#[derive(Debug, Clone)]
pub struct DpOptions {
    pub constants: DpConstants,
    /// When false, preconditions and privacy events are skipped: useful only to
    /// exercise the optimization machinery outside the private regime.
    pub enforce_privacy: bool,
    pub seed: u64,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self { constants: DpConstants::default(), enforce_privacy: true, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct DpOutcome {
    pub x: Vec<f64>,
    pub params: DpErmParams,
    pub privacy: PrivacyLedger,
    /// Conversion of `privacy` at `δ' = δ/3`; `None` when privacy was not enforced.
    pub dp: Option<DpGuarantee>,
    pub accel: Option<AccelOutcome>,
    pub config: Option<BallAccelConfig>,
    pub capped_levels: u64,
    pub degraded_aggregations: u64,
}

/// Per-call privacy prices fixed before any data is touched.
struct Prices {
    ls: f64,
    bo: f64,
    ls_delta: f64,
    bo_delta: f64,
    loop_delta: f64,
    loop_unit: f64,
}

struct DpSuite<'a> {
    data: &'a SampledDataset,
    params: &'a DpErmParams,
    consts: DpConstants,
    lambda_reg: f64,
    x_prime: &'a [f64],
    mlmc: MlmcConfig,
    seed: u64,
    calls: u64,
    prices: Option<Prices>,
    ledger: &'a mut PrivacyLedger,
    budget: MlmcBudget,
    degraded: u64,
}

impl DpSuite<'_> {
    /// Run config for the subproblem at `(y, λ)`. The outer regularizer merges
    /// with the ball one into weight `λ + λ_reg` centered at their weighted mean.
    fn run_config(&mut self, y: &[f64], lambda: f64, t: usize) -> SubsampledRunConfig {
        self.calls += 1;
        let total = lambda + self.lambda_reg;
        let c: Vec<f64> =
            y.iter().zip(self.x_prime).map(|(a, b)| (lambda * a + self.lambda_reg * b) / total).collect();
        SubsampledRunConfig {
            center: y.to_vec(),
            r: self.params.r,
            rho: self.params.rho,
            beta: self.params.beta,
            lambda: total,
            reg_center: Some(c),
            t,
            seed: rng::derive(self.seed, tags::ITER, self.calls),
            warm: None,
        }
    }

    fn record(&mut self, eps: f64, delta: f64, label: &str) -> Result<()> {
        if self.prices.is_some() {
            self.ledger.record(eps, delta, label)?;
        }
        Ok(())
    }
}

impl OracleSuite for DpSuite<'_> {
    fn line_search(&mut self, center: &[f64], lambda: f64, _delta: f64, ledger: &mut QueryLedger) -> Result<Vec<f64>> {
        let cfg = self.run_config(center, lambda, self.params.t1);
        let agg = high_prob_solver(self.data, &cfg, self.params.zeta, &self.consts, None, ledger)?;
        self.degraded += agg.degraded as u64;
        if let Some(p) = &self.prices {
            let (e, d) = (p.ls, p.ls_delta);
            self.record(e, d, "line_search")?;
        }
        Ok(agg.point)
    }

    fn ball_opt(&mut self, center: &[f64], lambda: f64, _phi: f64, ledger: &mut QueryLedger) -> Result<Vec<f64>> {
        let cfg = self.run_config(center, lambda, self.params.t2);
        let x = run_strongly_convex(self.data, &cfg, self.consts.c_cvx, ledger)?;
        if let Some(p) = &self.prices {
            let (e, d) = (p.bo, p.bo_delta);
            self.record(e, d, "ball_opt")?;
        }
        Ok(x)
    }

    fn stochastic_prox(
        &mut self,
        center: &[f64],
        lambda: f64,
        _bias: f64,
        _sigma: f64,
        ledger: &mut QueryLedger,
    ) -> Result<Vec<f64>> {
        let cfg = self.run_config(center, lambda, self.params.t3);
        let enforce = self.prices.is_some();
        let budget = if enforce { Some(&mut self.budget) } else { None };
        let (x, levels) = bias_reduced_prox(self.data, &cfg, &self.mlmc, self.consts.c_cvx, budget, ledger)?;
        if let Some(p) = &self.prices {
            let (unit, delta) = (p.loop_unit, p.loop_delta);
            for lv in levels {
                let scale = lv.map_or(1.0, |j| 2f64.powi(j as i32));
                self.record(unit * scale, delta, "stochastic_prox_loop")?;
            }
        }
        Ok(x)
    }
}

/// Private minimization of `f^erm + λ_reg/2‖· − x'‖²` over `B(R)`, with all
/// parameters derived from `(n, d, ε_dp, δ)`.
pub fn dp_erm_regularized(
    data: &SampledDataset,
    eps_dp: f64,
    delta: f64,
    lambda_reg: f64,
    x_prime: &[f64],
    options: &DpOptions,
    ledger: &mut QueryLedger,
) -> Result<DpOutcome> {
    let params =
        DpErmParams::derive(data.len(), x_prime.len(), data.lipschitz, data.radius, eps_dp, delta, &options.constants)?;
    dp_erm_with_params(data, &params, lambda_reg, x_prime, options, ledger)
}

/// Private ERM over `B(R)`: the regularized driver with `λ_reg = 0`.
pub fn dp_erm(
    data: &SampledDataset,
    eps_dp: f64,
    delta: f64,
    options: &DpOptions,
    ledger: &mut QueryLedger,
) -> Result<DpOutcome> {
    let origin = vec![0.0; data.dim()];
    dp_erm_regularized(data, eps_dp, delta, 0.0, &origin, options, ledger)
}

/// Fix every per-call privacy price up front and check the worst case fits:
/// line search and ball optimization get `ε/6` each over their maximum call
/// counts, and the multilevel loops get `ε/6` with the base runs alone
/// fitting in half of it. Each group carries `δ/18`.
fn price_calls(params: &DpErmParams, config: &BallAccelConfig, mlmc: &MlmcConfig, consts: &DpConstants) -> Result<Prices> {
    let n = params.n;
    let (eps, delta, alpha) = (params.eps_dp, params.delta, params.alpha);
    let iters = config.max_iters as f64;
    let n_ls = iters * config.probe_cap() as f64;
    let n_loops = iters * mlmc.j_max as f64;
    let (ls_delta, bo_delta, loop_delta) = (delta / (18.0 * n_ls), delta / (18.0 * iters), delta / (18.0 * n_loops));
    let mut failed = Vec::new();
    let mut solver = |t: usize, d: f64, variant, zeta: Option<f64>, label: &str| -> Option<f64> {
        let cfg = SubsampledRunConfig::new(vec![0.0], params.r, params.rho, params.beta, t, 0);
        match check_solver_privacy(&cfg, n, d, consts.c_priv, variant, zeta, 1.0) {
            Ok(sp) if alpha < sp.alpha_max => Some(alpha * sp.tau),
            Ok(sp) => {
                failed.push(format!("{label}: α = {alpha:.3} ≥ α_max = {:.3}", sp.alpha_max));
                None
            }
            Err(e) => {
                failed.push(format!("{label}: {e}"));
                None
            }
        }
    };
    let zeta = params.zeta;
    let ls = solver(params.t1, ls_delta, SolverVariant::LineSearch { zeta }, Some(zeta), "line search");
    let bo = solver(params.t2, bo_delta, SolverVariant::StronglyConvex, None, "ball optimization");
    let unit = solver(params.t3, loop_delta, SolverVariant::BiasReducedLoop { n_for_log: n, level: None }, None, "prox loop");
    if let Some(v) = ls.filter(|v| v * n_ls > eps / 6.0) {
        failed.push(format!("line search: {n_ls} calls × {v:.3e} > ε/6"));
    }
    if let Some(v) = bo.filter(|v| v * iters > eps / 6.0) {
        failed.push(format!("ball optimization: {iters} calls × {v:.3e} > ε/6"));
    }
    if let Some(v) = unit.filter(|v| v * n_loops > eps / 12.0) {
        failed.push(format!("prox loops: {n_loops} base runs × {v:.3e} > ε/12"));
    }
    if !failed.is_empty() {
        return Err(Error::Infeasible(failed.join("; ")));
    }
    Ok(Prices {
        ls: ls.unwrap_or(0.0),
        bo: bo.unwrap_or(0.0),
        ls_delta,
        bo_delta,
        loop_delta,
        loop_unit: unit.unwrap_or(0.0),
    })
}

/// The driver for an explicit parameter block.
pub fn dp_erm_with_params(
    data: &SampledDataset,
    params: &DpErmParams,
    lambda_reg: f64,
    x_prime: &[f64],
    options: &DpOptions,
    ledger: &mut QueryLedger,
) -> Result<DpOutcome> {
    let consts = options.constants;
    if x_prime.len() != data.dim() {
        return Err(Error::Config("regularization center has the wrong dimension".into()));
    }
    if !(lambda_reg >= 0.0 && lambda_reg.is_finite()) {
        return Err(Error::Config(format!("λ must be finite and nonnegative, got {lambda_reg}")));
    }
    if options.enforce_privacy && (data.len() as f64) < consts.c_priv {
        return Err(Error::Infeasible(format!("n = {} < C_priv = {}", data.len(), consts.c_priv)));
    }
    let mut privacy = PrivacyLedger::new(params.alpha)?;
    let origin = vec![0.0; x_prime.len()];
    let fallback = projected(x_prime, &origin, params.radius);
    let mut outcome = DpOutcome {
        x: fallback,
        params: params.clone(),
        privacy: privacy.clone(),
        dp: None,
        accel: None,
        config: None,
        capped_levels: 0,
        degraded_aggregations: 0,
    };
    if params.trivial {
        // No data is read.
        outcome.dp = Some(privacy.to_dp(params.delta / 3.0)?);
        return Ok(outcome);
    }
    let l_total = params.lipschitz + 2.0 * lambda_reg * params.radius;
    let config = BallAccelConfig::derive(l_total, params.radius, params.r, params.eps_opt, consts.c_ba)?;
    let mlmc = MlmcConfig::new(data.len(), params.t3, consts.c_priv)?;
    let prices = if options.enforce_privacy { Some(price_calls(params, &config, &mlmc, &consts)?) } else { None };
    let budget = MlmcBudget {
        remaining: params.eps_dp / 6.0,
        unit: prices.as_ref().map_or(0.0, |p| p.loop_unit),
        capped: 0,
    };
    let mut suite = DpSuite {
        data,
        params,
        consts,
        lambda_reg,
        x_prime,
        mlmc,
        seed: options.seed,
        calls: 0,
        prices,
        ledger: &mut privacy,
        budget,
        degraded: 0,
    };
    let accel = ballaccel::run_ball_accel(&config, x_prime.len(), &mut suite, ledger, false)?;
    let (capped, degraded) = (suite.budget.capped, suite.degraded);
    let enforced = suite.prices.is_some();
    if enforced {
        let dp = privacy.to_dp(params.delta / 3.0)?;
        if dp.eps_dp > params.eps_dp || dp.delta > params.delta {
            return Err(Error::Contract(format!(
                "privacy ledger converts to ({:.4}, {:.3e}), above ({}, {})",
                dp.eps_dp, dp.delta, params.eps_dp, params.delta
            )));
        }
        outcome.dp = Some(dp);
    }
    outcome.x = accel.x.clone();
    outcome.privacy = privacy;
    outcome.accel = Some(accel);
    outcome.config = Some(config);
    outcome.capped_levels = capped;
    outcome.degraded_aggregations = degraded;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// DP-SCO

#[derive(Debug, Clone)]
pub struct PhaseRecord {
    pub samples: std::ops::Range<usize>,
    pub eps_dp: f64,
    pub delta: f64,
    pub lambda: f64,
    pub trivial: bool,
    pub dp: Option<DpGuarantee>,
}

#[derive(Debug, Clone)]
pub struct DpScoOutcome {
    pub x: Vec<f64>,
    pub phases: Vec<PhaseRecord>,
    /// Basic composition of the phase guarantees.
    pub total: Option<DpGuarantee>,
    pub warnings: Vec<String>,
}

/// Phase layout: chunk `i ∈ [P]` holds `⌊n/2^i⌋` fresh samples, with `P` the
/// number of chunks of size at least `C_priv`, capped at `⌈log₂n⌉`.
pub fn sco_phases(n: usize, c_priv: f64) -> Vec<std::ops::Range<usize>> {
    let cap = (n as f64).log2().ceil() as usize;
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=cap {
        let size = n >> i;
        if (size as f64) < c_priv.max(1.0) {
            break;
        }
        out.push(start..start + size);
        start += size;
    }
    out
}

/// Minimum number of phases before localization is used.
pub const MIN_SCO_PHASES: usize = 4;

/// Iterative localization: phase `i` solves the `λ_i`-regularized ERM around the
/// previous output on its own chunk with budget `(ε/2^i, δ/2^i)`, where
/// `λ_i = 2^i L/(R√n)`. Falls back to a single regularized solve on all
/// samples when fewer than four phases fit.
pub fn dp_sco(
    data: &SampledDataset,
    eps_dp: f64,
    delta: f64,
    options: &DpOptions,
    ledger: &mut QueryLedger,
) -> Result<DpScoOutcome> {
    check_dp_targets(eps_dp, delta)?;
    let n = data.len();
    let d = data.dim();
    let lambda0 = data.lipschitz / (data.radius * (n as f64).sqrt());
    let mut warnings = Vec::new();
    let mut phases = sco_phases(n, options.constants.c_priv);
    let single = phases.len() < MIN_SCO_PHASES;
    if single {
        warnings.push(format!("only {} phases fit; solving one regularized problem on all samples", phases.len()));
        phases = std::iter::once(0..n).collect();
    }
    let mut x = vec![0.0; d];
    let mut records = Vec::with_capacity(phases.len());
    let mut total: Option<(f64, f64)> = Some((0.0, 0.0));
    for (i, range) in phases.into_iter().enumerate() {
        let scale = if single { 1.0 } else { 0.5f64.powi(i as i32 + 1) };
        let lambda = if single { lambda0 } else { lambda0 * 2f64.powi(i as i32 + 1) };
        let (eps_i, delta_i) = (eps_dp * scale, delta * scale);
        let chunk = data.subset(range.clone());
        let opts = DpOptions { seed: rng::derive(options.seed, tags::PHASE, i as u64), ..options.clone() };
        let out = dp_erm_regularized(&chunk, eps_i, delta_i, lambda, &x, &opts, ledger)?;
        x = out.x;
        total = match (total, out.dp) {
            (Some((e, dl)), Some(g)) => Some((e + g.eps_dp, dl + g.delta)),
            _ => None,
        };
        records.push(PhaseRecord {
            samples: range,
            eps_dp: eps_i,
            delta: delta_i,
            lambda,
            trivial: out.params.trivial,
            dp: out.dp,
        });
    }
    Ok(DpScoOutcome {
        x,
        phases: records,
        total: total.map(|(e, dl)| DpGuarantee { eps_dp: e, delta: dl }),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_schedule_for_64() {
        let c = SubsampledRunConfig::new(vec![0.0; 2], 1.0, 1.0, 1.0, 64, 0);
        assert_eq!(c.t_hat(), 64);
        assert_eq!(c.k(), 6);
        let steps: Vec<usize> = c.epochs(1.0).iter().map(|e| e.steps).collect();
        assert_eq!(steps, vec![32, 16, 8, 4, 2, 1]);
    }

    #[test]
    fn t_hat_rounds_down() {
        let c = SubsampledRunConfig::new(vec![0.0], 1.0, 1.0, 1.0, 100, 0);
        assert_eq!(c.t_hat(), 64);
        assert_eq!(SubsampledRunConfig { t: 1, ..c }.k(), 0);
    }

    #[test]
    fn aggregate_trivial_cases() {
        let p = vec![vec![1.0, 2.0]];
        assert_eq!(aggregate(&p, 1.0).point, p[0]);
        let same = vec![vec![0.5, -0.5]; 7];
        let a = aggregate(&same, 1e-9);
        assert_eq!(a.point, same[0]);
        assert!(!a.degraded);
    }

    #[test]
    fn aggregate_degrades_to_median() {
        let p = vec![vec![0.0], vec![10.0], vec![20.0]];
        let a = aggregate(&p, 1.0);
        assert!(a.degraded);
        assert_eq!(a.point, vec![10.0]);
    }

    #[test]
    fn repeat_count_formula() {
        assert_eq!(repeat_count(0.1), (20.0 * 10f64.ln()).ceil() as usize);
    }

    #[test]
    fn mlmc_levels_and_bounds() {
        let m = MlmcConfig::new(60 * 64, 8, 60.0).unwrap();
        assert_eq!((m.t_max, m.j_max), (64, 3));
        assert!(MlmcConfig::new(60 * 64, 33, 60.0).is_err());
    }
}
