//! Objectives, datasets, gradient oracles and the batch-structured query ledger.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dist, dot, is_finite, norm};
use crate::par;
use crate::rng::{self, tags, Stream};

/// A convex, `L`-Lipschitz function over `R^d` whose minimizer lies in `B(R)`.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn lipschitz(&self) -> f64;
    fn domain_radius(&self) -> f64;
    fn value(&self, x: &[f64]) -> f64;
    fn subgradient_into(&self, x: &[f64], out: &mut [f64]);
    fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.subgradient_into(x, &mut g);
        g
    }
    /// Known minimizer, when the fixture has one.
    fn optimum(&self) -> Option<&[f64]> {
        None
    }
}

/// `f(x) = L‖x − c‖`. The subgradient at `c` is zero.
#[derive(Debug, Clone)]
pub struct DistanceToPoint {
    pub center: Vec<f64>,
    pub lipschitz: f64,
    pub radius: f64,
}

impl Objective for DistanceToPoint {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    fn domain_radius(&self) -> f64 {
        self.radius
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.lipschitz * dist(x, &self.center)
    }
    fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
        let n = dist(x, &self.center);
        if n == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let s = self.lipschitz / n;
        for ((o, xi), ci) in out.iter_mut().zip(x).zip(&self.center) {
            *o = s * (xi - ci);
        }
    }
    fn optimum(&self) -> Option<&[f64]> {
        Some(&self.center)
    }
}

/// `f(x) = max_i ⟨a_i, x⟩ + b_i` with unit-norm rows, so `L = 1`.
#[derive(Debug, Clone)]
pub struct MaxLinear {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub radius: f64,
    pub minimizer: Option<Vec<f64>>,
}

impl MaxLinear {
    fn argmax(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, (ai, bi)) in self.a.iter().zip(&self.b).enumerate() {
            let v = dot(ai, x) + bi;
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        best
    }
}

impl Objective for MaxLinear {
    fn dim(&self) -> usize {
        self.a[0].len()
    }
    fn lipschitz(&self) -> f64 {
        self.a.iter().map(|r| norm(r)).fold(0.0, f64::max)
    }
    fn domain_radius(&self) -> f64 {
        self.radius
    }
    fn value(&self, x: &[f64]) -> f64 {
        let i = self.argmax(x);
        dot(&self.a[i], x) + self.b[i]
    }
    fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.a[self.argmax(x)]);
    }
    fn optimum(&self) -> Option<&[f64]> {
        self.minimizer.as_deref()
    }
}

/// `f(x) = μ/2 ‖x − c‖²`, Lipschitz with constant `lipschitz` on the region the
/// caller restricts itself to. Its Gaussian convolution differs from `f` by a
/// constant, which makes ball-constrained optima available in closed form.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub mu: f64,
    pub center: Vec<f64>,
    pub lipschitz: f64,
    pub radius: f64,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    fn domain_radius(&self) -> f64 {
        self.radius
    }
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.mu * crate::linalg::dist_sq(x, &self.center)
    }
    fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, xi), ci) in out.iter_mut().zip(x).zip(&self.center) {
            *o = self.mu * (xi - ci);
        }
    }
    fn optimum(&self) -> Option<&[f64]> {
        Some(&self.center)
    }
}

/// Least-absolute-deviation data: `f^i(x) = |⟨a_i, x⟩ − b_i|` with `‖a_i‖ ≤ 1`.
///
/// Features are uniform in the unit ball and `b = ⟨a, x_gen⟩ + N(0, noise_sd²)`.
/// The noise is symmetric, so `x_gen` minimizes the population risk.
#[derive(Debug, Clone)]
pub struct SampledDataset {
    d: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
    pub x_gen: Vec<f64>,
    pub noise_sd: f64,
    pub lipschitz: f64,
    pub radius: f64,
    seed: u64,
}

impl SampledDataset {
    pub fn from_parts(features: Vec<Vec<f64>>, targets: Vec<f64>, x_gen: Vec<f64>) -> Result<Self> {
        if features.len() != targets.len() || features.is_empty() {
            return Err(Error::Config("features and targets must be nonempty and aligned".into()));
        }
        let d = features[0].len();
        let lipschitz = features.iter().map(|a| norm(a)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        Ok(Self {
            d,
            features: features.concat(),
            targets,
            x_gen,
            noise_sd: 0.0,
            lipschitz,
            radius: 1.0,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn sample_value(&self, i: usize, x: &[f64]) -> f64 {
        (dot(self.feature(i), x) - self.targets[i]).abs()
    }

    pub fn sample_subgradient_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let a = self.feature(i);
        let r = dot(a, x) - self.targets[i];
        let s = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        for (o, ai) in out.iter_mut().zip(a) {
            *o = s * ai;
        }
    }

    /// Rows `range` as a new dataset sharing the generator parameters.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            d: self.d,
            features: self.features[range.start * self.d..range.end * self.d].to_vec(),
            targets: self.targets[range.clone()].to_vec(),
            x_gen: self.x_gen.clone(),
            noise_sd: self.noise_sd,
            lipschitz: self.lipschitz,
            radius: self.radius,
            seed: self.seed,
        }
    }

    /// Fresh draws from the generating distribution, independent of the stored rows.
    pub fn population_sample(&self, m: usize, seed: u64) -> Self {
        let mut s = generate_abs_regression(self.d, m, &self.x_gen, self.noise_sd, seed);
        s.seed = seed;
        s
    }
}

impl Objective for SampledDataset {
    fn dim(&self) -> usize {
        self.d
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    fn domain_radius(&self) -> f64 {
        self.radius
    }
    fn value(&self, x: &[f64]) -> f64 {
        (0..self.len()).map(|i| self.sample_value(i, x)).sum::<f64>() / self.len() as f64
    }
    fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut g = vec![0.0; self.d];
        for i in 0..self.len() {
            self.sample_subgradient_into(i, x, &mut g);
            crate::linalg::axpy(out, 1.0, &g);
        }
        let n = self.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
    }
    fn optimum(&self) -> Option<&[f64]> {
        Some(&self.x_gen)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    DistanceToPoint,
    MaxLinear,
    AbsRegression,
}

impl FromStr for ObjectiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distance_to_point" => Ok(Self::DistanceToPoint),
            "max_linear" => Ok(Self::MaxLinear),
            "abs_regression" => Ok(Self::AbsRegression),
            other => Err(Error::Config(format!("unknown objective kind `{other}`"))),
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DistanceToPoint => "distance_to_point",
            Self::MaxLinear => "max_linear",
            Self::AbsRegression => "abs_regression",
        })
    }
}

/// A synthetic problem; `dataset` is set for `abs_regression`.
#[derive(Clone)]
pub struct Synthetic {
    pub objective: Arc<dyn Objective>,
    pub dataset: Option<Arc<SampledDataset>>,
}

pub const DEFAULT_SAMPLES: usize = 128;
pub const ABS_REGRESSION_NOISE: f64 = 0.1;

pub fn make_synthetic_objective(kind: ObjectiveKind, d: usize, seed: u64) -> Result<Synthetic> {
    make_synthetic_objective_n(kind, d, DEFAULT_SAMPLES, seed)
}

/// Synthetic fixtures with `L = 1`, `R = 1` and a known minimizer.
pub fn make_synthetic_objective_n(kind: ObjectiveKind, d: usize, n: usize, seed: u64) -> Result<Synthetic> {
    if d == 0 {
        return Err(Error::Config("dimension must be positive".into()));
    }
    let mut rng = rng::substream(seed, tags::DATA, 0);
    let x_star = random_interior_point(&mut rng, d, 0.3, 0.8);
    match kind {
        ObjectiveKind::DistanceToPoint => Ok(Synthetic {
            objective: Arc::new(DistanceToPoint { center: x_star, lipschitz: 1.0, radius: 1.0 }),
            dataset: None,
        }),
        ObjectiveKind::MaxLinear => {
            // ± pairs of random unit directions: f(x) = max_i |⟨a_i, x − x*⟩|.
            let m = d + 1;
            let mut a = Vec::with_capacity(2 * m);
            let mut b = Vec::with_capacity(2 * m);
            for _ in 0..m {
                let u = random_unit(&mut rng, d);
                let off = dot(&u, &x_star);
                a.push(u.iter().map(|v| -v).collect());
                b.push(off);
                b.push(-off);
                a.push(u);
            }
            Ok(Synthetic {
                objective: Arc::new(MaxLinear { a, b, radius: 1.0, minimizer: Some(x_star) }),
                dataset: None,
            })
        }
        ObjectiveKind::AbsRegression => {
            if n == 0 {
                return Err(Error::Config("abs_regression needs n ≥ 1".into()));
            }
            let ds = Arc::new(generate_abs_regression(d, n, &x_star, ABS_REGRESSION_NOISE, seed));
            Ok(Synthetic { objective: ds.clone(), dataset: Some(ds) })
        }
    }
}

fn generate_abs_regression(d: usize, n: usize, x_gen: &[f64], noise_sd: f64, seed: u64) -> SampledDataset {
    let mut rng = rng::substream(seed, tags::DATA, 1);
    let mut features = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let a = random_interior_point(&mut rng, d, 0.0, 1.0);
        let e = rng::gaussian_vec(&mut rng, noise_sd, 1)[0];
        targets.push(dot(&a, x_gen) + e);
        features.extend_from_slice(&a);
    }
    SampledDataset {
        d,
        features,
        targets,
        x_gen: x_gen.to_vec(),
        noise_sd,
        lipschitz: 1.0,
        radius: 1.0,
        seed,
    }
}

fn random_unit(rng: &mut Stream, d: usize) -> Vec<f64> {
    loop {
        let g = rng::gaussian_vec(rng, 1.0, d);
        let n = norm(&g);
        if n > 1e-12 {
            return g.iter().map(|v| v / n).collect();
        }
    }
}

/// Uniform direction with norm in `[lo, hi]`; `lo = 0, hi = 1` is uniform in the ball.
fn random_interior_point(rng: &mut Stream, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    let u = random_unit(rng, d);
    let t: f64 = rng.random();
    let radius = if lo == 0.0 { hi * t.powf(1.0 / d as f64) } else { lo + (hi - lo) * t };
    u.iter().map(|v| v * radius).collect()
}

/// A stochastic gradient oracle: `E g(x) ∈ ∂f(x)` and `E‖g(x)‖² ≤ L²`.
pub trait GradientOracle: Send + Sync {
    fn dim(&self) -> usize;
    fn second_moment_bound(&self) -> f64;
    fn sample_into(&self, x: &[f64], rng: &mut Stream, out: &mut [f64]);
    /// Deterministic oracles ignore the stream, so callers may skip seeding it.
    fn is_deterministic(&self) -> bool {
        false
    }
}

/// The exact subgradient of an objective, viewed as a noiseless oracle.
pub struct ExactOracle<'a>(pub &'a dyn Objective);

impl GradientOracle for ExactOracle<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn second_moment_bound(&self) -> f64 {
        self.0.lipschitz().powi(2)
    }
    fn sample_into(&self, x: &[f64], _rng: &mut Stream, out: &mut [f64]) {
        self.0.subgradient_into(x, out);
    }
    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Per-sample subgradient at a uniformly drawn index: unbiased for the empirical risk.
pub struct SubsampledOracle<'a>(pub &'a SampledDataset);

impl GradientOracle for SubsampledOracle<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn second_moment_bound(&self) -> f64 {
        self.0.lipschitz.powi(2)
    }
    fn sample_into(&self, x: &[f64], rng: &mut Stream, out: &mut [f64]) {
        let i = rng.random_range(0..self.0.len());
        self.0.sample_subgradient_into(i, x, out);
    }
}

/// Run-length encoded batch record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRun {
    pub size: u64,
    pub count: u64,
    pub tag: String,
}

/// Sequential rounds of oracle queries plus computational depth and work, the
/// latter two in units of scalar operations (a d-vector operation costs d).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryLedger {
    runs: Vec<BatchRun>,
    depth: u64,
    total: u64,
    comp_depth: u64,
    comp_work: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LedgerReport {
    pub query_depth: u64,
    pub total_queries: u64,
    pub comp_depth: u64,
    pub comp_work: u64,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append one round of `size` queries. Empty rounds are not recorded.
    pub fn record_batch(&mut self, size: u64, tag: &str) {
        if size == 0 {
            return;
        }
        self.push_run(size, 1, tag);
    }

    fn push_run(&mut self, size: u64, count: u64, tag: &str) {
        match self.runs.last_mut() {
            Some(last) if last.size == size && last.tag == tag => last.count += count,
            _ => self.runs.push(BatchRun { size, count, tag: tag.to_string() }),
        }
        self.depth += count;
        self.total += size * count;
    }

    pub fn add_compute(&mut self, depth: u64, work: u64) {
        self.comp_depth += depth;
        self.comp_work += work;
    }

    pub fn report(&self) -> LedgerReport {
        LedgerReport {
            query_depth: self.depth,
            total_queries: self.total,
            comp_depth: self.comp_depth,
            comp_work: self.comp_work,
        }
    }

    pub fn query_depth(&self) -> u64 {
        self.depth
    }

    pub fn total_queries(&self) -> u64 {
        self.total
    }

    pub fn runs(&self) -> &[BatchRun] {
        &self.runs
    }

    /// Batch sizes in order, expanded from the run-length encoding.
    pub fn batch_sizes(&self) -> Vec<u64> {
        self.runs.iter().flat_map(|r| std::iter::repeat_n(r.size, r.count as usize)).collect()
    }

    /// Append another ledger's rounds after this one's.
    pub fn extend_sequential(&mut self, other: &QueryLedger) {
        for r in &other.runs {
            self.push_run(r.size, r.count, &r.tag);
        }
        self.add_compute(other.comp_depth, other.comp_work);
    }

    /// Append ledgers of computations that ran side by side: their i-th rounds
    /// are one combined round, depths take the maximum and work adds up.
    pub fn merge_parallel(&mut self, subs: &[QueryLedger]) {
        let expanded: Vec<Vec<(u64, &str)>> = subs
            .iter()
            .map(|s| {
                s.runs
                    .iter()
                    .flat_map(|r| std::iter::repeat_n((r.size, r.tag.as_str()), r.count as usize))
                    .collect()
            })
            .collect();
        let rounds = expanded.iter().map(Vec::len).max().unwrap_or(0);
        for i in 0..rounds {
            let mut size = 0;
            let mut tag = "";
            for e in &expanded {
                if let Some(&(s, t)) = e.get(i) {
                    size += s;
                    if tag.is_empty() {
                        tag = t;
                    }
                }
            }
            let tag = tag.to_string();
            self.record_batch(size, &tag);
        }
        let depth = subs.iter().map(|s| s.comp_depth).max().unwrap_or(0);
        let work = subs.iter().map(|s| s.comp_work).sum();
        self.add_compute(depth, work);
    }
}

impl fmt::Display for LedgerReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "depth={} total={} comp_depth={} comp_work={}",
            self.query_depth, self.total_queries, self.comp_depth, self.comp_work
        )
    }
}

pub fn ledger_report(ledger: &QueryLedger) -> LedgerReport {
    ledger.report()
}

/// Rows sharing one random substream in [`oracle_query_flat`].
pub const QUERY_BLOCK_ROWS: usize = 256;

/// Evaluate `oracle` at `n = points.len() / d` points as one round. Rows are
/// grouped in fixed blocks and block `b` draws from the substream `(seed, b)`,
/// so results do not depend on scheduling. Returns the gradients packed row-major.
pub fn oracle_query_flat(
    oracle: &dyn GradientOracle,
    points: &[f64],
    d: usize,
    ledger: &mut QueryLedger,
    tag: &str,
    seed: u64,
) -> Result<Vec<f64>> {
    if d == 0 || points.len() % d != 0 {
        return Err(Error::Contract("point buffer is not a multiple of the dimension".into()));
    }
    if !is_finite(points) {
        return Err(Error::Domain("oracle queried at a non-finite point".into()));
    }
    let n = points.len() / d;
    let mut out = vec![0.0; points.len()];
    if n == 0 {
        return Ok(out);
    }
    let det = oracle.is_deterministic();
    let width = d * QUERY_BLOCK_ROWS;
    par::for_each_chunk(&mut out, width, 1, |b, block| {
        let mut s = if det { rng::stream(0) } else { rng::substream(seed, tags::ORACLE, b as u64) };
        let base = b * width;
        for (k, g) in block.chunks_mut(d).enumerate() {
            let at = base + k * d;
            oracle.sample_into(&points[at..at + d], &mut s, g);
        }
    });
    ledger.record_batch(n as u64, tag);
    Ok(out)
}

pub fn oracle_query(
    oracle: &dyn GradientOracle,
    points: &[Vec<f64>],
    ledger: &mut QueryLedger,
    tag: &str,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let d = oracle.dim();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Contract("query point has the wrong dimension".into()));
    }
    let flat = oracle_query_flat(oracle, &points.concat(), d, ledger, tag, seed)?;
    Ok(flat.chunks(d).map(<[f64]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_additivity() {
        let mut l = QueryLedger::new();
        l.record_batch(3, "a");
        l.record_batch(4, "a");
        assert_eq!(l.report().query_depth, 2);
        assert_eq!(l.report().total_queries, 7);
        assert_eq!(l.batch_sizes(), vec![3, 4]);
    }

    #[test]
    fn run_length_encoding_merges_equal_batches() {
        let mut l = QueryLedger::new();
        for _ in 0..5 {
            l.record_batch(10, "x");
        }
        assert_eq!(l.runs().len(), 1);
        assert_eq!(l.query_depth(), 5);
    }

    #[test]
    fn parallel_merge_combines_rounds() {
        let mut a = QueryLedger::new();
        a.record_batch(2, "t");
        a.record_batch(5, "t");
        a.add_compute(10, 20);
        let mut b = QueryLedger::new();
        b.record_batch(3, "t");
        b.add_compute(7, 30);
        let mut m = QueryLedger::new();
        m.merge_parallel(&[a, b]);
        assert_eq!(m.batch_sizes(), vec![5, 5]);
        assert_eq!(m.report(), LedgerReport { query_depth: 2, total_queries: 10, comp_depth: 10, comp_work: 50 });
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert!(matches!("nope".parse::<ObjectiveKind>(), Err(Error::Config(_))));
    }
}
