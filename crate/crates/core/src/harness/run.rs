//! Seeded experiment runs, CSV rows and the text summary.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::dp_solvers::{self, erm_gradient_cap, DpOptions};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Mode};
use crate::harness::verify::{verify_suite, Check};
use crate::harness::config::Suite;
use crate::par;
use crate::parallel_solvers::{solve_parallel, ParallelOptions};
use crate::problem_core::{
    make_synthetic_objective_n, ExactOracle, GradientOracle, Objective, QueryLedger, SampledDataset,
    SubsampledOracle,
};
use crate::rng::{self, tags};
use crate::testing::lad_minimizer;

/// Fixed CSV header.
pub const CSV_COLUMNS: [&str; 9] =
    ["seed", "error", "depth", "total", "comp_depth", "comp_work", "eps_total", "delta_total", "seconds"];

/// One seed's outcome. `group` indexes [`RunReport::groups`].
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub group: usize,
    pub seed: u64,
    pub error: f64,
    pub depth: u64,
    pub total: u64,
    pub comp_depth: u64,
    pub comp_work: u64,
    pub eps_total: f64,
    pub delta_total: f64,
    pub seconds: f64,
}

/// Means over the rows of one grid point, with 95% normal half-widths.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub label: String,
    /// `κ` in parallel mode.
    pub kappa: Option<f64>,
    /// Target error in parallel mode.
    pub eps_opt: Option<f64>,
    pub count: usize,
    pub mean_error: f64,
    pub ci_error: f64,
    pub mean_depth: f64,
    pub mean_total: f64,
    pub mean_comp_depth: f64,
    pub mean_comp_work: f64,
    pub max_eps: f64,
    pub max_delta: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub mode: Mode,
    pub rows: Vec<Row>,
    pub groups: Vec<GroupSummary>,
    /// Least-squares slope of `log(mean depth)` against `log κ`.
    pub slope: Option<f64>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

fn mean_ci(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (m, 0.0);
    }
    let var = xs.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, 1.96 * (var / n as f64).sqrt())
}

fn summarize(label: String, kappa: Option<f64>, eps_opt: Option<f64>, rows: &[&Row]) -> GroupSummary {
    let it = |f: fn(&Row) -> f64| rows.iter().map(move |r| f(r));
    let (mean_error, ci_error) = mean_ci(it(|r| r.error));
    let mean = |f: fn(&Row) -> f64| mean_ci(it(f)).0;
    GroupSummary {
        label,
        kappa,
        eps_opt,
        count: rows.len(),
        mean_error,
        ci_error,
        mean_depth: mean(|r| r.depth as f64),
        mean_total: mean(|r| r.total as f64),
        mean_comp_depth: mean(|r| r.comp_depth as f64),
        mean_comp_work: mean(|r| r.comp_work as f64),
        max_eps: it(|r| r.eps_total).fold(0.0, f64::max),
        max_delta: it(|r| r.delta_total).fold(0.0, f64::max),
    }
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Rows in the fixed schema; floats use Rust's shortest round-trip form.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(CSV_COLUMNS).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.seed.to_string(),
                r.error.to_string(),
                r.depth.to_string(),
                r.total.to_string(),
                r.comp_depth.to_string(),
                r.comp_work.to_string(),
                r.eps_total.to_string(),
                r.delta_total.to_string(),
                r.seconds.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode {}", self.mode);
        for g in &self.groups {
            let _ = write!(
                s,
                "{} seeds={} error={:.6e}±{:.2e} depth={:.1} total={:.1} comp_depth={:.1} comp_work={:.1}",
                g.label, g.count, g.mean_error, g.ci_error, g.mean_depth, g.mean_total, g.mean_comp_depth, g.mean_comp_work
            );
            if let Some(e) = g.eps_opt {
                let _ = write!(s, " eps_opt={e:.6e}");
            }
            if g.max_eps > 0.0 {
                let _ = write!(s, " max_eps={:.6} max_delta={:.3e}", g.max_eps, g.max_delta);
            }
            s.push('\n');
        }
        if let Some(m) = self.slope {
            let _ = writeln!(s, "depth_slope {m:.4}");
        }
        for n in &self.notes {
            let _ = writeln!(s, "note {n}");
        }
        for c in &self.checks {
            let _ = writeln!(s, "{c}");
        }
        s
    }

    /// Write the CSV to `path` and the summary next to it with a `.txt` extension.
    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(path, self.to_csv()?).map_err(io)?;
        std::fs::write(path.with_extension("txt"), self.summary()).map_err(io)
    }
}

fn ledger_row(group: usize, seed: u64, error: f64, ledger: &QueryLedger, privacy: (f64, f64), seconds: f64) -> Row {
    let rep = ledger.report();
    Row {
        group,
        seed,
        error,
        depth: rep.query_depth,
        total: rep.total_queries,
        comp_depth: rep.comp_depth,
        comp_work: rep.comp_work,
        eps_total: privacy.0,
        delta_total: privacy.1,
        seconds,
    }
}

fn timed<T>(record: bool, f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, if record { start.elapsed().as_secs_f64() } else { 0.0 })
}

fn dataset(cfg: &ExperimentConfig, seed: u64) -> Result<SampledDataset> {
    let fixture = make_synthetic_objective_n(cfg.problem, cfg.d, cfg.n, seed)?;
    let ds = fixture.dataset.ok_or_else(|| Error::Config(format!("{} has no samples", cfg.problem)))?;
    Ok((*ds).clone())
}

fn run_parallel(cfg: &ExperimentConfig) -> Result<RunReport> {
    let seeds = &cfg.seeds;
    let jobs: Vec<(usize, u64)> =
        (0..cfg.kappas.len()).flat_map(|g| seeds.iter().map(move |&s| (g, s))).collect();
    let opts = ParallelOptions { c_ba: cfg.constants.c_ba, c_agg: cfg.c_agg };
    let results = par::map_range(jobs.len(), |j| -> Result<Row> {
        let (g, seed) = jobs[j];
        let fixture = make_synthetic_objective_n(cfg.problem, cfg.d, cfg.n, seed)?;
        let f = fixture.objective.as_ref();
        let (l, big_r) = (f.lipschitz(), f.domain_radius());
        let eps_opt = l * big_r / cfg.kappas[g];
        let (f_star, oracle): (f64, Box<dyn GradientOracle + '_>) = match &fixture.dataset {
            Some(ds) => (ds.value(&lad_minimizer(ds, big_r)), Box::new(SubsampledOracle(ds))),
            None => {
                let x_star = f.optimum().ok_or_else(|| Error::Config("fixture has no known minimizer".into()))?;
                (f.value(x_star), Box::new(ExactOracle(f)))
            }
        };
        let mut ledger = QueryLedger::new();
        let solve_seed = rng::derive(seed, tags::SEED, g as u64);
        let (out, secs) = timed(cfg.record_time, || {
            solve_parallel(oracle.as_ref(), big_r, eps_opt, cfg.method, &mut ledger, solve_seed, &opts)
        });
        let out = out?;
        Ok(ledger_row(g, seed, f.value(&out.x) - f_star, &ledger, (0.0, 0.0), secs))
    });
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut groups = Vec::new();
    let mut checks = Vec::new();
    for (g, &kappa) in cfg.kappas.iter().enumerate() {
        let members: Vec<&Row> = rows.iter().filter(|r| r.group == g).collect();
        // L = R = 1 on every synthetic fixture.
        let eps_opt = 1.0 / kappa;
        let s = summarize(format!("kappa={kappa}"), Some(kappa), Some(eps_opt), &members);
        checks.push(Check::new(
            format!("mean error ≤ ε_opt at κ = {kappa}"),
            s.mean_error <= eps_opt,
            format!("{:.4e} vs {eps_opt:.4e}", s.mean_error),
        ));
        groups.push(s);
    }
    let slope = log_log_slope(&groups.iter().map(|g| (g.kappa.unwrap_or(0.0), g.mean_depth)).collect::<Vec<_>>());
    let notes = vec![format!("problem={} d={} method={} c_ba={} c_agg={}", cfg.problem, cfg.d, cfg.method, opts.c_ba, opts.c_agg)];
    Ok(RunReport { mode: Mode::Parallel, rows, groups, slope, checks, notes })
}

fn dp_options(cfg: &ExperimentConfig, seed: u64) -> DpOptions {
    DpOptions { constants: cfg.constants, enforce_privacy: true, seed: rng::derive(seed, tags::SEED, 0) }
}

fn privacy_checks(cfg: &ExperimentConfig, rows: &[Row]) -> Check {
    let worst = rows.iter().fold((0.0f64, 0.0f64), |(e, d), r| (e.max(r.eps_total), d.max(r.delta_total)));
    Check::new(
        "privacy within budget on every seed".into(),
        worst.0 <= cfg.eps_dp && worst.1 <= cfg.delta,
        format!("max ε' = {:.4}, max δ' = {:.3e}", worst.0, worst.1),
    )
}

fn run_dp_erm(cfg: &ExperimentConfig) -> Result<RunReport> {
    let results = par::map_range(cfg.seeds.len(), |i| -> Result<(Row, bool)> {
        let seed = cfg.seeds[i];
        let data = dataset(cfg, seed)?;
        let f_star = data.value(&lad_minimizer(&data, data.radius));
        let mut ledger = QueryLedger::new();
        let (out, secs) =
            timed(cfg.record_time, || dp_solvers::dp_erm(&data, cfg.eps_dp, cfg.delta, &dp_options(cfg, seed), &mut ledger));
        let out = out?;
        let dp = out.dp.map_or((f64::INFINITY, 1.0), |g| (g.eps_dp, g.delta));
        Ok((ledger_row(0, seed, data.value(&out.x) - f_star, &ledger, dp, secs), out.params.trivial))
    });
    let pairs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let trivial = pairs.iter().filter(|p| p.1).count();
    let rows: Vec<Row> = pairs.into_iter().map(|p| p.0).collect();
    let members: Vec<&Row> = rows.iter().collect();
    let groups = vec![summarize(format!("n={}", cfg.n), None, None, &members)];
    let cap = erm_gradient_cap(cfg.n, cfg.d, cfg.eps_dp, cfg.delta, cfg.constants.c);
    let max_total = rows.iter().map(|r| r.total).max().unwrap_or(0);
    let checks = vec![
        privacy_checks(cfg, &rows),
        Check::new("gradient total within cap".into(), max_total as f64 <= cap, format!("max {max_total} vs cap {cap:.4e}")),
    ];
    let mut notes = vec![format!("problem={} n={} d={} eps_dp={} delta={:e}", cfg.problem, cfg.n, cfg.d, cfg.eps_dp, cfg.delta)];
    if trivial > 0 {
        notes.push(format!("{trivial} of {} seeds hit the trivial regime ε_opt ≥ LR", rows.len()));
    }
    Ok(RunReport { mode: Mode::DpErm, rows, groups, slope: None, checks, notes })
}

fn run_dp_sco(cfg: &ExperimentConfig) -> Result<RunReport> {
    let results = par::map_range(cfg.seeds.len(), |i| -> Result<(Row, Vec<String>)> {
        let seed = cfg.seeds[i];
        let data = dataset(cfg, seed)?;
        let holdout = data.population_sample(cfg.holdout, rng::derive(seed, tags::DATA, 2));
        let base = holdout.value(&data.x_gen);
        let mut ledger = QueryLedger::new();
        let (out, secs) =
            timed(cfg.record_time, || dp_solvers::dp_sco(&data, cfg.eps_dp, cfg.delta, &dp_options(cfg, seed), &mut ledger));
        let out = out?;
        let dp = out.total.map_or((f64::INFINITY, 1.0), |g| (g.eps_dp, g.delta));
        Ok((ledger_row(0, seed, holdout.value(&out.x) - base, &ledger, dp, secs), out.warnings))
    });
    let pairs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut notes = vec![format!(
        "problem={} n={} d={} eps_dp={} delta={:e} holdout={}; error is held-out risk minus risk at the generating point",
        cfg.problem, cfg.n, cfg.d, cfg.eps_dp, cfg.delta, cfg.holdout
    )];
    if let Some(w) = pairs.iter().flat_map(|p| p.1.iter()).next() {
        notes.push(w.clone());
    }
    let rows: Vec<Row> = pairs.into_iter().map(|p| p.0).collect();
    let members: Vec<&Row> = rows.iter().collect();
    let groups = vec![summarize(format!("n={}", cfg.n), None, None, &members)];
    let checks = vec![privacy_checks(cfg, &rows)];
    Ok(RunReport { mode: Mode::DpSco, rows, groups, slope: None, checks, notes })
}

fn run_verify(cfg: &ExperimentConfig) -> Result<RunReport> {
    let suites: Vec<Suite> = cfg.suite.map_or_else(|| Suite::ALL.to_vec(), |s| vec![s]);
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let mut checks = Vec::new();
    for s in suites {
        checks.extend(verify_suite(s, seed)?);
    }
    Ok(RunReport { mode: Mode::Verify, rows: Vec::new(), groups: Vec::new(), slope: None, checks, notes: Vec::new() })
}

/// Run the configured experiment. Seeds run concurrently; each keeps its own
/// query and privacy ledgers, and rows come back in grid-then-seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    match cfg.mode {
        Mode::Parallel => run_parallel(cfg),
        Mode::DpErm => run_dp_erm(cfg),
        Mode::DpSco => run_dp_sco(cfg),
        Mode::Verify => run_verify(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(0.7))).collect();
        assert!((log_log_slope(&pts).unwrap() - 0.7).abs() < 1e-12);
        assert!(log_log_slope(&pts[..1]).is_none());
    }

    #[test]
    fn csv_header_is_fixed() {
        let r = RunReport { mode: Mode::Parallel, rows: vec![], groups: vec![], slope: None, checks: vec![], notes: vec![] };
        assert_eq!(r.to_csv().unwrap().trim_end(), CSV_COLUMNS.join(","));
    }
}
