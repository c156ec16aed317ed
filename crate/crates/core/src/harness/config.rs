//! Experiment configuration: a flat `key = value` file plus overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ballaccel::BallAccelOptions;
use crate::dp_solvers::DpConstants;
use crate::error::{Error, Result};
use crate::parallel_solvers::BallMethod;
use crate::problem_core::ObjectiveKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Parallel,
    DpErm,
    DpSco,
    Verify,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Self::Parallel),
            "dp_erm" => Ok(Self::DpErm),
            "dp_sco" => Ok(Self::DpSco),
            "verify" => Ok(Self::Verify),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Parallel => "parallel",
            Self::DpErm => "dp_erm",
            Self::DpSco => "dp_sco",
            Self::Verify => "verify",
        })
    }
}

/// Named verification batteries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Moments,
    Drift,
    Aggregation,
    Accountant,
    Mlmc,
    BallOracles,
}

impl Suite {
    pub const ALL: [Suite; 6] =
        [Suite::Moments, Suite::Drift, Suite::Aggregation, Suite::Accountant, Suite::Mlmc, Suite::BallOracles];
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moments" => Ok(Self::Moments),
            "drift" => Ok(Self::Drift),
            "aggregation" => Ok(Self::Aggregation),
            "accountant" => Ok(Self::Accountant),
            "mlmc" => Ok(Self::Mlmc),
            "ball_oracles" => Ok(Self::BallOracles),
            other => Err(Error::Config(format!("unknown suite `{other}`"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Moments => "moments",
            Self::Drift => "drift",
            Self::Aggregation => "aggregation",
            Self::Accountant => "accountant",
            Self::Mlmc => "mlmc",
            Self::BallOracles => "ball_oracles",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub problem: ObjectiveKind,
    pub n: usize,
    pub d: usize,
    /// Parallel mode targets `ε_opt = LR/κ` for each entry.
    pub kappas: Vec<f64>,
    pub eps_dp: f64,
    pub delta: f64,
    pub method: BallMethod,
    pub seeds: Vec<u64>,
    pub constants: DpConstants,
    pub c_agg: f64,
    /// `None` runs every suite.
    pub suite: Option<Suite>,
    /// Held-out samples for population risk in `dp_sco` mode.
    pub holdout: usize,
    pub out: Option<PathBuf>,
    /// Fill the `seconds` column; off by default so reruns are byte-identical.
    pub record_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Parallel,
            problem: ObjectiveKind::DistanceToPoint,
            n: 512,
            d: 4,
            kappas: vec![4.0, 8.0, 16.0, 32.0],
            eps_dp: 1.0,
            delta: 1e-5,
            method: BallMethod::AcSa,
            seeds: (0..20).collect(),
            constants: DpConstants::default(),
            c_agg: BallAccelOptions::default().c_agg,
            suite: None,
            holdout: 4096,
            out: None,
            record_time: false,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|s| parse_num(key, s.trim())).collect()
}

/// `a..b` (half open) or a comma list.
fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = value.split_once("..") {
        let (a, b): (u64, u64) = (parse_num("seeds", a.trim())?, parse_num("seeds", b.trim())?);
        return Ok((a..b).collect());
    }
    parse_list("seeds", value)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad value `{value}` for `{key}`"))),
    }
}

/// `key = value` pairs, skipping blank lines and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.parse()?,
            "problem" => self.problem = value.parse()?,
            "n" => self.n = parse_num(key, value)?,
            "d" => self.d = parse_num(key, value)?,
            "kappa" => self.kappas = parse_list(key, value)?,
            "eps_dp" => self.eps_dp = parse_num(key, value)?,
            "delta" => self.delta = parse_num(key, value)?,
            "method" => self.method = value.parse()?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "seed" => self.seeds = vec![parse_num(key, value)?],
            "c" => self.constants.c = parse_num(key, value)?,
            "c_priv" => self.constants.c_priv = parse_num(key, value)?,
            "c_cvx" => self.constants.c_cvx = parse_num(key, value)?,
            "c_sc" => self.constants.c_sc = parse_num(key, value)?,
            "c_ls" => self.constants.c_ls = parse_num(key, value)?,
            "c_ba" => self.constants.c_ba = parse_num(key, value)?,
            "c_agg" => self.c_agg = parse_num(key, value)?,
            "suite" => self.suite = if value == "all" { None } else { Some(value.parse()?) },
            "holdout" => self.holdout = parse_num(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "record_time" => self.record_time = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Apply one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse_pairs(text)? {
            c.set(&k, &v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != Mode::Verify && self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        match self.mode {
            Mode::Parallel => {
                if self.kappas.is_empty() || self.kappas.iter().any(|k| !(*k > 0.0)) {
                    return Err(Error::Config("parallel mode needs positive kappa values".into()));
                }
            }
            Mode::DpErm | Mode::DpSco => {
                if self.problem != ObjectiveKind::AbsRegression {
                    return Err(Error::Config("private modes need a sample-based problem (abs_regression)".into()));
                }
                if self.n == 0 {
                    return Err(Error::Config("n must be positive".into()));
                }
                if !(self.eps_dp > 0.0 && self.delta > 0.0 && self.delta < 1.0) {
                    return Err(Error::Config("private modes need ε_dp > 0 and δ ∈ (0, 1)".into()));
                }
                if self.mode == Mode::DpSco && self.holdout == 0 {
                    return Err(Error::Config("dp_sco needs a positive holdout size".into()));
                }
            }
            Mode::Verify => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_and_overrides() {
        let mut c = ExperimentConfig::from_text(
            "mode = dp_erm\nproblem = abs_regression # comment\n\nseeds = 3..6\nkappa = 4, 8\nc_ba = 3\n",
        )
        .unwrap();
        assert_eq!(c.mode, Mode::DpErm);
        assert_eq!(c.seeds, vec![3, 4, 5]);
        assert_eq!(c.kappas, vec![4.0, 8.0]);
        assert_eq!(c.constants.c_ba, 3.0);
        c.apply_override("seeds=1,9").unwrap();
        assert_eq!(c.seeds, vec![1, 9]);
        assert!(c.apply_override("bogus=1").is_err());
        assert!(c.apply_override("n").is_err());
    }

    #[test]
    fn mode_requirements_checked() {
        assert!(ExperimentConfig::from_text("mode = dp_sco\nproblem = max_linear").is_err());
        assert!(ExperimentConfig::from_text("seeds = 2..2").is_err());
        assert!(ExperimentConfig::from_text("mode = verify\nsuite = drift").is_ok());
    }
}
