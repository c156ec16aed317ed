//! Approximate Rényi differential privacy accounting.
//!
//! A mechanism is `(α, ε, δ)`-RDP when, after moving at most `δ` total variation
//! mass on each side, the α-Rényi divergence between outputs on neighboring
//! datasets is at most `ε`. Events at a common `α` compose by adding `ε` and `δ`.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

pub const DEFAULT_C_PRIV: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RdpEvent {
    pub alpha: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub label: String,
}

impl RdpEvent {
    pub fn new(alpha: f64, epsilon: f64, delta: f64, label: impl Into<String>) -> Result<Self> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!("RDP order must exceed 1, got {alpha}")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::Domain(format!("RDP ε must be finite and nonnegative, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::Domain(format!("δ must lie in [0, 1), got {delta}")));
        }
        Ok(Self { alpha, epsilon, delta, label: label.into() })
    }
}

/// `(ε, δ)`-DP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpGuarantee {
    pub eps_dp: f64,
    pub delta: f64,
}

/// Ordered RDP events sharing one order `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLedger {
    alpha: f64,
    events: Vec<RdpEvent>,
}

impl PrivacyLedger {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!("RDP order must exceed 1, got {alpha}")));
        }
        Ok(Self { alpha, events: Vec::new() })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn events(&self) -> &[RdpEvent] {
        &self.events
    }

    /// Append an event; its order must match the ledger's.
    pub fn compose(&mut self, event: RdpEvent) -> Result<()> {
        if (event.alpha - self.alpha).abs() > 1e-12 * self.alpha {
            return Err(Error::Contract(format!(
                "event order {} differs from ledger order {}",
                event.alpha, self.alpha
            )));
        }
        self.events.push(event);
        Ok(())
    }

    /// Record `(α, ε, δ)` at the ledger's order.
    pub fn record(&mut self, epsilon: f64, delta: f64, label: &str) -> Result<()> {
        let e = RdpEvent::new(self.alpha, epsilon, delta, label)?;
        self.compose(e)
    }

    /// `(Σε, Σδ)`.
    pub fn totals(&self) -> (f64, f64) {
        self.events.iter().fold((0.0, 0.0), |(e, d), ev| (e + ev.epsilon, d + ev.delta))
    }

    pub fn to_dp(&self, delta_prime: f64) -> Result<DpGuarantee> {
        let (eps, delta) = self.totals();
        rdp_to_dp(self.alpha, eps, delta, delta_prime)
    }

    /// One line per event `label alpha epsilon delta`, then totals.
    pub fn report(&self, delta_prime: Option<f64>) -> String {
        let mut s = String::new();
        for e in &self.events {
            let _ = writeln!(s, "{} {} {:e} {:e}", e.label.replace(' ', "_"), e.alpha, e.epsilon, e.delta);
        }
        let (eps, delta) = self.totals();
        let _ = writeln!(s, "total {} {:e} {:e}", self.alpha, eps, delta);
        if let Some(dp) = delta_prime.and_then(|d| self.to_dp(d).ok()) {
            let _ = writeln!(s, "dp {:e} {:e}", dp.eps_dp, dp.delta);
        }
        s
    }
}

impl fmt::Display for PrivacyLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.report(None))
    }
}

/// `α·Δ²/(2σ²)`, the Rényi divergence between Gaussians at distance `Δ`.
pub fn gaussian_mechanism_rdp(alpha: f64, sensitivity: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("noise scale must be positive, got {sigma}")));
    }
    if !(alpha > 1.0) {
        return Err(Error::Domain(format!("RDP order must exceed 1, got {alpha}")));
    }
    Ok(alpha * sensitivity * sensitivity / (2.0 * sigma * sigma))
}

/// `ε_dp = ε + log(1/δ')/(α − 1)` and `δ_dp = δ' + (1 + e^{ε_dp})δ`.
pub fn rdp_to_dp(alpha: f64, epsilon: f64, delta: f64, delta_prime: f64) -> Result<DpGuarantee> {
    if !(alpha > 1.0) {
        return Err(Error::Domain(format!("RDP order must exceed 1, got {alpha}")));
    }
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(Error::Domain(format!("δ' must lie in (0, 1), got {delta_prime}")));
    }
    let eps_dp = epsilon + (1.0 / delta_prime).ln() / (alpha - 1.0);
    Ok(DpGuarantee { eps_dp, delta: delta_prime + (1.0 + eps_dp.exp()) * delta })
}

/// `13 s² α τ` for subsampling with replacement at rate `s`.
pub fn amplify_subsample(alpha: f64, tau: f64, s: f64) -> Result<f64> {
    if !(tau >= 0.0 && tau <= 1.0 / 3.0) {
        return Err(Error::Precondition(format!("τ = {tau} violates τ ≤ 1/3")));
    }
    if !(s > 0.0 && s < 1.0 / 40.0) {
        return Err(Error::Precondition(format!("s = {s} violates 0 < s < 1/40")));
    }
    if !(alpha > 1.0 && alpha * tau < 3.0) {
        return Err(Error::Precondition(format!("α = {alpha} violates 1 < α < 3/τ")));
    }
    Ok(13.0 * s * s * alpha * tau)
}

/// Per-order coefficient `1500 β² b²` of the conditional drift guarantee.
pub fn drift_rdp_coefficient(beta: f64, b: u64) -> f64 {
    1500.0 * beta * beta * (b as f64).powi(2)
}

/// `log log T`, floored at one so the log arguments stay above `1/δ`.
pub fn loglog(t: f64) -> f64 {
    t.max(1.0).ln().max(1.0).ln().max(1.0)
}

/// Which solver the guarantee is for; they differ in the log factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverVariant {
    /// Single convex solve: `log(1/δ)`.
    Convex,
    /// Staged strongly convex solve: `log(log log T / δ)`.
    StronglyConvex,
    /// Replicated solve with failure probability ζ: `log(log(T/ζ)/δ)` and an extra `log(1/ζ)`.
    LineSearch { zeta: f64 },
    /// One bias-reduction loop at level `j` (`None` for the base run only):
    /// `log(log log n / δ)` and a `2^j` factor.
    BiasReducedLoop { n_for_log: usize, level: Option<usize> },
}

/// `(τ, α_max)` with the solver `(α, ατ, δ)`-RDP for every `α ∈ (1, α_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverPrivacy {
    pub tau: f64,
    pub alpha_max: f64,
    pub log_factor: f64,
}

impl SolverPrivacy {
    /// The RDP event at order `alpha`, checked against `α_max`.
    pub fn event(&self, alpha: f64, delta: f64, label: &str) -> Result<RdpEvent> {
        if !(alpha > 1.0 && alpha < self.alpha_max) {
            return Err(Error::Precondition(format!(
                "order α = {alpha} outside (1, {:.4e})",
                self.alpha_max
            )));
        }
        RdpEvent::new(alpha, alpha * self.tau, delta, label)
    }
}

/// Subsampling guarantee of the private solvers.
pub fn solver_rdp_event(
    beta: f64,
    t: usize,
    n: usize,
    delta: f64,
    c_priv: f64,
    variant: SolverVariant,
) -> Result<SolverPrivacy> {
    let mut failed = Vec::new();
    if !(delta > 0.0 && delta < 1.0 / 6.0) {
        failed.push(format!("δ = {delta} ∉ (0, 1/6)"));
    }
    if n == 0 || t as f64 / n as f64 > 1.0 / c_priv {
        failed.push(format!("T/n = {t}/{n} > 1/C_priv = {:.4}", 1.0 / c_priv));
    }
    let tf = t as f64;
    let (log_factor, extra) = match variant {
        SolverVariant::Convex => ((1.0 / delta).ln(), 1.0),
        SolverVariant::StronglyConvex => ((loglog(tf) / delta).ln(), 1.0),
        SolverVariant::LineSearch { zeta } => {
            if !(zeta > 0.0 && zeta < 1.0) {
                failed.push(format!("ζ = {zeta} ∉ (0, 1)"));
            }
            (((tf / zeta).ln().max(1.0) / delta).ln(), (1.0 / zeta).ln())
        }
        SolverVariant::BiasReducedLoop { n_for_log, level } => {
            ((loglog(n_for_log as f64) / delta).ln(), level.map_or(1.0, |j| 2f64.powi(j as i32)))
        }
    };
    let b2l2 = beta * beta * log_factor * log_factor;
    if b2l2 > 1.0 / c_priv {
        failed.push(format!("β² log² = {b2l2:.4e} > 1/C_priv = {:.4}", 1.0 / c_priv));
    }
    if !failed.is_empty() {
        return Err(Error::Precondition(failed.join("; ")));
    }
    let ratio = tf / n as f64;
    let tau = extra * c_priv * (beta * log_factor * ratio).powi(2);
    Ok(SolverPrivacy { tau, alpha_max: 1.0 / (c_priv * b2l2), log_factor })
}

/// Minimum `ρ/r` required by the drift argument: `C_priv log²(log T/δ)`, or
/// `C_priv log²(log(T/ζ)/δ)` for the replicated solver, times `factor`.
pub fn min_radius_ratio(t: usize, delta: f64, c_priv: f64, zeta: Option<f64>, factor: f64) -> f64 {
    let inner = match zeta {
        Some(z) => (t as f64 / z).ln().max(1.0),
        None => (t as f64).max(1.0).ln().max(1.0),
    };
    factor * c_priv * (inner / delta).ln().powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_reference_value() {
        assert_eq!(gaussian_mechanism_rdp(2.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(gaussian_mechanism_rdp(2.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(gaussian_mechanism_rdp(2.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn amplification_bounds_enforced() {
        assert!(amplify_subsample(30.0, 0.1, 0.01).is_err());
        assert!(amplify_subsample(2.0, 0.4, 0.01).is_err());
        assert!(amplify_subsample(2.0, 0.1, 0.025).is_err());
        assert!((amplify_subsample(2.0, 0.1, 0.01).unwrap() - 2.6e-4).abs() < 1e-15);
    }

    #[test]
    fn mismatched_order_rejected() {
        let mut l = PrivacyLedger::new(2.0).unwrap();
        assert!(l.compose(RdpEvent::new(3.0, 0.1, 0.0, "x").unwrap()).is_err());
    }
}
