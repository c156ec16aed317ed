//! Gaussian convolution and the reweighted stochastic query (ReSQue) estimator.
//!
//! For a center `x̄` and a draw `ξ ~ N(0, ρ²I)`, the estimate at `x` is
//!
//! ```text
//! ∇̃ f̂_ρ(x) = γ_ρ(x − x̄ − ξ) / γ_ρ(ξ) · g(x̄ + ξ)
//! ```
//!
//! which is unbiased for `∇f̂_ρ(x)`, the gradient of the convolution of `f`
//! with the density `γ_ρ` of `N(0, ρ²I)`. The query point `x̄ + ξ` does not
//! depend on `x`, so all queries can be issued before `x` is known.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq};
use crate::problem_core::{GradientOracle, Objective};
use crate::rng::{self, Stream};

/// Weights beyond this displacement (in units of ρ) are refused.
pub const MAX_DISPLACEMENT_RHOS: f64 = 10.0;

/// `log γ_ρ(u) − log γ_ρ(v) = (‖v‖² − ‖u‖²) / (2ρ²)`.
pub fn log_density_ratio(u: &[f64], v: &[f64], rho: f64) -> Result<f64> {
    if rho <= 0.0 || !rho.is_finite() {
        return Err(Error::Domain(format!("smoothing radius must be positive, got {rho}")));
    }
    Ok((norm_sq(v) - norm_sq(u)) / (2.0 * rho * rho))
}

/// `count` i.i.d. `N(0, ρ²I_d)` vectors from a seeded stream.
pub fn presample_perturbations(rho: f64, d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let flat = presample_flat(rho, d, count, seed);
    flat.chunks(d.max(1)).take(count).map(<[f64]>::to_vec).collect()
}

/// As [`presample_perturbations`], packed row-major.
pub fn presample_flat(rho: f64, d: usize, count: usize, seed: u64) -> Vec<f64> {
    let mut s = rng::stream(seed);
    let mut out = vec![0.0; count * d];
    rng::fill_gaussian(&mut s, rho, &mut out);
    out
}

/// Log-weight for displacement `delta = x − x̄` and draw `xi`, via
/// `‖ξ‖² − ‖δ − ξ‖² = 2⟨δ, ξ⟩ − ‖δ‖²`.
#[inline]
pub fn log_weight(delta: &[f64], delta_sq: f64, xi: &[f64], rho: f64) -> f64 {
    (2.0 * dot(delta, xi) - delta_sq) / (2.0 * rho * rho)
}

/// Center and radius of a ReSQue estimator.
#[derive(Debug, Clone)]
pub struct ResqueSampler {
    pub center: Vec<f64>,
    pub rho: f64,
}

/// One estimate together with the perturbation that produced it.
#[derive(Debug, Clone)]
pub struct ResqueSample {
    pub xi: Vec<f64>,
    pub gradient: Vec<f64>,
}

impl ResqueSampler {
    pub fn new(center: Vec<f64>, rho: f64) -> Result<Self> {
        if rho <= 0.0 || !rho.is_finite() {
            return Err(Error::Domain(format!("smoothing radius must be positive, got {rho}")));
        }
        Ok(Self { center, rho })
    }

    fn displacement(&self, x: &[f64]) -> Result<Vec<f64>> {
        let delta = crate::linalg::sub(x, &self.center);
        let dn = norm_sq(&delta).sqrt();
        if dn > MAX_DISPLACEMENT_RHOS * self.rho {
            return Err(Error::Domain(format!(
                "‖x − x̄‖ = {dn:.3e} exceeds {MAX_DISPLACEMENT_RHOS}ρ; the weight would be unusable"
            )));
        }
        Ok(delta)
    }

    /// `γ_ρ(x − x̄ − ξ) / γ_ρ(ξ)`.
    pub fn weight(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        let delta = self.displacement(x)?;
        Ok(log_weight(&delta, norm_sq(&delta), xi, self.rho).exp())
    }

    /// Draw `ξ`, query `g(x̄ + ξ)` and reweight to `x`.
    pub fn sample(&self, x: &[f64], oracle: &dyn GradientOracle, rng: &mut Stream) -> Result<ResqueSample> {
        let d = self.center.len();
        let xi = rng::gaussian_vec(rng, self.rho, d);
        let q: Vec<f64> = self.center.iter().zip(&xi).map(|(c, e)| c + e).collect();
        let mut g = vec![0.0; d];
        oracle.sample_into(&q, rng, &mut g);
        let gradient = resque_gradient(self, x, &xi, &g)?;
        Ok(ResqueSample { xi, gradient })
    }
}

/// Reweight a gradient observed at `x̄ + ξ` to an estimate at `x`.
pub fn resque_gradient(sampler: &ResqueSampler, x: &[f64], xi: &[f64], g_at_perturbed: &[f64]) -> Result<Vec<f64>> {
    let w = sampler.weight(x, xi)?;
    Ok(g_at_perturbed.iter().map(|g| w * g).collect())
}

/// `E[w^p] = exp((p² − p)‖v‖² / (2ρ²))` for displacement `v`.
pub fn weight_moment_exact(v: &[f64], rho: f64, p: f64) -> f64 {
    ((p * p - p) * norm_sq(v) / (2.0 * rho * rho)).exp()
}

/// `|f̂_ρ − f| ≤ Lρ√d`.
pub fn smoothing_bias_bound(l: f64, rho: f64, d: usize) -> f64 {
    l * rho * (d as f64).sqrt()
}

/// `f̂_ρ` is `L/ρ`-smooth.
pub fn smoothness_constant(l: f64, rho: f64) -> f64 {
    l / rho
}

/// Monte Carlo access to `f̂_ρ(x) = E f(x + ξ)`.
pub struct SmoothedObjective<'a> {
    pub base: &'a dyn Objective,
    pub rho: f64,
}

/// A Monte Carlo mean and its standard error.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl SmoothedObjective<'_> {
    pub fn value_mc(&self, x: &[f64], samples: usize, seed: u64) -> Estimate {
        let mut s = rng::stream(seed);
        let d = x.len();
        let mut xi = vec![0.0; d];
        let mut y = vec![0.0; d];
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            rng::fill_gaussian(&mut s, self.rho, &mut xi);
            for k in 0..d {
                y[k] = x[k] + xi[k];
            }
            let v = self.base.value(&y);
            sum += v;
            sum_sq += v * v;
        }
        mean_se(sum, sum_sq, samples)
    }

    /// `∇f̂_ρ(x) = E ∇f(x + ξ)`, coordinate-wise estimates.
    pub fn gradient_mc(&self, x: &[f64], samples: usize, seed: u64) -> Vec<Estimate> {
        let mut s = rng::stream(seed);
        let d = x.len();
        let mut xi = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut sum = vec![0.0; d];
        let mut sum_sq = vec![0.0; d];
        for _ in 0..samples {
            rng::fill_gaussian(&mut s, self.rho, &mut xi);
            for k in 0..d {
                y[k] = x[k] + xi[k];
            }
            self.base.subgradient_into(&y, &mut g);
            for k in 0..d {
                sum[k] += g[k];
                sum_sq[k] += g[k] * g[k];
            }
        }
        (0..d).map(|k| mean_se(sum[k], sum_sq[k], samples)).collect()
    }
}

pub(crate) fn mean_se(sum: f64, sum_sq: f64, n: usize) -> Estimate {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq / nf - mean * mean) * nf / (nf - 1.0).max(1.0)).max(0.0);
    Estimate { mean, se: (var / nf).sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_edge_values() {
        assert_eq!(log_density_ratio(&[0.3, -1.0], &[0.3, -1.0], 0.7).unwrap(), 0.0);
        let v = [0.6, 0.8];
        assert!((log_density_ratio(&[0.0, 0.0], &v, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(log_density_ratio(&v, &v, 0.0).is_err());
    }

    #[test]
    fn weight_is_one_at_center() {
        let s = ResqueSampler::new(vec![1.0, 2.0], 0.5).unwrap();
        assert!((s.weight(&[1.0, 2.0], &[0.3, -0.2]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn far_displacement_is_refused() {
        let s = ResqueSampler::new(vec![0.0], 0.1).unwrap();
        assert!(s.weight(&[1.01], &[0.0]).is_err());
    }

    #[test]
    fn arithmetic_helpers() {
        assert!((smoothing_bias_bound(1.0, 0.1, 4) - 0.2).abs() < 1e-15);
        assert_eq!(smoothness_constant(1.0, 0.5), 2.0);
        assert_eq!(weight_moment_exact(&[0.0; 3], 0.3, 4.0), 1.0);
    }
}
