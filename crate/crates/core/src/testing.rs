//! Reference values computed independently of the estimators: closed-form
//! Gaussian convolutions, Gauss–Hermite quadrature and deterministic
//! high-accuracy solvers for the fixtures.

use std::f64::consts::{PI, SQRT_2};

use crate::linalg::{dist, dot, norm, project_ball, projected};
use crate::problem_core::{Quadratic, SampledDataset};

/// `Φ(x)`, the standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for `∫ e^{−x²} f(x) dx`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        // Asymptotic starting guesses for the largest roots, refined by Newton.
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}

/// `E f(μ + σZ)` for `Z ~ N(0, 1)` by Gauss–Hermite quadrature.
pub fn gaussian_expectation(f: impl Fn(f64) -> f64, mu: f64, sigma: f64, nodes: usize) -> f64 {
    let (x, w) = gauss_hermite(nodes);
    x.iter().zip(&w).map(|(xi, wi)| wi * f(mu + SQRT_2 * sigma * xi)).sum::<f64>() / PI.sqrt()
}

/// `E|m + σZ|`, the folded normal mean.
pub fn folded_normal_mean(m: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return m.abs();
    }
    let t = m / sigma;
    sigma * (2.0 / PI).sqrt() * (-0.5 * t * t).exp() + m * (1.0 - 2.0 * normal_cdf(-t))
}

/// Gradient of `x ↦ E|⟨a, x + ξ⟩ − b|` with `ξ ~ N(0, ρ²I)`:
/// `a·(2Φ(m/(ρ‖a‖)) − 1)` where `m = ⟨a, x⟩ − b`.
pub fn smoothed_abs_linear_gradient(a: &[f64], b: f64, x: &[f64], rho: f64) -> Vec<f64> {
    let s = norm(a);
    if s == 0.0 {
        return vec![0.0; a.len()];
    }
    let m = dot(a, x) - b;
    let c = 2.0 * normal_cdf(m / (rho * s)) - 1.0;
    a.iter().map(|v| c * v).collect()
}

/// `∇f̂_ρ` of the empirical absolute-deviation risk.
pub fn smoothed_dataset_gradient(data: &SampledDataset, x: &[f64], rho: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for i in 0..data.len() {
        let gi = smoothed_abs_linear_gradient(data.feature(i), data.target(i), x, rho);
        g.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
    }
    let n = data.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// `f̂_ρ` of the empirical absolute-deviation risk.
pub fn smoothed_dataset_value(data: &SampledDataset, x: &[f64], rho: f64) -> f64 {
    (0..data.len())
        .map(|i| {
            let a = data.feature(i);
            folded_normal_mean(dot(a, x) - data.target(i), rho * norm(a))
        })
        .sum::<f64>()
        / data.len() as f64
}

/// `Γ((d+1)/2) / Γ(d/2)` by the two-step recurrence.
pub fn half_gamma_ratio(d: usize) -> f64 {
    assert!(d >= 1);
    let (mut r, mut k) = if d % 2 == 1 { (1.0 / PI.sqrt(), 1) } else { (PI.sqrt() / 2.0, 2) };
    while k < d {
        r *= (k as f64 + 1.0) / k as f64;
        k += 2;
    }
    r
}

/// Kummer's `₁F₁(1/2; b; −z)` for `z ≥ 0`.
fn kummer_half_neg(b: f64, z: f64) -> f64 {
    let a = 0.5;
    if z > 400.0 {
        // ₁F₁(a; b; −z) ≈ Γ(b)/Γ(b−a) z^{−a} Σ_k (a)_k (a−b+1)_k / k! z^{−k}.
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 0..8 {
            let kf = k as f64;
            term *= (a + kf) * (a - b + 1.0 + kf) / (kf + 1.0) / z;
            sum += term;
        }
        // Γ(b)/Γ(b − 1/2) with b = d/2 + 1 equals half_gamma_ratio(d + 1).
        let d = (2.0 * (b - 1.0)).round() as usize;
        return half_gamma_ratio(d + 1) * z.powf(-a) * sum;
    }
    // Kummer transform: e^{−z} ₁F₁(b − a; b; z), all terms positive.
    let ap = b - a;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0.0;
    while term > 1e-17 * sum || k < z {
        term *= (ap + k) / (b + k) * z / (k + 1.0);
        sum += term;
        k += 1.0;
    }
    (-z).exp() * sum
}

/// `∇f̂_ρ(x)` for `f(x) = L‖x − c‖` in `R^d`:
/// `L·m·√2·Γ((d+1)/2)/(Γ(d/2)·d·ρ)·₁F₁(1/2; d/2+1; −‖m‖²/(2ρ²))` with `m = x − c`.
pub fn smoothed_distance_gradient(center: &[f64], l: f64, x: &[f64], rho: f64) -> Vec<f64> {
    let d = x.len();
    let m: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
    let z = dot(&m, &m) / (2.0 * rho * rho);
    let c = l * SQRT_2 * half_gamma_ratio(d) / (d as f64 * rho) * kummer_half_neg(d as f64 / 2.0 + 1.0, z);
    m.iter().map(|v| c * v).collect()
}

/// `E w^p` by quadrature in one dimension, with `w = γ_ρ(v − ξ)/γ_ρ(ξ)`.
pub fn weight_moment_quadrature(v: f64, rho: f64, p: f64) -> f64 {
    gaussian_expectation(|xi| (p * (2.0 * v * xi - v * v) / (2.0 * rho * rho)).exp(), 0.0, rho, 64)
}

/// Minimizer of `μ/2‖x − c‖² + λ/2‖x − x̄‖²` over `B_x̄(r)`.
pub fn quadratic_ball_optimum(q: &Quadratic, center: &[f64], r: f64, lambda: f64) -> Vec<f64> {
    let s = q.mu + lambda;
    let target: Vec<f64> = q.center.iter().zip(center).map(|(c, x)| (q.mu * c + lambda * x) / s).collect();
    projected(&target, center, r)
}

/// Solve the `d × d` system `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Least-absolute-deviation fit over `B(R)` by iteratively reweighted least
/// squares, polished with projected subgradient steps when the fit leaves the ball.
pub fn lad_minimizer(data: &SampledDataset, big_r: f64) -> Vec<f64> {
    let n = data.len();
    let d = data.feature(0).len();
    let mut x = vec![0.0; d];
    for _ in 0..200 {
        let mut a = vec![vec![0.0; d]; d];
        let mut b = vec![0.0; d];
        for i in 0..n {
            let f = data.feature(i);
            let res = dot(f, &x) - data.target(i);
            let w = 1.0 / res.abs().max(1e-9);
            for j in 0..d {
                b[j] += w * f[j] * data.target(i);
                for k in 0..d {
                    a[j][k] += w * f[j] * f[k];
                }
            }
        }
        for (j, row) in a.iter_mut().enumerate() {
            row[j] += 1e-12;
        }
        match solve_dense(a, b) {
            Some(next) => {
                let step = dist(&next, &x);
                x = next;
                if step < 1e-13 {
                    break;
                }
            }
            None => break,
        }
    }
    if norm(&x) > big_r {
        project_ball(&mut x, &vec![0.0; d], big_r);
        x = projected_subgradient(|y| erm_subgradient(data, y), &x, big_r, data.lipschitz, 200_000);
    }
    x
}

fn erm_subgradient(data: &SampledDataset, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut g = vec![0.0; d];
    let mut gi = vec![0.0; d];
    for i in 0..data.len() {
        data.sample_subgradient_into(i, x, &mut gi);
        g.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
    }
    let n = data.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

fn projected_subgradient(grad: impl Fn(&[f64]) -> Vec<f64>, x0: &[f64], big_r: f64, l: f64, iters: usize) -> Vec<f64> {
    let origin = vec![0.0; x0.len()];
    let mut x = x0.to_vec();
    let mut avg = vec![0.0; x.len()];
    let mut wsum = 0.0;
    for t in 1..=iters {
        let g = grad(&x);
        let eta = big_r / (l * (t as f64).sqrt());
        x.iter_mut().zip(&g).for_each(|(a, b)| *a -= eta * b);
        project_ball(&mut x, &origin, big_r);
        avg.iter_mut().zip(&x).for_each(|(a, b)| *a += eta * b);
        wsum += eta;
    }
    avg.iter_mut().for_each(|v| *v /= wsum);
    avg
}

/// Minimizer of `f̂_ρ^erm + λ/2‖· − c‖²` over `B_x̄(r)` by accelerated projected
/// gradient on the closed-form smoothed gradient.
pub fn smoothed_erm_ball_optimum(
    data: &SampledDataset,
    rho: f64,
    center: &[f64],
    r: f64,
    lambda: f64,
    reg_center: &[f64],
    iters: usize,
) -> Vec<f64> {
    // `E|m + sρZ|` has second derivative at most √(2/π)/(sρ) in m, so the
    // smoothed risk is `L√(2/π)/ρ`-smooth.
    let smooth = data.lipschitz * (2.0 / PI).sqrt() / rho + lambda;
    let step = 1.0 / smooth;
    let grad = |y: &[f64]| {
        let mut g = smoothed_dataset_gradient(data, y, rho);
        g.iter_mut().zip(y.iter().zip(reg_center)).for_each(|(gi, (yi, ci))| *gi += lambda * (yi - ci));
        g
    };
    let q = lambda / smooth;
    let momentum = (1.0 - q.sqrt()) / (1.0 + q.sqrt());
    let mut x = projected(reg_center, center, r);
    let mut prev = x.clone();
    for _ in 0..iters {
        let y: Vec<f64> = x.iter().zip(&prev).map(|(a, b)| a + momentum * (a - b)).collect();
        let g = grad(&y);
        let mut next: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        project_ball(&mut next, center, r);
        prev = std::mem::replace(&mut x, next);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_integrates_polynomials() {
        // E Z² = 1, E Z⁴ = 3.
        assert!((gaussian_expectation(|z| z * z, 0.0, 1.0, 64) - 1.0).abs() < 1e-12);
        assert!((gaussian_expectation(|z| z.powi(4), 0.0, 1.0, 64) - 3.0).abs() < 1e-11);
    }

    #[test]
    fn distance_gradient_matches_one_dimensional_erf() {
        for &m in &[0.05, 0.3, 1.0, 4.0] {
            let g = smoothed_distance_gradient(&[0.0], 1.0, &[m], 0.5)[0];
            assert!((g - (2.0 * normal_cdf(m / 0.5) - 1.0)).abs() < 1e-12, "m = {m}");
        }
    }

    #[test]
    fn distance_gradient_far_field_is_unit() {
        // E cos θ ≈ 1 − (d − 1)ρ²/(2m²) far from the kink.
        let g = smoothed_distance_gradient(&[0.0; 3], 2.0, &[50.0, 0.0, 0.0], 1.0);
        assert!((g[0] - 2.0 * (1.0 - 1.0 / 2500.0)).abs() < 1e-6, "{g:?}");
        // Both branches of the Kummer evaluation agree near the switch.
        let below = smoothed_distance_gradient(&[0.0; 3], 1.0, &[28.28, 0.0, 0.0], 1.0)[0];
        let above = smoothed_distance_gradient(&[0.0; 3], 1.0, &[28.29, 0.0, 0.0], 1.0)[0];
        assert!((below - above).abs() < 2e-6, "{below} {above}");
    }

    #[test]
    fn gamma_ratio_values() {
        assert!((half_gamma_ratio(1) - 1.0 / PI.sqrt()).abs() < 1e-15);
        assert!((half_gamma_ratio(2) - PI.sqrt() / 2.0).abs() < 1e-15);
        assert!((half_gamma_ratio(3) - 2.0 / PI.sqrt()).abs() < 1e-15);
    }
}
