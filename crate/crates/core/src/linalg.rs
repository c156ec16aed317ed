//! Dense vector helpers over `&[f64]`.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += s * x`
#[inline]
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// Euclidean projection of `x` onto the ball of radius `r` around `center`, in place.
#[inline]
pub fn project_ball(x: &mut [f64], center: &[f64], r: f64) {
    let d2 = dist_sq(x, center);
    if d2 > r * r {
        let s = r / d2.sqrt();
        for (xi, ci) in x.iter_mut().zip(center) {
            *xi = ci + s * (*xi - ci);
        }
    }
}

pub fn projected(x: &[f64], center: &[f64], r: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    project_ball(&mut y, center, r);
    y
}

/// Coordinate-wise mean of equally sized points.
pub fn mean_point(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points.first().map_or(0, |p| p.len());
    let mut m = vec![0.0; d];
    for p in points {
        axpy(&mut m, 1.0, p);
    }
    let k = points.len().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= k);
    m
}

pub fn is_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}
