//! Numerical helpers shared by the integration tests.

#![allow(dead_code)]

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Composite Gauss-Legendre nodes over `[a, b]`.
pub fn nodes(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let rule = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    (0..panels)
        .flat_map(|p| {
            let mid = a + (p as f64 + 0.5) * h;
            rule.iter().map(move |&(x, w)| (mid + 0.5 * h * x, 0.5 * h * w)).collect::<Vec<_>>()
        })
        .collect()
}

pub fn integrate(g: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    nodes(a, b, panels, 12).into_iter().map(|(x, w)| w * g(x)).sum()
}

/// Tensor-product quadrature of `g` over `[a, b]²`.
pub fn integrate_2d(g: impl Fn(f64, f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = nodes(a, b, panels, 16);
    let mut total = 0.0;
    for &(x, wx) in &n {
        for &(y, wy) in &n {
            total += wx * wy * g(x, y);
        }
    }
    total
}

/// The double integral defining the region acceptance, squared.
pub fn acceptance_by_quadrature(kappa: f64, sigma: f64) -> f64 {
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * kappa * sigma);
    let inner = integrate_2d(
        |ks, kas| norm * (-(ks + kas).powi(2) / (2.0 * sigma * sigma)).exp(),
        -0.5 * kappa,
        0.5 * kappa,
        48,
    );
    inner * inner
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}
