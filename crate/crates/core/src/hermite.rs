//! Bounded Hermite-function features that turn distribution changes in a
//! univariate series (e.g. variance shifts) into mean changes of a
//! multivariate series.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Configuration of the Hermite embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteConfig {
    /// Number of Hermite functions ψ₀ … ψ_{order−1}.
    pub order: usize,
    /// Scale applied to the input, ψ_i(x / σ).
    pub sigma: f64,
    /// Center and scale the series to unit variance before embedding.
    pub standardize: bool,
}

impl HermiteConfig {
    /// Standardizing configuration with unit scale.
    pub fn new(order: usize) -> Result<Self> {
        HermiteConfig {
            order,
            sigma: 1.0,
            standardize: true,
        }
        .validated()
    }

    pub fn with_sigma(order: usize, sigma: f64) -> Result<Self> {
        HermiteConfig {
            order,
            sigma,
            standardize: false,
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        if self.order == 0 {
            return Err(Error::invalid("hermite order must be at least 1"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("hermite sigma must be positive"));
        }
        Ok(self)
    }
}

/// Orthonormal Hermite function ψ_i evaluated at `x / sigma`.
///
/// ψ_i(u) = h_i(u) e^{−u²/2} / (2^i i! √π)^{1/2} with h_i the physicists'
/// Hermite polynomials. The normalized three-term recurrence
/// ψ_{i+1} = √(2/(i+1)) u ψ_i − √(i/(i+1)) ψ_{i−1} keeps every value bounded,
/// so large inputs and high orders cannot overflow the way raw moments do.
pub fn hermite_function(i: usize, x: f64, sigma: f64) -> f64 {
    let u = x / sigma;
    let mut prev = std::f64::consts::PI.powf(-0.25) * (-0.5 * u * u).exp();
    if i == 0 {
        return prev;
    }
    let mut cur = std::f64::consts::SQRT_2 * u * prev;
    for j in 1..i {
        let jf = j as f64;
        let next = (2.0 / (jf + 1.0)).sqrt() * u * cur - (jf / (jf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Embeds a univariate series as the T×order matrix of Hermite features,
/// optionally standardizing the series first.
pub fn embed_series(x: &[f64], cfg: &HermiteConfig) -> Result<DMatrix<f64>> {
    cfg.validated()?;
    if x.is_empty() {
        return Err(Error::invalid("cannot embed an empty series"));
    }
    let series: Vec<f64> = if cfg.standardize {
        let t = x.len() as f64;
        let mean = x.iter().sum::<f64>() / t;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
        let scale = if var > 1e-300 { var.sqrt() } else { 1.0 };
        x.iter().map(|v| (v - mean) / scale).collect()
    } else {
        x.to_vec()
    };
    Ok(DMatrix::from_fn(x.len(), cfg.order, |t, j| {
        hermite_function(j, series[t], cfg.sigma)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_values() {
        let quarter_pi = std::f64::consts::PI.powf(-0.25);
        assert!((hermite_function(0, 0.0, 1.0) - quarter_pi).abs() < 1e-12);
        assert!((quarter_pi - 0.751_125_54).abs() < 1e-7);
        assert!(hermite_function(1, 0.0, 1.0).abs() < 1e-15);
        // sigma rescales the argument
        assert!(
            (hermite_function(0, 3.0, 3.0) - hermite_function(0, 1.0, 1.0)).abs() < 1e-15
        );
    }

    // explicit physicists' Hermite polynomials up to degree 5
    fn hermite_poly(i: usize, u: f64) -> f64 {
        match i {
            0 => 1.0,
            1 => 2.0 * u,
            2 => 4.0 * u * u - 2.0,
            3 => 8.0 * u.powi(3) - 12.0 * u,
            4 => 16.0 * u.powi(4) - 48.0 * u * u + 12.0,
            5 => 32.0 * u.powi(5) - 160.0 * u.powi(3) + 120.0 * u,
            _ => unreachable!(),
        }
    }

    fn factorial(i: usize) -> f64 {
        (1..=i).map(|v| v as f64).product()
    }

    #[test]
    fn recurrence_matches_direct_formula() {
        for i in 0..=5 {
            let norm = (2f64.powi(i as i32) * factorial(i) * std::f64::consts::PI.sqrt()).sqrt();
            let mut u = -4.0;
            while u <= 4.0 {
                let direct = hermite_poly(i, u) * (-0.5 * u * u).exp() / norm;
                let rec = hermite_function(i, u, 1.0);
                assert!(
                    (direct - rec).abs() < 1e-8,
                    "order {i} at {u}: {direct} vs {rec}"
                );
                u += 0.125;
            }
        }
    }

    #[test]
    fn orthonormal_under_simpson_quadrature() {
        // composite Simpson on [-10, 10]
        let n = 2000usize;
        let (a, b) = (-10.0, 10.0);
        let h = (b - a) / n as f64;
        for i in 0..=6usize {
            for j in i..=6usize {
                let f = |u: f64| hermite_function(i, u, 1.0) * hermite_function(j, u, 1.0);
                let mut s = f(a) + f(b);
                for k in 1..n {
                    let u = a + k as f64 * h;
                    s += f(u) * if k % 2 == 1 { 4.0 } else { 2.0 };
                }
                let integral = s * h / 3.0;
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (integral - expected).abs() < 1e-6,
                    "({i},{j}) integral {integral}"
                );
            }
        }
    }

    #[test]
    fn bounded_for_extreme_inputs() {
        for i in 0..=10usize {
            for &x in &[-1e6, -1e3, -7.5, 0.0, 1.0, 31.7, 1e3, 1e6] {
                let v = hermite_function(i, x, 1.0);
                assert!(v.is_finite() && v.abs() <= 1.1, "psi_{i}({x}) = {v}");
            }
        }
    }

    #[test]
    fn embed_series_basics() {
        let cfg = HermiteConfig::new(3).unwrap();
        let constant = vec![4.2; 10];
        let e = embed_series(&constant, &cfg).unwrap();
        for j in 0..3 {
            let col = e.column(j);
            assert!(col.iter().all(|&v| (v - col[0]).abs() < 1e-15));
        }

        let one = HermiteConfig::with_sigma(1, 2.0).unwrap();
        let e = embed_series(&[0.0, 1.0, 2.0], &one).unwrap();
        assert_eq!(e.ncols(), 1);
        assert!((e[(0, 0)] - hermite_function(0, 0.0, 2.0)).abs() < 1e-15);

        assert!(HermiteConfig::new(0).is_err());
        assert!(HermiteConfig::with_sigma(2, 0.0).is_err());
        assert!(embed_series(&[], &cfg).is_err());
    }

    #[test]
    fn variance_change_becomes_mean_change() {
        // E[psi_0(X)] = pi^{-1/4} / sqrt(1 + s^2) for X ~ N(0, s^2):
        // strictly decreasing in s, so the column means must separate.
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 4000;
        let mut series = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let v: f64 = StandardNormal.sample(&mut rng);
            series.push(v);
        }
        for _ in 0..n {
            let v: f64 = StandardNormal.sample(&mut rng);
            series.push(3.0 * v);
        }
        let cfg = HermiteConfig::with_sigma(1, 1.0).unwrap();
        let e = embed_series(&series, &cfg).unwrap();
        let mean_lo = e.column(0).rows(0, n).sum() / n as f64;
        let mean_hi = e.column(0).rows(n, n).sum() / n as f64;
        let expect = |s: f64| std::f64::consts::PI.powf(-0.25) / (1.0 + s * s).sqrt();
        assert!((mean_lo - expect(1.0)).abs() < 0.02);
        assert!((mean_hi - expect(3.0)).abs() < 0.02);
        assert!(mean_lo > mean_hi + 0.2);
    }
}
