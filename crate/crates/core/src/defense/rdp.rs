//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! The per-order log-moment computation follows the widely used Opacus
//! implementation: an exact binomial expansion for integer orders and a
//! two-sided series with erfc tails for fractional ones.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// α ∈ {1.25, 1.5, …, 64} plus a few large integer orders, which keep ε
/// near zero when the noise is large.
pub fn default_orders() -> Vec<f64> {
    let mut orders: Vec<f64> = (5..=256).map(|k| k as f64 * 0.25).collect();
    orders.extend([128.0, 256.0, 512.0, 1024.0]);
    orders
}

fn log_add(x: f64, y: f64) -> f64 {
    let (a, b) = if x > y { (x, y) } else { (y, x) };
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (b - a).exp().ln_1p()
}

fn log_sub(x: f64, y: f64) -> f64 {
    if y == f64::NEG_INFINITY {
        return x;
    }
    if y >= x {
        return f64::NEG_INFINITY;
    }
    x + (-(y - x).exp()).ln_1p()
}

/// `ln erfc(x)`, stable for large positive `x`.
fn log_erfc(x: f64) -> f64 {
    if x < 20.0 {
        return erfc(x).ln();
    }
    // asymptotic series
    let x2 = x * x;
    -x2 - x.ln() - 0.5 * std::f64::consts::PI.ln() + (1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2)).ln()
}

fn ln_binomial_int(n: u64, k: u64) -> f64 {
    statrs::function::factorial::ln_binomial(n, k)
}

fn log_a_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let mut log_a = f64::NEG_INFINITY;
    for i in 0..=alpha {
        let fi = i as f64;
        let coef = ln_binomial_int(alpha, i) + fi * q.ln() + (alpha - i) as f64 * (1.0 - q).ln();
        log_a = log_add(log_a, coef + (fi * fi - fi) / (2.0 * sigma * sigma));
    }
    log_a
}

fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let mut log_a0 = f64::NEG_INFINITY;
    let mut log_a1 = f64::NEG_INFINITY;
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut coef = 1.0f64;
    let mut i = 0u64;
    loop {
        let fi = i as f64;
        let j = alpha - fi;
        let log_coef = coef.abs().ln();
        let log_t0 = log_coef + fi * q.ln() + j * (1.0 - q).ln();
        let log_t1 = log_coef + j * q.ln() + fi * (1.0 - q).ln();
        let log_e0 = 0.5f64.ln() + log_erfc((fi - z0) / (sqrt2 * sigma));
        let log_e1 = 0.5f64.ln() + log_erfc((z0 - j) / (sqrt2 * sigma));
        let log_s0 = log_t0 + (fi * fi - fi) / (2.0 * sigma * sigma) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
        if coef > 0.0 {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }
        coef *= (alpha - fi) / (fi + 1.0);
        i += 1;
        if log_s0.max(log_s1) < -30.0 || i > 10_000 {
            break;
        }
    }
    log_add(log_a0, log_a1)
}

/// RDP of one step at order `alpha`.
pub fn rdp_single_step(q: f64, sigma: f64, alpha: f64) -> f64 {
    if q == 0.0 {
        0.0
    } else if sigma == 0.0 {
        f64::INFINITY
    } else if q == 1.0 {
        alpha / (2.0 * sigma * sigma)
    } else if alpha.fract() == 0.0 {
        log_a_int(q, sigma, alpha as u64) / (alpha - 1.0)
    } else {
        log_a_frac(q, sigma, alpha) / (alpha - 1.0)
    }
}

/// Smallest ε over `orders` for composed RDP values `rdp` at `delta`.
pub fn rdp_to_epsilon(orders: &[f64], rdp: &[f64], delta: f64) -> f64 {
    orders
        .iter()
        .zip(rdp)
        .map(|(&a, &r)| r - (delta.ln() + a.ln()) / (a - 1.0) + ((a - 1.0) / a).ln())
        .filter(|e| !e.is_nan())
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

fn check_args(q: f64, delta: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::config(format!("sampling rate must lie in (0, 1], got {q}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Per-step RDP on the default order grid; composes linearly in the step count.
#[derive(Debug, Clone)]
pub struct RdpCurve {
    orders: Vec<f64>,
    per_step: Vec<f64>,
}

impl RdpCurve {
    pub fn new(sigma: f64, q: f64) -> Result<Self> {
        check_args(q, 0.5)?;
        let orders = default_orders();
        let per_step = orders.iter().map(|&a| rdp_single_step(q, sigma, a)).collect();
        Ok(RdpCurve { orders, per_step })
    }

    pub fn epsilon(&self, steps: u64, delta: f64) -> f64 {
        let composed: Vec<f64> = self.per_step.iter().map(|r| r * steps as f64).collect();
        rdp_to_epsilon(&self.orders, &composed, delta)
    }
}

/// (ε, δ) after `steps` subsampled-Gaussian steps at noise multiplier `sigma`
/// and sampling rate `q`. Returns infinity when `sigma` is zero.
pub fn compute_epsilon(sigma: f64, steps: u64, q: f64, delta: f64) -> Result<f64> {
    check_args(q, delta)?;
    if steps == 0 {
        return Err(Error::config("step count must be at least 1"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::config(format!("noise multiplier must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(RdpCurve::new(sigma, q)?.epsilon(steps, delta))
}

/// Noise multiplier whose ε lies within 1% of `target_epsilon`.
pub fn calibrate_sigma(target_epsilon: f64, steps: u64, q: f64, delta: f64) -> Result<f64> {
    if !(target_epsilon > 0.0) || !target_epsilon.is_finite() {
        return Err(Error::config(format!("target epsilon must be positive and finite, got {target_epsilon}")));
    }
    let eps = |s: f64| compute_epsilon(s, steps, q, delta);
    let mut lo = 0.01;
    if eps(lo)? <= target_epsilon {
        return Err(Error::config(format!("target epsilon {target_epsilon} is unattainable: noise multiplier {lo} already gives less")));
    }
    let mut hi = 1.0;
    while eps(hi)? > target_epsilon {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::config(format!("target epsilon {target_epsilon} is unattainable")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let e = eps(mid)?;
        if (e - target_epsilon).abs() <= 0.005 * target_epsilon {
            return Ok(mid);
        }
        if e > target_epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// ln A_α by trapezoidal quadrature over z ~ N(0, σ²), in log space.
    fn quadrature_log_a(q: f64, sigma: f64, alpha: f64) -> f64 {
        let s2 = sigma * sigma;
        let lo = -40.0 * sigma;
        let hi = alpha + 40.0 * sigma;
        let h = 1e-3 * sigma.min(1.0);
        let n = ((hi - lo) / h).ceil() as usize;
        let log_norm = -0.5 * (2.0 * std::f64::consts::PI * s2).ln();
        let mut terms = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let z = lo + k as f64 * h;
            let log_mix = log_add((1.0 - q).ln(), q.ln() + (2.0 * z - 1.0) / (2.0 * s2));
            let w: f64 = if k == 0 || k == n { 0.5 } else { 1.0 };
            terms.push(w.ln() + h.ln() + log_norm - z * z / (2.0 * s2) + alpha * log_mix);
        }
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }

    #[test]
    fn matches_quadrature_per_order() {
        for &(q, sigma) in &[(0.01, 1.0), (0.1, 2.0), (0.05, 0.8)] {
            for &a in &[1.25, 1.5, 2.0, 3.5, 8.0, 16.75, 32.0] {
                let ours = rdp_single_step(q, sigma, a);
                let oracle = quadrature_log_a(q, sigma, a) / (a - 1.0);
                let rel = (ours - oracle).abs() / oracle.abs().max(1e-12);
                assert!(rel < 1e-4, "q={q} σ={sigma} α={a}: {ours} vs {oracle}");
            }
        }
    }

    #[test]
    fn epsilon_matches_quadrature_oracle() {
        let (sigma, q, steps, delta) = (1.0, 0.01, 1000u64, 5e-4);
        let ours = compute_epsilon(sigma, steps, q, delta).unwrap();
        let orders: Vec<f64> = default_orders().into_iter().filter(|&a| a <= 64.0).collect();
        let rdp: Vec<f64> = orders.iter().map(|&a| steps as f64 * quadrature_log_a(q, sigma, a) / (a - 1.0)).collect();
        let oracle = rdp_to_epsilon(&orders, &rdp, delta);
        assert!((ours - oracle).abs() / oracle < 0.15, "{ours} vs {oracle}");
    }

    #[test]
    fn limits_and_monotonicity() {
        assert!(compute_epsilon(1e4, 1, 0.01, 5e-4).unwrap() < 1e-3);
        assert_eq!(compute_epsilon(0.0, 10, 0.01, 5e-4).unwrap(), f64::INFINITY);
        let mut prev = 0.0;
        for steps in [1, 10, 100, 1000, 5000] {
            let e = compute_epsilon(1.1, steps, 0.02, 1e-5).unwrap();
            assert!(e >= prev);
            prev = e;
        }
        let mut prev = f64::INFINITY;
        for sigma in [0.6, 0.8, 1.0, 2.0, 4.0] {
            let e = compute_epsilon(sigma, 500, 0.02, 1e-5).unwrap();
            assert!(e <= prev);
            prev = e;
        }
        assert!(compute_epsilon(1.0, 10, 0.0, 1e-5).is_err());
        assert!(compute_epsilon(1.0, 10, 1.5, 1e-5).is_err());
    }

    #[test]
    fn full_batch_is_plain_gaussian() {
        assert_eq!(rdp_single_step(1.0, 2.0, 3.0), 3.0 / 8.0);
        assert!((rdp_single_step(1.0 - 1e-12, 2.0, 3.0) - 3.0 / 8.0).abs() < 1e-6);
    }

    #[test]
    fn calibration_round_trip() {
        let (steps, q, delta) = (600, 0.05, 5e-4);
        let s2 = calibrate_sigma(2.0, steps, q, delta).unwrap();
        let e2 = compute_epsilon(s2, steps, q, delta).unwrap();
        assert!((1.98..=2.02).contains(&e2), "{e2}");
        let s5 = calibrate_sigma(5.0, steps, q, delta).unwrap();
        assert!(s5 < s2);
        assert!(calibrate_sigma(0.0, steps, q, delta).is_err());
    }
}
