//! Black–Scholes call prices, used as a closed-form oracle and for implied volatility.

use statrs::function::erf::erfc;

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// European call under constant volatility `sigma`.
pub fn black_scholes_call(spot: f64, strike: f64, tau: f64, rate: f64, sigma: f64) -> f64 {
    let df = (-rate * tau).exp();
    if tau <= 0.0 || sigma <= 0.0 {
        return (spot - strike * df).max(0.0);
    }
    let sd = sigma * tau.sqrt();
    let d1 = ((spot / strike).ln() + rate * tau) / sd + 0.5 * sd;
    let d2 = d1 - sd;
    spot * norm_cdf(d1) - strike * df * norm_cdf(d2)
}

pub fn black_scholes_vega(spot: f64, strike: f64, tau: f64, rate: f64, sigma: f64) -> f64 {
    if tau <= 0.0 || sigma <= 0.0 {
        return 0.0;
    }
    let sd = sigma * tau.sqrt();
    let d1 = ((spot / strike).ln() + rate * tau) / sd + 0.5 * sd;
    spot * norm_pdf(d1) * tau.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_the_money_closed_form() {
        // r = 0, K = S: C = S(2Φ(σ√T/2) − 1)
        let c = black_scholes_call(1.0, 1.0, 1.0, 0.0, 0.4);
        assert!((c - (2.0 * norm_cdf(0.2) - 1.0)).abs() < 1e-15);
        assert!((c - 0.158_519_418_878_6).abs() < 1e-12);
    }

    #[test]
    fn put_call_parity_bounds() {
        let c = black_scholes_call(100.0, 90.0, 0.5, 0.03, 0.25);
        assert!(c > 100.0 - 90.0 * (-0.015f64).exp());
        assert!(c < 100.0);
    }

    #[test]
    fn vega_matches_finite_difference() {
        let (s, k, t, r, v) = (1.0, 1.2, 0.7, 0.01, 0.3);
        let h = 1e-6;
        let fd = (black_scholes_call(s, k, t, r, v + h) - black_scholes_call(s, k, t, r, v - h)) / (2.0 * h);
        assert!((fd - black_scholes_vega(s, k, t, r, v)).abs() < 1e-8);
    }
}
