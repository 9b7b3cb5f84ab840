//! Weak-turbulence lognormal fading.
//!
//! The fading coefficient is h = exp(2X) with X ~ N(mu, var) and
//! mu = -var, which makes E[h] = 1.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scintillation index above which weak-turbulence models stop applying.
pub const STRONG_TURBULENCE_INDEX: f64 = 1.0;

pub fn scintillation_index(log_amplitude_variance: f64) -> f64 {
    (4.0 * log_amplitude_variance).exp_m1()
}

pub fn is_strong_turbulence(log_amplitude_variance: f64) -> bool {
    scintillation_index(log_amplitude_variance) > STRONG_TURBULENCE_INDEX
}

/// Per-link lognormal fading, row-major over (transmitter, receiver).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingModel {
    pub variances: Vec<f64>,
}

impl FadingModel {
    pub fn new(variances: Vec<f64>) -> Result<Self> {
        if variances.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("log-amplitude variance must be non-negative".into()));
        }
        Ok(Self { variances })
    }

    pub fn mean(&self, link: usize) -> f64 {
        -self.variances[link]
    }

    pub fn scintillation(&self, link: usize) -> f64 {
        scintillation_index(self.variances[link])
    }

    /// One independent draw per link.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.variances.iter().map(|&v| sample_one(v, rng)).collect()
    }
}

pub fn sample_one<R: Rng + ?Sized>(log_amplitude_variance: f64, rng: &mut R) -> f64 {
    if log_amplitude_variance == 0.0 {
        return 1.0;
    }
    let x = Normal::new(-log_amplitude_variance, log_amplitude_variance.sqrt())
        .expect("finite variance")
        .sample(rng);
    (2.0 * x).exp()
}

pub fn sample_fading<R: Rng + ?Sized>(log_amplitude_variance: f64, rng: &mut R, count: usize) -> Vec<f64> {
    (0..count).map(|_| sample_one(log_amplitude_variance, rng)).collect()
}

/// Density of h for a normalized lognormal with the given variance.
pub fn lognormal_pdf(h: f64, log_amplitude_variance: f64) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    let v = log_amplitude_variance;
    let d = h.ln() + 2.0 * v;
    (-(d * d) / (8.0 * v)).exp() / (2.0 * h * (2.0 * PI * v).sqrt())
}

/// Single lognormal exp(2z), z ~ N(mu, var), standing in for a weighted
/// sum of lognormals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalentLognormal {
    pub mu: f64,
    pub var: f64,
}

impl EquivalentLognormal {
    pub fn mean(&self) -> f64 {
        (2.0 * self.mu + 2.0 * self.var).exp()
    }
}

/// Moment-matched lognormal for sum_ij G_ij h_ij with independent
/// normalized lognormal h_ij.
pub fn lognormal_sum_approx(weights: &[f64], variances: &[f64]) -> Result<EquivalentLognormal> {
    if weights.len() != variances.len() {
        return Err(Error::Domain("weights and variances differ in length".into()));
    }
    if weights.iter().any(|&g| g < 0.0) {
        return Err(Error::Domain("weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain("all weights are zero".into()));
    }
    let spread: f64 = weights
        .iter()
        .zip(variances)
        .map(|(g, v)| g * g * scintillation_index(*v))
        .sum();
    let var = 0.25 * (spread / (total * total)).ln_1p();
    Ok(EquivalentLognormal {
        mu: 0.5 * total.ln() - var,
        var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::integrate_adaptive;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scintillation_examples() {
        assert_eq!(scintillation_index(0.0), 0.0);
        assert_relative_eq!(scintillation_index(0.16), 0.896_480_879_304_951_5, max_relative = 1e-14);
        assert_relative_eq!(scintillation_index(0.25), std::f64::consts::E - 1.0, max_relative = 1e-14);
        assert!(is_strong_turbulence(0.25));
        assert!(!is_strong_turbulence(0.16));
    }

    #[test]
    fn zero_variance_samples_are_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_fading(0.0, &mut rng, 100).iter().all(|&h| h == 1.0));
    }

    #[test]
    fn sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = sample_fading(0.16, &mut rng, 1_000_000);
        let n = h.len() as f64;
        let mean = h.iter().sum::<f64>() / n;
        let var = h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var / scintillation_index(0.16) - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn density_integrates_to_one() {
        for v in [0.01, 0.04, 0.16, 0.25] {
            let total = integrate_adaptive(|u| lognormal_pdf(u.exp(), v) * u.exp(), -40.0, 40.0, 1e-13, 0.0);
            assert!((total - 1.0).abs() < 1e-10, "v={v} total={total}");
            let mean = integrate_adaptive(|u| lognormal_pdf(u.exp(), v) * (2.0 * u).exp(), -40.0, 40.0, 1e-13, 0.0);
            assert!((mean - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn sum_approx_examples() {
        let e = lognormal_sum_approx(&[1.0], &[0.16]).unwrap();
        assert_relative_eq!(e.var, 0.16, max_relative = 1e-12);
        assert_relative_eq!(e.mu, -0.16, max_relative = 1e-12);
        let e = lognormal_sum_approx(&[1.0, 1.0], &[0.16, 0.16]).unwrap();
        assert_relative_eq!(e.var, 0.092_587_332_415_647_25, max_relative = 1e-12);
        assert!(lognormal_sum_approx(&[0.0, 0.0], &[0.1, 0.1]).is_err());
    }

    proptest! {
        #[test]
        fn sum_approx_matches_two_moments(
            g in prop::collection::vec(0.0f64..10.0, 1..8),
            v in prop::collection::vec(0.0f64..0.3, 8),
        ) {
            prop_assume!(g.iter().sum::<f64>() > 1e-3);
            let v = &v[..g.len()];
            let e = lognormal_sum_approx(&g, v).unwrap();
            let total: f64 = g.iter().sum();
            prop_assert!((e.mean() / total - 1.0).abs() < 1e-12);
            let second = total * total + g.iter().zip(v).map(|(g, v)| g * g * scintillation_index(*v)).sum::<f64>();
            let approx_second = (4.0 * e.mu + 8.0 * e.var).exp();
            prop_assert!((approx_second / second - 1.0).abs() < 1e-10);
        }
    }
}
