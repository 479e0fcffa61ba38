//! The σ_β family mapping scores in `[−1, 1]` to treatment probabilities.
//!
//! ```text
//! σ_β(u) = β⁻¹ · log((1 + e^{βu}) / (1 + e^{−β})),   β > 0
//! σ_0(u) = (1 + u) / 2
//! ```
//!
//! The normalizing constant `log(1 + e^β) − log(1 + e^{−β})` equals `β`
//! exactly, which is what makes `σ_β(1) = 1` and gives `σ_β'(t) = expit(βt)`.

use serde::{Deserialize, Serialize};

use crate::math::{expit, softplus};
use crate::{Error, Result};

/// Below this sharpness the linear branch σ₀ is used.
pub const BETA_LINEAR_CUTOFF: f64 = 1e-8;

/// Scores this close outside `[−1, 1]` are treated as rounding error and clamped.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    beta: f64,
}

impl ScalingParams {
    pub fn new(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(ScalingParams { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::Invalid(format!("beta must be finite and >= 0, got {beta}")));
    }
    Ok(())
}

fn check(beta: f64, u: f64) -> Result<f64> {
    check_beta(beta)?;
    // written so that NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(u.abs() <= 1.0 + DOMAIN_SLACK) {
        return Err(Error::Domain(u));
    }
    Ok(u.clamp(-1.0, 1.0))
}

pub fn sigma(beta: f64, u: f64) -> Result<f64> {
    Ok(sigma_raw(beta, check(beta, u)?))
}

pub fn sigma_prime(beta: f64, t: f64) -> Result<f64> {
    Ok(sigma_prime_raw(beta, check(beta, t)?))
}

pub fn sigma_second(beta: f64, t: f64) -> Result<f64> {
    Ok(sigma_second_raw(beta, check(beta, t)?))
}

/// σ_β without argument checks; callers guarantee `β ≥ 0` and `u ∈ [−1, 1]`.
#[inline]
pub fn sigma_raw(beta: f64, u: f64) -> f64 {
    if beta < BETA_LINEAR_CUTOFF {
        return 0.5 * (1.0 + u);
    }
    let v = if beta < 30.0 {
        // log((1+e^{βu})/(1+e^{−β})) = log1p(expm1(β(1+u)) / (1+e^β)); no cancellation near β = 0
        (f64::exp_m1(beta * (1.0 + u)) / (1.0 + beta.exp())).ln_1p() / beta
    } else {
        (softplus(beta * u) - softplus(-beta)) / beta
    };
    v.clamp(0.0, 1.0)
}

#[inline]
pub fn sigma_prime_raw(beta: f64, t: f64) -> f64 {
    if beta < BETA_LINEAR_CUTOFF {
        0.5
    } else {
        expit(beta * t)
    }
}

#[inline]
pub fn sigma_second_raw(beta: f64, t: f64) -> f64 {
    if beta < BETA_LINEAR_CUTOFF {
        0.0
    } else {
        let p = expit(beta * t);
        beta * p * (1.0 - p)
    }
}

/// The normalizing constant `log(1 + e^β) − log(1 + e^{−β})`, which equals `β`.
pub fn normalizer(beta: f64) -> f64 {
    softplus(beta) - softplus(-beta)
}

/// Smoothness constant `C = 4[1 + (λ/2)·σ_β''(1)]` of the Frank–Wolfe bound.
pub fn curvature_constant(lambda: f64, beta: f64) -> f64 {
    4.0 * (1.0 + 0.5 * lambda * sigma_second_raw(beta, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert!((sigma(0.0, 0.2).unwrap() - 0.6).abs() < 1e-15);
        // log(2 / (1 + e^{-1}))
        assert!((sigma(1.0, 0.0).unwrap() - 0.379_885_493_041_722_3).abs() < 1e-12);
        assert_eq!(sigma_prime(0.0, 0.7).unwrap(), 0.5);
        assert_eq!(sigma_prime(1.0, 0.0).unwrap(), 0.5);
        assert!((sigma_prime(2.0, 1.0).unwrap() - 0.880_797_077_977_882_3).abs() < 1e-12);
        assert_eq!(sigma_second(0.0, -0.3).unwrap(), 0.0);
        assert_eq!(sigma_second(1.0, 0.0).unwrap(), 0.25);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(sigma(1.0, 1.5), Err(Error::Domain(_))));
        assert!(sigma(-0.1, 0.0).is_err());
        assert!(sigma(f64::NAN, 0.0).is_err());
        assert!(sigma(1.0, f64::NAN).is_err());
        assert_eq!(sigma(1.0, 1.0 + 1e-14).unwrap(), 1.0);
    }

    #[test]
    fn continuity_at_the_linear_switch() {
        for u in [-0.9, -0.2, 0.0, 0.4, 1.0] {
            let below = sigma(0.5e-8, u).unwrap();
            let above = sigma(2e-8, u).unwrap();
            assert!((below - above).abs() < 1e-8, "u={u}");
        }
    }

    #[test]
    fn large_beta_branch() {
        assert!((sigma(50.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(sigma(50.0, -1.0).unwrap(), 0.0);
        let a = sigma_raw(29.999, 0.3);
        let b = sigma_raw(30.001, 0.3);
        assert!((a - b).abs() < 1e-4);
    }

    #[test]
    fn normalizer_equals_beta() {
        for b in [0.05, 0.5, 1.0, 4.0, 20.0] {
            assert!((normalizer(b) - b).abs() < 1e-12);
        }
    }
}
