//! Small scalar helpers shared across modules.

/// Logistic function, evaluated without overflow for large |z|.
#[inline]
pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + e^z)`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance (divisor `n`).
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Deterministic 64-bit mixer used to derive child seeds from a parent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_is_stable_and_symmetric() {
        assert_eq!(expit(0.0), 0.5);
        assert!((expit(800.0) - 1.0).abs() < 1e-300);
        assert!(expit(-800.0) >= 0.0);
        for z in [-3.0, -0.4, 0.7, 12.0] {
            assert!((expit(z) + expit(-z) - 1.0).abs() < 1e-15);
            assert!((logit(expit(z)) - z).abs() < 1e-9);
        }
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for z in [-20.0, -1.0, 0.0, 0.3, 5.0] {
            assert!((softplus(z) - (1.0 + f64::exp(z)).ln()).abs() < 1e-14);
        }
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
