//! Overflow-safe scalar helpers shared by every objective.
//!
//! All log-sigmoid terms go through [`softplus`] via `-log σ(x) = softplus(-x)`.
//! A naive `σ(x).ln()` loses everything below `1e-16` and returns `-inf`
//! once `x < -745`.

/// Logistic sigmoid `1 / (1 + e^{-x})`, evaluated on the branch that never
/// exponentiates a large positive number.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `softplus(x) = ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln σ(x) = -softplus(-x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Log-odds `ln(p / (1 - p))` for `p` in `(0, 1)`.
#[inline]
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_symmetry_and_midpoint() {
        assert_eq!(sigmoid(0.0), 0.5);
        for x in [-40.0, -3.0, -0.1, 0.7, 12.0, 800.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn softplus_matches_direct_form_in_safe_range() {
        for x in [-20.0, -2.5, 0.0, 1.0, 15.0] {
            let direct = (1.0 + f64::exp(x)).ln();
            assert!((softplus(x) - direct).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn log_sigmoid_does_not_underflow() {
        // naive ln(σ(-800)) would be ln(0) = -inf
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for x in [-9.0, -1.0, 0.0, 0.25, 4.0] {
            assert!((logit(sigmoid(x)) - x).abs() < 1e-12);
        }
    }
}
