//! Scalar kernels shared by the tape and the plain expression evaluator.
//!
//! Both evaluation routes call these exact functions, so a unit-weighted
//! loss network reproduces its source expression bit-for-bit.

/// Offset used by the protected logarithm and square root.
pub const PROTECT_EPS: f64 = 1e-7;

#[inline]
pub fn aq(a: f64, b: f64) -> f64 {
    a / (1.0 + b * b).sqrt()
}

#[inline]
pub fn plog(x: f64) -> f64 {
    (x.abs() + PROTECT_EPS).ln()
}

#[inline]
pub fn psqrt(x: f64) -> f64 {
    (x.abs() + PROTECT_EPS).sqrt()
}

/// Sign with `sign(0) = 0`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `ln(1 + e^x)` without overflow for large `|x|`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smooth leaky ReLU: `softplus(beta x) / beta * (1 - gamma) + gamma x`.
#[inline]
pub fn slrelu(x: f64, gamma: f64, beta: f64) -> f64 {
    softplus(beta * x) / beta * (1.0 - gamma) + gamma * x
}

/// Derivative of [`slrelu`]: `(e^{beta x} + gamma) / (e^{beta x} + 1)`.
#[inline]
pub fn slrelu_grad(x: f64, gamma: f64, beta: f64) -> f64 {
    gamma + (1.0 - gamma) * sigmoid(beta * x)
}

#[inline]
pub fn leaky_relu(x: f64, gamma: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        gamma * x
    }
}

/// `min`, ties resolve to the first argument.
#[inline]
pub fn min_first(a: f64, b: f64) -> f64 {
    if a <= b {
        a
    } else {
        b
    }
}

/// `max`, ties resolve to the first argument.
#[inline]
pub fn max_first(a: f64, b: f64) -> f64 {
    if a >= b {
        a
    } else {
        b
    }
}

/// Numerically stable `log(sum(exp(xs)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn slrelu_at_zero() {
        let v = slrelu(0.0, 0.01, 10.0);
        assert!((v - 0.99 * std::f64::consts::LN_2 / 10.0).abs() < 1e-15);
        assert!((slrelu_grad(0.0, 0.01, 10.0) - 0.505).abs() < 1e-15);
    }

    #[test]
    fn lse_matches_naive() {
        let xs = [0.1, -2.0, 3.0];
        let naive: f64 = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
    }
}
