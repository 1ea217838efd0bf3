//! The smooth Huber function `rho(x) = sqrt(x^2 + 1) - 1` and related scalar maps.
//!
//! `rho` is convex, even, quadratic near the origin and linear in the tails. Its
//! derivative is bounded in `(-1, 1)` and satisfies the logarithmic Catoni
//! envelope with constant [`CATONI_GAMMA`].

use crate::error::{ensure_finite, Error, Result};

/// Constant of the logarithmic envelope satisfied by `rho'`. Fixed by the choice of `rho`.
pub const CATONI_GAMMA: f64 = 1.0;

/// `rho` together with its first two derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoEval {
    pub value: f64,
    pub first_deriv: f64,
    pub second_deriv: f64,
}

#[inline]
pub(crate) fn rho_raw(x: f64) -> f64 {
    let h = x.hypot(1.0);
    if x.abs() < 1.0 {
        // avoids cancellation in h - 1 near the origin
        x * x / (h + 1.0)
    } else {
        h - 1.0
    }
}

#[inline]
pub(crate) fn rho_prime_raw(x: f64) -> f64 {
    x / x.hypot(1.0)
}

#[inline]
pub(crate) fn rho_second_raw(x: f64) -> f64 {
    let r = 1.0 / x.hypot(1.0);
    r * r * r
}

/// `sqrt(d^2 + b^2) - b`, i.e. `b * rho(d / b)`, without cancellation for `|d| << b`.
#[inline]
pub(crate) fn scaled_rho_raw(d: f64, b: f64) -> f64 {
    let r = d.hypot(b);
    if d.abs() < b {
        d * d / (r + b)
    } else {
        r - b
    }
}

pub fn rho(x: f64) -> Result<f64> {
    Ok(rho_raw(ensure_finite("x", x)?))
}

pub fn rho_prime(x: f64) -> Result<f64> {
    Ok(rho_prime_raw(ensure_finite("x", x)?))
}

pub fn rho_second(x: f64) -> Result<f64> {
    Ok(rho_second_raw(ensure_finite("x", x)?))
}

pub fn rho_eval(x: f64) -> Result<RhoEval> {
    let x = ensure_finite("x", x)?;
    Ok(RhoEval {
        value: rho_raw(x),
        first_deriv: rho_prime_raw(x),
        second_deriv: rho_second_raw(x),
    })
}

/// Checks `-log(1 - x + g x^2) <= rho'(x) <= log(1 + x + g x^2)` with `g = CATONI_GAMMA`.
///
/// Both log arguments stay positive for `g = 1`.
pub fn catoni_envelope_check(x: f64) -> Result<bool> {
    let x = ensure_finite("x", x)?;
    let d = rho_prime_raw(x);
    let q = CATONI_GAMMA * x * x;
    let lower = -(q - x).ln_1p();
    let upper = (q + x).ln_1p();
    Ok(lower <= d && d <= upper)
}

/// Legendre-Fenchel conjugate `sup_u [x u - rho(u)]`.
///
/// Returns `f64::INFINITY` for `|x| >= 1`. Inside the domain this evaluates the
/// closed form term by term; it is well conditioned for `|x| <= 0.99` and loses
/// relative accuracy as `|x|` approaches 1.
pub fn rho_conjugate(x: f64) -> Result<f64> {
    let x = ensure_finite("x", x)?;
    if x.abs() >= 1.0 {
        return Ok(f64::INFINITY);
    }
    let s = (1.0 - x * x).sqrt();
    Ok(x * x / s + 1.0 - 1.0 / s)
}

/// Pseudo-Huber function `b^2 rho(x / b) = b sqrt(x^2 + b^2) - b^2`.
///
/// Approaches `x^2 / 2` as `b` grows.
pub fn pseudo_huber(x: f64, b: f64) -> Result<f64> {
    let x = ensure_finite("x", x)?;
    let b = ensure_finite("b", b)?;
    if b <= 0.0 {
        return Err(Error::InvalidParameter(format!("scale b must be positive, got {b}")));
    }
    Ok(b * scaled_rho_raw(x, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn rho_examples() {
        assert_eq!(rho(0.0).unwrap(), 0.0);
        assert!((rho(1.0).unwrap() - (SQRT2 - 1.0)).abs() < 1e-15);
        assert!((rho(-3.0).unwrap() - (10f64.sqrt() - 1.0)).abs() < 1e-15);
        assert_eq!(rho(-3.0).unwrap(), rho(3.0).unwrap());
    }

    #[test]
    fn rho_prime_examples() {
        assert_eq!(rho_prime(0.0).unwrap(), 0.0);
        assert!((rho_prime(1.0).unwrap() - 1.0 / SQRT2).abs() < 1e-15);
        let big = rho_prime(1e6).unwrap();
        assert!(big > 0.999999 && big < 1.0);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(rho(f64::NAN).is_err());
        assert!(rho_prime(f64::INFINITY).is_err());
        assert!(catoni_envelope_check(f64::NEG_INFINITY).is_err());
        assert!(rho_conjugate(f64::NAN).is_err());
        assert!(pseudo_huber(1.0, f64::NAN).is_err());
    }

    #[test]
    fn envelope_examples() {
        assert!(catoni_envelope_check(0.0).unwrap());
        assert!(catoni_envelope_check(2.5).unwrap());
        assert!(catoni_envelope_check(-7.0).unwrap());
        // values quoted alongside the 2.5 example
        assert!((rho_prime(2.5).unwrap() - 0.928476690885259).abs() < 1e-12);
        assert!(((1.0f64 + 2.5 + 6.25).ln() - 2.277267285).abs() < 1e-9);
        assert!((-(1.0f64 - 2.5 + 6.25).ln() + 1.558144618).abs() < 1e-9);
    }

    #[test]
    fn conjugate_examples() {
        assert_eq!(rho_conjugate(0.0).unwrap(), 0.0);
        assert!((rho_conjugate(0.6).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(rho_conjugate(1.0).unwrap(), f64::INFINITY);
        assert_eq!(rho_conjugate(-1.5).unwrap(), f64::INFINITY);
        assert!(rho_conjugate(-0.9).unwrap() > rho_conjugate(-0.1).unwrap());
    }

    #[test]
    fn pseudo_huber_examples() {
        assert_eq!(pseudo_huber(0.0, 5.0).unwrap(), 0.0);
        assert!((pseudo_huber(1.0, 1.0).unwrap() - (SQRT2 - 1.0)).abs() < 1e-15);
        assert!((pseudo_huber(2.0, 1e4).unwrap() - 2.0).abs() < 1e-3);
        assert!(pseudo_huber(1.0, 0.0).is_err());
        assert!(pseudo_huber(1.0, -2.0).is_err());
    }

    #[test]
    fn eval_bundle_is_consistent() {
        let e = rho_eval(0.3).unwrap();
        assert_eq!(e.value, rho(0.3).unwrap());
        assert_eq!(e.first_deriv, rho_prime(0.3).unwrap());
        assert!(e.second_deriv > 0.0);
        assert!((e.second_deriv - 1.09f64.powf(-1.5)).abs() < 1e-14);
    }

    #[test]
    fn large_inputs_do_not_overflow() {
        assert!((rho(1e200).unwrap() - 1e200).abs() / 1e200 < 1e-15);
        assert!((scaled_rho_raw(1e-9, 1e9) - 5e-28).abs() < 1e-40);
    }
}
