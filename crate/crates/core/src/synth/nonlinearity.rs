use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Memoryless loudspeaker distortion applied to the farend signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    Identity,
    /// Scaled error function `f(v) = ∫_0^v exp(−t²/(2μ²)) dt`.
    Sef { mu: f64 },
    /// `f(v) = arctan(α v)/α`.
    Arctan { alpha: f64 },
}

impl Nonlinearity {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Nonlinearity::Sef { mu } if !(mu > 0.0 && mu.is_finite()) => {
                Err(Error::Param(format!("SEF shape μ must be positive, got {mu}")))
            }
            Nonlinearity::Arctan { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(Error::Param(format!("arctan shape α must be positive, got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        match *self {
            Nonlinearity::Identity => v,
            Nonlinearity::Sef { mu } => {
                mu * std::f64::consts::FRAC_PI_2.sqrt() * libm::erf(v / (mu * std::f64::consts::SQRT_2))
            }
            Nonlinearity::Arctan { alpha } => (alpha * v).atan() / alpha,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(x.iter().map(|&v| self.eval(v)).collect())
    }
}

pub fn sef_nonlinearity(x: &[f64], mu: f64) -> Result<Vec<f64>> {
    Nonlinearity::Sef { mu }.apply(x)
}

pub fn arctan_nonlinearity(x: &[f64], alpha: f64) -> Result<Vec<f64>> {
    Nonlinearity::Arctan { alpha }.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite Simpson quadrature of the SEF integrand.
    fn sef_quadrature(v: f64, mu: f64) -> f64 {
        let n = 20_000;
        let h = v / n as f64;
        let f = |t: f64| (-t * t / (2.0 * mu * mu)).exp();
        let mut acc = f(0.0) + f(v);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn sef_matches_quadrature() {
        let got = sef_nonlinearity(&[1.0], 0.5).unwrap()[0];
        assert!((got - sef_quadrature(1.0, 0.5)).abs() < 1e-9);
        assert!((got - 0.59815).abs() < 1e-5);
        for (v, mu) in [(0.3, 1.0), (-0.8, 0.2), (2.0, 10.0)] {
            assert!((Nonlinearity::Sef { mu }.eval(v) - sef_quadrature(v, mu)).abs() < 1e-9);
        }
    }

    #[test]
    fn sef_large_mu_is_near_identity() {
        let x: Vec<f64> = (-100..=100).map(|i| i as f64 / 100.0).collect();
        let y = sef_nonlinearity(&x, 999.0).unwrap();
        for (a, b) in x.iter().zip(&y) {
            if *a != 0.0 {
                assert!(((b - a) / a).abs() < 1e-3);
            }
        }
        assert_eq!(y[100], 0.0);
    }

    #[test]
    fn arctan_examples() {
        assert!((arctan_nonlinearity(&[1.0], 1.0).unwrap()[0] - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert_eq!(arctan_nonlinearity(&[0.0], 3.0).unwrap()[0], 0.0);
        for v in [-1.0, -0.3, 0.5, 1.0] {
            assert!((arctan_nonlinearity(&[v], 1e-4).unwrap()[0] - v).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(sef_nonlinearity(&[1.0], 0.0).is_err());
        assert!(sef_nonlinearity(&[1.0], -1.0).is_err());
        assert!(arctan_nonlinearity(&[1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn odd_monotone_bounded(v in -5.0f64..5.0, w in -5.0f64..5.0, mu in 0.1f64..50.0, alpha in 1e-3f64..20.0) {
            for nl in [Nonlinearity::Sef { mu }, Nonlinearity::Arctan { alpha }] {
                prop_assert!((nl.eval(-v) + nl.eval(v)).abs() < 1e-12);
                prop_assert!(nl.eval(v).abs() <= v.abs() + 1e-15);
                if v < w {
                    prop_assert!(nl.eval(v) <= nl.eval(w));
                }
            }
        }
    }
}
