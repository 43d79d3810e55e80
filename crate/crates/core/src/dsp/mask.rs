use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Below this mask magnitude the gain is taken as exactly zero.
pub const MASK_EPSILON: f64 = 1e-12;

/// Effective complex gain `tanh(|M|) * M / |M|` of a raw network mask value.
#[inline]
pub fn mask_gain<T: Scalar>(m: Complex<T>) -> Complex<T> {
    let mag = m.norm();
    if mag < T::of(MASK_EPSILON) {
        return Complex::new(T::zero(), T::zero());
    }
    m * (mag.tanh() / mag)
}

/// Applies a mask frame to a microphone frame: `E = Y * tanh(|M|) * M / |M|`.
pub fn apply_mask<T: Scalar>(y: &[Complex<T>], m: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    if y.len() != m.len() {
        return Err(Error::Shape(format!("{} microphone bins vs {} mask bins", y.len(), m.len())));
    }
    Ok(y.iter().zip(m).map(|(&yv, &mv)| yv * mask_gain(mv)).collect())
}

/// Magnitude compression `|Y|^c * exp(j arg Y)`; zero stays zero.
pub fn compress_input<T: Scalar>(spectrum: &[Complex<T>], c: f64) -> Result<Vec<Complex<T>>> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::Param(format!("compression exponent {c} outside (0, 1]")));
    }
    let c = T::of(c);
    Ok(spectrum
        .iter()
        .map(|&v| {
            let mag = v.norm();
            if mag == T::zero() {
                v
            } else {
                v * (mag.powf(c) / mag)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn zero_mask_gives_zero() {
        let e = apply_mask(&[c(1.0, 2.0), c(-3.0, 0.5)], &[c(0.0, 0.0), c(1e-13, 0.0)]).unwrap();
        assert!(e.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn large_real_mask_passes_signal() {
        let y = c(0.3, -0.7);
        let e = apply_mask(&[y], &[c(40.0, 0.0)]).unwrap()[0];
        assert!((e - y).norm() < 1e-12);
        let e = apply_mask(&[y], &[c(3.0, 0.0)]).unwrap()[0];
        assert!(e.norm() < y.norm());
    }

    #[test]
    fn imaginary_mask_rotates_and_halves() {
        let y = c(0.8, 0.1);
        let m = c(0.0, 0.5f64.atanh());
        let e = apply_mask(&[y], &[m]).unwrap()[0];
        let expected = c(0.0, 0.5) * y;
        assert!((e - expected).norm() < 1e-14);
    }

    #[test]
    fn mismatched_lengths_error() {
        assert!(apply_mask(&[c(1.0, 0.0)], &[]).is_err());
    }

    #[test]
    fn compression_examples() {
        let v = [c(0.3, 0.4), c(0.0, 0.0)];
        assert_eq!(compress_input(&v, 1.0).unwrap()[0], v[0]);
        let y = Complex::from_polar(8.0, std::f64::consts::FRAC_PI_4);
        let out = compress_input(&[y], 1.0 / 3.0).unwrap()[0];
        assert!((out - Complex::from_polar(2.0, std::f64::consts::FRAC_PI_4)).norm() < 1e-12);
        assert_eq!(compress_input(&v, 0.3).unwrap()[1], c(0.0, 0.0));
        assert!(compress_input(&v, 0.0).is_err());
        assert!(compress_input(&v, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn gain_never_amplifies(yr in -10.0..10.0f64, yi in -10.0..10.0f64, mr in -20.0..20.0f64, mi in -20.0..20.0f64) {
            let y = c(yr, yi);
            let m = c(mr, mi);
            let e = apply_mask(&[y], &[m]).unwrap()[0];
            prop_assert!(e.norm() <= y.norm() * m.norm().tanh() + 1e-12);
            prop_assert!(e.norm() <= y.norm() + 1e-12);
            if m.norm() >= MASK_EPSILON && y.norm() > 1e-9 && e.norm() > 1e-9 {
                let d = (e / y).arg() - m.arg();
                let wrapped = (d + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
                prop_assert!(wrapped.abs() < 1e-9);
            }
        }

        #[test]
        fn compression_keeps_phase(re in -5.0..5.0f64, im in -5.0..5.0f64, cexp in 0.05..1.0f64) {
            let y = c(re, im);
            prop_assume!(y.norm() > 1e-6);
            let out = compress_input(&[y], cexp).unwrap()[0];
            prop_assert!((out.arg() - y.arg()).abs() < 1e-9);
            if y.norm() < 1.0 {
                prop_assert!(out.norm() >= y.norm());
            }
        }
    }
}
