use num_complex::Complex;
use rustfft::FftPlanner;

use super::nonlinearity::Nonlinearity;
use super::dataset::SignalBundle;
use crate::error::{Error, Result};

/// Mean power below which a signal counts as silent (−60 dBFS).
pub const SILENCE_POWER: f64 = 1e-6;

pub fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

pub fn power_ratio_db(num: &[f64], den: &[f64]) -> f64 {
    10.0 * (mean_power(num) / mean_power(den)).log10()
}

/// Linear convolution via FFT, truncated to the first `len` output samples.
pub fn convolve(x: &[f64], h: &[f64], len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; len];
    }
    let full = x.len() + h.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |s: &[f64]| {
        let mut b = vec![Complex::new(0.0, 0.0); n];
        for (o, &v) in b.iter_mut().zip(s) {
            o.re = v;
        }
        b
    };
    let (mut a, mut b) = (pad(x), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    (0..len).map(|i| if i < full { a[i].re * scale } else { 0.0 }).collect()
}

/// Gain that brings `target` to `10·log10(P_ref/P_target) = ratio_db`.
pub fn ratio_gain(reference: &[f64], target: &[f64], ratio_db: f64) -> Result<f64> {
    let pr = mean_power(reference);
    let pt = mean_power(target);
    if pr <= 0.0 {
        return Err(Error::Data("reference signal is silent, level ratio undefined".into()));
    }
    if pt <= 0.0 {
        return Err(Error::Data("signal to be scaled is silent, level ratio undefined".into()));
    }
    Ok((pr / (pt * 10f64.powf(ratio_db / 10.0))).sqrt())
}

/// Builds `d = f_NL(x) * h`, scales echo and noise to the requested SER and
/// SNR over the full file and forms `y = s + n + d`. `snr_db = None` keeps the
/// file noiseless.
pub fn mix_scene(
    s: &[f64],
    n: &[f64],
    x: &[f64],
    nl: &Nonlinearity,
    h: &[f64],
    ser_db: f64,
    snr_db: Option<f64>,
) -> Result<SignalBundle> {
    let len = s.len().min(n.len()).min(x.len());
    let (s, n, x) = (&s[..len], &n[..len], &x[..len]);
    let d = convolve(&nl.apply(x)?, h, len);
    let gd = ratio_gain(s, &d, ser_db)?;
    let d: Vec<f64> = d.iter().map(|v| v * gd).collect();
    let n: Vec<f64> = match snr_db {
        Some(snr) => {
            let gn = ratio_gain(s, n, snr)?;
            n.iter().map(|v| v * gn).collect()
        }
        None => vec![0.0; len],
    };
    Ok(SignalBundle::new(x.to_vec(), s.to_vec(), n, d, ser_db, snr_db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_convolution(x: &[f64], h: &[f64], len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| (0..h.len()).filter(|&k| k <= i && i - k < x.len()).map(|k| h[k] * x[i - k]).sum())
            .collect()
    }

    fn noise(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (lx, lh) in [(37, 5), (100, 64), (3, 10), (257, 1)] {
            let x = noise(&mut rng, lx);
            let h = noise(&mut rng, lh);
            for len in [lx, lx + lh - 1, lx + lh + 3] {
                let a = convolve(&x, &h, len);
                let b = direct_convolution(&x, &h, len);
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - v).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn requested_ratios_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (s, n, x) = (noise(&mut rng, 4000), noise(&mut rng, 4000), noise(&mut rng, 4000));
        let h = noise(&mut rng, 50);
        let b = mix_scene(&s, &n, &x, &Nonlinearity::Sef { mu: 0.5 }, &h, -6.0, Some(10.0)).unwrap();
        assert!((power_ratio_db(&b.s, &b.d) + 6.0).abs() < 1e-6);
        assert!((power_ratio_db(&b.s, &b.n) - 10.0).abs() < 1e-6);
        let b0 = mix_scene(&s, &n, &x, &Nonlinearity::Identity, &h, 0.0, None).unwrap();
        let (ps, pd) = (mean_power(&b0.s), mean_power(&b0.d));
        assert!(((ps - pd) / ps).abs() < 1e-9);
        assert!(b0.n.iter().all(|&v| v == 0.0));
        for i in 0..4000 {
            assert_eq!(b.y[i], b.s[i] + b.n[i] + b.d[i]);
        }
    }

    #[test]
    fn identity_path_reproduces_farend() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (s, n, x) = (noise(&mut rng, 500), noise(&mut rng, 500), noise(&mut rng, 500));
        let b = mix_scene(&s, &n, &x, &Nonlinearity::Identity, &[1.0], 0.0, Some(0.0)).unwrap();
        let g = b.d[0] / x[0];
        for i in 0..500 {
            assert!((b.d[i] - g * x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn silent_speech_rejected() {
        let x = vec![0.1; 100];
        assert!(mix_scene(&[0.0; 100], &x, &x, &Nonlinearity::Identity, &[1.0], 0.0, Some(0.0)).is_err());
    }
}
