use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound of distortion-style ratios in dB.
pub const DB_FLOOR: f64 = -120.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErleParams {
    /// First-order IIR power smoothing coefficient.
    pub smoothing: f64,
    pub cap_db: f64,
    /// Samples at the start of a section excluded from the mean.
    pub settle_samples: usize,
}

impl Default for ErleParams {
    fn default() -> Self {
        Self { smoothing: 0.99, cap_db: 80.0, settle_samples: 8000 }
    }
}

impl ErleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing > 0.0 && self.smoothing < 1.0) {
            return Err(Error::Config(format!("smoothing {} must lie in (0, 1)", self.smoothing)));
        }
        if !(self.cap_db > 0.0 && self.cap_db.is_finite()) {
            return Err(Error::Config("ERLE cap must be positive".into()));
        }
        Ok(())
    }
}

/// `P(n) = α·P(n−1) + (1−α)·x(n)²` from `P(−1) = 0`.
pub fn smoothed_power(x: &[f64], alpha: f64) -> Vec<f64> {
    let mut p = 0.0;
    x.iter()
        .map(|&v| {
            p = alpha * p + (1.0 - alpha) * v * v;
            p
        })
        .collect()
}

/// `10·log10(P_ref / P_res)` per sample, limited to `±cap`.
pub fn erle_trace(reference: &[f64], residual: &[f64], params: &ErleParams) -> Result<Vec<f64>> {
    params.validate()?;
    if reference.len() != residual.len() {
        return Err(Error::Shape(format!("ERLE of {} and {} samples", reference.len(), residual.len())));
    }
    let pd = smoothed_power(reference, params.smoothing);
    let pr = smoothed_power(residual, params.smoothing);
    let cap = params.cap_db;
    Ok(pd
        .iter()
        .zip(&pr)
        .map(|(&a, &b)| match (a > 0.0, b > 0.0) {
            (_, false) if a > 0.0 => cap,
            (false, false) => 0.0,
            (false, true) => -cap,
            _ => (10.0 * (a / b).log10()).clamp(-cap, cap),
        })
        .collect())
}

fn settled_mean(trace: &[f64], params: &ErleParams) -> Result<f64> {
    if trace.len() <= params.settle_samples {
        return Err(Error::Data(format!(
            "section of {} samples is not longer than the {}-sample settling time",
            trace.len(),
            params.settle_samples
        )));
    }
    let t = &trace[params.settle_samples..];
    Ok(t.iter().sum::<f64>() / t.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErleResult {
    pub mean_db: f64,
    pub trace: Vec<f64>,
}

/// ERLE of a far-end single-talk section: the residual echo is estimated as
/// `e − n`.
pub fn erle(d: &[f64], e: &[f64], n: &[f64], params: &ErleParams) -> Result<ErleResult> {
    if e.len() != n.len() {
        return Err(Error::Shape(format!("output has {} samples, noise {}", e.len(), n.len())));
    }
    let residual: Vec<f64> = e.iter().zip(n).map(|(a, b)| a - b).collect();
    let trace = erle_trace(d, &residual, params)?;
    Ok(ErleResult { mean_db: settled_mean(&trace, params)?, trace })
}

/// ERLE between the echo `d` and its processed component `d̃`.
pub fn component_erle(d_tilde: &[f64], d: &[f64], params: &ErleParams) -> Result<f64> {
    settled_mean(&erle_trace(d, d_tilde, params)?, params)
}

fn relative_error_db(estimate: &[f64], reference: &[f64], what: &str) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape(format!("{what}: {} and {} samples", estimate.len(), reference.len())));
    }
    let energy: f64 = reference.iter().map(|v| v * v).sum();
    if energy <= 0.0 {
        return Err(Error::Data(format!("{what}: reference signal is silent")));
    }
    let err: f64 = estimate.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(if err == 0.0 { DB_FLOOR } else { (10.0 * (err / energy).log10()).max(DB_FLOOR) })
}

/// Speech-component distortion `10·log10(Σ(s̃ − s)² / Σs²)`, floored.
pub fn speech_preservation(s_tilde: &[f64], s: &[f64]) -> Result<f64> {
    relative_error_db(s_tilde, s, "speech preservation")
}

/// Near-end single-talk deviation of the output from the microphone signal,
/// `10·log10(Σ(e − y)² / Σy²)`, floored.
pub fn stne_deviation(e: &[f64], y: &[f64]) -> Result<f64> {
    relative_error_db(e, y, "STNE deviation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn perfect_and_absent_suppression() {
        let p = ErleParams::default();
        let d = noise(1, 16000);
        let n = noise(2, 16000);
        let e: Vec<f64> = n.clone();
        assert_eq!(erle(&d, &e, &n, &p).unwrap().mean_db, 80.0);
        let y: Vec<f64> = d.iter().zip(&n).map(|(a, b)| a + b).collect();
        assert!(erle(&d, &y, &n, &p).unwrap().mean_db.abs() < 1e-9);
    }

    #[test]
    fn twenty_db_attenuation() {
        let p = ErleParams::default();
        let d = noise(3, 24000);
        let dt: Vec<f64> = d.iter().map(|v| v / 10.0).collect();
        assert!((component_erle(&dt, &d, &p).unwrap() - 20.0).abs() < 0.1);
        let half: Vec<f64> = d.iter().map(|v| v * 0.5).collect();
        assert!((component_erle(&half, &d, &p).unwrap() - 6.0206).abs() < 0.1);
    }

    #[test]
    fn independent_smoother_oracle() {
        // stationary white noise residual with an independently smoothed
        // estimate of the power ratio
        let p = ErleParams::default();
        let d = noise(4, 30000);
        let r = noise(5, 30000).iter().map(|v| v * 0.3).collect::<Vec<_>>();
        let tr = erle_trace(&d, &r, &p).unwrap();
        let (mut a, mut b) = (0.0, 0.0);
        for i in 0..d.len() {
            a = 0.99 * a + 0.01 * d[i] * d[i];
            b = 0.99 * b + 0.01 * r[i] * r[i];
            assert!((tr[i] - 10.0 * (a / b).log10()).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_invariance() {
        let p = ErleParams::default();
        let d = noise(6, 10000);
        let r = noise(7, 10000);
        let a = erle_trace(&d, &r, &p).unwrap();
        let ds: Vec<f64> = d.iter().map(|v| v * 37.0).collect();
        let rs: Vec<f64> = r.iter().map(|v| v * 37.0).collect();
        let b = erle_trace(&ds, &rs, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn short_section_rejected() {
        let p = ErleParams::default();
        assert!(component_erle(&[0.1; 8000], &[0.2; 8000], &p).is_err());
    }

    #[test]
    fn preservation_oracles() {
        let s = noise(8, 1000);
        assert_eq!(speech_preservation(&s, &s).unwrap(), DB_FLOOR);
        assert!(speech_preservation(&vec![0.0; 1000], &s).unwrap().abs() < 1e-12);
        let half: Vec<f64> = s.iter().map(|v| v * 0.5).collect();
        assert!((speech_preservation(&half, &s).unwrap() + 6.0206).abs() < 1e-3);
        assert!(speech_preservation(&s, &[0.0; 1000]).is_err());
        assert!(stne_deviation(&vec![0.0; 1000], &s).unwrap().abs() < 1e-12);
    }
}
