use serde::{Deserialize, Serialize};

use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Shoebox room for the image method. Reflection coefficients are ordered
/// `[x=0, x=Lx, y=0, y=Ly, z=0, z=Lz]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dimensions: [f64; 3],
    pub source_pos: [f64; 3],
    pub mic_pos: [f64; 3],
    pub reflection_coeffs: [f64; 6],
    pub rir_length: usize,
    /// Seed of the draw that produced this room; the simulation itself is
    /// deterministic.
    pub seed: u64,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        let inside = |p: &[f64; 3]| (0..3).all(|i| p[i] > 0.0 && p[i] < self.dimensions[i]);
        if !inside(&self.source_pos) || !inside(&self.mic_pos) {
            return Err(Error::Param("source and microphone must lie strictly inside the room".into()));
        }
        if self.reflection_coeffs.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Param("reflection coefficients must lie in [0, 1)".into()));
        }
        if self.rir_length == 0 {
            return Err(Error::Param("impulse response length must be positive".into()));
        }
        Ok(())
    }

    pub fn direct_distance(&self) -> f64 {
        (0..3).map(|i| (self.source_pos[i] - self.mic_pos[i]).powi(2)).sum::<f64>().sqrt()
    }
}

/// Image-method impulse response with delays rounded to whole samples.
pub fn simulate_rir(room: &RoomSpec) -> Result<Vec<f64>> {
    room.validate()?;
    let fs = SAMPLE_RATE as f64;
    let len = room.rir_length;
    let mut h = vec![0.0; len];
    let max_dist = (len as f64 + 0.5) * SPEED_OF_SOUND / fs;
    let l = room.dimensions;
    let b = room.reflection_coeffs;
    let range: Vec<i64> = (0..3).map(|i| (max_dist / (2.0 * l[i])).ceil() as i64 + 1).collect();
    for nx in -range[0]..=range[0] {
        for ny in -range[1]..=range[1] {
            for nz in -range[2]..=range[2] {
                for q in 0..8u32 {
                    let qs = [(q & 1) as i64, ((q >> 1) & 1) as i64, ((q >> 2) & 1) as i64];
                    let n = [nx, ny, nz];
                    let mut d2 = 0.0;
                    let mut amp = 1.0;
                    for i in 0..3 {
                        let img = (1 - 2 * qs[i]) as f64 * room.source_pos[i] + 2.0 * n[i] as f64 * l[i];
                        d2 += (img - room.mic_pos[i]).powi(2);
                        amp *= b[2 * i].powi((n[i] - qs[i]).unsigned_abs() as i32)
                            * b[2 * i + 1].powi(n[i].unsigned_abs() as i32);
                    }
                    if amp == 0.0 {
                        continue;
                    }
                    let d = d2.sqrt();
                    let k = (d * fs / SPEED_OF_SOUND).round() as usize;
                    if k < len {
                        h[k] += amp / (4.0 * std::f64::consts::PI * d);
                    }
                }
            }
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room(beta: f64) -> RoomSpec {
        RoomSpec {
            dimensions: [4.0, 5.0, 3.0],
            source_pos: [1.0, 1.5, 1.2],
            mic_pos: [2.5, 3.0, 1.4],
            reflection_coeffs: [beta; 6],
            rir_length: 2048,
            seed: 0,
        }
    }

    #[test]
    fn anechoic_is_single_impulse() {
        let r = room(0.0);
        let h = simulate_rir(&r).unwrap();
        let d = r.direct_distance();
        let k = (d * 16000.0 / 343.0).round() as usize;
        for (i, &v) in h.iter().enumerate() {
            if i == k {
                assert!((v - 1.0 / (4.0 * std::f64::consts::PI * d)).abs() < 1e-15);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn direct_path_independent_of_walls() {
        let r0 = room(0.0);
        let k = (r0.direct_distance() * 16000.0 / 343.0).round() as usize;
        let a = simulate_rir(&r0).unwrap()[k];
        // reflections arrive strictly later than the direct path here
        let b = simulate_rir(&room(0.3)).unwrap()[k];
        let c = simulate_rir(&room(0.6)).unwrap()[k];
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn more_reflective_means_more_energy() {
        let e = |beta| simulate_rir(&room(beta)).unwrap().iter().map(|v| v * v).sum::<f64>();
        assert!(e(0.9) > e(0.5));
        assert!(e(0.5) > e(0.0));
    }

    #[test]
    fn deterministic_and_validated() {
        assert_eq!(simulate_rir(&room(0.7)).unwrap(), simulate_rir(&room(0.7)).unwrap());
        let mut bad = room(0.5);
        bad.mic_pos[0] = 4.5;
        assert!(simulate_rir(&bad).is_err());
        let mut bad = room(0.5);
        bad.reflection_coeffs[2] = 1.0;
        assert!(simulate_rir(&bad).is_err());
    }
}
