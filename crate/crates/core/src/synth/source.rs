//! Source audio for scene synthesis: WAV directories or procedurally
//! generated speech-like utterances and noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::{read_wav, SAMPLE_RATE};
use crate::error::{Error, Result};

const FS: f64 = SAMPLE_RATE as f64;

/// Speech utterances grouped by speaker, plus noise recordings.
#[derive(Debug, Clone, Default)]
pub struct SourceCatalog {
    /// `speakers[i]` holds the utterances of speaker `i`.
    pub speakers: Vec<Vec<Vec<f64>>>,
    pub noises: Vec<Vec<f64>>,
}

impl SourceCatalog {
    pub fn validate(&self) -> Result<()> {
        if self.speakers.iter().all(|u| u.is_empty()) {
            return Err(Error::Data("speech catalog is empty".into()));
        }
        if self.speakers.len() < 2 {
            return Err(Error::Data("speech catalog needs at least two speakers".into()));
        }
        if self.noises.is_empty() {
            return Err(Error::Data("noise catalog is empty".into()));
        }
        Ok(())
    }

    /// Procedural catalog: each speaker has its own pitch range and formant
    /// tendencies.
    pub fn synthetic(seed: u64, speakers: usize, utterances: usize, utterance_secs: f64, noises: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = (utterance_secs * FS) as usize;
        let speakers = (0..speakers)
            .map(|_| {
                let voice = Voice::random(&mut rng);
                (0..utterances).map(|_| voice.utterance(&mut rng, len)).collect()
            })
            .collect();
        let noises = (0..noises).map(|_| colored_noise(&mut rng, 2 * len)).collect();
        Self { speakers, noises }
    }

    /// Loads every `*.wav` below `speech_dir` (one speaker per subdirectory,
    /// or one speaker per file when flat) and `noise_dir`.
    pub fn from_dirs(speech_dir: &Path, noise_dir: &Path) -> Result<Self> {
        let mut speakers = Vec::new();
        let mut flat = Vec::new();
        for entry in sorted_entries(speech_dir)? {
            if entry.is_dir() {
                let utts = wavs_in(&entry)?;
                if !utts.is_empty() {
                    speakers.push(utts);
                }
            } else if is_wav(&entry) {
                flat.push(vec![read_wav(&entry)?]);
            }
        }
        speakers.extend(flat);
        let noises = wavs_in(noise_dir)?;
        let cat = Self { speakers, noises };
        cat.validate()?;
        Ok(cat)
    }

    /// A `len`-sample excerpt of one speaker, concatenating random utterances
    /// as needed. Excerpts that fall into pauses are redrawn a few times.
    pub fn speech(&self, rng: &mut impl Rng, speaker: usize, len: usize) -> Vec<f64> {
        let mut out = self.speech_once(rng, speaker, len);
        for _ in 0..16 {
            if super::mix::mean_power(&out) > super::mix::SILENCE_POWER {
                break;
            }
            out = self.speech_once(rng, speaker, len);
        }
        out
    }

    fn speech_once(&self, rng: &mut impl Rng, speaker: usize, len: usize) -> Vec<f64> {
        let utts = &self.speakers[speaker];
        let mut out = Vec::with_capacity(len);
        let first = &utts[rng.gen_range(0..utts.len())];
        let start = if first.len() > len { rng.gen_range(0..first.len() - len) } else { 0 };
        out.extend_from_slice(&first[start..first.len().min(start + len)]);
        while out.len() < len {
            let u = &utts[rng.gen_range(0..utts.len())];
            let take = u.len().min(len - out.len());
            out.extend_from_slice(&u[..take]);
        }
        out
    }

    pub fn noise(&self, rng: &mut impl Rng, len: usize) -> Vec<f64> {
        let src = &self.noises[rng.gen_range(0..self.noises.len())];
        let mut out = Vec::with_capacity(len);
        let mut pos = rng.gen_range(0..src.len());
        while out.len() < len {
            let take = (src.len() - pos).min(len - out.len());
            out.extend_from_slice(&src[pos..pos + take]);
            pos = 0;
        }
        out
    }

    /// Two distinct random speakers.
    pub fn speaker_pair(&self, rng: &mut impl Rng) -> (usize, usize) {
        let a = rng.gen_range(0..self.speakers.len());
        let mut b = rng.gen_range(0..self.speakers.len() - 1);
        if b >= a {
            b += 1;
        }
        (a, b)
    }
}

fn is_wav(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut v = rd.map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e))).collect::<Result<Vec<_>>>()?;
    v.sort();
    Ok(v)
}

fn wavs_in(dir: &Path) -> Result<Vec<Vec<f64>>> {
    sorted_entries(dir)?.into_iter().filter(|p| is_wav(p)).map(|p| read_wav(&p)).collect()
}

struct Voice {
    f0: f64,
    formant_shift: f64,
}

impl Voice {
    fn random(rng: &mut impl Rng) -> Self {
        Self { f0: rng.gen_range(85.0..240.0), formant_shift: rng.gen_range(0.85..1.2) }
    }

    /// Syllable-gated harmonic bursts with pitch contours, formant shaping and
    /// occasional fricatives, separated by short gaps and longer pauses.
    fn utterance(&self, rng: &mut impl Rng, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        let mut pos = (rng.gen_range(0.05..0.3) * FS) as usize;
        while pos < len {
            let dur = (rng.gen_range(0.12..0.32) * FS) as usize;
            let end = (pos + dur).min(len);
            if rng.gen_bool(0.15) {
                self.fricative(rng, &mut out[pos..end]);
            } else {
                self.voiced(rng, &mut out[pos..end]);
            }
            let gap = if rng.gen_bool(0.12) { rng.gen_range(0.3..0.8) } else { rng.gen_range(0.03..0.12) };
            pos = end + (gap * FS) as usize;
        }
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            out.iter_mut().for_each(|v| *v *= 0.5 / peak);
        }
        out
    }

    fn voiced(&self, rng: &mut impl Rng, seg: &mut [f64]) {
        let n = seg.len() as f64;
        let f0 = self.f0 * rng.gen_range(0.85..1.2);
        let slope = rng.gen_range(-0.25..0.15);
        let vib = rng.gen_range(3.0..6.0);
        let formants = [
            rng.gen_range(300.0..850.0) * self.formant_shift,
            rng.gen_range(900.0..2300.0) * self.formant_shift,
            rng.gen_range(2400.0..3200.0) * self.formant_shift,
        ];
        let harmonics = ((4000.0 / f0) as usize).max(1);
        let amps: Vec<f64> = (1..=harmonics)
            .map(|k| {
                let f = k as f64 * f0;
                let env: f64 = formants
                    .iter()
                    .zip([1.0, 0.6, 0.3])
                    .map(|(&fc, g)| g / (1.0 + ((f - fc) / (0.12 * fc)).powi(2)))
                    .sum();
                env / (k as f64).sqrt()
            })
            .collect();
        let mut phase = 0.0f64;
        for (i, s) in seg.iter_mut().enumerate() {
            let t = i as f64 / n;
            let f = f0 * (1.0 + slope * t + 0.03 * (std::f64::consts::TAU * vib * i as f64 / FS).sin());
            phase += std::f64::consts::TAU * f / FS;
            let envelope = (std::f64::consts::PI * t).sin().powf(0.6);
            let mut acc = 0.0;
            for (k, &a) in amps.iter().enumerate() {
                acc += a * ((k + 1) as f64 * phase).sin();
            }
            *s += envelope * acc;
        }
    }

    fn fricative(&self, rng: &mut impl Rng, seg: &mut [f64]) {
        let n = seg.len() as f64;
        let gain = rng.gen_range(0.1..0.3);
        let mut prev = 0.0;
        for (i, s) in seg.iter_mut().enumerate() {
            let w: f64 = StandardNormal.sample(rng);
            let hp = w - prev;
            prev = w;
            *s += gain * (std::f64::consts::PI * i as f64 / n).sin() * hp;
        }
    }
}

/// Gaussian noise through a random one-pole low-pass with slow level drift.
fn colored_noise(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let a: f64 = rng.gen_range(0.0..0.95);
    let drift = rng.gen_range(0.05..0.5);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut state = 0.0;
    let mut out: Vec<f64> = (0..len)
        .map(|i| {
            let w: f64 = StandardNormal.sample(rng);
            state = a * state + (1.0 - a) * w;
            state * (1.0 + 0.3 * (std::f64::consts::TAU * drift * i as f64 / FS + phi).sin())
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    out.iter_mut().for_each(|v| *v *= 0.05 / rms);
    out
}
