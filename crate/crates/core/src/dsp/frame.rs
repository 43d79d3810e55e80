use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SAMPLE_RATE: u32 = 16_000;

/// Framing, transform and feature geometry of the processing chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    pub frame_len: usize,
    pub frame_shift: usize,
    pub dft_size: usize,
    /// Zero-padded frequency length seen by the network.
    pub feature_len: usize,
    pub compression_exponent: f64,
}

impl Default for FrameParams {
    fn default() -> Self {
        Self {
            frame_len: 424,
            frame_shift: 212,
            dft_size: 512,
            feature_len: 264,
            compression_exponent: 0.3,
        }
    }
}

impl FrameParams {
    pub fn bins(&self) -> usize {
        self.dft_size / 2 + 1
    }

    /// Frames per second at the 16 kHz sample rate.
    pub fn frame_rate(&self) -> f64 {
        SAMPLE_RATE as f64 / self.frame_shift as f64
    }

    /// Checks the geometric invariants; `stride_product` is the product of
    /// all encoder strides that must divide the feature length.
    pub fn validate(&self, stride_product: usize) -> Result<()> {
        if self.frame_len == 0 || self.frame_len % 2 != 0 {
            return Err(Error::Config(format!("frame_len {} must be even and positive", self.frame_len)));
        }
        if self.frame_shift * 2 != self.frame_len {
            return Err(Error::Config("frame_shift must be half the frame length".into()));
        }
        if self.dft_size < self.frame_len || self.dft_size % 2 != 0 {
            return Err(Error::Config(format!(
                "dft_size {} must be even and at least the frame length {}",
                self.dft_size, self.frame_len
            )));
        }
        if self.feature_len < self.bins() {
            return Err(Error::Config(format!(
                "feature_len {} below bin count {}",
                self.feature_len,
                self.bins()
            )));
        }
        if stride_product == 0 || self.feature_len % stride_product != 0 {
            return Err(Error::Config(format!(
                "feature_len {} not divisible by stride product {stride_product}",
                self.feature_len
            )));
        }
        if !(self.compression_exponent > 0.0 && self.compression_exponent <= 1.0) {
            return Err(Error::Config("compression exponent must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Frames produced by [`analyze`] for a signal of `len` samples
    /// (the tail is zero-padded up to a full frame).
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            return 0;
        }
        (len - self.frame_len).div_ceil(self.frame_shift) + 1
    }

    /// Length of the overlap-added output for `frames` frames.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.frame_shift + self.frame_len
        }
    }

    /// Leading and trailing zero padding that puts every sample of a
    /// `len`-sample signal under two overlapping frames.
    pub fn reconstruction_padding(&self, len: usize) -> (usize, usize) {
        let front = self.frame_len - self.frame_shift;
        let core = front + len;
        let mut back = self.frame_len - self.frame_shift;
        let total = core + back;
        let rem = (total.max(self.frame_len) - self.frame_len) % self.frame_shift;
        if rem != 0 {
            back += self.frame_shift - rem;
        }
        (front, back)
    }
}

/// Frame-major complex spectra, `bins` coefficients per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSequence<T> {
    frames: usize,
    bins: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> SpectralSequence<T> {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self { frames, bins, data: vec![Complex::new(T::zero(), T::zero()); frames * bins] }
    }

    pub fn from_vec(frames: usize, bins: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(Error::Shape(format!(
                "{} coefficients for {frames} frames x {bins} bins",
                data.len()
            )));
        }
        Ok(Self { frames, bins, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frame(&self, idx: usize) -> &[Complex<T>] {
        &self.data[idx * self.bins..(idx + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, idx: usize) -> &mut [Complex<T>] {
        &mut self.data[idx * self.bins..(idx + 1) * self.bins]
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex<T>> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Element-wise product with another sequence of equal shape.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.frames != other.frames || self.bins != other.bins {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.frames, self.bins, other.frames, other.bins
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Self { frames: self.frames, bins: self.bins, data })
    }

    pub fn cast<U: Scalar>(&self) -> SpectralSequence<U> {
        SpectralSequence {
            frames: self.frames,
            bins: self.bins,
            data: self
                .data
                .iter()
                .map(|c| Complex::new(U::of(c.re.to_f64_lossy()), U::of(c.im.to_f64_lossy())))
                .collect(),
        }
    }
}

/// Square-root Hann window, half-sample shifted so that both ends are
/// non-zero. Its square satisfies the constant-overlap-add condition at
/// 50% overlap exactly.
pub fn sqrt_hann<T: Scalar>(len: usize) -> Vec<T> {
    let n = T::of(len as f64);
    (0..len)
        .map(|i| (T::PI() * (T::of(i as f64) + T::of(0.5)) / n).sin())
        .collect()
}

/// Reusable analysis/synthesis engine holding FFT plans and the window.
pub struct Stft<T: Scalar> {
    params: FrameParams,
    window: Vec<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Scalar> Stft<T> {
    pub fn new(params: FrameParams) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            window: sqrt_hann(params.frame_len),
            forward: planner.plan_fft_forward(params.dft_size),
            inverse: planner.plan_fft_inverse(params.dft_size),
            params,
        }
    }

    pub fn params(&self) -> &FrameParams {
        &self.params
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    pub fn analyze(&self, signal: &[T]) -> Result<SpectralSequence<T>> {
        let p = &self.params;
        if signal.len() < p.frame_len {
            return Err(Error::TooShort { len: signal.len(), frame_len: p.frame_len });
        }
        let frames = p.frame_count(signal.len());
        let bins = p.bins();
        let mut out = SpectralSequence::zeros(frames, bins);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); p.dft_size];
        for f in 0..frames {
            let start = f * p.frame_shift;
            for (i, slot) in buf.iter_mut().enumerate() {
                let v = if i < p.frame_len {
                    signal.get(start + i).copied().unwrap_or_else(T::zero) * self.window[i]
                } else {
                    T::zero()
                };
                *slot = Complex::new(v, T::zero());
            }
            self.forward.process(&mut buf);
            out.frame_mut(f).copy_from_slice(&buf[..bins]);
        }
        Ok(out)
    }

    pub fn synthesize(&self, spectra: &SpectralSequence<T>) -> Result<Vec<T>> {
        let p = &self.params;
        let bins = p.bins();
        if spectra.bins() != bins {
            return Err(Error::Shape(format!("expected {bins} bins, got {}", spectra.bins())));
        }
        if !spectra.is_finite() {
            return Err(Error::NonFinite { what: "spectra passed to synthesis".into() });
        }
        let k = p.dft_size;
        let scale = T::one() / T::of(k as f64);
        let mut out = vec![T::zero(); p.synthesis_len(spectra.frames())];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); k];
        for f in 0..spectra.frames() {
            let frame = spectra.frame(f);
            buf[..bins].copy_from_slice(frame);
            for b in 1..k - bins + 1 {
                buf[k - b] = frame[b].conj();
            }
            self.inverse.process(&mut buf);
            let start = f * p.frame_shift;
            for i in 0..p.frame_len {
                out[start + i] = out[start + i] + buf[i].re * scale * self.window[i];
            }
        }
        Ok(out)
    }

    /// Analysis with [`FrameParams::reconstruction_padding`] applied.
    pub fn analyze_padded(&self, signal: &[T]) -> Result<SpectralSequence<T>> {
        let (front, back) = self.params.reconstruction_padding(signal.len());
        let mut padded = vec![T::zero(); front + signal.len() + back];
        padded[front..front + signal.len()].copy_from_slice(signal);
        self.analyze(&padded)
    }

    /// Inverse of [`Stft::analyze_padded`], cropped to `len` samples.
    pub fn synthesize_cropped(&self, spectra: &SpectralSequence<T>, len: usize) -> Result<Vec<T>> {
        let full = self.synthesize(spectra)?;
        let (front, _) = self.params.reconstruction_padding(len);
        if full.len() < front + len {
            return Err(Error::Shape(format!(
                "synthesized {} samples, need {}",
                full.len(),
                front + len
            )));
        }
        Ok(full[front..front + len].to_vec())
    }
}

pub fn analyze<T: Scalar>(signal: &[T], params: &FrameParams) -> Result<SpectralSequence<T>> {
    Stft::new(*params).analyze(signal)
}

pub fn synthesize<T: Scalar>(spectra: &SpectralSequence<T>, params: &FrameParams) -> Result<Vec<T>> {
    Stft::new(*params).synthesize(spectra)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(frame: &[f64], k: usize) -> Vec<Complex<f64>> {
        (0..k)
            .map(|bin| {
                frame.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (n, &v)| {
                    let ang = -2.0 * std::f64::consts::PI * (bin * n) as f64 / k as f64;
                    acc + Complex::new(v * ang.cos(), v * ang.sin())
                })
            })
            .collect()
    }

    #[test]
    fn zero_signal_gives_zero_frames() {
        let p = FrameParams::default();
        let s = analyze(&vec![0.0f64; 848], &p).unwrap();
        assert_eq!(s.frames(), 3);
        assert_eq!(s.bins(), 257);
        assert!(s.as_slice().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn impulse_spectrum_is_flat_first_window_coefficient() {
        let p = FrameParams::default();
        let mut sig = vec![0.0f64; 848];
        sig[0] = 1.0;
        let s = analyze(&sig, &p).unwrap();
        let w0 = sqrt_hann::<f64>(424)[0];
        assert!(w0 > 0.0);
        for c in s.frame(0) {
            assert!((c.re - w0).abs() < 1e-15 && c.im.abs() < 1e-15);
        }
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let p = FrameParams::default();
        let sig: Vec<f64> = (0..2000)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16000.0).sin())
            .collect();
        let s = analyze(&sig, &p).unwrap();
        // reference DFT of the windowed first frame
        let w = sqrt_hann::<f64>(424);
        let mut frame: Vec<f64> = sig[..424].iter().zip(&w).map(|(a, b)| a * b).collect();
        frame.resize(512, 0.0);
        let reference = naive_dft(&frame, 512);
        let peak = (0..257).max_by(|&a, &b| reference[a].norm().total_cmp(&reference[b].norm())).unwrap();
        assert_eq!(peak, 32);
        for (a, b) in s.frame(0).iter().zip(&reference[..257]) {
            assert!((a - b).norm() < 1e-9);
        }
        let fast_peak = (0..257).max_by(|&a, &b| s.frame(0)[a].norm().total_cmp(&s.frame(0)[b].norm())).unwrap();
        assert_eq!(fast_peak, 32);
    }

    #[test]
    fn too_short_is_reported() {
        let err = analyze(&[0.0f64; 100], &FrameParams::default()).unwrap_err();
        assert!(matches!(err, Error::TooShort { len: 100, frame_len: 424 }));
    }

    #[test]
    fn frame_count_pads_tail() {
        let p = FrameParams::default();
        assert_eq!(p.frame_count(424), 1);
        assert_eq!(p.frame_count(425), 2);
        assert_eq!(p.frame_count(848), 3);
        assert_eq!(p.frame_count(423), 0);
    }

    #[test]
    fn round_trip_interior_is_exact() {
        let p = FrameParams::default();
        let stft = Stft::<f64>::new(p);
        let sig: Vec<f64> = (0..5000).map(|n| ((n * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
        let rec = stft.synthesize(&stft.analyze(&sig).unwrap()).unwrap();
        for n in p.frame_shift..sig.len() - p.frame_len {
            assert!((rec[n] - sig[n]).abs() < 1e-10, "sample {n}");
        }
    }

    #[test]
    fn padded_round_trip_covers_every_sample() {
        let p = FrameParams::default();
        let stft = Stft::<f64>::new(p);
        let sig: Vec<f64> = (0..3001).map(|n| (n as f64 * 0.37).sin()).collect();
        let spec = stft.analyze_padded(&sig).unwrap();
        let rec = stft.synthesize_cropped(&spec, sig.len()).unwrap();
        let err = rec.iter().zip(&sig).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn zero_spectra_synthesize_to_zero() {
        let p = FrameParams::default();
        let out = synthesize(&SpectralSequence::<f64>::zeros(4, 257), &p).unwrap();
        assert_eq!(out.len(), 3 * 212 + 424);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_has_window_support() {
        let p = FrameParams::default();
        let mut spec = SpectralSequence::<f64>::zeros(5, 257);
        for c in spec.frame_mut(2) {
            *c = Complex::new(1.0, 0.5);
        }
        let out = synthesize(&spec, &p).unwrap();
        let support: Vec<usize> = out.iter().enumerate().filter(|(_, v)| v.abs() > 0.0).map(|(i, _)| i).collect();
        assert_eq!(*support.first().unwrap(), 2 * 212);
        assert!(*support.last().unwrap() < 2 * 212 + 424);
        assert!(support.len() <= 424);
    }

    #[test]
    fn non_finite_spectra_rejected() {
        let mut spec = SpectralSequence::<f64>::zeros(2, 257);
        spec.frame_mut(1)[3] = Complex::new(f64::NAN, 0.0);
        assert!(matches!(synthesize(&spec, &FrameParams::default()), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn validate_rejects_bad_geometry() {
        let p = FrameParams::default();
        assert!(p.validate(8).is_ok());
        assert!(p.validate(5).is_err());
        assert!(FrameParams { feature_len: 256, ..p }.validate(8).is_err());
        assert!(FrameParams { frame_shift: 100, ..p }.validate(8).is_err());
    }
}
