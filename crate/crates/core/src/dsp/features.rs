use num_complex::Complex;

use super::frame::{FrameParams, SpectralSequence};
use super::mask::compress_input;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const INPUT_CHANNELS: usize = 4;
pub const MASK_CHANNELS: usize = 2;

/// Builds the `[frames, L, 4]` network input with channels
/// `[Re Y, Im Y, Re X, Im X]`, zero-padded along frequency to `L`.
pub fn assemble_features<T: Scalar>(
    x: &SpectralSequence<T>,
    y: &SpectralSequence<T>,
    params: &FrameParams,
    compressed: bool,
) -> Result<Tensor<T>> {
    if x.frames() != y.frames() {
        return Err(Error::Shape(format!("farend has {} frames, microphone {}", x.frames(), y.frames())));
    }
    let bins = params.bins();
    if x.bins() != bins || y.bins() != bins {
        return Err(Error::Shape(format!("expected {bins} bins")));
    }
    let l = params.feature_len;
    let frames = y.frames();
    let mut out = Tensor::zeros(&[frames, l, INPUT_CHANNELS]);
    let data = out.data_mut();
    for f in 0..frames {
        let (yf, xf): (Vec<Complex<T>>, Vec<Complex<T>>) = if compressed {
            (
                compress_input(y.frame(f), params.compression_exponent)?,
                compress_input(x.frame(f), params.compression_exponent)?,
            )
        } else {
            (y.frame(f).to_vec(), x.frame(f).to_vec())
        };
        for k in 0..bins {
            let base = (f * l + k) * INPUT_CHANNELS;
            data[base] = yf[k].re;
            data[base + 1] = yf[k].im;
            data[base + 2] = xf[k].re;
            data[base + 3] = xf[k].im;
        }
    }
    Ok(out)
}

/// Takes the first `bins` frequency entries of a `[frames, L, 2]` network
/// output as the complex mask `(Re M, Im M)`.
pub fn crop_mask<T: Scalar>(output: &Tensor<T>, bins: usize) -> Result<SpectralSequence<T>> {
    let shape = output.shape();
    if shape.len() != 3 || shape[2] != MASK_CHANNELS || shape[1] < bins {
        return Err(Error::Shape(format!("network output {shape:?} cannot hold a {bins}-bin mask")));
    }
    let (frames, l) = (shape[0], shape[1]);
    let d = output.data();
    let mut data = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        for k in 0..bins {
            let base = (f * l + k) * MASK_CHANNELS;
            data.push(Complex::new(d[base], d[base + 1]));
        }
    }
    SpectralSequence::from_vec(frames, bins, data)
}
