use super::network::Crn;
use crate::autodiff::{Graph, ParamStore, Tensor};
use crate::dsp::{apply_mask, assemble_features, crop_mask, SpectralSequence, Stft};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Frames per inference chunk; the recurrent state carries across chunks.
pub const DEFAULT_CHUNK_FRAMES: usize = 512;

/// Enhances microphone signal `y` given far-end reference `x`, returning an
/// estimate of the same length. Runs the network chunk by chunk.
pub fn enhance<T: Scalar>(
    crn: &Crn,
    store: &ParamStore<T>,
    x: &[T],
    y: &[T],
    chunk_frames: usize,
) -> Result<Vec<T>> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("far-end has {} samples, microphone {}", x.len(), y.len())));
    }
    if chunk_frames == 0 {
        return Err(Error::Config("chunk length must be positive".into()));
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: format!("input sample {}", i % x.len().max(1)) });
    }
    let params = crn.frame_params();
    let len = y.len();
    let (front, back) = params.reconstruction_padding(len);
    let pad = |s: &[T]| {
        let mut v = vec![T::zero(); front];
        v.extend_from_slice(s);
        v.resize(front + len + back, T::zero());
        v
    };
    let stft = Stft::<T>::new(params.clone());
    let xs = stft.analyze(&pad(x))?;
    let ys = stft.analyze(&pad(y))?;
    let feats = assemble_features(&xs, &ys, &params, crn.config().input_compression)?;
    let masks = network_masks(crn, store, &feats, chunk_frames)?;
    let bins = params.bins();
    let m = crop_mask(&masks, bins)?;
    let e = apply_mask(ys.as_slice(), m.as_slice())?;
    let e = SpectralSequence::from_vec(ys.frames(), bins, e)?;
    let out = stft.synthesize(&e)?;
    Ok(out[front..front + len].to_vec())
}

/// Raw network output `[frames, L, 2]` for features `[frames, L, 4]`.
pub fn network_masks<T: Scalar>(
    crn: &Crn,
    store: &ParamStore<T>,
    features: &Tensor<T>,
    chunk_frames: usize,
) -> Result<Tensor<T>> {
    let s = features.shape().to_vec();
    if s.len() != 3 {
        return Err(Error::Shape(format!("features {s:?}")));
    }
    let per = s[1] * s[2];
    let mut state = None;
    let mut out = Vec::with_capacity(s[0] * s[1] * 2);
    for start in (0..s[0]).step_by(chunk_frames.max(1)) {
        let end = (start + chunk_frames).min(s[0]);
        let chunk = Tensor::from_vec(&[end - start, s[1], s[2]], features.data()[start * per..end * per].to_vec())?;
        let mut g = Graph::new(store);
        let xin = g.input(chunk, false);
        let (m, st) = crn.forward(&mut g, xin, state.as_ref())?;
        out.extend_from_slice(g.value(m).data());
        state = Some(st);
    }
    Tensor::from_vec(&[s[0], s[1], 2], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{apply_ablation, AblationStage, Bottleneck, CrnConfig};

    fn micro() -> CrnConfig {
        CrnConfig { kernel_count: 4, kernel_size: 3, bottleneck: Bottleneck::GroupedGru1, groups_layer1: 4, ..apply_ablation(AblationStage::M5) }
    }

    fn signal(n: usize, f: f64) -> Vec<f64> {
        (0..n).map(|i| 0.3 * (i as f64 * f).sin()).collect()
    }

    #[test]
    fn output_length_and_chunk_invariance() {
        let (crn, store) = Crn::build(micro(), 5).unwrap();
        let (x, y) = (signal(5000, 0.05), signal(5000, 0.031));
        let a = enhance(&crn, &store, &x, &y, 512).unwrap();
        let b = enhance(&crn, &store, &x, &y, 3).unwrap();
        assert_eq!(a.len(), 5000);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn single_precision_tracks_double() {
        let (crn, store) = Crn::build(micro(), 6).unwrap();
        let (x, y) = (signal(3000, 0.07), signal(3000, 0.02));
        let a = enhance(&crn, &store, &x, &y, 64).unwrap();
        let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let yf: Vec<f32> = y.iter().map(|&v| v as f32).collect();
        let b = enhance(&crn, &store.cast::<f32>(), &xf, &yf, 64).unwrap();
        let err = a.iter().zip(&b).map(|(p, q)| (p - *q as f64).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "max deviation {err}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let (crn, store) = Crn::build(micro(), 5).unwrap();
        assert!(enhance(&crn, &store, &[0.0; 10], &[0.0; 11], 8).is_err());
        let mut y = vec![0.0; 1000];
        y[3] = f64::NAN;
        assert!(matches!(enhance(&crn, &store, &vec![0.0; 1000], &y, 8), Err(Error::NonFinite { .. })));
    }
}
