use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Bottleneck, CrnConfig};
use crate::autodiff::{glorot_uniform, orthogonal, Graph, ParamId, ParamStore, Tensor, Var};
use crate::dsp::{FrameParams, SpectralSequence, Stft, MASK_CHANNELS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub(crate) struct ConvLayer {
    pub name: String,
    pub w: ParamId,
    pub b: ParamId,
    pub taps: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub activation: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct SkipLayer {
    pub name: String,
    pub w: ParamId,
    pub b: ParamId,
    pub taps: usize,
    pub channels: usize,
    pub len: usize,
    /// Encoder layer whose output feeds the skip; `None` is the network input.
    pub source: Option<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct GruUnit {
    pub wih: ParamId,
    pub whh: ParamId,
    pub b: ParamId,
    pub din: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct GruLayer {
    pub name: String,
    pub units: Vec<GruUnit>,
}

#[derive(Debug, Clone)]
pub(crate) struct LstmLayer {
    pub name: String,
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub taps: usize,
    pub cin: usize,
    pub filters: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum Core {
    ConvLstm(Vec<LstmLayer>),
    Grouped { input: ConvLayer, layers: Vec<GruLayer>, restore: ConvLayer },
}

/// Convolutional recurrent masking network. Parameters live in a separate
/// [`ParamStore`] so one description serves training (f64) and inference
/// in either precision.
#[derive(Debug, Clone)]
pub struct Crn {
    config: CrnConfig,
    pub(crate) encoder: Vec<ConvLayer>,
    pub(crate) core: Core,
    pub(crate) decoder: Vec<(ConvLayer, SkipLayer)>,
    pub(crate) output: ConvLayer,
}

/// Recurrent state carried between consecutive chunks of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<T> {
    pub buffers: Vec<Vec<T>>,
}

struct Builder {
    store: ParamStore<f64>,
    rng: ChaCha8Rng,
    /// When false all tensors stay zero and no random numbers are drawn.
    init: bool,
}

impl Builder {
    fn glorot(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<f64> {
        if self.init {
            glorot_uniform(&mut self.rng, shape, fan_in, fan_out)
        } else {
            Tensor::zeros(shape)
        }
    }

    fn conv(&mut self, name: String, taps: usize, cin: usize, cout: usize, stride: usize, len_in: usize, act: bool) -> Result<ConvLayer> {
        let w = self.glorot(&[taps, cin, cout], taps * cin, taps * cout);
        let w = self.store.register(format!("{name}.w"), w)?;
        let b = self.store.register(format!("{name}.b"), Tensor::zeros(&[cout]))?;
        Ok(ConvLayer { name, w, b, taps, cin, cout, stride, len_in, len_out: len_in.div_ceil(stride), activation: act })
    }

    fn deconv(&mut self, name: String, taps: usize, cin: usize, cout: usize, len_in: usize) -> Result<ConvLayer> {
        let w = self.glorot(&[taps, cin, cout], taps * cin, taps * cout);
        let w = self.store.register(format!("{name}.w"), w)?;
        let b = self.store.register(format!("{name}.b"), Tensor::zeros(&[cout]))?;
        Ok(ConvLayer { name, w, b, taps, cin, cout, stride: 2, len_in, len_out: 2 * len_in, activation: true })
    }

    fn skip(&mut self, name: String, taps: usize, channels: usize, len: usize, source: Option<usize>) -> Result<SkipLayer> {
        let w = self.glorot(&[taps, channels], taps, taps);
        let w = self.store.register(format!("{name}.w"), w)?;
        let b = self.store.register(format!("{name}.b"), Tensor::zeros(&[channels]))?;
        Ok(SkipLayer { name, w, b, taps, channels, len, source })
    }

    fn gru(&mut self, name: &str, din: usize, hidden: usize) -> Result<GruUnit> {
        let mut wih = vec![0.0; din * 3 * hidden];
        let mut whh = vec![0.0; hidden * 3 * hidden];
        for gate in (0..3).filter(|_| self.init) {
            let g = glorot_uniform::<f64>(&mut self.rng, &[din, hidden], din, hidden);
            let q = orthogonal(&mut self.rng, hidden);
            for i in 0..din {
                for k in 0..hidden {
                    wih[i * 3 * hidden + gate * hidden + k] = g.data()[i * hidden + k];
                }
            }
            for i in 0..hidden {
                for k in 0..hidden {
                    whh[i * 3 * hidden + gate * hidden + k] = q[i * hidden + k];
                }
            }
        }
        let wih = self.store.register(format!("{name}.wih"), Tensor::from_vec(&[din, 3 * hidden], wih)?)?;
        let whh = self.store.register(format!("{name}.whh"), Tensor::from_vec(&[hidden, 3 * hidden], whh)?)?;
        let b = self.store.register(format!("{name}.b"), Tensor::zeros(&[3 * hidden]))?;
        Ok(GruUnit { wih, whh, b, din, hidden })
    }

    fn lstm(&mut self, name: String, taps: usize, cin: usize, filters: usize, len: usize) -> Result<LstmLayer> {
        let f = filters;
        let wx = self.glorot(&[taps, cin, 4 * f], taps * cin, taps * f);
        let wh = self.glorot(&[taps, f, 4 * f], taps * f, taps * f);
        let mut b = Tensor::zeros(&[4 * f]);
        b.data_mut()[f..2 * f].fill(1.0);
        let wx = self.store.register(format!("{name}.wx"), wx)?;
        let wh = self.store.register(format!("{name}.wh"), wh)?;
        let b = self.store.register(format!("{name}.b"), b)?;
        Ok(LstmLayer { name, wx, wh, b, taps, cin, filters, len })
    }
}

impl Crn {
    /// Builds the network and a freshly initialized parameter store.
    /// Parameter names and registration order depend only on the config,
    /// values only on `(config, seed)`.
    pub fn build(config: CrnConfig, seed: u64) -> Result<(Crn, ParamStore<f64>)> {
        Self::assemble(config, seed, true)
    }

    /// The network structure alone, for complexity accounting. The returned
    /// store is zero-filled.
    pub fn layout(config: CrnConfig) -> Result<(Crn, ParamStore<f64>)> {
        Self::assemble(config, 0, false)
    }

    fn assemble(config: CrnConfig, seed: u64, init: bool) -> Result<(Crn, ParamStore<f64>)> {
        config.validate()?;
        let mut bld = Builder { store: ParamStore::new(), rng: ChaCha8Rng::seed_from_u64(seed), init };
        let n = config.kernel_size;
        let chans = config.channels();
        let mut encoder = Vec::new();
        let mut len = config.feature_len;
        let mut lens = vec![len];
        for (i, &s) in config.strides.iter().enumerate() {
            let layer = bld.conv(format!("enc{}", i + 1), n, chans[i], chans[i + 1], s, len, true)?;
            len = layer.len_out;
            lens.push(len);
            encoder.push(layer);
        }
        let f = config.kernel_count;
        let top = *chans.last().expect("non-empty encoder");
        let core = match config.bottleneck {
            Bottleneck::ConvLstm2 => {
                let l1 = bld.lstm("lstm1".into(), n, top, f, len)?;
                let l2 = bld.lstm("lstm2".into(), n, f, f, len)?;
                Core::ConvLstm(vec![l1, l2])
            }
            Bottleneck::GroupedGru1 | Bottleneck::GroupedGru2 => {
                let input = bld.conv("bneck_in".into(), n, top, f, 1, len, true)?;
                let width = len * f;
                let mut layers = Vec::new();
                for (li, g) in config.group_counts().into_iter().enumerate() {
                    let chunk = width / g;
                    let mut units = Vec::with_capacity(g);
                    for gi in 0..g {
                        units.push(bld.gru(&format!("gru{}.g{gi:02}", li + 1), chunk, chunk)?);
                    }
                    layers.push(GruLayer { name: format!("gru{}", li + 1), units });
                }
                let restore = bld.conv("bneck_out".into(), n, f, top, 1, len, true)?;
                Core::Grouped { input, layers, restore }
            }
        };
        let mut cur = config.restore_channels();
        let mut decoder = Vec::new();
        for (di, i) in (0..config.strides.len()).rev().filter(|&i| config.strides[i] == 2).enumerate() {
            let dec = bld.deconv(format!("dec{}", di + 1), n, cur, chans[i], lens[i + 1])?;
            let source = i.checked_sub(1);
            let skip = bld.skip(format!("skip{}", di + 1), n, chans[i], lens[i], source)?;
            cur = chans[i];
            decoder.push((dec, skip));
        }
        let output = bld.conv("out".into(), n, cur, MASK_CHANNELS, 1, config.feature_len, false)?;
        let crn = Crn { config, encoder, core, decoder, output };
        Ok((crn, bld.store))
    }

    pub fn config(&self) -> &CrnConfig {
        &self.config
    }

    pub fn frame_params(&self) -> FrameParams {
        FrameParams {
            feature_len: self.config.feature_len,
            compression_exponent: self.config.compression_exponent,
            ..FrameParams::default()
        }
    }

    /// Number of weight layers (convolutions, transposed convolutions,
    /// skip filters and recurrent layers).
    pub fn layer_count(&self) -> usize {
        let core = match &self.core {
            Core::ConvLstm(l) => l.len(),
            Core::Grouped { layers, .. } => layers.len() + 2,
        };
        self.encoder.len() + core + 2 * self.decoder.len() + 1
    }

    /// Checks that `store` holds every parameter of this network with the
    /// expected shape.
    pub fn check_store<T: Scalar>(&self, store: &ParamStore<T>) -> Result<()> {
        let (_, fresh) = Crn::build(self.config.clone(), 0)?;
        if fresh.len() != store.len() {
            return Err(Error::Param(format!("expected {} parameter tensors, found {}", fresh.len(), store.len())));
        }
        for ((name, a), (other, b)) in fresh.iter().zip(store.iter()) {
            if name != other || a.shape() != b.shape() {
                return Err(Error::Param(format!("parameter `{other}` {:?} where `{name}` {:?} expected", b.shape(), a.shape())));
            }
        }
        Ok(())
    }

    /// Parameter store filled from checkpoint entries by name; entries that
    /// are not parameters of this network are ignored.
    pub fn params_from_entries(&self, entries: &[(String, Tensor<f64>)]) -> Result<ParamStore<f64>> {
        let (_, mut store) = Crn::build(self.config.clone(), 0)?;
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let (_, t) = entries
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::Param(format!("checkpoint lacks parameter `{name}`")))?;
            if t.shape() != store.get(id).shape() {
                return Err(Error::Param(format!(
                    "parameter `{name}` has shape {:?}, network expects {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = t.clone();
        }
        Ok(store)
    }

    pub fn load_params(&self, path: &std::path::Path) -> Result<ParamStore<f64>> {
        self.params_from_entries(&crate::autodiff::load_checkpoint(path)?)
    }

    /// Zero recurrent state.
    pub fn initial_state<T: Scalar>(&self) -> RecurrentState<T> {
        let buffers = match &self.core {
            Core::ConvLstm(ls) => ls
                .iter()
                .flat_map(|l| [vec![T::zero(); l.len * l.filters], vec![T::zero(); l.len * l.filters]])
                .collect(),
            Core::Grouped { layers, .. } => {
                layers.iter().flat_map(|l| l.units.iter().map(|u| vec![T::zero(); u.hidden])).collect()
            }
        };
        RecurrentState { buffers }
    }

    fn conv_var<T: Scalar>(g: &mut Graph<T>, l: &ConvLayer, x: Var) -> Result<Var> {
        let (w, b) = (g.param(l.w), g.param(l.b));
        let y = g.conv(x, w, b, l.stride)?;
        Ok(if l.activation { g.elu(y) } else { y })
    }

    /// Maps features `[frames, L, 4]` to the raw mask output `[frames, L, 2]`
    /// and returns the recurrent state after the last frame.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        features: Var,
        state: Option<&RecurrentState<T>>,
    ) -> Result<(Var, RecurrentState<T>)> {
        let shape = g.shape(features).to_vec();
        if shape.len() != 3 || shape[1] != self.config.feature_len || shape[2] != crate::dsp::INPUT_CHANNELS {
            return Err(Error::Shape(format!(
                "features {shape:?}, expected [frames, {}, {}]",
                self.config.feature_len,
                crate::dsp::INPUT_CHANNELS
            )));
        }
        let frames = shape[0];
        let init = self.initial_state();
        let state = state.unwrap_or(&init);
        if state.buffers.len() != init.buffers.len()
            || state.buffers.iter().zip(&init.buffers).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::Shape("recurrent state does not match the network".into()));
        }
        let mut outs = Vec::with_capacity(self.encoder.len());
        let mut x = features;
        for l in &self.encoder {
            x = Self::conv_var(g, l, x)?;
            outs.push(x);
        }
        let mut next = Vec::with_capacity(state.buffers.len());
        match &self.core {
            Core::ConvLstm(layers) => {
                for (i, l) in layers.iter().enumerate() {
                    let (wx, wh, b) = (g.param(l.wx), g.param(l.wh), g.param(l.b));
                    let (h0, c0) = (&state.buffers[2 * i], &state.buffers[2 * i + 1]);
                    x = g.convlstm(x, wx, wh, b, Some((h0, c0)))?;
                    let (h, c) = g.convlstm_final_state(x).expect("convlstm node");
                    next.push(h);
                    next.push(c);
                }
            }
            Core::Grouped { input, layers, restore } => {
                x = Self::conv_var(g, input, x)?;
                let (len, f) = (input.len_out, input.cout);
                let width = len * f;
                x = g.reshape(x, &[frames, width])?;
                let mut k = 0;
                for (li, layer) in layers.iter().enumerate() {
                    if li > 0 {
                        x = rearrange(g, x, frames, width, layers[li - 1].units.len())?;
                    }
                    let chunk = width / layer.units.len();
                    let mut parts = Vec::with_capacity(layer.units.len());
                    for (gi, u) in layer.units.iter().enumerate() {
                        let xi = g.slice_cols(x, gi * chunk, chunk)?;
                        let (wih, whh, b) = (g.param(u.wih), g.param(u.whh), g.param(u.b));
                        let h = g.gru(xi, wih, whh, b, Some(&state.buffers[k]))?;
                        next.push(g.gru_final_state(h).expect("gru node"));
                        k += 1;
                        parts.push(h);
                    }
                    x = g.concat_cols(&parts)?;
                }
                x = g.reshape(x, &[frames, len, f])?;
                x = Self::conv_var(g, restore, x)?;
            }
        }
        for (dec, skip) in &self.decoder {
            let (w, b) = (g.param(dec.w), g.param(dec.b));
            let up = g.deconv(x, w, b, 2)?;
            let src = skip.source.map_or(features, |i| outs[i]);
            let (w, b) = (g.param(skip.w), g.param(skip.b));
            let s = g.depthwise(src, w, b)?;
            let sum = g.add(up, s)?;
            x = g.elu(sum);
        }
        let out = Self::conv_var(g, &self.output, x)?;
        Ok((out, RecurrentState { buffers: next }))
    }

    /// Differentiable enhancement of a padded excerpt: network output to
    /// complex gain, applied to the microphone spectrum `y`, resynthesized
    /// and cropped to `len` samples starting at `offset`.
    pub fn enhance_graph<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        features: Var,
        y: Arc<SpectralSequence<T>>,
        stft: Arc<Stft<T>>,
        offset: usize,
        len: usize,
    ) -> Result<Var> {
        let (m, _) = self.forward(g, features, None)?;
        let gain = g.complex_gain(m, y.bins())?;
        let e = g.complex_mul_const(gain, y)?;
        g.istft(e, stft, offset, len)
    }
}

/// Interleaves the outputs of `groups` equal chunks so that every group of
/// the following layer sees entries from all previous groups:
/// `new[j·groups + g] = old[g·chunk + j]`.
fn rearrange<T: Scalar>(g: &mut Graph<T>, x: Var, frames: usize, width: usize, groups: usize) -> Result<Var> {
    let chunk = width / groups;
    let mut index = Vec::with_capacity(frames * width);
    for t in 0..frames {
        for j in 0..chunk {
            for gi in 0..groups {
                index.push(t * width + gi * chunk + j);
            }
        }
    }
    g.gather(x, index, &[frames, width])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{apply_ablation, AblationStage};

    pub(crate) fn micro(bottleneck: Bottleneck) -> CrnConfig {
        CrnConfig {
            kernel_count: 4,
            kernel_size: 3,
            bottleneck,
            groups_layer1: 4,
            groups_layer2: 2,
            ..apply_ablation(AblationStage::M5)
        }
    }

    fn features(frames: usize, seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * 264 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(&[frames, 264, 4], data).unwrap()
    }

    #[test]
    fn layer_counts_match_names() {
        let (a, _) = Crn::build(apply_ablation(AblationStage::Fcrn15), 1).unwrap();
        let (b, _) = Crn::build(apply_ablation(AblationStage::M5), 1).unwrap();
        assert_eq!(a.layer_count(), 15);
        assert_eq!(b.layer_count(), 16);
        let (c, _) = Crn::build(apply_ablation(AblationStage::M4), 1).unwrap();
        assert_eq!(c.layer_count(), 17);
    }

    #[test]
    fn layout_matches_build_structure() {
        let cfg = micro(Bottleneck::GroupedGru2);
        let (a, sa) = Crn::build(cfg.clone(), 3).unwrap();
        let (b, sb) = Crn::layout(cfg).unwrap();
        assert_eq!(a.complexity(), b.complexity());
        let names = |s: &ParamStore<f64>| s.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect::<Vec<_>>();
        assert_eq!(names(&sa), names(&sb));
        assert!(sb.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn output_shape_and_determinism() {
        for bn in [Bottleneck::ConvLstm2, Bottleneck::GroupedGru2, Bottleneck::GroupedGru1] {
            let (crn, store) = Crn::build(micro(bn), 3).unwrap();
            let (_, again) = Crn::build(micro(bn), 3).unwrap();
            assert!(store.iter().zip(again.iter()).all(|(a, b)| a == b));
            crn.check_store(&store).unwrap();
            let mut g = Graph::new(&store);
            let x = g.input(features(5, 1), false);
            let (m, st) = crn.forward(&mut g, x, None).unwrap();
            assert_eq!(g.shape(m), &[5, 264, 2]);
            assert!(g.value(m).is_finite());
            assert_eq!(st.buffers.len(), crn.initial_state::<f64>().buffers.len());
        }
    }

    #[test]
    fn chunked_forward_matches_full_sequence() {
        for bn in [Bottleneck::ConvLstm2, Bottleneck::GroupedGru2] {
            let (crn, store) = Crn::build(micro(bn), 4).unwrap();
            let feats = features(7, 2);
            let mut g = Graph::new(&store);
            let x = g.input(feats.clone(), false);
            let (full, _) = crn.forward(&mut g, x, None).unwrap();
            let full = g.value(full).data().to_vec();
            let per = 264 * 4;
            let mut state = None;
            let mut chunked = Vec::new();
            for (a, b) in [(0, 3), (3, 4), (4, 7)] {
                let t = Tensor::from_vec(&[b - a, 264, 4], feats.data()[a * per..b * per].to_vec()).unwrap();
                let mut g = Graph::new(&store);
                let x = g.input(t, false);
                let (m, st) = crn.forward(&mut g, x, state.as_ref()).unwrap();
                chunked.extend_from_slice(g.value(m).data());
                state = Some(st);
            }
            assert_eq!(full.len(), chunked.len());
            for (a, b) in full.iter().zip(&chunked) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rearrangement_interleaves_groups() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_vec(&[1, 6], (0..6).map(f64::from).collect()).unwrap(), false);
        let y = rearrange(&mut g, x, 1, 6, 3).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 2.0, 4.0, 1.0, 3.0, 5.0]);
    }

    #[test]
    fn wrong_store_rejected() {
        let (crn, _) = Crn::build(micro(Bottleneck::GroupedGru1), 0).unwrap();
        let (_, other) = Crn::build(micro(Bottleneck::GroupedGru2), 0).unwrap();
        assert!(crn.check_store(&other).is_err());
    }
}
