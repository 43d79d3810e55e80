use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mcs::MinibatchConditionSplit;
use super::sampler::TrainEntry;
use crate::autodiff::{Graph, Tensor, Var, LOSS_EPSILON};
use crate::dsp::{assemble_features, mask_gain, SpectralSequence, Stft};
use crate::error::{Error, Result};
use crate::model::Crn;
use crate::synth::Condition;

/// `10·log10(Σ (a − b)² + ε)`.
pub fn logmse(estimate: &[f64], target: &[f64]) -> Result<f64> {
    if estimate.len() != target.len() {
        return Err(Error::Shape(format!("logmse of {} and {} samples", estimate.len(), target.len())));
    }
    let sum: f64 = estimate.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(10.0 * (sum + LOSS_EPSILON).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConditionWeights {
    /// Weight of the speech-component term.
    pub alpha: f64,
    /// Weight of the residual-echo term.
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossWeights {
    pub dt: ConditionWeights,
    pub stfe: ConditionWeights,
    pub stne: ConditionWeights,
}

impl LossWeights {
    pub fn plain() -> Self {
        Self::default()
    }

    pub fn get(&self, c: Condition) -> ConditionWeights {
        match c {
            Condition::Dt => self.dt,
            Condition::Stfe => self.stfe,
            Condition::Stne => self.stne,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in Condition::ALL {
            let w = self.get(c);
            let ok = (0.0..1.0).contains(&w.alpha) && (0.0..1.0).contains(&w.beta) && w.alpha + w.beta < 1.0;
            if !ok {
                return Err(Error::Config(format!(
                    "{c} loss weights alpha = {}, beta = {} must be in [0, 1) with alpha + beta < 1",
                    w.alpha, w.beta
                )));
            }
        }
        Ok(())
    }

    /// Combines output, speech-component and echo-component losses:
    /// `(1 − α − β)·v[0] + α·v[1] + β·v[2]`.
    pub fn combine(&self, c: Condition, v: [f64; 3]) -> f64 {
        let w = self.get(c);
        (1.0 - w.alpha - w.beta) * v[0] + w.alpha * v[1] + w.beta * v[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FinetunePreset {
    Plain,
    /// Split 15/1/0 with condition-aware weights.
    Ca15_1_0,
    /// Split 16/0/0 with condition-aware weights.
    Ca16_0_0,
}

impl FinetunePreset {
    pub const ALL: [FinetunePreset; 3] = [FinetunePreset::Plain, FinetunePreset::Ca15_1_0, FinetunePreset::Ca16_0_0];

    pub fn key(self) -> &'static str {
        match self {
            FinetunePreset::Plain => "plain",
            FinetunePreset::Ca15_1_0 => "ca-15-1-0",
            FinetunePreset::Ca16_0_0 => "ca-16-0-0",
        }
    }

    pub fn weights(self) -> LossWeights {
        match self {
            FinetunePreset::Plain => LossWeights::plain(),
            FinetunePreset::Ca15_1_0 => LossWeights {
                dt: ConditionWeights { alpha: 0.2, beta: 0.2 },
                stfe: ConditionWeights { alpha: 0.2, beta: 0.0 },
                stne: ConditionWeights::default(),
            },
            FinetunePreset::Ca16_0_0 => LossWeights {
                dt: ConditionWeights { alpha: 0.33, beta: 0.0 },
                ..LossWeights::default()
            },
        }
    }

    /// Split used with the preset; `None` keeps the split of the base run.
    pub fn mcs(self) -> Option<MinibatchConditionSplit> {
        match self {
            FinetunePreset::Plain => None,
            FinetunePreset::Ca15_1_0 => Some(MinibatchConditionSplit::fixed(15, 1, 0)),
            FinetunePreset::Ca16_0_0 => Some(MinibatchConditionSplit::fixed(16, 0, 0)),
        }
    }
}

impl fmt::Display for FinetunePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for FinetunePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.key().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}` (expected plain, ca-15-1-0, ca-16-0-0)")))
    }
}

impl TryFrom<String> for FinetunePreset {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FinetunePreset> for String {
    fn from(p: FinetunePreset) -> String {
        p.key().to_string()
    }
}

/// Applies the effective gain of mask `m` to the speech and echo spectra and
/// synthesizes both, returning `(S̃, D̃)` time signals.
pub fn white_box_components(
    m: &SpectralSequence<f64>,
    s: &SpectralSequence<f64>,
    d: &SpectralSequence<f64>,
    stft: &Stft<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if m.frames() != s.frames() || m.bins() != s.bins() || m.frames() != d.frames() || m.bins() != d.bins() {
        return Err(Error::Shape("mask and component spectra differ in shape".into()));
    }
    let gain: Vec<_> = m.as_slice().iter().map(|&v| mask_gain(v)).collect();
    let gain = SpectralSequence::from_vec(m.frames(), m.bins(), gain)?;
    Ok((stft.synthesize(&gain.mul(s)?)?, stft.synthesize(&gain.mul(d)?)?))
}

/// Spectra and targets of one training entry, padded for reconstruction.
#[derive(Debug, Clone)]
pub struct PreparedEntry {
    pub condition: Condition,
    pub features: Tensor<f64>,
    pub y: Arc<SpectralSequence<f64>>,
    pub s: Arc<SpectralSequence<f64>>,
    pub d: Arc<SpectralSequence<f64>>,
    pub offset: usize,
    pub speech_noise: Tensor<f64>,
    pub speech: Tensor<f64>,
}

impl PreparedEntry {
    pub fn new(entry: &TrainEntry, crn: &Crn, stft: &Stft<f64>) -> Result<Self> {
        let params = stft.params();
        if *params != crn.frame_params() {
            return Err(Error::Config("framing does not match the network".into()));
        }
        let len = entry.len();
        let (front, back) = params.reconstruction_padding(len);
        let pad = |v: &[f64]| {
            let mut p = vec![0.0; front];
            p.extend_from_slice(v);
            p.resize(front + len + back, 0.0);
            p
        };
        let xs = stft.analyze(&pad(&entry.x))?;
        let ys = stft.analyze(&pad(&entry.y))?;
        let ss = stft.analyze(&pad(&entry.s))?;
        let ds = stft.analyze(&pad(&entry.d))?;
        let features = assemble_features(&xs, &ys, params, crn.config().input_compression)?;
        let sn = entry.s.iter().zip(&entry.n).map(|(a, b)| a + b).collect();
        Ok(Self {
            condition: entry.condition,
            features,
            y: Arc::new(ys),
            s: Arc::new(ss),
            d: Arc::new(ds),
            offset: front,
            speech_noise: Tensor::from_vec(&[len], sn)?,
            speech: Tensor::from_vec(&[len], entry.s.clone())?,
        })
    }

    pub fn len(&self) -> usize {
        self.speech.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speech.is_empty()
    }
}

/// Nodes of the condition-aware loss of one entry.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: Var,
    pub output: Var,
    pub speech: Option<Var>,
    pub echo: Option<Var>,
}

/// Builds the condition-aware loss of `entry` on `g`. Terms whose weight
/// is zero are left out of the graph.
pub fn condition_loss(
    g: &mut Graph<f64>,
    crn: &Crn,
    entry: &PreparedEntry,
    weights: &LossWeights,
    stft: &Arc<Stft<f64>>,
) -> Result<LossNodes> {
    weights.validate()?;
    let w = weights.get(entry.condition);
    let len = entry.len();
    let x = g.input(entry.features.clone(), false);
    let (m, _) = crn.forward(g, x, None)?;
    let gain = g.complex_gain(m, entry.y.bins())?;
    let synth = |g: &mut Graph<f64>, spec: &Arc<SpectralSequence<f64>>| -> Result<Var> {
        let p = g.complex_mul_const(gain, spec.clone())?;
        g.istft(p, stft.clone(), entry.offset, len)
    };
    let e = synth(g, &entry.y)?;
    let target = g.constant(entry.speech_noise.clone());
    let output = g.logmse(e, target)?;
    let mut terms = vec![output];
    let mut coeffs = vec![1.0 - w.alpha - w.beta];
    let mut speech = None;
    if w.alpha != 0.0 {
        let st = synth(g, &entry.s)?;
        let target = g.constant(entry.speech.clone());
        let v = g.logmse(st, target)?;
        speech = Some(v);
        terms.push(v);
        coeffs.push(w.alpha);
    }
    let mut echo = None;
    if w.beta != 0.0 {
        let dt = synth(g, &entry.d)?;
        let zero = g.constant(Tensor::zeros(&[len]));
        let v = g.logmse(dt, zero)?;
        echo = Some(v);
        terms.push(v);
        coeffs.push(w.beta);
    }
    let total = if terms.len() == 1 { output } else { g.weighted_sum(&terms, &coeffs)? };
    Ok(LossNodes { total, output, speech, echo })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logmse_values() {
        assert!((logmse(&[10.0], &[0.0]).unwrap() - 20.0).abs() < 1e-12);
        assert!((logmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap() + 120.0).abs() < 1e-9);
        let a = [0.3, -0.1, 0.7];
        let b = [0.1, 0.2, 0.3];
        let scaled: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y + 10.0 * (x - y)).collect();
        let diff = logmse(&scaled, &b).unwrap() - logmse(&a, &b).unwrap();
        assert!((diff - 20.0).abs() < 1e-9);
        assert!(logmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn presets_carry_published_weights() {
        let w = FinetunePreset::Ca15_1_0.weights();
        assert_eq!((w.dt.alpha, w.dt.beta, w.stfe.alpha, w.stfe.beta), (0.2, 0.2, 0.2, 0.0));
        let w = FinetunePreset::Ca16_0_0.weights();
        assert_eq!((w.dt.alpha, w.dt.beta), (0.33, 0.0));
        assert_eq!(FinetunePreset::Plain.weights(), LossWeights::default());
        for p in FinetunePreset::ALL {
            p.weights().validate().unwrap();
            assert_eq!(p.key().parse::<FinetunePreset>().unwrap(), p);
        }
    }

    #[test]
    fn weights_validated() {
        let mut w = LossWeights::plain();
        w.stne = ConditionWeights { alpha: 0.6, beta: 0.4 };
        assert!(w.validate().is_err());
        w.stne = ConditionWeights { alpha: -0.1, beta: 0.0 };
        assert!(w.validate().is_err());
    }

    #[test]
    fn combine_is_affine() {
        let w = FinetunePreset::Ca15_1_0.weights();
        let v = [3.0, -7.0, 11.0];
        assert!((w.combine(Condition::Dt, v) - (0.6 * 3.0 - 0.2 * 7.0 + 0.2 * 11.0)).abs() < 1e-12);
        assert_eq!(LossWeights::plain().combine(Condition::Stne, v), 3.0);
    }
}
