use serde::{Deserialize, Serialize};

use super::network::{ConvLayer, Core, Crn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Conv,
    Deconv,
    Depthwise,
    Recurrent,
    /// Nonlinear function evaluations, one FLOP each.
    Activation,
    /// Elementwise additions of skip connections.
    Elementwise,
}

/// One row of the complexity table. Weight layers count two FLOPs per
/// multiply-accumulate; bias additions are not counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEntry {
    pub layer: String,
    pub kind: EntryKind,
    pub params: usize,
    pub flops_per_frame: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub entries: Vec<ComplexityEntry>,
    pub parameters: usize,
    pub flops_per_frame: u64,
    pub frame_rate: f64,
    pub flops_per_second: f64,
}

impl ComplexityReport {
    pub fn entry(&self, layer: &str, kind: EntryKind) -> Option<&ComplexityEntry> {
        self.entries.iter().find(|e| e.layer == layer && e.kind == kind)
    }
}

fn entry(layer: &str, kind: EntryKind, params: usize, flops: usize) -> ComplexityEntry {
    ComplexityEntry { layer: layer.to_string(), kind, params, flops_per_frame: flops as u64 }
}

fn conv_entries(l: &ConvLayer, kind: EntryKind, out: &mut Vec<ComplexityEntry>) {
    let weights = l.taps * l.cin * l.cout;
    let positions = if kind == EntryKind::Deconv { l.len_in } else { l.len_out };
    out.push(entry(&l.name, kind, weights + l.cout, 2 * positions * weights));
    if l.activation && kind == EntryKind::Conv {
        out.push(entry(&l.name, EntryKind::Activation, 0, l.len_out * l.cout));
    }
}

impl Crn {
    /// Parameter and FLOP count of the network per frame and per second.
    pub fn complexity(&self) -> ComplexityReport {
        let mut e = Vec::new();
        for l in &self.encoder {
            conv_entries(l, EntryKind::Conv, &mut e);
        }
        match &self.core {
            Core::ConvLstm(layers) => {
                for l in layers {
                    let f = l.filters;
                    let weights = l.taps * (l.cin + f) * 4 * f;
                    e.push(entry(&l.name, EntryKind::Recurrent, weights + 4 * f, 2 * l.len * weights));
                    e.push(entry(&l.name, EntryKind::Activation, 0, 5 * l.len * f));
                }
            }
            Core::Grouped { input, layers, restore } => {
                conv_entries(input, EntryKind::Conv, &mut e);
                for l in layers {
                    let (mut params, mut flops, mut acts) = (0, 0, 0);
                    for u in &l.units {
                        let weights = 3 * u.hidden * (u.din + u.hidden);
                        params += weights + 3 * u.hidden;
                        flops += 2 * weights;
                        acts += 3 * u.hidden;
                    }
                    e.push(entry(&l.name, EntryKind::Recurrent, params, flops));
                    e.push(entry(&l.name, EntryKind::Activation, 0, acts));
                }
                conv_entries(restore, EntryKind::Conv, &mut e);
            }
        }
        for (dec, skip) in &self.decoder {
            conv_entries(dec, EntryKind::Deconv, &mut e);
            let n = skip.len * skip.channels;
            e.push(entry(&skip.name, EntryKind::Depthwise, skip.taps * skip.channels + skip.channels, 2 * n * skip.taps));
            e.push(entry(&dec.name, EntryKind::Elementwise, 0, n));
            e.push(entry(&dec.name, EntryKind::Activation, 0, n));
        }
        conv_entries(&self.output, EntryKind::Conv, &mut e);
        let parameters = e.iter().map(|x| x.params).sum();
        let flops_per_frame: u64 = e.iter().map(|x| x.flops_per_frame).sum();
        let frame_rate = self.frame_params().frame_rate();
        ComplexityReport { entries: e, parameters, flops_per_frame, frame_rate, flops_per_second: flops_per_frame as f64 * frame_rate }
    }
}
