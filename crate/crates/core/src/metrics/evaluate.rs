use std::fmt::Write as _;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::erle::{component_erle, erle, speech_preservation, stne_deviation, ErleParams};
use crate::autodiff::ParamStore;
use crate::dsp::{assemble_features, crop_mask, mask_gain, FrameParams, SpectralSequence, Stft};
use crate::error::{Error, Result};
use crate::model::{network_masks, Crn, DEFAULT_CHUNK_FRAMES};
use crate::synth::{Condition, Scene};

/// System under evaluation.
#[derive(Debug, Clone, Copy)]
pub enum EvalSystem<'a> {
    Model { crn: &'a Crn, store: &'a ParamStore<f64> },
    /// Unit gain everywhere: the output is the microphone signal.
    Identity,
    /// Zero gain everywhere.
    Mute,
    /// Frequency-flat real gain.
    ConstantGain(f64),
}

impl EvalSystem<'_> {
    pub fn frame_params(&self) -> FrameParams {
        match self {
            EvalSystem::Model { crn, .. } => crn.frame_params(),
            _ => FrameParams::default(),
        }
    }
}

/// Processed signals of one file, aligned with its components.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedFile {
    pub e: Vec<f64>,
    pub s_tilde: Vec<f64>,
    pub d_tilde: Vec<f64>,
}

/// Runs `system` over a whole file (recurrent state carried across its
/// sections) and applies the same gains to the speech and echo components.
pub fn process_file(system: &EvalSystem<'_>, scene: &Scene) -> Result<ProcessedFile> {
    let b = &scene.bundle;
    let params = system.frame_params();
    let stft = Stft::<f64>::new(params);
    let len = b.len();
    let (front, back) = params.reconstruction_padding(len);
    let pad = |v: &[f64]| {
        let mut p = vec![0.0; front];
        p.extend_from_slice(v);
        p.resize(front + len + back, 0.0);
        p
    };
    let ys = stft.analyze(&pad(&b.y))?;
    let (frames, bins) = (ys.frames(), ys.bins());
    let gains = match system {
        EvalSystem::Model { crn, store } => {
            let xs = stft.analyze(&pad(&b.x))?;
            let feats = assemble_features(&xs, &ys, &params, crn.config().input_compression)?;
            let m = crop_mask(&network_masks(crn, *store, &feats, DEFAULT_CHUNK_FRAMES)?, bins)?;
            let g = m.as_slice().iter().map(|&v| mask_gain(v)).collect();
            SpectralSequence::from_vec(frames, bins, g)?
        }
        EvalSystem::Identity => constant(frames, bins, 1.0)?,
        EvalSystem::Mute => constant(frames, bins, 0.0)?,
        EvalSystem::ConstantGain(g) => {
            if !g.is_finite() {
                return Err(Error::Config("constant gain must be finite".into()));
            }
            constant(frames, bins, *g)?
        }
    };
    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        let spec = stft.analyze(&pad(v))?;
        Ok(stft.synthesize(&gains.mul(&spec)?)?[front..front + len].to_vec())
    };
    let e = stft.synthesize(&gains.mul(&ys)?)?[front..front + len].to_vec();
    Ok(ProcessedFile { e, s_tilde: apply(&b.s)?, d_tilde: apply(&b.d)? })
}

fn constant(frames: usize, bins: usize, g: f64) -> Result<SpectralSequence<f64>> {
    SpectralSequence::from_vec(frames, bins, vec![Complex::new(g, 0.0); frames * bins])
}

/// One report row; `file` is `None` for the per-condition mean rows.
/// Perceptual columns are reserved for externally computed scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub file: Option<usize>,
    pub condition: Condition,
    pub erle_db: Option<f64>,
    pub component_erle_db: Option<f64>,
    pub speech_distortion_db: Option<f64>,
    pub stne_deviation_db: Option<f64>,
    pub pesq_bb: Option<f64>,
    pub aecmos: Option<f64>,
}

impl EvalRow {
    fn empty(file: Option<usize>, condition: Condition) -> Self {
        Self {
            file,
            condition,
            erle_db: None,
            component_erle_db: None,
            speech_distortion_db: None,
            stne_deviation_db: None,
            pesq_bb: None,
            aecmos: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub erle: ErleParams,
    pub rows: Vec<EvalRow>,
    pub means: Vec<EvalRow>,
}

pub const CSV_HEADER: &str =
    "file,condition,erle_db,component_erle_white_box_db,speech_distortion_db,stne_deviation_db,pesq_bb,aecmos";

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in self.rows.iter().chain(&self.means) {
            let file = r.file.map_or_else(|| "mean".to_string(), |f| f.to_string());
            let _ = writeln!(
                s,
                "{file},{},{},{},{},{},{},{}",
                r.condition,
                cell(r.erle_db),
                cell(r.component_erle_db),
                cell(r.speech_distortion_db),
                cell(r.stne_deviation_db),
                cell(r.pesq_bb),
                cell(r.aecmos)
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn mean(&self, c: Condition) -> Option<&EvalRow> {
        self.means.iter().find(|r| r.condition == c)
    }
}

/// Metric rows of one processed file, one per section.
pub fn file_rows(scene: &Scene, out: &ProcessedFile, params: &ErleParams) -> Result<Vec<EvalRow>> {
    let b = &scene.bundle;
    if b.sections.is_empty() {
        return Err(Error::Data(format!("file {} has no condition sections", scene.meta.index)));
    }
    let mut rows = Vec::with_capacity(b.sections.len());
    for sec in &b.sections {
        if sec.end > b.len() || sec.start >= sec.end {
            return Err(Error::Data(format!("file {}: section {}..{} out of range", scene.meta.index, sec.start, sec.end)));
        }
        let r = sec.start..sec.end;
        let mut row = EvalRow::empty(Some(scene.meta.index), sec.condition);
        match sec.condition {
            Condition::Stfe => {
                row.erle_db = Some(erle(&b.d[r.clone()], &out.e[r.clone()], &b.n[r], params)?.mean_db);
            }
            Condition::Dt => {
                row.component_erle_db = Some(component_erle(&out.d_tilde[r.clone()], &b.d[r.clone()], params)?);
                row.speech_distortion_db = Some(speech_preservation(&out.s_tilde[r.clone()], &b.s[r])?);
            }
            Condition::Stne => {
                row.stne_deviation_db = Some(stne_deviation(&out.e[r.clone()], &b.y[r])?);
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn mean_of(rows: &[&EvalRow], f: impl Fn(&EvalRow) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Evaluates `system` on condition-sectioned files. Files are processed in
/// parallel and reported in input order; the enhanced outputs are returned
/// alongside the report.
pub fn evaluate(
    system: &EvalSystem<'_>,
    name: &str,
    scenes: &[Scene],
    params: &ErleParams,
) -> Result<(EvalReport, Vec<Vec<f64>>)> {
    params.validate()?;
    let per_file = scenes
        .par_iter()
        .map(|sc| {
            let out = process_file(system, sc)?;
            let rows = file_rows(sc, &out, params)?;
            Ok((rows, out.e))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut outputs = Vec::with_capacity(per_file.len());
    for (r, e) in per_file {
        rows.extend(r);
        outputs.push(e);
    }
    let means = Condition::ALL
        .iter()
        .filter_map(|&c| {
            let sel: Vec<&EvalRow> = rows.iter().filter(|r| r.condition == c).collect();
            if sel.is_empty() {
                return None;
            }
            let mut m = EvalRow::empty(None, c);
            m.erle_db = mean_of(&sel, |r| r.erle_db);
            m.component_erle_db = mean_of(&sel, |r| r.component_erle_db);
            m.speech_distortion_db = mean_of(&sel, |r| r.speech_distortion_db);
            m.stne_deviation_db = mean_of(&sel, |r| r.stne_deviation_db);
            Some(m)
        })
        .collect();
    Ok((EvalReport { system: name.to_string(), erle: *params, rows, means }, outputs))
}
