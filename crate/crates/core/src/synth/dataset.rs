use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mix::{convolve, mean_power, mix_scene, ratio_gain, SILENCE_POWER};
use super::nonlinearity::Nonlinearity;
use super::rir::{simulate_rir, RoomSpec};
use super::source::SourceCatalog;
use crate::dsp::{read_wav, write_wav, SAMPLE_RATE};
use crate::error::{Error, Result};

const FS: f64 = SAMPLE_RATE as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "DT")]
    Dt,
    #[serde(rename = "STFE")]
    Stfe,
    #[serde(rename = "STNE")]
    Stne,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Dt, Condition::Stfe, Condition::Stne];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Dt => "DT",
            Condition::Stfe => "STFE",
            Condition::Stne => "STNE",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionSection {
    pub condition: Condition,
    pub start: usize,
    pub end: usize,
}

impl ConditionSection {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Aligned farend, nearend, noise, echo and microphone signals.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBundle {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub n: Vec<f64>,
    pub d: Vec<f64>,
    pub y: Vec<f64>,
    pub ser_db: f64,
    /// `None` for noiseless files.
    pub snr_db: Option<f64>,
    pub sections: Vec<ConditionSection>,
}

impl SignalBundle {
    /// Forms `y = s + n + d`; the whole file is one double-talk section.
    pub fn new(x: Vec<f64>, s: Vec<f64>, n: Vec<f64>, d: Vec<f64>, ser_db: f64, snr_db: Option<f64>) -> Self {
        let y = s.iter().zip(&n).zip(&d).map(|((a, b), c)| a + b + c).collect();
        let sections = vec![ConditionSection { condition: Condition::Dt, start: 0, end: s.len() }];
        Self { x, s, n, d, y, ser_db, snr_db, sections }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Whether `y = s + n + d` holds exactly at every sample.
    pub fn is_consistent(&self) -> bool {
        let n = self.y.len();
        [&self.x, &self.s, &self.n, &self.d].iter().all(|v| v.len() == n)
            && (0..n).all(|i| self.y[i] == self.s[i] + self.n[i] + self.d[i])
    }

    fn recompute_mix(&mut self) {
        self.y = (0..self.s.len()).map(|i| self.s[i] + self.n[i] + self.d[i]).collect();
    }

    /// Applies one gain to every component when the mix or any component
    /// would leave `±peak`.
    fn limit_peak(&mut self, peak: f64) {
        let m = [&self.x, &self.s, &self.n, &self.d, &self.y]
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if m > peak {
            let g = peak / m;
            for v in [&mut self.x, &mut self.s, &mut self.n, &mut self.d] {
                v.iter_mut().for_each(|a| *a *= g);
            }
            self.recompute_mix();
        }
    }
}

/// Draw ranges for simulated rooms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomRecipe {
    pub length_m: [f64; 2],
    pub width_m: [f64; 2],
    pub height_m: [f64; 2],
    pub reflection: [f64; 2],
    pub distance_m: [f64; 2],
    pub rir_length: usize,
}

impl RoomRecipe {
    pub fn standard() -> Self {
        Self {
            length_m: [3.0, 6.0],
            width_m: [3.0, 6.0],
            height_m: [2.5, 3.2],
            reflection: [0.2, 0.7],
            distance_m: [0.3, 1.2],
            rir_length: 4096,
        }
    }

    /// Bigger rooms, wider loudspeaker distances and other reflection
    /// coefficients than [`RoomRecipe::standard`].
    pub fn large() -> Self {
        Self {
            length_m: [5.0, 10.0],
            width_m: [5.0, 10.0],
            height_m: [2.8, 4.0],
            reflection: [0.4, 0.85],
            distance_m: [0.3, 3.0],
            rir_length: 4096,
        }
    }

    pub fn draw(&self, rng: &mut impl Rng, seed: u64) -> RoomSpec {
        let u = |rng: &mut dyn rand::RngCore, r: [f64; 2]| if r[1] > r[0] { rng.gen_range(r[0]..r[1]) } else { r[0] };
        let dims = [u(rng, self.length_m), u(rng, self.width_m), u(rng, self.height_m)];
        let margin = 0.3f64;
        let mut mic = [0.0; 3];
        let mut src = [0.0; 3];
        for attempt in 0..100 {
            for i in 0..3 {
                mic[i] = rng.gen_range(margin..dims[i] - margin);
            }
            let dist = u(rng, self.distance_m) * if attempt > 50 { 0.5 } else { 1.0 };
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let z = rng.gen_range(-0.3f64..0.3);
            let r = (1.0 - z * z).sqrt();
            let dir = [r * theta.cos(), r * theta.sin(), z];
            for i in 0..3 {
                src[i] = mic[i] + dist * dir[i];
            }
            if (0..3).all(|i| src[i] > margin && src[i] < dims[i] - margin) {
                break;
            }
            // fall back to the room centre line
            src = [dims[0] / 2.0, dims[1] / 2.0, dims[2] / 2.0];
            mic = [dims[0] / 2.0 + 0.25, dims[1] / 2.0, dims[2] / 2.0];
        }
        let mut beta = [0.0; 6];
        for b in &mut beta {
            *b = u(rng, self.reflection);
        }
        RoomSpec { dimensions: dims, source_pos: src, mic_pos: mic, reflection_coeffs: beta, rir_length: self.rir_length, seed }
    }
}

/// Parameter menu for training-style files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRecipe {
    pub file_secs: f64,
    pub ser_db: [f64; 2],
    pub snr_db: [f64; 2],
    pub noiseless_prob: f64,
    pub sef_mu: Vec<f64>,
    pub room: RoomRecipe,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        Self {
            file_secs: 10.0,
            ser_db: [-12.4, 22.4],
            snr_db: [-2.4, 32.4],
            noiseless_prob: 0.1,
            sef_mu: vec![0.5, 1.0, 10.0, 999.0],
            room: RoomRecipe::standard(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearityMenu {
    Sef { mu: Vec<f64> },
    Arctan { alpha: f64 },
}

impl NonlinearityMenu {
    fn draw(&self, rng: &mut impl Rng) -> Nonlinearity {
        match self {
            NonlinearityMenu::Sef { mu } => Nonlinearity::Sef { mu: *mu.choose(rng).expect("non-empty menu") },
            NonlinearityMenu::Arctan { alpha } => Nonlinearity::Arctan { alpha: *alpha },
        }
    }
}

/// Parameter menu for condition-sectioned files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecipe {
    pub section_secs: [f64; 2],
    pub nonlinearity: NonlinearityMenu,
    pub ser_db: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub room: RoomRecipe,
    /// Leave out the noise component entirely.
    #[serde(default)]
    pub noiseless: bool,
}

fn steps(from: i32, to: i32, step: i32) -> Vec<f64> {
    (from..=to).step_by(step as usize).map(f64::from).collect()
}

impl ConditionRecipe {
    pub fn dev() -> Self {
        Self {
            section_secs: [8.0, 12.0],
            nonlinearity: NonlinearityMenu::Sef { mu: vec![0.2, 0.4, 1.5, 12.0, 999.0] },
            ser_db: steps(-10, 20, 5),
            snr_db: steps(0, 30, 5),
            room: RoomRecipe::standard(),
            noiseless: false,
        }
    }

    pub fn test() -> Self {
        Self {
            section_secs: [8.0, 12.0],
            nonlinearity: NonlinearityMenu::Arctan { alpha: 1e-4 },
            ser_db: steps(-9, 9, 3),
            snr_db: steps(5, 20, 3),
            room: RoomRecipe::large(),
            noiseless: false,
        }
    }
}

/// Where the components of a scene came from (original file indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentOrigin {
    pub speech: usize,
    pub echo: usize,
    pub noise: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub index: usize,
    pub seed: u64,
    pub ser_db: f64,
    pub snr_db: Option<f64>,
    pub nonlinearity: Nonlinearity,
    pub room: RoomSpec,
    pub sections: Vec<ConditionSection>,
    pub validation: bool,
    pub origin: ComponentOrigin,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub meta: SceneMeta,
    pub bundle: SignalBundle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetStyle {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub style: DatasetStyle,
    pub master_seed: u64,
    pub scenes: Vec<Scene>,
}

/// Stable per-item seed derived from a master seed (SplitMix64 finaliser).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PEAK: f64 = 0.95;

/// One training-style file: nearend and farend speech over the whole file.
pub fn make_training_file(seed: u64, catalog: &SourceCatalog, recipe: &TrainRecipe) -> Result<Scene> {
    catalog.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (recipe.file_secs * FS).round() as usize;
    let (ne, fe) = catalog.speaker_pair(&mut rng);
    let s = catalog.speech(&mut rng, ne, len);
    let x = catalog.speech(&mut rng, fe, len);
    let n = catalog.noise(&mut rng, len);
    let ser = rng.gen_range(recipe.ser_db[0]..=recipe.ser_db[1]);
    let snr = rng.gen_range(recipe.snr_db[0]..=recipe.snr_db[1]);
    let noiseless = rng.gen_bool(recipe.noiseless_prob);
    let mu = *recipe.sef_mu.choose(&mut rng).ok_or_else(|| Error::Config("empty SEF shape menu".into()))?;
    let nl = Nonlinearity::Sef { mu };
    let room = recipe.room.draw(&mut rng, seed);
    let h = simulate_rir(&room)?;
    let mut bundle = mix_scene(&s, &n, &x, &nl, &h, ser, (!noiseless).then_some(snr))?;
    bundle.limit_peak(PEAK);
    let meta = SceneMeta {
        index: 0,
        seed,
        ser_db: ser,
        snr_db: bundle.snr_db,
        nonlinearity: nl,
        room,
        sections: bundle.sections.clone(),
        validation: false,
        origin: ComponentOrigin { speech: 0, echo: 0, noise: 0 },
        len,
    };
    Ok(Scene { meta, bundle })
}

/// One condition-sectioned file with sections STFE, STNE, DT in that order.
/// Echo is produced per section and cut at the section end.
pub fn make_condition_file(seed: u64, catalog: &SourceCatalog, recipe: &ConditionRecipe) -> Result<Scene> {
    catalog.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = [Condition::Stfe, Condition::Stne, Condition::Dt];
    let mut sections = Vec::with_capacity(3);
    let mut start = 0;
    for c in order {
        let secs = rng.gen_range(recipe.section_secs[0]..=recipe.section_secs[1]);
        let end = start + (secs * FS).round() as usize;
        sections.push(ConditionSection { condition: c, start, end });
        start = end;
    }
    let len = start;
    let (ne, fe) = catalog.speaker_pair(&mut rng);
    let mut x = vec![0.0; len];
    let mut s = vec![0.0; len];
    for sec in &sections {
        if sec.condition != Condition::Stne {
            x[sec.start..sec.end].copy_from_slice(&catalog.speech(&mut rng, fe, sec.len()));
        }
        if sec.condition != Condition::Stfe {
            s[sec.start..sec.end].copy_from_slice(&catalog.speech(&mut rng, ne, sec.len()));
        }
    }
    let n = catalog.noise(&mut rng, len);
    let nl = recipe.nonlinearity.draw(&mut rng);
    let ser = *recipe.ser_db.choose(&mut rng).ok_or_else(|| Error::Config("empty SER menu".into()))?;
    let snr = *recipe.snr_db.choose(&mut rng).ok_or_else(|| Error::Config("empty SNR menu".into()))?;
    let room = recipe.room.draw(&mut rng, seed);
    let h = simulate_rir(&room)?;
    let xd = nl.apply(&x)?;
    let mut d = vec![0.0; len];
    for sec in &sections {
        if sec.condition != Condition::Stne {
            let part = convolve(&xd[sec.start..sec.end], &h, sec.len());
            d[sec.start..sec.end].copy_from_slice(&part);
        }
    }
    let gd = ratio_gain(&s, &d, ser)?;
    d.iter_mut().for_each(|v| *v *= gd);
    let snr = (!recipe.noiseless).then_some(snr);
    let n: Vec<f64> = match snr {
        Some(snr) => {
            let gn = ratio_gain(&s, &n, snr)?;
            n.iter().map(|v| v * gn).collect()
        }
        None => vec![0.0; len],
    };
    let mut bundle = SignalBundle::new(x, s, n, d, ser, snr);
    bundle.sections = sections.clone();
    bundle.limit_peak(PEAK);
    let meta = SceneMeta {
        index: 0,
        seed,
        ser_db: ser,
        snr_db: snr,
        nonlinearity: nl,
        room,
        sections,
        validation: false,
        origin: ComponentOrigin { speech: 0, echo: 0, noise: 0 },
        len,
    };
    Ok(Scene { meta, bundle })
}

fn finish(mut scenes: Vec<Scene>, validation: usize) -> Vec<Scene> {
    let total = scenes.len();
    for (i, sc) in scenes.iter_mut().enumerate() {
        sc.meta.index = i;
        sc.meta.origin = ComponentOrigin { speech: i, echo: i, noise: i };
        sc.meta.validation = i >= total - validation.min(total);
    }
    scenes
}

/// `count` training files of which the last `validation` form the
/// validation split. Files are generated in parallel; each depends only on
/// `(master_seed, index)`.
pub fn build_training_set(
    master_seed: u64,
    count: usize,
    validation: usize,
    catalog: &SourceCatalog,
    recipe: &TrainRecipe,
) -> Result<Dataset> {
    let scenes = (0..count)
        .into_par_iter()
        .map(|i| make_training_file(derive_seed(master_seed, i as u64), catalog, recipe))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { style: DatasetStyle::Train, master_seed, scenes: finish(scenes, validation) })
}

pub fn build_condition_set(
    style: DatasetStyle,
    master_seed: u64,
    count: usize,
    catalog: &SourceCatalog,
    recipe: &ConditionRecipe,
) -> Result<Dataset> {
    let scenes = (0..count)
        .into_par_iter()
        .map(|i| make_condition_file(derive_seed(master_seed, i as u64), catalog, recipe))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { style, master_seed, scenes: finish(scenes, 0) })
}

/// Re-pairs speech, echo and noise components across the training files and
/// redraws SER and SNR. The validation split is returned unchanged.
pub fn remix_epoch(dataset: &Dataset, epoch_seed: u64, recipe: &TrainRecipe) -> Result<Dataset> {
    let train: Vec<usize> = (0..dataset.scenes.len()).filter(|&i| !dataset.scenes[i].meta.validation).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let mut echo = train.clone();
    echo.shuffle(&mut rng);
    let mut noise = train.clone();
    noise.shuffle(&mut rng);
    let mut scenes = dataset.scenes.clone();
    let remixed = train
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, i as u64));
            let src = &dataset.scenes[i];
            let e = &dataset.scenes[echo[k]];
            let nz = &dataset.scenes[noise[k]];
            let len = src.bundle.len().min(e.bundle.len()).min(nz.bundle.len());
            let s = src.bundle.s[..len].to_vec();
            let ser = rng.gen_range(recipe.ser_db[0]..=recipe.ser_db[1]);
            let snr = rng.gen_range(recipe.snr_db[0]..=recipe.snr_db[1]);
            let noiseless = rng.gen_bool(recipe.noiseless_prob) || mean_power(&nz.bundle.n[..len]) <= 0.0;
            let gd = ratio_gain(&s, &e.bundle.d[..len], ser)?;
            let d: Vec<f64> = e.bundle.d[..len].iter().map(|v| v * gd).collect();
            let (n, snr_db) = if noiseless {
                (vec![0.0; len], None)
            } else {
                let gn = ratio_gain(&s, &nz.bundle.n[..len], snr)?;
                (nz.bundle.n[..len].iter().map(|v| v * gn).collect(), Some(snr))
            };
            let mut bundle = SignalBundle::new(e.bundle.x[..len].to_vec(), s, n, d, ser, snr_db);
            bundle.limit_peak(PEAK);
            let meta = SceneMeta {
                ser_db: ser,
                snr_db,
                nonlinearity: e.meta.nonlinearity,
                room: e.meta.room.clone(),
                sections: bundle.sections.clone(),
                origin: ComponentOrigin {
                    speech: src.meta.origin.speech,
                    echo: e.meta.origin.echo,
                    noise: if noiseless { nz.meta.origin.noise } else { nz.meta.origin.noise },
                },
                len,
                ..src.meta.clone()
            };
            Ok((i, Scene { meta, bundle }))
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, sc) in remixed {
        scenes[i] = sc;
    }
    Ok(Dataset { style: dataset.style, master_seed: dataset.master_seed, scenes })
}

/// File names of the stored components of one scene, relative to the
/// dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPaths {
    pub x: PathBuf,
    pub s: PathBuf,
    pub n: PathBuf,
    pub d: PathBuf,
    pub y: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub meta: SceneMeta,
    pub paths: ComponentPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub style: DatasetStyle,
    pub master_seed: u64,
    pub sample_rate: u32,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Dataset {
    pub fn manifest(&self) -> Manifest {
        let files = self
            .scenes
            .iter()
            .map(|sc| {
                let p = |c: &str| PathBuf::from(format!("{:05}_{c}.wav", sc.meta.index));
                ManifestEntry {
                    meta: sc.meta.clone(),
                    paths: ComponentPaths { x: p("x"), s: p("s"), n: p("n"), d: p("d"), y: p("y") },
                }
            })
            .collect();
        Manifest { style: self.style, master_seed: self.master_seed, sample_rate: SAMPLE_RATE, files }
    }

    pub fn validation(&self) -> impl Iterator<Item = &Scene> {
        self.scenes.iter().filter(|s| s.meta.validation)
    }

    pub fn training(&self) -> impl Iterator<Item = &Scene> {
        self.scenes.iter().filter(|s| !s.meta.validation)
    }

    /// Writes component WAVs and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Manifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest();
        manifest
            .files
            .par_iter()
            .zip(self.scenes.par_iter())
            .try_for_each(|(entry, sc)| -> Result<()> {
                let b = &sc.bundle;
                for (path, sig) in [
                    (&entry.paths.x, &b.x),
                    (&entry.paths.s, &b.s),
                    (&entry.paths.n, &b.n),
                    (&entry.paths.d, &b.d),
                    (&entry.paths.y, &b.y),
                ] {
                    write_wav(&dir.join(path), sig)?;
                }
                Ok(())
            })?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    /// Reads a dataset written by [`Dataset::save`]. The mixture is rebuilt
    /// as `s + n + d` from the stored components so the identity holds
    /// exactly after PCM quantisation.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let scenes = manifest
            .files
            .par_iter()
            .map(|entry| {
                let rd = |p: &Path| read_wav(&dir.join(p));
                let (x, s, n, d) = (rd(&entry.paths.x)?, rd(&entry.paths.s)?, rd(&entry.paths.n)?, rd(&entry.paths.d)?);
                let len = entry.meta.len;
                if [&x, &s, &n, &d].iter().any(|v| v.len() != len) {
                    return Err(Error::Data(format!("file {} has components of unequal length", entry.meta.index)));
                }
                let mut bundle = SignalBundle::new(x, s, n, d, entry.meta.ser_db, entry.meta.snr_db);
                bundle.sections = entry.meta.sections.clone();
                Ok(Scene { meta: entry.meta.clone(), bundle })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { style: manifest.style, master_seed: manifest.master_seed, scenes })
    }
}

/// Activity label of an excerpt by the −60 dBFS mean-power rule.
pub fn classify_activity(s: &[f64], x: &[f64]) -> Option<Condition> {
    let sa = mean_power(s) > SILENCE_POWER;
    let xa = mean_power(x) > SILENCE_POWER;
    match (sa, xa) {
        (true, true) => Some(Condition::Dt),
        (false, true) => Some(Condition::Stfe),
        (true, false) => Some(Condition::Stne),
        (false, false) => None,
    }
}
