//! Run configuration: one TOML file with a section per subcommand. Every
//! field has a default, and the fully resolved configuration is written next
//! to the outputs of each run.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use echolab::metrics::ErleParams;
use echolab::model::AblationStage;
use echolab::synth::{ConditionRecipe, DatasetStyle, TrainRecipe};
use echolab::train::{FinetunePreset, MinibatchConditionSplit, TrainSchedule};
use serde::{Deserialize, Serialize};

pub const RESOLVED_CONFIG: &str = "resolved.toml";

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    echolab::Error::Config(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for synthesis and evaluation; 0 picks the core count.
    pub threads: usize,
    pub run_dir: PathBuf,
    pub synth: SynthSection,
    pub train: TrainSection,
    pub finetune: FinetuneSection,
    pub evaluate: EvaluateSection,
    pub complexity: ComplexitySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            run_dir: PathBuf::from("runs"),
            synth: SynthSection::default(),
            train: TrainSection::default(),
            finetune: FinetuneSection::default(),
            evaluate: EvaluateSection::default(),
            complexity: ComplexitySection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| config_error(e.to_string()))
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CatalogConfig {
    /// Procedurally generated speech and noise.
    Synthetic { seed: u64, speakers: usize, utterances: usize, utterance_secs: f64, noises: usize },
    /// WAV directories; speech has one subdirectory per speaker.
    Dirs { speech: PathBuf, noise: PathBuf },
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig::Synthetic { seed: 0, speakers: 8, utterances: 4, utterance_secs: 6.0, noises: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub style: DatasetStyle,
    pub count: usize,
    /// Trailing training files held out for validation (train style only).
    pub validation: usize,
    pub catalog: CatalogConfig,
    pub train_recipe: TrainRecipe,
    /// Recipe for dev and test styles; the style's standard menu when absent.
    pub condition_recipe: Option<ConditionRecipe>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            style: DatasetStyle::Train,
            count: 100,
            validation: 10,
            catalog: CatalogConfig::default(),
            train_recipe: TrainRecipe::default(),
            condition_recipe: None,
        }
    }
}

impl SynthSection {
    /// Fills in the style's standard recipe so the snapshot is explicit.
    pub fn resolve(&mut self) {
        if self.condition_recipe.is_none() {
            self.condition_recipe = match self.style {
                DatasetStyle::Train => None,
                DatasetStyle::Dev => Some(ConditionRecipe::dev()),
                DatasetStyle::Test => Some(ConditionRecipe::test()),
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub dataset: PathBuf,
    pub stage: AblationStage,
    pub mcs: MinibatchConditionSplit,
    pub preset: FinetunePreset,
    pub schedule: TrainSchedule,
    /// Re-pair components and redraw mixing ratios every epoch.
    pub remix: bool,
    pub remix_recipe: TrainRecipe,
    /// Continue from `last.ckpt` in the run directory if present.
    pub resume: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/train"),
            stage: AblationStage::M5,
            mcs: MinibatchConditionSplit::fixed(16, 0, 0),
            preset: FinetunePreset::Plain,
            schedule: TrainSchedule::default(),
            remix: true,
            remix_recipe: TrainRecipe::default(),
            resume: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub dataset: PathBuf,
    /// Directory of the base run (holds `model.json`).
    pub model: PathBuf,
    pub checkpoint: String,
    pub preset: FinetunePreset,
    /// Overrides the preset's split.
    pub mcs: Option<MinibatchConditionSplit>,
    pub schedule: TrainSchedule,
    pub remix: bool,
    pub remix_recipe: TrainRecipe,
    pub resume: bool,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/train"),
            model: PathBuf::from("runs/train"),
            checkpoint: "best.ckpt".into(),
            preset: FinetunePreset::Ca15_1_0,
            mcs: None,
            schedule: TrainSchedule::finetune(),
            remix: true,
            remix_recipe: TrainRecipe::default(),
            resume: false,
        }
    }
}

impl FinetuneSection {
    pub fn resolve(&mut self) -> Result<()> {
        if self.mcs.is_none() {
            self.mcs = self.preset.mcs();
        }
        if self.mcs.is_none() {
            return Err(config_error(format!("preset `{}` needs an explicit split (mcs)", self.preset)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub checkpoint: String,
    /// Evaluate the unprocessed microphone signal instead of a model.
    pub identity_mask: bool,
    /// Write the enhanced signal of every file as WAV.
    pub emit_audio: bool,
    pub erle: ErleParams,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/test"),
            model: PathBuf::from("runs/train"),
            checkpoint: "best.ckpt".into(),
            identity_mask: false,
            emit_audio: false,
            erle: ErleParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexitySection {
    pub stages: Vec<AblationStage>,
}

impl Default for ComplexitySection {
    fn default() -> Self {
        Self { stages: AblationStage::ALL.to_vec() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults_and_snapshot_round_trips() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        let mut c = RunConfig::default();
        c.synth.style = DatasetStyle::Test;
        c.synth.resolve();
        c.finetune.resolve().unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_sections_and_notation() {
        let c: RunConfig = toml::from_str(
            "seed = 7\n[train]\nstage = \"m3\"\nmcs = \"random\"\npreset = \"ca-16-0-0\"\n[train.schedule]\ninitial_lr = 0.001\nlr_floor = 1e-5\nmax_epochs = 3\nhalve_after = 4\nstop_after = 10\nbatch_size = 16\nbptt_frames = 200\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.stage, AblationStage::M3);
        assert_eq!(c.train.mcs, MinibatchConditionSplit::random());
        assert_eq!(c.train.preset, FinetunePreset::Ca16_0_0);
        assert_eq!(c.train.schedule.max_epochs, 3);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 1").is_err());
    }

    #[test]
    fn plain_finetune_needs_split() {
        let mut f = FinetuneSection { preset: FinetunePreset::Plain, ..Default::default() };
        assert!(f.resolve().is_err());
        f.mcs = Some(MinibatchConditionSplit::fixed(8, 8, 0));
        f.resolve().unwrap();
    }
}
