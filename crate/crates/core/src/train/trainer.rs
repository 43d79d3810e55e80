use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{condition_loss, LossWeights, PreparedEntry};
use super::mcs::MinibatchConditionSplit;
use super::sampler::{excerpt_len, make_entry, sample_minibatch, supports, TrainEntry};
use super::schedule::{EpochDecision, LrController, StopReason, TrainSchedule};
use crate::autodiff::{load_checkpoint, save_checkpoint, Adam, AdamConfig, Gradients, Graph, ParamStore, Tensor};
use crate::dsp::Stft;
use crate::error::{Error, Result};
use crate::model::Crn;
use crate::synth::{derive_seed, remix_epoch, Dataset, Scene, TrainRecipe};

pub const HISTORY_FILE: &str = "history.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

const VALIDATION_SALT: u64 = 0x7661_6c69_6461_7465;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: TrainSchedule,
    pub mcs: MinibatchConditionSplit,
    pub weights: LossWeights,
    pub seed: u64,
    /// When set, training components are re-paired and re-scaled every epoch.
    pub remix: Option<TrainRecipe>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.mcs.validate(self.schedule.batch_size)?;
        self.weights.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub stop: StopReason,
    pub best_epoch: usize,
    pub best_val: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,lr\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr);
    }
    s
}

pub fn parse_history(text: &str) -> Result<Vec<EpochRecord>> {
    let bad = |l: usize| Error::Format(format!("history line {l} is malformed"));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<_> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad(i + 1));
            }
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad(i + 1))?,
                train_loss: f[1].parse().map_err(|_| bad(i + 1))?,
                val_loss: f[2].parse().map_err(|_| bad(i + 1))?,
                lr: f[3].parse().map_err(|_| bad(i + 1))?,
            })
        })
        .collect()
}

/// Minibatch training of a [`Crn`] with Adam and validation-driven LR control.
pub struct Trainer<'m> {
    crn: &'m Crn,
    store: ParamStore<f64>,
    adam: Adam<f64>,
    controller: LrController,
    config: TrainConfig,
    stft: Arc<Stft<f64>>,
    history: Vec<EpochRecord>,
}

impl<'m> Trainer<'m> {
    pub fn new(crn: &'m Crn, store: ParamStore<f64>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        crn.check_store(&store)?;
        let adam = Adam::new(&store, AdamConfig::default());
        let controller = LrController::new(&config.schedule);
        let stft = Arc::new(Stft::new(crn.frame_params()));
        Ok(Self { crn, store, adam, controller, config, stft, history: Vec::new() })
    }

    pub fn store(&self) -> &ParamStore<f64> {
        &self.store
    }

    pub fn into_store(self) -> ParamStore<f64> {
        self.store
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn controller(&self) -> &LrController {
        &self.controller
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn excerpt_len(&self) -> usize {
        excerpt_len(&self.crn.frame_params(), self.config.schedule.bptt_frames)
    }

    fn entry_loss(&self, e: &TrainEntry, grad: bool) -> Result<(f64, Option<Gradients<f64>>)> {
        let prepared = PreparedEntry::new(e, self.crn, &self.stft)?;
        let mut g = Graph::new(&self.store);
        let nodes = condition_loss(&mut g, self.crn, &prepared, &self.config.weights, &self.stft)?;
        let loss = g.value(nodes.total).item();
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: format!("{} loss of file {}", e.condition, e.scene) });
        }
        let grads = if grad { Some(g.backward(nodes.total)?) } else { None };
        Ok((loss, grads))
    }

    /// Mean loss over `entries` and its gradient. Entries are processed in
    /// parallel; the reduction runs in entry order.
    pub fn loss_and_gradients(&self, entries: &[TrainEntry]) -> Result<(f64, Gradients<f64>)> {
        if entries.is_empty() {
            return Err(Error::Data("empty minibatch".into()));
        }
        let parts = entries.par_iter().map(|e| self.entry_loss(e, true)).collect::<Result<Vec<_>>>()?;
        let mut total = Gradients::zeros_like(&self.store);
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            total.add_assign(&g.expect("gradient requested"));
        }
        let scale = 1.0 / entries.len() as f64;
        total.scale(scale);
        Ok((loss * scale, total))
    }

    /// Mean loss over `entries` without gradients.
    pub fn mean_loss(&self, entries: &[TrainEntry]) -> Result<f64> {
        if entries.is_empty() {
            return Err(Error::Data("no entries to evaluate".into()));
        }
        let losses = entries.par_iter().map(|e| self.entry_loss(e, false).map(|r| r.0)).collect::<Result<Vec<_>>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// One Adam step on `entries` at the current learning rate; returns the
    /// batch loss before the update.
    pub fn step(&mut self, entries: &[TrainEntry]) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradients(entries)?;
        self.adam.update(&mut self.store, &grads, self.controller.lr)?;
        Ok(loss)
    }

    /// Fixed validation sequences: one excerpt per validation file and
    /// condition of the split, at seeded offsets.
    pub fn validation_entries(&self, dataset: &Dataset) -> Result<Vec<TrainEntry>> {
        let val: Vec<&Scene> = dataset.validation().collect();
        if val.is_empty() {
            return Err(Error::Config("dataset has no validation files".into()));
        }
        let len = self.excerpt_len();
        let mut out = Vec::new();
        for (k, sc) in val.iter().enumerate() {
            if sc.bundle.len() < len {
                return Err(Error::Data(format!("validation file {} shorter than {len} samples", sc.meta.index)));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed ^ VALIDATION_SALT, k as u64));
            for c in self.config.mcs.conditions() {
                let offset = rng.gen_range(0..=sc.bundle.len() - len);
                if supports(sc, c) {
                    out.push(make_entry(sc, sc.meta.index, offset, len, c)?);
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Data("no validation file supports the trained conditions".into()));
        }
        Ok(out)
    }

    fn epoch_data(&self, dataset: &Dataset, epoch: usize) -> Result<Vec<Scene>> {
        let data = match &self.config.remix {
            Some(recipe) => remix_epoch(dataset, derive_seed(self.config.seed, epoch as u64), recipe)?,
            None => dataset.clone(),
        };
        Ok(data.scenes.into_iter().filter(|s| !s.meta.validation).collect())
    }

    /// Runs epochs until a stop rule fires. With `out`, writes the history
    /// CSV, the best checkpoint and a resumable last checkpoint every epoch.
    pub fn run(&mut self, dataset: &Dataset, out: Option<&Path>, mut log: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
        let val = self.validation_entries(dataset)?;
        let batch = self.config.schedule.batch_size;
        let len = self.excerpt_len();
        loop {
            let epoch = self.controller.epoch + 1;
            let train = self.epoch_data(dataset, epoch)?;
            if train.is_empty() {
                return Err(Error::Data("dataset has no training files".into()));
            }
            let steps = self.config.schedule.steps_per_epoch.unwrap_or((train.len() / batch).max(1));
            let epoch_seed = derive_seed(self.config.seed, epoch as u64);
            let lr = self.controller.lr;
            let mut sum = 0.0;
            for step in 0..steps {
                let entries = sample_minibatch(&train, &self.config.mcs, batch, len, derive_seed(epoch_seed, step as u64))?;
                let loss = self.step(&entries).map_err(|e| match e {
                    Error::NonFinite { what } => Error::NonFinite { what: format!("{what} at epoch {epoch}, step {step}") },
                    other => other,
                })?;
                sum += loss;
            }
            let val_loss = self.mean_loss(&val)?;
            let record = EpochRecord { epoch, train_loss: sum / steps as f64, val_loss, lr };
            let (improved, decision) = self.controller.observe(val_loss, &self.config.schedule);
            self.history.push(record.clone());
            log(&record);
            if let Some(dir) = out {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let h = dir.join(HISTORY_FILE);
                fs::write(&h, history_csv(&self.history)).map_err(|e| Error::io(&h, e))?;
                if improved {
                    save_checkpoint(&dir.join(BEST_CHECKPOINT), &self.store, &[])?;
                }
                self.save_state(&dir.join(LAST_CHECKPOINT))?;
            }
            if let EpochDecision::Stop(stop) = decision {
                return Ok(TrainOutcome { stop, best_epoch: self.controller.best_epoch, best_val: self.controller.best });
            }
        }
    }

    /// Saves parameters, optimizer moments and controller state.
    pub fn save_state(&self, path: &Path) -> Result<()> {
        let c = &self.controller;
        let state = vec![c.lr, c.best, c.stagnant as f64, c.epoch as f64, c.best_epoch as f64, self.adam.step as f64];
        let mut extra = vec![("train.state".to_string(), Tensor::from_vec(&[state.len()], state)?)];
        for (i, id) in self.store.ids().enumerate() {
            let name = self.store.name(id);
            extra.push((format!("adam.m/{name}"), self.adam.m[i].clone()));
            extra.push((format!("adam.v/{name}"), self.adam.v[i].clone()));
        }
        save_checkpoint(path, &self.store, &extra)
    }

    /// Restores a trainer from a checkpoint written by [`Trainer::save_state`]
    /// and the history CSV next to it.
    pub fn resume(crn: &'m Crn, config: TrainConfig, dir: &Path) -> Result<Self> {
        let entries = load_checkpoint(&dir.join(LAST_CHECKPOINT))?;
        let store = crn.params_from_entries(&entries)?;
        let mut t = Trainer::new(crn, store, config)?;
        let find = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks `{name}`")))
        };
        let st = find("train.state")?.data().to_vec();
        if st.len() != 6 {
            return Err(Error::Format("malformed training state".into()));
        }
        t.controller = LrController { lr: st[0], best: st[1], stagnant: st[2] as usize, epoch: st[3] as usize, best_epoch: st[4] as usize };
        t.adam.step = st[5] as u64;
        for (i, id) in t.store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let name = t.store.name(id).to_string();
            t.adam.m[i] = find(&format!("adam.m/{name}"))?.clone();
            t.adam.v[i] = find(&format!("adam.v/{name}"))?.clone();
        }
        let h = dir.join(HISTORY_FILE);
        let text = fs::read_to_string(&h).map_err(|e| Error::io(&h, e))?;
        t.history = parse_history(&text)?;
        t.history.truncate(t.controller.epoch);
        Ok(t)
    }
}
