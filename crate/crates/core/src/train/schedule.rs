use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub initial_lr: f64,
    /// Training stops once the learning rate falls below this value.
    pub lr_floor: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before each halving.
    pub halve_after: usize,
    /// Epochs without validation improvement before stopping.
    pub stop_after: usize,
    pub batch_size: usize,
    pub bptt_frames: usize,
    /// Optimizer steps per epoch; `None` means one pass over the training files.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            initial_lr: 1e-4,
            lr_floor: 1e-5,
            max_epochs: 100,
            halve_after: 4,
            stop_after: 10,
            batch_size: 16,
            bptt_frames: 200,
            steps_per_epoch: None,
        }
    }
}

impl TrainSchedule {
    pub fn finetune() -> Self {
        Self { initial_lr: 2.5e-5, lr_floor: 2.5e-6, max_epochs: 30, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return bad("initial learning rate must be positive");
        }
        if !(self.lr_floor >= 0.0 && self.lr_floor < self.initial_lr) {
            return bad("learning-rate floor must lie below the initial learning rate");
        }
        if self.max_epochs == 0 || self.halve_after == 0 || self.stop_after == 0 {
            return bad("epoch limits must be positive");
        }
        if self.batch_size == 0 || self.bptt_frames < 2 {
            return bad("batch size must be positive and sequences at least 2 frames long");
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps per epoch must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Stagnation,
    LrFloor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochDecision {
    Continue,
    Stop(StopReason),
}

/// Learning-rate and stopping control driven by the validation loss. An
/// epoch improves when its loss is strictly below the best so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrController {
    pub lr: f64,
    pub best: f64,
    pub stagnant: usize,
    pub epoch: usize,
    pub best_epoch: usize,
}

impl LrController {
    pub fn new(schedule: &TrainSchedule) -> Self {
        Self { lr: schedule.initial_lr, best: f64::INFINITY, stagnant: 0, epoch: 0, best_epoch: 0 }
    }

    /// Records one finished epoch; returns whether this epoch is the new best
    /// and what to do next.
    pub fn observe(&mut self, val_loss: f64, schedule: &TrainSchedule) -> (bool, EpochDecision) {
        self.epoch += 1;
        let improved = val_loss < self.best;
        if improved {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
        }
        let decision = if self.epoch >= schedule.max_epochs {
            EpochDecision::Stop(StopReason::MaxEpochs)
        } else if self.stagnant >= schedule.stop_after {
            EpochDecision::Stop(StopReason::Stagnation)
        } else {
            if self.stagnant > 0 && self.stagnant % schedule.halve_after == 0 {
                self.lr *= 0.5;
            }
            if self.lr < schedule.lr_floor {
                EpochDecision::Stop(StopReason::LrFloor)
            } else {
                EpochDecision::Continue
            }
        };
        (improved, decision)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_after_four_stagnant_epochs() {
        let s = TrainSchedule::default();
        let mut c = LrController::new(&s);
        c.observe(1.0, &s);
        for _ in 0..3 {
            assert_eq!(c.observe(2.0, &s).1, EpochDecision::Continue);
            assert_eq!(c.lr, 1e-4);
        }
        c.observe(2.0, &s);
        assert_eq!(c.lr, 5e-5);
        assert!(c.observe(0.5, &s).0);
        assert_eq!((c.stagnant, c.lr), (0, 5e-5));
    }

    #[test]
    fn stops_after_ten_stagnant_epochs() {
        let s = TrainSchedule { lr_floor: 1e-9, ..TrainSchedule::default() };
        let mut c = LrController::new(&s);
        c.observe(1.0, &s);
        let mut last = EpochDecision::Continue;
        for _ in 0..10 {
            last = c.observe(1.0, &s).1;
        }
        assert_eq!(last, EpochDecision::Stop(StopReason::Stagnation));
        assert_eq!(c.epoch, 11);
    }

    #[test]
    fn stops_when_lr_would_fall_below_floor() {
        let s = TrainSchedule { stop_after: 1000, ..TrainSchedule::default() };
        let mut c = LrController::new(&s);
        let mut epochs = 0;
        loop {
            epochs += 1;
            if let EpochDecision::Stop(r) = c.observe(1.0, &s).1 {
                assert_eq!(r, StopReason::LrFloor);
                break;
            }
        }
        // 1e-4 -> 5e-5 -> 2.5e-5 -> 1.25e-5 -> 6.25e-6
        assert_eq!(epochs, 1 + 4 * 4);
        assert!(c.lr < 1e-5);
    }

    #[test]
    fn finetune_schedule() {
        let s = TrainSchedule::finetune();
        assert_eq!((s.initial_lr, s.lr_floor, s.max_epochs), (2.5e-5, 2.5e-6, 30));
        s.validate().unwrap();
        let mut c = LrController::new(&s);
        let mut n = 0;
        while c.observe(-(n as f64), &s).1 == EpochDecision::Continue {
            n += 1;
        }
        assert_eq!(c.epoch, 30);
        assert!(TrainSchedule { lr_floor: 1e-3, ..s }.validate().is_err());
    }
}
