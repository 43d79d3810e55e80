use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mcs::MinibatchConditionSplit;
use crate::dsp::FrameParams;
use crate::error::{Error, Result};
use crate::synth::{classify_activity, mean_power, Condition, Scene, SILENCE_POWER};

/// One training sequence: an excerpt of a training file turned into the
/// requested condition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainEntry {
    pub condition: Condition,
    pub scene: usize,
    pub offset: usize,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub n: Vec<f64>,
    pub d: Vec<f64>,
    pub y: Vec<f64>,
}

impl TrainEntry {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Excerpt length giving exactly `frames` frames after reconstruction padding.
pub fn excerpt_len(params: &FrameParams, frames: usize) -> usize {
    frames.saturating_sub(1) * params.frame_shift
}

/// Whether a file can supply a sequence of condition `c`: DT needs active
/// speech and far-end, STFE an active far-end, STNE active speech.
pub fn supports(scene: &Scene, c: Condition) -> bool {
    let b = &scene.bundle;
    let speech = mean_power(&b.s) > SILENCE_POWER;
    let far = mean_power(&b.x) > SILENCE_POWER;
    match c {
        Condition::Dt => classify_activity(&b.s, &b.x) == Some(Condition::Dt),
        Condition::Stfe => far,
        Condition::Stne => speech,
    }
}

/// Cuts `[offset, offset + len)` of `scene` and silences the components
/// absent in condition `c` (speech for STFE, far-end and echo for STNE);
/// the microphone signal is re-summed. `index` labels the entry.
pub fn make_entry(scene: &Scene, index: usize, offset: usize, len: usize, c: Condition) -> Result<TrainEntry> {
    let b = &scene.bundle;
    if offset + len > b.len() {
        return Err(Error::Data(format!("file {index} has {} samples, excerpt needs {}", b.len(), offset + len)));
    }
    let cut = |v: &[f64]| v[offset..offset + len].to_vec();
    let (mut x, mut s, n, mut d) = (cut(&b.x), cut(&b.s), cut(&b.n), cut(&b.d));
    match c {
        Condition::Dt => {}
        Condition::Stfe => s.fill(0.0),
        Condition::Stne => {
            x.fill(0.0);
            d.fill(0.0);
        }
    }
    let y = (0..len).map(|i| s[i] + n[i] + d[i]).collect();
    Ok(TrainEntry { condition: c, scene: index, offset, x, s, n, d, y })
}

/// Draws one minibatch from `scenes` (the training split). Within a batch,
/// each condition uses distinct files; excerpts start at random offsets.
pub fn sample_minibatch(
    scenes: &[Scene],
    mcs: &MinibatchConditionSplit,
    batch_size: usize,
    excerpt: usize,
    seed: u64,
) -> Result<Vec<TrainEntry>> {
    mcs.validate(batch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = mcs.draw(&mut rng, batch_size);
    let mut out = Vec::with_capacity(slots.len());
    for c in Condition::ALL {
        let count = slots.iter().filter(|&&s| s == c).count();
        if count == 0 {
            continue;
        }
        let pool: Vec<usize> =
            (0..scenes.len()).filter(|&i| scenes[i].bundle.len() >= excerpt && supports(&scenes[i], c)).collect();
        if pool.len() < count {
            return Err(Error::Data(format!(
                "{c}: {count} sequences requested but only {} training files of at least {excerpt} samples qualify",
                pool.len()
            )));
        }
        for k in sample(&mut rng, pool.len(), count).into_iter() {
            let i = pool[k];
            let offset = rng.gen_range(0..=scenes[i].bundle.len() - excerpt);
            out.push(make_entry(&scenes[i], i, offset, excerpt, c)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_training_set, RoomRecipe, SourceCatalog, TrainRecipe};

    fn scenes(count: usize) -> Vec<Scene> {
        let cat = SourceCatalog::synthetic(3, 4, 2, 2.0, 2);
        let recipe = TrainRecipe {
            file_secs: 0.5,
            room: RoomRecipe { rir_length: 512, ..RoomRecipe::standard() },
            ..Default::default()
        };
        build_training_set(9, count, 0, &cat, &recipe).unwrap().scenes
    }

    #[test]
    fn fixed_counts_and_condition_semantics() {
        let sc = scenes(20);
        let mcs: MinibatchConditionSplit = "13/2/1".parse().unwrap();
        let b = sample_minibatch(&sc, &mcs, 16, 2000, 5).unwrap();
        assert_eq!(b.len(), 16);
        let n = |c| b.iter().filter(|e| e.condition == c).count();
        assert_eq!((n(Condition::Dt), n(Condition::Stfe), n(Condition::Stne)), (13, 2, 1));
        for e in &b {
            assert_eq!(e.len(), 2000);
            for i in 0..e.len() {
                assert_eq!(e.y[i], e.s[i] + e.n[i] + e.d[i]);
            }
            match e.condition {
                Condition::Stfe => assert!(e.s.iter().all(|&v| v == 0.0)),
                Condition::Stne => assert!(e.x.iter().chain(&e.d).all(|&v| v == 0.0)),
                Condition::Dt => assert_eq!(e.s, sc[e.scene].bundle.s[e.offset..e.offset + 2000].to_vec()),
            }
        }
    }

    #[test]
    fn insufficient_pool_names_condition() {
        let sc = scenes(3);
        let err = sample_minibatch(&sc, &"4/0/0".parse().unwrap(), 4, 2000, 1).unwrap_err();
        assert!(err.to_string().contains("DT"), "{err}");
        let err = sample_minibatch(&sc, &"0/0/4".parse().unwrap(), 4, 2000, 1).unwrap_err();
        assert!(err.to_string().contains("STNE"), "{err}");
    }

    #[test]
    fn deterministic_given_seed() {
        let sc = scenes(8);
        let m = MinibatchConditionSplit::random();
        assert_eq!(sample_minibatch(&sc, &m, 4, 1000, 3).unwrap(), sample_minibatch(&sc, &m, 4, 1000, 3).unwrap());
    }

    #[test]
    fn excerpt_gives_requested_frames() {
        let p = FrameParams::default();
        let len = excerpt_len(&p, 200);
        let (f, b) = p.reconstruction_padding(len);
        assert_eq!(p.frame_count(f + len + b), 200);
    }
}
