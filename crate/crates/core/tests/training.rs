use echolab::autodiff::load_checkpoint;
use echolab::model::{apply_ablation, AblationStage, Bottleneck, Crn, CrnConfig};
use echolab::synth::*;
use echolab::train::*;

fn tiny() -> CrnConfig {
    CrnConfig {
        kernel_count: 4,
        kernel_size: 3,
        bottleneck: Bottleneck::GroupedGru1,
        groups_layer1: 4,
        groups_layer2: 2,
        ..apply_ablation(AblationStage::M5)
    }
}

fn dataset() -> (Dataset, TrainRecipe) {
    let cat = SourceCatalog::synthetic(31, 4, 2, 2.0, 2);
    let recipe = TrainRecipe { file_secs: 1.0, room: RoomRecipe { rir_length: 512, ..RoomRecipe::standard() }, ..Default::default() };
    (build_training_set(32, 8, 2, &cat, &recipe).unwrap(), recipe)
}

fn config(max_epochs: usize, recipe: &TrainRecipe) -> TrainConfig {
    let schedule = TrainSchedule { batch_size: 3, bptt_frames: 10, steps_per_epoch: Some(2), max_epochs, ..Default::default() };
    TrainConfig { schedule, mcs: "2/1/0".parse().unwrap(), weights: FinetunePreset::Ca15_1_0.weights(), seed: 33, remix: Some(recipe.clone()) }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (ds, recipe) = dataset();
    let (crn, store) = Crn::build(tiny(), 34).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let split = dir.path().join("split");

    let mut t = Trainer::new(&crn, store.clone(), config(3, &recipe)).unwrap();
    let outcome = t.run(&ds, Some(&full), |_| {}).unwrap();
    assert_eq!(outcome.stop, StopReason::MaxEpochs);
    assert_eq!(t.history().len(), 3);

    let mut t = Trainer::new(&crn, store, config(2, &recipe)).unwrap();
    t.run(&ds, Some(&split), |_| {}).unwrap();
    let mut t = Trainer::resume(&crn, config(3, &recipe), &split).unwrap();
    assert_eq!(t.history().len(), 2);
    let mut logged = Vec::new();
    t.run(&ds, Some(&split), |r| logged.push(r.epoch)).unwrap();
    assert_eq!(logged, vec![3]);

    for f in [HISTORY_FILE, LAST_CHECKPOINT] {
        assert_eq!(std::fs::read(full.join(f)).unwrap(), std::fs::read(split.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn history_and_best_checkpoint_are_consistent() {
    let (ds, recipe) = dataset();
    let (crn, store) = Crn::build(tiny(), 35).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(&crn, store, config(2, &recipe)).unwrap();
    let outcome = t.run(&ds, Some(dir.path()), |_| {}).unwrap();
    let text = std::fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
    let history = parse_history(&text).unwrap();
    assert_eq!(history, t.history());
    let best = history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(outcome.best_val, best);
    assert!(history.iter().all(|r| r.train_loss.is_finite() && r.lr == 1e-4));
    // the best checkpoint loads into the network and carries no optimizer state
    let entries = load_checkpoint(&dir.path().join(BEST_CHECKPOINT)).unwrap();
    crn.params_from_entries(&entries).unwrap();
    assert!(entries.iter().all(|(n, _)| !n.starts_with("adam.")));
}

#[test]
fn resume_rejects_checkpoint_of_other_network() {
    let (ds, recipe) = dataset();
    let (crn, store) = Crn::build(tiny(), 36).unwrap();
    let dir = tempfile::tempdir().unwrap();
    Trainer::new(&crn, store, config(1, &recipe)).unwrap().run(&ds, Some(dir.path()), |_| {}).unwrap();
    let (other, _) = Crn::build(CrnConfig { bottleneck: Bottleneck::GroupedGru2, ..tiny() }, 0).unwrap();
    assert!(Trainer::resume(&other, config(2, &recipe), dir.path()).is_err());
}

#[test]
fn finetune_preset_split_fills_batch_of_sixteen() {
    for p in [FinetunePreset::Ca15_1_0, FinetunePreset::Ca16_0_0] {
        p.mcs().unwrap().validate(16).unwrap();
    }
    assert_eq!(FinetunePreset::Plain.weights(), LossWeights::plain());
}
