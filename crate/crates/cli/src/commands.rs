use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use echolab::dsp::write_wav;
use echolab::metrics::{evaluate, EvalSystem};
use echolab::model::{apply_ablation, AblationStage, Crn, CrnConfig};
use echolab::synth::{build_condition_set, build_training_set, Dataset, DatasetStyle, SourceCatalog};
use echolab::train::{EpochRecord, TrainConfig, Trainer, LAST_CHECKPOINT};
use serde::Serialize;

use crate::config::{config_error, CatalogConfig, RunConfig};

pub const MODEL_FILE: &str = "model.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const COMPLEXITY_CSV: &str = "complexity.csv";
pub const COMPLEXITY_JSON: &str = "complexity.json";

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.synth;
    let catalog = match &s.catalog {
        CatalogConfig::Synthetic { seed, speakers, utterances, utterance_secs, noises } => {
            let c = SourceCatalog::synthetic(*seed, *speakers, *utterances, *utterance_secs, *noises);
            c.validate()?;
            c
        }
        CatalogConfig::Dirs { speech, noise } => SourceCatalog::from_dirs(speech, noise)?,
    };
    let ds = match s.style {
        DatasetStyle::Train => build_training_set(cfg.seed, s.count, s.validation, &catalog, &s.train_recipe)?,
        style => {
            let recipe = s.condition_recipe.as_ref().ok_or_else(|| config_error("condition recipe missing"))?;
            build_condition_set(style, cfg.seed, s.count, &catalog, recipe)?
        }
    };
    let manifest = ds.save(&cfg.run_dir)?;
    println!("wrote {} files to {}", manifest.files.len(), cfg.run_dir.display());
    Ok(())
}

fn write_model(dir: &Path, config: &CrnConfig) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(MODEL_FILE);
    let text = serde_json::to_string_pretty(config)?;
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_model(dir: &Path) -> Result<CrnConfig> {
    let path = dir.join(MODEL_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| echolab::Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| echolab::Error::Format(format!("{}: {e}", path.display())).into())
}

fn print_epoch(r: &EpochRecord) {
    println!("epoch {:3}  train {:8.3} dB  val {:8.3} dB  lr {:.3e}", r.epoch, r.train_loss, r.val_loss, r.lr);
}

fn run_training(crn: &Crn, init: echolab::autodiff::ParamStore<f64>, config: TrainConfig, dataset: &Path, out: &Path, resume: bool) -> Result<()> {
    let ds = Dataset::load(dataset)?;
    let mut trainer = if resume && out.join(LAST_CHECKPOINT).exists() {
        let t = Trainer::resume(crn, config, out)?;
        println!("resuming after epoch {}", t.controller().epoch);
        t
    } else {
        Trainer::new(crn, init, config)?
    };
    let outcome = trainer.run(&ds, Some(out), print_epoch)?;
    println!("stopped ({:?}); best validation loss {:.3} dB at epoch {}", outcome.stop, outcome.best_val, outcome.best_epoch);
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let t = &cfg.train;
    let model = apply_ablation(t.stage);
    let (crn, store) = Crn::build(model.clone(), cfg.seed)?;
    write_model(&cfg.run_dir, &model)?;
    let config = TrainConfig {
        schedule: t.schedule.clone(),
        mcs: t.mcs,
        weights: t.preset.weights(),
        seed: cfg.seed,
        remix: t.remix.then(|| t.remix_recipe.clone()),
    };
    println!("training {} ({} parameters)", t.stage.label(), store.scalar_count());
    run_training(&crn, store, config, &t.dataset, &cfg.run_dir, t.resume)
}

pub fn finetune(cfg: &RunConfig) -> Result<()> {
    let f = &cfg.finetune;
    let model = read_model(&f.model)?;
    let (crn, _) = Crn::build(model.clone(), cfg.seed)?;
    let store = crn.load_params(&f.model.join(&f.checkpoint))?;
    write_model(&cfg.run_dir, &model)?;
    let config = TrainConfig {
        schedule: f.schedule.clone(),
        mcs: f.mcs.ok_or_else(|| config_error("fine-tuning split missing"))?,
        weights: f.preset.weights(),
        seed: cfg.seed,
        remix: f.remix.then(|| f.remix_recipe.clone()),
    };
    println!("fine-tuning {} with preset {}", f.model.display(), f.preset);
    run_training(&crn, store, config, &f.dataset, &cfg.run_dir, f.resume)
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<()> {
    let e = &cfg.evaluate;
    let ds = Dataset::load(&e.dataset)?;
    let loaded;
    let (system, name) = if e.identity_mask {
        (EvalSystem::Identity, "unprocessed".to_string())
    } else {
        let model = read_model(&e.model)?;
        let (crn, _) = Crn::build(model, 0)?;
        let store = crn.load_params(&e.model.join(&e.checkpoint))?;
        loaded = (crn, store);
        (EvalSystem::Model { crn: &loaded.0, store: &loaded.1 }, e.model.display().to_string())
    };
    let (report, outputs) = evaluate(&system, &name, &ds.scenes, &e.erle)?;
    let dir = &cfg.run_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(REPORT_CSV), report.to_csv())?;
    std::fs::write(dir.join(REPORT_JSON), report.to_json()?)?;
    if e.emit_audio {
        let audio = dir.join("audio");
        std::fs::create_dir_all(&audio)?;
        for (sc, out) in ds.scenes.iter().zip(&outputs) {
            write_wav(&audio.join(format!("{:05}_e.wav", sc.meta.index)), out)?;
        }
    }
    println!("{:<5} {:>10} {:>12} {:>12} {:>12}", "cond", "ERLE", "cERLE (wb)", "dist", "STNE dev");
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    for m in &report.means {
        println!(
            "{:<5} {:>10} {:>12} {:>12} {:>12}",
            m.condition.to_string(),
            f(m.erle_db),
            f(m.component_erle_db),
            f(m.speech_distortion_db),
            f(m.stne_deviation_db)
        );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityRow {
    pub model: String,
    pub stage: Option<AblationStage>,
    pub parameters: f64,
    pub flops: f64,
    pub published_parameters: Option<f64>,
    pub published_flops: Option<f64>,
    /// FLOPS relative to FCRN15.
    pub flops_ratio: Option<f64>,
}

/// Published reference models that are not part of the ablation family.
pub const REFERENCE_MODELS: [(&str, f64, f64); 2] = [("FCRN", 3.7e6, 12840e6), ("CRUSE", 1.9e6, 685e6)];

pub fn complexity_rows(stages: &[AblationStage]) -> Result<Vec<ComplexityRow>> {
    let base = Crn::layout(apply_ablation(AblationStage::Fcrn15))?.0.complexity().flops_per_second;
    let mut rows: Vec<ComplexityRow> = REFERENCE_MODELS
        .iter()
        .map(|&(m, p, f)| ComplexityRow {
            model: m.into(),
            stage: None,
            parameters: p,
            flops: f,
            published_parameters: Some(p),
            published_flops: Some(f),
            flops_ratio: None,
        })
        .collect();
    let mut ordered = stages.to_vec();
    ordered.sort_by_key(|s| AblationStage::ALL.iter().position(|a| a == s));
    ordered.dedup();
    for s in ordered {
        let r = Crn::layout(apply_ablation(s))?.0.complexity();
        let (pp, pf) = s.published();
        rows.push(ComplexityRow {
            model: s.label().into(),
            stage: Some(s),
            parameters: r.parameters as f64,
            flops: r.flops_per_second,
            published_parameters: Some(pp),
            published_flops: Some(pf),
            flops_ratio: Some(r.flops_per_second / base),
        });
    }
    Ok(rows)
}

pub fn complexity(cfg: &RunConfig) -> Result<()> {
    let rows = complexity_rows(&cfg.complexity.stages)?;
    let m = |v: f64| format!("{:.2} M", v / 1e6);
    let mf = |v: f64| format!("{:.0} M", v / 1e6);
    let opt = |v: Option<f64>, f: &dyn Fn(f64) -> String| v.map_or("-".to_string(), f);
    println!("{:<24} {:>10} {:>10} {:>12} {:>12} {:>8}", "model", "params", "(pub.)", "FLOPS", "(pub.)", "ratio");
    let mut csv = String::from("model,stage,parameters,flops,published_parameters,published_flops,flops_ratio\n");
    for r in &rows {
        println!(
            "{:<24} {:>10} {:>10} {:>12} {:>12} {:>8}",
            r.model,
            m(r.parameters),
            opt(r.published_parameters, &m),
            mf(r.flops),
            opt(r.published_flops, &mf),
            opt(r.flops_ratio, &|v| format!("{v:.3}"))
        );
        let o = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model,
            r.stage.map_or(String::new(), |s| s.key().to_string()),
            r.parameters,
            r.flops,
            o(r.published_parameters),
            o(r.published_flops),
            o(r.flops_ratio)
        ));
    }
    let dir: &PathBuf = &cfg.run_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(COMPLEXITY_CSV), csv)?;
    std::fs::write(dir.join(COMPLEXITY_JSON), serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}
