use echolab::metrics::{evaluate, ErleParams, EvalSystem};
use echolab::model::{apply_ablation, AblationStage, Bottleneck, Crn, CrnConfig};
use echolab::synth::*;

fn files() -> Vec<Scene> {
    let cat = SourceCatalog::synthetic(41, 4, 2, 2.0, 2);
    let recipe = ConditionRecipe {
        section_secs: [1.0, 1.3],
        room: RoomRecipe { rir_length: 1024, ..RoomRecipe::standard() },
        ..ConditionRecipe::dev()
    };
    build_condition_set(DatasetStyle::Dev, 42, 3, &cat, &recipe).unwrap().scenes
}

#[test]
fn evaluating_a_concatenated_list_equals_separate_runs() {
    let cfg = CrnConfig {
        kernel_count: 4,
        bottleneck: Bottleneck::GroupedGru1,
        groups_layer1: 4,
        ..apply_ablation(AblationStage::M5)
    };
    let (crn, store) = Crn::build(cfg, 43).unwrap();
    let system = EvalSystem::Model { crn: &crn, store: &store };
    let p = ErleParams::default();
    let sc = files();
    let (all, _) = evaluate(&system, "m", &sc, &p).unwrap();
    let (a, _) = evaluate(&system, "m", &sc[..1], &p).unwrap();
    let (b, _) = evaluate(&system, "m", &sc[1..], &p).unwrap();
    let joined: Vec<_> = a.rows.iter().chain(&b.rows).cloned().collect();
    assert_eq!(all.rows, joined);
    assert_eq!(all.rows.len(), 3 * sc.len());
}

#[test]
fn report_csv_groups_rows_by_condition() {
    let sc = files();
    let (r, out) = evaluate(&EvalSystem::Identity, "unprocessed", &sc, &ErleParams::default()).unwrap();
    assert_eq!(out.len(), sc.len());
    for (o, s) in out.iter().zip(&sc) {
        assert_eq!(o.len(), s.bundle.y.len());
        assert!(o.iter().zip(&s.bundle.y).all(|(a, b)| (a - b).abs() < 1e-10));
    }
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("file,condition,"));
    assert_eq!(lines.len(), 1 + r.rows.len() + r.means.len());
    let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(json["system"], "unprocessed");
}
