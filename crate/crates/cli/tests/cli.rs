use std::path::Path;
use std::process::{Command, Output};

fn echolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echolab")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const CONFIG: &str = r#"
seed = 5

[synth]
count = 6
validation = 2

[synth.catalog]
kind = "synthetic"
seed = 1
speakers = 4
utterances = 2
utterance_secs = 2.0
noises = 2

[synth.train_recipe]
file_secs = 1.0
room = { length_m = [3.0, 5.0], width_m = [3.0, 5.0], height_m = [2.5, 3.0], reflection = [0.2, 0.6], distance_m = [0.3, 1.0], rir_length = 512 }

[synth.condition_recipe]
section_secs = [0.8, 1.0]
ser_db = [-5.0, 0.0, 5.0]
snr_db = [10.0, 20.0]
nonlinearity = { kind = "sef", mu = [1.0, 999.0] }
room = { length_m = [3.0, 5.0], width_m = [3.0, 5.0], height_m = [2.5, 3.0], reflection = [0.2, 0.6], distance_m = [0.3, 1.0], rir_length = 512 }

[train]
stage = "m5"
mcs = "1/1/0"
remix = true
schedule = { batch_size = 2, bptt_frames = 8, steps_per_epoch = 1, max_epochs = 1 }

[finetune]
preset = "ca-15-1-0"
mcs = "1/1/0"
schedule = { batch_size = 2, bptt_frames = 8, steps_per_epoch = 1, max_epochs = 1 }
"#;

fn write_config(dir: &Path) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, CONFIG).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn complexity_table() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("cx");
    let out = ok(&echolab(&["complexity", "--run-dir", run.to_str().unwrap()]));
    assert!(out.contains("3.70 M") && out.contains("12840 M"), "{out}");
    assert!(out.contains("CRUSE") && out.contains("685 M"));
    let pos: Vec<usize> = ["FCRN15", "+(1)", "+(2)", "+(3)", "+(4)", "+(5)"].iter().map(|k| out.find(k).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
    assert!(run.join("complexity.csv").exists() && run.join("complexity.json").exists());
    let snapshot = std::fs::read_to_string(run.join("resolved.toml")).unwrap();
    assert!(snapshot.contains("stages"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "sede = 3\n").unwrap();
    let run = dir.path().join("r");
    let r = run.to_str().unwrap();
    assert_eq!(echolab(&["complexity", "--config", bad.to_str().unwrap(), "--run-dir", r]).status.code(), Some(2));
    assert_eq!(echolab(&["train", "--mcs", "3/x/1", "--run-dir", r]).status.code(), Some(2));
    assert_eq!(echolab(&["train", "--stage", "m9", "--run-dir", r]).status.code(), Some(2));
    let missing = dir.path().join("nowhere");
    let code = echolab(&["train", "--dataset", missing.to_str().unwrap(), "--run-dir", r]).status.code();
    assert_eq!(code, Some(3));
    let code = echolab(&["evaluate", "--identity-mask", "--dataset", missing.to_str().unwrap(), "--run-dir", r]).status.code();
    assert_eq!(code, Some(3));
}

#[test]
fn synth_train_finetune_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();

    ok(&echolab(&["synth", "-c", &cfg, "--run-dir", &p("train")]));
    ok(&echolab(&["synth", "-c", &cfg, "--run-dir", &p("train2")]));
    let manifest = |d: &str| std::fs::read(Path::new(&p(d)).join("manifest.json")).unwrap();
    assert_eq!(manifest("train"), manifest("train2"));
    ok(&echolab(&["synth", "-c", &cfg, "--style", "test", "--count", "2", "--seed", "9", "--run-dir", &p("test")]));
    let snapshot = std::fs::read_to_string(Path::new(&p("test")).join("resolved.toml")).unwrap();
    assert!(snapshot.contains("seed = 9") && snapshot.contains("style = \"test\""));

    for run in ["m", "m2"] {
        let out = ok(&echolab(&["train", "-c", &cfg, "--dataset", &p("train"), "--run-dir", &p(run)]));
        assert!(out.contains("epoch   1"), "{out}");
    }
    let ckpt = |d: &str| std::fs::read(Path::new(&p(d)).join("last.ckpt")).unwrap();
    assert_eq!(ckpt("m"), ckpt("m2"));
    for f in ["model.json", "best.ckpt", "history.csv", "resolved.toml"] {
        assert!(Path::new(&p("m")).join(f).exists(), "{f}");
    }

    ok(&echolab(&["finetune", "-c", &cfg, "--dataset", &p("train"), "--model", &p("m"), "--run-dir", &p("ft")]));
    assert!(Path::new(&p("ft")).join("best.ckpt").exists());

    ok(&echolab(&["evaluate", "-c", &cfg, "--dataset", &p("test"), "--model", &p("ft"), "--emit-audio", "--run-dir", &p("ev")]));
    let csv = std::fs::read_to_string(Path::new(&p("ev")).join("report.csv")).unwrap();
    // one row per condition per file plus three mean rows
    assert_eq!(csv.lines().count(), 1 + 2 * 3 + 3);
    assert_eq!(std::fs::read_dir(Path::new(&p("ev")).join("audio")).unwrap().count(), 2);

    let out = ok(&echolab(&["evaluate", "-c", &cfg, "--dataset", &p("test"), "--identity-mask", "--run-dir", &p("unproc")]));
    assert!(out.contains("STFE"), "{out}");
}
