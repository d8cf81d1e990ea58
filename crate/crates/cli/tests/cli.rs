use std::path::Path;
use std::process::{Command, Output};

use salgail::trajectory::{read_labeled, SampleLabel};
use salgail::SaliencyMap;
use serde_json::Value;

fn salgail(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salgail"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = salgail(args);
    assert!(
        out.status.success(),
        "{args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn attractor_maps(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let logs = root.join("logs");
    let maps = root.join("maps");
    ok(&["--seed", "5", "synth", "attractor", "--output", s(&logs), "--subjects", "6", "--images", "2", "--fixations", "10"]);
    ok(&["salmap", "--input", s(&logs), "--output", s(&maps), "--width", "64", "--height", "32"]);
    (logs, maps)
}

#[test]
fn ivt_recovers_synthetic_labels() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let labeled = dir.path().join("labeled");
    ok(&["--seed", "3", "synth", "ivt", "--output", s(&raw), "--samples", "120"]);
    ok(&["ivt", "--input", s(&raw), "--output", s(&labeled)]);
    let truth = read_json(&raw.join("labels.json"));
    let files = truth["files"].as_array().unwrap();
    assert_eq!(files.len(), 6);
    for f in files {
        let t = read_labeled(&labeled.join(f["file"].as_str().unwrap())).unwrap();
        assert_eq!(t.count(SampleLabel::Fixation) as u64, f["fixations"].as_u64().unwrap());
        assert_eq!(t.count(SampleLabel::Saccade) as u64, f["saccades"].as_u64().unwrap());
    }
}

#[test]
fn ivt_on_an_empty_directory_warns_but_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["ivt", "--input", s(dir.path()), "--output", s(&dir.path().join("o"))]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn malformed_logs_are_named_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["--seed", "3", "synth", "ivt", "--output", s(&raw), "--samples", "20", "--images", "1"]);
    std::fs::write(raw.join("broken__s9.csv"), "t_ms,pitch_deg,yaw_deg\n0,95,0\n").unwrap();
    let out = salgail(&["ivt", "--input", s(&raw), "--output", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken__s9.csv"));
}

#[test]
fn salmap_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let (logs, maps) = attractor_maps(dir.path());
    let again = dir.path().join("again");
    ok(&["--jobs", "2", "salmap", "--input", s(&logs), "--output", s(&again), "--width", "64", "--height", "32"]);
    for id in ["img000", "img001"] {
        let a = std::fs::read(maps.join(format!("{id}.f32"))).unwrap();
        let b = std::fs::read(again.join(format!("{id}.f32"))).unwrap();
        assert_eq!(a, b, "{id}");
        let m = SaliencyMap::load_raw(&maps.join(format!("{id}.f32"))).unwrap();
        assert_eq!((m.width(), m.height()), (64, 32));
        assert!(maps.join(format!("{id}.png")).is_file());
    }
}

#[test]
fn eval_of_ground_truth_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let (logs, maps) = attractor_maps(dir.path());
    let csv = dir.path().join("m.csv");
    ok(&["eval", "--pred", s(&maps), "--gt", s(&maps), "--fixations", s(&logs), "--output", s(&csv)]);
    let mut rdr = salgail::io::csv_reader(&csv).unwrap();
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows[..2] {
        assert_eq!(&r[1], "1.000000");
        assert!(r[2].parse::<f64>().unwrap().abs() < 1e-6);
    }
    assert_eq!(&rows[2][0], "mean(std)");

    let partial = dir.path().join("partial");
    std::fs::create_dir(&partial).unwrap();
    std::fs::copy(maps.join("img000.f32"), partial.join("img000.f32")).unwrap();
    let out = salgail(&["eval", "--pred", s(&partial), "--gt", s(&maps), "--fixations", s(&logs), "--output", s(&csv)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("img001.f32"));
}

#[test]
fn train_and_simulate_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.json");
    let out = salgail(&["train", "--manifest", s(&m), "--output", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(4));
    let out = salgail(&["simulate", "--checkpoint", s(&m), "--input", s(&m), "--output", s(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn bad_overrides_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["--seed", "1", "synth", "experts", "--output", s(&data), "--images", "2", "--held-out", "1", "--width", "64", "--height", "32"]);
    let m = data.join("manifest.json");
    for bad in ["nope=1", "gamma=2", "cycles"] {
        let out = salgail(&["--seed", "1", "train", "--manifest", s(&m), "--output", s(&dir.path().join("c")), "--set", bad, "--dry-run"]);
        assert_eq!(out.status.code(), Some(4), "{bad}");
    }
}

#[test]
fn paper_preset_prints_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["--seed", "1", "synth", "experts", "--output", s(&data), "--images", "2", "--held-out", "1", "--width", "64", "--height", "32"]);
    let out = ok(&[
        "--seed", "1", "train", "--manifest", s(&data.join("manifest.json")), "--output", s(&dir.path().join("c")),
        "--preset", "paper", "--dry-run",
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["preset: paper", "50000", "42", "7e-4", "2e-4", "150", "0.99", "0.7", "0.01"] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
    assert!(!dir.path().join("c").exists());
}

#[test]
fn training_and_simulation_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["--seed", "1", "synth", "experts", "--output", s(&data), "--images", "3", "--held-out", "1", "--width", "64", "--height", "32"]);
    let manifest = data.join("manifest.json");
    let held = read_json(&data.join("heldout.json"));
    let image = data.join(held["scenes"][0]["image"].as_str().unwrap());
    let run = |tag: &str| {
        let ckpt = dir.path().join(format!("{tag}.json"));
        let out = dir.path().join(tag);
        ok(&[
            "--seed", "9", "train", "--manifest", s(&manifest), "--output", s(&ckpt),
            "--set", "cycles=2", "--set", "episodes=2", "--progress", "0",
        ]);
        ok(&["--seed", "9", "simulate", "--checkpoint", s(&ckpt), "--input", s(&image), "--output", s(&out), "--rollouts"]);
        (ckpt, out)
    };
    let (c1, o1) = run("a");
    let (c2, o2) = run("b");
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
    assert!(c1.with_extension("log.csv").is_file());
    let id = image.file_stem().unwrap().to_str().unwrap();
    for name in [format!("{id}.f32"), format!("{id}_rollouts.csv")] {
        assert_eq!(std::fs::read(o1.join(&name)).unwrap(), std::fs::read(o2.join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn findings_summarize_an_attractor_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    let out = dir.path().join("findings");
    ok(&["--seed", "2", "synth", "attractor", "--output", s(&logs), "--subjects", "8", "--images", "2"]);
    ok(&["--seed", "2", "findings", "--input", s(&logs), "--output", s(&out), "--reps", "4", "--width", "90", "--height", "45"]);
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["images"], 2);
    assert_eq!(summary["subjects"], 8);
    assert!(summary["provenance"]["config_hash"].is_string());
    assert!(out.join("split_half.csv").is_file());
}
