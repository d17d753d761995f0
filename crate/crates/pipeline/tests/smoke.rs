use std::fs;
use std::path::Path;
use std::process::Command;

use portrait_core::reconstruction::read_parameter_sequence;

fn dvp(args: &[&str]) -> serde_json::Value {
    let out = Command::new(env!("CARGO_BIN_EXE_dvp")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "dvp {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_emits_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = dvp(&["synth", "--frames", "150", "--seed", "11", "--out", s(&data)]);
    assert_eq!(synth["frames"], 150);
    let config = data.join("project.toml");
    let c = s(&config);

    let fit = dvp(&["fit", "--config", c]);
    assert_eq!(fit["frames"], 150);
    let truth = read_parameter_sequence(data.join("truth.jsonl")).unwrap();
    let fitted = read_parameter_sequence(data.join("out/params.jsonl")).unwrap();
    let mean_rot = truth
        .iter()
        .zip(&fitted)
        .map(|(t, f)| t.rotation.angle_to(&f.rotation))
        .sum::<f64>()
        / 150.0;
    assert!(
        mean_rot.to_degrees() < 3.0,
        "mean rotation error {:.2} deg",
        mean_rot.to_degrees()
    );

    let train = dvp(&["train", "--config", c, "--iterations", "300"]);
    assert_eq!(train["corpus_size"], 140);
    assert_eq!(train["iterations"], 300);

    let frames = data.join("out/inferred");
    assert_eq!(dvp(&["infer", "--config", c, "--out", s(&frames)])["frames"], 150);
    let eval = dvp(&[
        "evaluate",
        "--config",
        c,
        "--predictions",
        s(&frames),
        "--label",
        "smoke",
    ]);
    assert!(eval["sequence_mean"].as_f64().unwrap() < 100.0, "{eval}");

    let out = data.join("out");
    for f in [
        "params.jsonl",
        "fit_flags.json",
        "weights.dvpw",
        "loss.csv",
        "inferred/00149.png",
        "reports/smoke/frames.csv",
        "reports/smoke/summary.json",
        "reports/smoke/maps/00149.png",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let losses = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 301);
}
