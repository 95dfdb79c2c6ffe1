use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "\
task = forecast
[data]
source = synthetic
rows = 400
channels = 2
[synth]
kind = multi_sine
periods = 12, 4
amplitudes = 1, 0.5
noise = 0.1
[model]
seq_len = 32
horizon = 8
scales = 1
d_model = 8
[train]
epochs = 1
";

fn tspm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tspm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

#[test]
fn commands_emit_json_and_reproduce_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), CONFIG).unwrap();

    let train = tspm(&["train", "-c", "run.cfg"], d);
    assert!(
        train.status.success(),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    let trained = json(&train);
    assert!(d.join("run.ckpt").exists() && d.join("run.report.json").exists());
    assert!(!train.stderr.is_empty());

    let eval = tspm(
        &[
            "eval",
            "-c",
            "run.cfg",
            "--checkpoint",
            "run.ckpt",
            "--dump-predictions",
            "pred.csv",
        ],
        d,
    );
    assert!(eval.status.success());
    assert_eq!(json(&eval), trained["metrics"]);
    let dump = std::fs::read_to_string(d.join("pred.csv")).unwrap();
    assert!(dump.starts_with("window,step,channel,prediction,target\n"));

    let synth = tspm(&["synth", "-c", "run.cfg", "-o", "series.csv"], d);
    assert_eq!(json(&synth)["rows"], 400);
    let periods = json(&tspm(
        &["inspect-periods", "-c", "run.cfg", "--csv", "series.csv"],
        d,
    ));
    assert_eq!(periods.as_array().unwrap().len(), 2);

    let cka = json(&tspm(
        &["analyze-cka", "-c", "run.cfg", "--checkpoint", "run.ckpt"],
        d,
    ));
    assert_eq!(cka["first_last"], 1.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), CONFIG).unwrap();
    std::fs::write(d.join("bad.cfg"), "model.bogus = 1\n").unwrap();
    std::fs::write(d.join("garbage.ckpt"), b"not a checkpoint").unwrap();

    let missing = tspm(&["eval", "-c", "run.cfg", "--checkpoint", "absent.ckpt"], d);
    assert_eq!(missing.status.code(), Some(2));
    assert!(missing.stdout.is_empty());
    assert_eq!(tspm(&["train", "-c", "bad.cfg"], d).status.code(), Some(2));
    assert_eq!(
        tspm(&["train", "-c", "nowhere.cfg"], d).status.code(),
        Some(2)
    );
    assert_eq!(
        tspm(
            &["eval", "-c", "run.cfg", "--checkpoint", "garbage.ckpt"],
            d
        )
        .status
        .code(),
        Some(1)
    );

    // parameters overflow after the first full-size step
    std::fs::write(
        d.join("hot.cfg"),
        format!("{CONFIG}lr = 1e300\nwarmup_steps = 0\n"),
    )
    .unwrap();
    let diverged = tspm(&["train", "-c", "hot.cfg"], d);
    assert_eq!(
        diverged.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&diverged.stderr)
    );
}
