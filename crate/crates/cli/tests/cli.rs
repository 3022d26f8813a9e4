use std::path::Path;
use std::process::{Command, Output};

use adenet_core::harness::RunConfig;
use adenet_core::model::ModelConfig;

fn adenet(args: &[&str], dir: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_adenet"))
        .args(args)
        .current_dir(dir)
        .env_remove("ADENET_SEED")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "adenet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path) {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::tiny();
    cfg.optim.epochs = 1;
    cfg.optim.batch_size = 2;
    cfg.corpus.train = 2;
    cfg.corpus.val = 1;
    cfg.corpus.test = 2;
    cfg.corpus.min_duration_s = 1;
    cfg.corpus.max_duration_s = 1;
    std::fs::write(dir.join("run.toml"), cfg.to_toml()).unwrap();
}

#[test]
fn full_pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir);
    let gen = stdout(&adenet(&["gen-data", "--config", "run.toml", "--out", "data"], dir));
    assert!(gen.contains("train: 2 clips") && gen.contains("test: 2 clips"), "{gen}");

    let train = stdout(&adenet(&["train", "--config", "run.toml", "--data", "data", "--out", "ckpt"], dir));
    assert!(train.contains("epoch   0") && train.contains("best epoch 0"), "{train}");

    adenet(&["eval", "--ckpt", "ckpt", "--data", "data", "--report", "report.txt"], dir);
    let report = std::fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("clips = 2")), "{report}");

    let id = "test-0000";
    let scores = stdout(&adenet(&["detect", "--ckpt", "ckpt", "--data", "data", "--clip", id], dir));
    assert_eq!(scores.lines().count(), 25);
    adenet(&["enhance", "--ckpt", "ckpt", "--data", "data", "--clip", id, "--out", "y.wav"], dir);
    assert!(dir.join("y.wav").metadata().unwrap().len() > 32000);

    let plotted = stdout(&adenet(
        &["plot", "--ckpt", "ckpt", "--kind", "scores", "--data", "data", "--out", "plots", "--limit", "1"],
        dir,
    ));
    assert!(plotted.contains("scores.txt"));

    let mfcc = stdout(&adenet(&["features", "dump", "--data", "data", "--clip", id], dir));
    // 25 ms windows at a 10 ms hop over one second, 13 coefficients each.
    assert_eq!(mfcc.lines().count(), 1 + (16000 - 400) / 160);
    assert!(mfcc.lines().all(|l| l.split(' ').count() == 13));
}

#[test]
fn ablate_writes_a_one_key_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir);
    let listed = stdout(&adenet(&["ablate", "--axis", "list"], dir));
    assert_eq!(listed.lines().count(), 10);
    let o = adenet(&["ablate", "--config", "run.toml", "--axis", "no_cmc", "--out", "no_cmc.toml"], dir);
    let changed = String::from_utf8(o.stderr).unwrap();
    assert_eq!(changed.trim(), "changed model.xmodal.cross_attention");
    let derived = RunConfig::load(&dir.join("no_cmc.toml")).unwrap();
    assert!(!derived.model.xmodal.cross_attention);
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_adenet"))
        .args(["ablate", "--axis", "no_such_axis"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}
