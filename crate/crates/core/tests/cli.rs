use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
d_model = 8
n_blocks = 1
n_heads = 2
context_rows = 2
context_cols = 3
context_hidden = 4
epochs = 2
batch_size = 8
n_clips = 24
";

fn moemo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moemo"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn moemo")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A tiny synthetic dataset in `dir/data` with the config in `dir/tiny.cfg`.
fn synth(dir: &Path) {
    fs::write(dir.join("tiny.cfg"), TINY).unwrap();
    let out = moemo(dir, &["synth", "--config", "tiny.cfg", "--out", "data"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("wrote 24 clips"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&moemo(dir.path(), &[])), 2);
    assert_eq!(code(&moemo(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&moemo(dir.path(), &["train", "--no-such-flag"])), 2);
    let help = moemo(dir.path(), &["--help"]);
    assert_eq!(code(&help), 0);
    assert!(stdout(&help).contains("ablate"));
}

#[test]
fn validate_synth_output() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let ok = moemo(dir.path(), &["validate", "--config", "tiny.cfg", "data/manifest.toml", "data/keypoints/synth_00000.mokp", "data/context/synth_00003.mocx"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));

    let bad = dir.path().join("data/keypoints/synth_00001.mokp");
    let bytes = fs::read(&bad).unwrap();
    fs::write(&bad, &bytes[..bytes.len() - 3]).unwrap();
    let out = moemo(dir.path(), &["validate", "--config", "tiny.cfg", "data/manifest.toml"]);
    assert_eq!(code(&out), 1);
    let out = moemo(dir.path(), &["validate", "data/keypoints/synth_00001.mokp"]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("invalid"));
    assert_eq!(code(&moemo(dir.path(), &["validate", "missing.mokp"])), 1);
}

#[test]
fn vectors_prints_the_shape() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = moemo(dir.path(), &["vectors", "data/keypoints/synth_00002.mokp", "--out", "vec"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("(15, 17, 6)"), "{}", stdout(&out));
    let written = dir.path().join("vec/vectors/synth_00002_p0.momv");
    let check = moemo(dir.path(), &["validate", written.to_str().unwrap()]);
    assert_eq!(code(&check), 0);
}

#[test]
fn train_twice_is_bitwise_identical_and_eval_agrees() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    for run in ["a", "b"] {
        let out = moemo(
            dir.path(),
            &["train", "--config", "tiny.cfg", "--manifest", "data/manifest.toml", "--seed", "7", "--out", run],
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["loss.csv", "metrics.csv", "metrics.txt", "checkpoint.moem", "run.toml"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let loss = fs::read_to_string(dir.path().join("a/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);

    let out = moemo(
        dir.path(),
        &["eval", "--checkpoint", "a/checkpoint.moem", "--manifest", "data/manifest.toml", "--out", "e"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(dir.path().join("e/metrics.csv")).unwrap(),
        fs::read(dir.path().join("a/metrics.csv")).unwrap()
    );
    let check = moemo(dir.path(), &["validate", "a/checkpoint.moem", "a/run.toml"]);
    assert_eq!(code(&check), 0, "{}", stdout(&check));
}

#[test]
fn ablate_writes_both_reports() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    let out = moemo(dir.path(), &["ablate", "--config", "tiny.cfg", "--seeds", "0,1", "--epochs", "1", "--out", "ab"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("ab/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["full", "no_cross_attention", "no_context"]);
    let table = fs::read_to_string(dir.path().join("ab/ablation.txt")).unwrap();
    assert_eq!(stdout(&out), table);
}

#[test]
fn bad_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "d_model = 7\nn_heads = 2\n").unwrap();
    let out = moemo(dir.path(), &["train", "--config", "bad.cfg"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_model"));
}
