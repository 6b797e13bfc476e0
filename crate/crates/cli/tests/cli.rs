use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
dataset.scenes = 4
dataset.families = gaussian_blur, additive_gaussian_noise
dataset.levels = 1, 3, 5
dataset.image_size = 64
crop = 36
backbone.stage_channels = 4, 4, 6, 8, 8
n_train = 3
batch_sets = 2
epochs = 2
seeds = 0
t_values = 2, 3
train_fraction = 0.5
";

fn priq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_priq")).args(args).output().expect("spawn priq")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&priq(&["frobnicate"])), 1);
    assert_eq!(code(&priq(&["eval", "--t", "5"])), 1);
    assert_eq!(code(&priq(&["--help"])), 0);
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "no_such_key = 3\n");
    let out = priq(&["synth", "--config", &cfg, "--out", dir.path().join("d").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.cfg");
    assert_eq!(code(&priq(&["train", "--config", missing.to_str().unwrap(), "--out", "x.ckpt"])), 3);
    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(code(&priq(&["eval", "--checkpoint", junk.to_str().unwrap(), "--t", "2"])), 3);
}

#[test]
fn divergence_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "learning_rate = 1e12\n");
    let out = priq(&["train", "--config", &cfg, "--out", dir.path().join("m.ckpt").to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let data = dir.path().join("data");
    let ckpt = dir.path().join("model.ckpt");
    let out = priq(&["synth", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(data.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 4 * 6);

    let out = priq(&["train", "--config", &cfg, "--data", data.to_str().unwrap(), "--out", ckpt.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let eval = |extra: &[&str]| {
        let mut args = vec!["eval", "--checkpoint", ckpt.to_str().unwrap(), "--t", "3"];
        args.extend_from_slice(extra);
        let out = priq(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let from_files = eval(&["--data", data.to_str().unwrap()]);
    let rebuilt = eval(&[]);
    assert!(from_files.starts_with("variant,toggles,T,seed,lcc,srocc\n"));
    assert_eq!(from_files, rebuilt);
}

#[test]
fn ablate_writes_tables_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "epochs = 1\narms = location:pr1-ssim1-pyr1, mean:pr0-ssim0-pyr0\n");
    let cfg_text = fs::read_to_string(&cfg).unwrap().replace("epochs = 2\n", "");
    fs::write(&cfg, cfg_text).unwrap();
    let out_dir = dir.path().join("out");
    let out = priq(&["ablate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("variant,toggles,T,seed,lcc,srocc"));
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);
    assert!(fs::read_to_string(out_dir.join("srocc_vs_t.svg")).unwrap().starts_with("<svg"));
    assert!(out_dir.join("medians.csv").exists());
}

#[test]
fn selftest_passes() {
    let out = priq(&["selftest"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("oracle suite") && !text.contains("FAIL"));
}
