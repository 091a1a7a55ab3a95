use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use crc_sense::RunConfig;

const SMALL: &str = r#"
[signal]
subbands = 4
k_max = 2
snr_db = 10.0

[sampling]
cosets = 4
decimation = 8
samples_per_coset = 16

[training]
n_train = 200
epochs = 2
batch_size = 32

[calibration]
n_cal = 20

[experiment]
trials = 4
base_seed = 9
"#;

fn cli(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crc-sense"))
        .args(args)
        .env("CRC_SENSE_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_small(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn gen_config_then_psd_run_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("paper.toml");
    let cfg = cfg_path.to_str().unwrap();
    let out = cli(&["gen-config", cfg], "0");
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(RunConfig::load(&cfg_path).unwrap(), RunConfig::paper_preset());

    let text = fs::read_to_string(&cfg_path)
        .unwrap()
        .replace("lv = true", "lv = false")
        .replace("trials = 50", "trials = 5");
    fs::write(&cfg_path, text).unwrap();
    let trials = dir.path().join("t.csv");
    let summary = dir.path().join("s.csv");
    let start = Instant::now();
    let out = cli(
        &["run", "--config", cfg, "--out", trials.to_str().unwrap(), "--summary", summary.to_str().unwrap()],
        "0",
    );
    let elapsed = start.elapsed();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    assert!(stderr(&out).contains("base seed 1"));
    let rows = fs::read_to_string(&trials).unwrap();
    // 5 trials x 1 feature x 3 methods
    assert_eq!(rows.lines().count(), 1 + 15);
    assert!(rows.lines().skip(1).all(|l| l.starts_with("none,0,psd,")));
    let summary = fs::read_to_string(&summary).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3);
}

#[test]
fn sweep_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let out_dir = dir.path().join("out");
    let out = cli(
        &["sweep", "--config", &cfg, "--param", "snr_db", "--values", "0,5,10", "--out", out_dir.to_str().unwrap()],
        "0",
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let trials = fs::read_to_string(out_dir.join("trials.csv")).unwrap();
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(trials.lines().next().unwrap(), "sweep_param,sweep_value,feature,method,trial,fnr,tnr");
    assert_eq!(
        summary.lines().next().unwrap(),
        "sweep_param,sweep_value,feature,method,mean_fnr,fnr_lo,fnr_hi,mean_tnr,tnr_lo,tnr_hi"
    );
    let values = |text: &str| {
        let mut v: Vec<String> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().to_owned()).collect();
        v.dedup();
        v
    };
    assert_eq!(values(&trials), ["0", "5", "10"]);
    assert_eq!(values(&summary), ["0", "5", "10"]);
    // 3 values x 4 trials x 2 features x 3 methods
    assert_eq!(trials.lines().count(), 1 + 72);
    assert_eq!(summary.lines().count(), 1 + 18);
}

#[test]
fn rows_replay_from_seed_material_at_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let run = |threads: &str, name: &str| {
        let out_dir = dir.path().join(name);
        let out = cli(
            &["sweep", "--config", &cfg, "--param", "beta", "--values", "0.25,1", "--out", out_dir.to_str().unwrap()],
            threads,
        );
        assert!(out.status.success(), "{}", stderr(&out));
        fs::read(out_dir.join("trials.csv")).unwrap()
    };
    let one = run("1", "a");
    let four = run("4", "b");
    assert_eq!(one, four);

    let table = String::from_utf8(one).unwrap();
    let out = cli(
        &["replay", "--config", &cfg, "--param", "beta", "--value", "1", "--trial", "2"],
        "3",
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let replayed = String::from_utf8(out.stdout).unwrap();
    let expected: Vec<&str> = table.lines().filter(|l| l.starts_with("beta,1,") && l.split(',').nth(4) == Some("2")).collect();
    assert_eq!(expected.len(), 6);
    assert_eq!(replayed.lines().skip(1).collect::<Vec<_>>(), expected);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[calibration]\nalpha = 1.5\n").unwrap();
    let out = cli(&["run", "--config", bad.to_str().unwrap()], "0");
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("calibration.alpha"));

    let out = cli(&["run", "--config", "/nonexistent/config.toml"], "0");
    assert_eq!(out.status.code(), Some(1));

    let out = cli(&["frobnicate"], "0");
    assert_eq!(out.status.code(), Some(1));

    let out = cli(&["selfcheck"], "0");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let cfg = write_small(dir.path());
    let out = cli(&["sweep", "--config", &cfg, "--param", "volume", "--values", "1"], "0");
    assert_eq!(out.status.code(), Some(1));

    // a blocked output path is a runtime failure
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let target = blocker.join("t.csv");
    let text = SMALL.replace("[training]", "[features]\nlv = false\n\n[training]");
    fs::write(&cfg, text).unwrap();
    let out = cli(&["run", "--config", &cfg, "--out", target.to_str().unwrap()], "0");
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn train_lv_writes_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let model = dir.path().join("lv.model");
    let out = cli(&["train-lv", "--config", &cfg, "--out", model.to_str().unwrap()], "0");
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
    let m = crc_sense::lv::load_model(&model).unwrap();
    assert_eq!((m.arch.in_channels, m.arch.width, m.arch.subbands), (8, 16, 4));

    // the saved model is picked up from the config instead of retraining
    let text = SMALL.replace("[training]", &format!("[features]\nlv_model = {:?}\n\n[training]", model.to_str().unwrap()));
    fs::write(&cfg, text).unwrap();
    let out = cli(&["run", "--config", &cfg, "--out", dir.path().join("t.csv").to_str().unwrap(), "--summary", dir.path().join("s.csv").to_str().unwrap()], "0");
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(!stderr(&out).contains("training the LV network"));
}
