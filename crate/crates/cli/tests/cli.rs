use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcc_core::train::{read_metrics, Checkpoint, TrainConfig, Trainer};

const SMALL: &str = r#"
[encoder]
input_side = 16
stages = "8/2/pool"

[comparator]
hidden = 16
glimpses = 2

[model]
classes = 5

[train]
epoch_episodes = 160
log_every = 5
"#;

fn dcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcc"))
        .args(args)
        .env_remove("DCC_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn synth_data_writes_folders_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = dcc(&["synth-data", "--ids", "20", "--views", "4", "--seed", "1", "--side", "24", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let folders = fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(folders, 20);
    let fa = files_under(&a);
    let ppm: Vec<_> = fa.iter().filter(|p| p.extension().is_some_and(|e| e == "ppm")).collect();
    assert_eq!(ppm.len(), 80);
    let fb = files_under(&b);
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = dcc(&["synth-data", "--ids", "2", "--views", "2", "--seed", "9", "--side", "8", "--out", s(&a)]);
    assert_eq!(code(&o), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_dcc"))
        .args(["synth-data", "--ids", "2", "--views", "2", "--side", "8", "--out", s(&b)])
        .env("DCC_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for (x, y) in files_under(&a).iter().zip(files_under(&b)) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = dcc(&["synth-data", "--ids", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists(), "no partial output on validation failure");

    let o = dcc(&["train", "--config", s(&dir.path().join("missing.toml"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.toml"), "{}", stderr(&o));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[glimpse]\nwidth = 3\n").unwrap();
    let o = dcc(&["train", "--synthetic", "--config", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("glimpse.width"), "{}", stderr(&o));

    let o = dcc(&["train", "--ids", "10"]);
    assert_eq!(code(&o), 2, "no data source");

    let o = dcc(&["train", "--synthetic", "--ids", "4", "--out", s(&out)]);
    assert_eq!(code(&o), 2, "fewer identities than classes");
    assert!(!out.exists());

    let o = dcc(&["eval", "--checkpoint", s(&dir.path().join("nope.ckpt"))]);
    assert_eq!(code(&o), 2);

    let o = dcc(&["gradcheck", "--perturb-weight", "nonsense"]);
    assert_eq!(code(&o), 2);

    let o = dcc(&["frobnicate"]);
    assert_eq!(code(&o), 2);
}

fn train_small(dir: &Path, out: &Path) -> Output {
    let cfg = small_config(dir);
    dcc(&["train", "--synthetic", "--ids", "10", "--epochs", "2", "--seed", "7", "--config", s(&cfg), "--out", s(out)])
}

#[test]
fn train_logs_decreasing_loss_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = train_small(dir.path(), &a);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("checkpoint"), "{}", stdout(&o));
    let rows = read_metrics(&a.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 40);
    let mean = |r: &[(u64, f64, f64, f64)]| r.iter().map(|x| x.1).sum::<f64>() / r.len() as f64;
    assert!(mean(&rows[20..]) < mean(&rows[..20]), "loss did not decrease: {rows:?}");
    assert!(a.join("latest.ckpt").exists());

    let o = train_small(dir.path(), &b);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}

#[test]
fn eval_reports_averaged_trials() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = small_config(dir.path());
    let o = dcc(&[
        "train", "--synthetic", "--ids", "12", "--holdout", "6", "--max-steps", "10", "--seed", "3", "--config",
        s(&cfg), "--out", s(&run),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let json = dir.path().join("eval.json");
    let o = dcc(&[
        "eval", "--checkpoint", s(&run.join("latest.ckpt")), "--synthetic", "--ids", "12", "--holdout", "6",
        "--trials", "10", "--json", s(&json),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = stdout(&o);
    for col in ["R=1", "R=5", "R=10", "R=20", "mAP"] {
        assert!(report.contains(col), "{report}");
    }
    let res = dcc_core::eval::EvalResult::read_json(&json).unwrap();
    assert_eq!(res.trials, 10);
    assert_eq!(res.cmc.len(), 6, "gallery of held-out identities");
    assert!(res.cmc.windows(2).all(|w| w[0] <= w[1]));

    // rendering at another size than the checkpoint expects
    let o = dcc(&["eval", "--checkpoint", s(&run.join("latest.ckpt")), "--synthetic", "--config", s(&{
        let p = dir.path().join("side.toml");
        fs::write(&p, "[data]\nside = 20\n").unwrap();
        p
    })]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn gradcheck_subsets_and_negative_control() {
    let o = dcc(&["gradcheck", "--perturb-weight", "wl", "--epsilon", "1e-5"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let lines: Vec<String> = stdout(&o).lines().filter(|l| l.contains("pass") || l.contains("FAIL")).map(String::from).collect();
    assert_eq!(lines.len(), 1, "{lines:?}");
    assert!(lines[0].starts_with("coattention"));

    let o = dcc(&["gradcheck", "--perturb-weight", "lstm", "--corrupt-gradient"]);
    assert_ne!(code(&o), 0);
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn full_gradcheck_passes() {
    let o = dcc(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}\n{}", stdout(&o), stderr(&o));
    assert_eq!(stdout(&o).matches("pass").count(), 6, "{}", stdout(&o));
}

#[test]
fn training_abort_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::default();
    cfg.model.encoder.input_side = 16;
    cfg.model.encoder.stages = vec![dcc_core::encoder::StemStage { out_channels: 8, stride: 2, pool: true }];
    cfg.model.comparator.hidden = 8;
    cfg.model.comparator.glimpses = 1;
    cfg.model.classes = 4;
    let mut ck = Trainer::new(cfg).unwrap().checkpoint();
    let bias = ck.params.iter_mut().find(|(n, _)| n == "head.b").unwrap();
    bias.1.data_mut()[0] = f64::NAN;
    let path = dir.path().join("broken.ckpt");
    ck.save(&path).unwrap();
    let out = dir.path().join("run");
    let o = dcc(&["train", "--resume", s(&path), "--synthetic", "--ids", "6", "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("last good checkpoint"), "{}", stderr(&o));
}

#[test]
fn glimpse_viz_writes_one_overlay_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let ck = Trainer::new(TrainConfig::default()).unwrap().checkpoint();
    let path = dir.path().join("untrained.ckpt");
    ck.save(&path).unwrap();
    let out = dir.path().join("viz");
    let o = dcc(&["glimpse-viz", "--checkpoint", s(&path), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    let want: Vec<String> = (0..16).map(|t| format!("step_{t:02}_{}.png", if t % 2 == 0 { "a" } else { "b" })).collect();
    assert_eq!(names, want);
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let step0 = traj.lines().nth(1).unwrap();
    assert!(step0.starts_with("0,a,") && step0.ends_with(",true"), "{step0}");

    let gp = dir.path().join("gp.ckpt");
    let mut cfg = TrainConfig::default();
    cfg.model.head = "gp".parse().unwrap();
    Checkpoint::save(&Trainer::new(cfg).unwrap().checkpoint(), &gp).unwrap();
    let o = dcc(&["glimpse-viz", "--checkpoint", s(&gp), "--out", s(&dir.path().join("none"))]);
    assert_eq!(code(&o), 2);
}
