use std::path::Path;
use std::process::{Command, Output};

use softfin::eval::{summaries_from_csv, CompareTable};

fn softfin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softfin")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "\
datagen.train_logs = 2
datagen.test_logs = 1
datagen.samples = 1200
surrogate.max_epochs = 1
surrogate.pos_stride = 1
surrogate.force_stride = 1
rl.single_steps = 270
rl.grid_steps = 270
rl.references = 1,1; 2,0
run.rl_seeds = 1
run.baseline_episodes = 2
";

#[test]
fn usage_errors_exit_2() {
    for args in [&["--bogus"][..], &["frobnicate"], &["evaluate", "--frob"]] {
        let o = softfin(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).contains("Usage"), "{args:?}: {}", stderr(&o));
    }
    for args in [&["train-rl"][..], &["train-rl", "--mode", "both"]] {
        assert_eq!(softfin(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn missing_checkpoint_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = softfin(&["evaluate", "--controller", "single", "--seed", "3", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains(&*Path::new(out).join("rl/seed_3/single.ckpt").to_string_lossy()), "{msg}");
    assert_eq!(msg.trim_end().lines().count(), 1, "{msg}");
}

#[test]
fn bad_config_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "ppo.lr = 1e-3\nppo.typo = 2\n").unwrap();
    let o = softfin(&["show-config", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.cfg:2: unknown key `ppo.typo`"), "{}", stderr(&o));
}

#[test]
fn stages_run_one_by_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    let common = ["--seed", "5", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let run = |stage: &[&str]| {
        let args: Vec<&str> = stage.iter().chain(&common).copied().collect();
        let o = softfin(&args);
        assert!(o.status.success(), "{stage:?}: {}", stderr(&o));
        String::from_utf8(o.stdout).unwrap()
    };
    run(&["collect"]);
    assert!(run(&["train-surrogate"]).contains("surrogate.ckpt"));
    assert!(run(&["train-rl", "--mode", "single"]).contains("bytes"));
    assert!(run(&["train-rl", "--mode", "grid"]).contains("grid policy (1, 1)"));

    let printed = run(&["compare"]);
    let table = CompareTable::from_csv(&printed).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.to_csv(), printed);
    assert_eq!(std::fs::read_to_string(out.join("rl/seed_5/compare.csv")).unwrap(), printed);

    let printed = summaries_from_csv(&run(&["evaluate", "--controller", "single", "--reference", "2,0"])).unwrap();
    let saved = std::fs::read_to_string(out.join("eval/single/summary.csv")).unwrap();
    assert_eq!(summaries_from_csv(&saved).unwrap(), printed);
    run(&["plot", "--controller", "single"]);
    for f in ["trace.csv", "polar.csv", "force.csv", "polar.svg", "force.svg"] {
        assert!(out.join("eval/single").join(f).exists(), "{f}");
    }
}
