use std::path::Path;
use std::process::Command as Process;

use lpad_cli::{run, Command, RunConfig};
use lpad_core::datapipe::{load_csv, CsvSchema};

fn tiny(out: &Path, extra: &str) -> RunConfig {
    let base = "prior = gaussian\nlatent = 3\nfilters = 2\nkernels = 3\nepochs = 2\nminibatch = 16\nlr = 3e-3\nseed = 4\n\
                synth_n = 80\nsynth_channels = 3\nsynth_window = 12\nsynth_fraction = 0.1\nsamples = 2";
    let key = |line: &str| line.split('=').next().unwrap().trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let mut text: String = base
        .lines()
        .filter(|l| !overridden.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect();
    text.push_str(extra);
    let mut cfg = RunConfig::from_text(&text, None).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn synth_writes_a_loadable_dataset_with_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "");
    run(&cfg, Command::Synth, 1).unwrap();
    let path = dir.path().join("dataset.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# "));
    assert!(text.contains("seed = 4"));
    let ds = load_csv(&path, &CsvSchema::default()).unwrap();
    assert_eq!((ds.len(), ds.n_channels(), ds.window_len()), (80, 3, 12));
}

#[test]
fn train_writes_checkpoints_and_loss_curves_per_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "checkpoint_every = 1\n");
    let out = run(&cfg, Command::Train, 2).unwrap();
    assert_eq!(out.stats.len(), 2);
    assert!(out.reports.is_empty());
    for r in ["repeat-1", "repeat-2"] {
        let d = dir.path().join(r);
        for f in [
            "checkpoint.txt",
            "checkpoint-epoch-1.txt",
            "checkpoint-epoch-2.txt",
            "train_stats.csv",
        ] {
            assert!(d.join(f).exists(), "{r}/{f}");
        }
        let csv = std::fs::read_to_string(d.join("train_stats.csv")).unwrap();
        assert!(csv.contains("run_seed"));
        assert!(csv.contains("epoch,split,total,recon,kl_weighted"));
        assert!(csv.contains(",validation,"));
    }
    let ck = std::fs::read_to_string(dir.path().join("repeat-2/checkpoint.txt")).unwrap();
    assert!(ck.contains("meta seed 5"));
}

#[test]
fn eval_summary_aggregates_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "");
    let out = run(&cfg, Command::Eval, 3).unwrap();
    let s = out.summary.unwrap();
    assert_eq!(s.repeats, 3);
    assert_eq!(s.seeds, vec![4, 5, 6]);
    let mean = out.reports.iter().map(|r| r.f1).sum::<f64>() / 3.0;
    assert!((s.f1.mean - mean).abs() < 1e-12);
    let json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("repeat-2/eval.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["seeds"][0], 5);
    assert_eq!(json["config"]["seed"], "4");
}

#[test]
fn combined_training_evaluates_on_the_test_part() {
    let dir = tempfile::tempdir().unwrap();
    let split = tiny(dir.path(), "");
    let combined = tiny(&dir.path().join("c"), "combine_train_val = true\n");
    let a = run(&split, Command::Eval, 1).unwrap();
    let b = run(&combined, Command::Eval, 1).unwrap();
    assert_eq!(a.reports[0].instance_ids, b.reports[0].instance_ids);
    assert!(b.stats[0]
        .records
        .iter()
        .all(|r| r.split.as_str() == "train"));
}

#[test]
fn sweep_table_has_latent_rows_and_beta_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(
        dir.path(),
        "sweep_latents = 2,4\nsweep_betas = 1,10,25\nepochs = 1\n",
    );
    let out = run(&cfg, Command::Sweep, 1).unwrap();
    let t = out.sweep.unwrap();
    assert_eq!((t.f1.len(), t.f1[0].len()), (2, 3));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "latent,1,10,25");
    assert!(rows[1].starts_with("2,") && rows[2].starts_with("4,"));
    let cells = std::fs::read_to_string(dir.path().join("sweep_cells.csv")).unwrap();
    assert_eq!(cells.lines().filter(|l| !l.starts_with('#')).count(), 1 + 6);
}

#[test]
fn transfer_requires_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let err = run(&tiny(dir.path(), ""), Command::Transfer, 1).unwrap_err();
    assert!(err.to_string().contains("'checkpoint'"), "{err}");
}

#[test]
fn transfer_rejects_mismatched_data() {
    let dir = tempfile::tempdir().unwrap();
    run(&tiny(dir.path(), ""), Command::Train, 1).unwrap();
    let extra = format!(
        "synth_channels = 4\ncheckpoint = {}\n",
        dir.path().join("checkpoint.txt").display()
    );
    let err = run(&tiny(&dir.path().join("t"), &extra), Command::Transfer, 1).unwrap_err();
    assert!(err.to_string().contains("channels"), "{err}");
}

#[test]
fn inputs_are_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    run(&tiny(dir.path(), ""), Command::Synth, 1).unwrap();
    let data = dir.path().join("dataset.csv");
    let before = std::fs::read(&data).unwrap();
    let extra = format!("data = {}\n", data.display());
    run(&tiny(&dir.path().join("e"), &extra), Command::Eval, 1).unwrap();
    assert_eq!(std::fs::read(&data).unwrap(), before);
}

#[test]
fn binary_reports_config_errors_with_exit_status_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "seed = 1\nbata = 3\n").unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_lpad"))
        .args(["eval", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key 'bata'"));
}

#[test]
fn binary_runs_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    let cfg = tiny(dir.path(), "");
    std::fs::write(&path, cfg.snapshot_text()).unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_lpad"))
        .args(["eval", "--repeats", "1", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("o/eval.json").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("f1"));
}
