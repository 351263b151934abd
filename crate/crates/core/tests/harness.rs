use std::process::Command;

use threading_sim::harness::*;
use threading_sim::insertion_env::{Actuation, EnvConfig};
use threading_sim::policy::VsController;
use threading_sim::scene::thread_material;
use threading_sim::tactile::SensorSpec;
use threading_sim::tail_finding::{collect_tip_dataset, train_tip_model, TipModel, TipTrainConfig, DEFAULT_TAIL_TARGET};

const BIN: &str = env!("CARGO_BIN_EXE_threading");

fn tip_model(thread: usize) -> TipModel {
    let data = collect_tip_dataset(150, thread_material(thread).unwrap(), &SensorSpec::default(), 3).unwrap();
    train_tip_model(&data, &TipTrainConfig { epochs: 300, ..TipTrainConfig::default() }).unwrap().0
}

fn stiff_exact() -> EnvConfig {
    EnvConfig { thread: 3, needle: 3, noise_bound: 0.0, actuation: Actuation::ideal(), ..EnvConfig::default() }
}

#[test]
fn pipeline_smoke_stiff_thread_zero_noise() {
    let model = tip_model(3);
    let cfg = stiff_exact();
    let rec = run_full_pipeline(&cfg, &model, DEFAULT_TAIL_TARGET, &mut VsController, 0, 21, None);
    let a = rec.approach.as_ref().expect("approach stage ran");
    assert!(a.tip_error < 2e-3, "tip error {}", a.tip_error);
    assert!((a.trace.l_tail - (a.trace.d1 - a.trace.d2)).abs() == 0.0);
    assert_eq!(rec.outcome, RecordOutcome::Success, "{rec:?}");
    assert!(rec.steps_taken <= 5);

    let again = run_full_pipeline(&cfg, &model, DEFAULT_TAIL_TARGET, &mut VsController, 0, 21, None);
    assert_eq!(serde_json::to_string(&rec).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn pipeline_soft_thread_leaves_no_bump() {
    let model = tip_model(2);
    let cfg = EnvConfig { stiffness_scale: 1e-3, ..EnvConfig { thread: 2, ..stiff_exact() } };
    let rec = run_full_pipeline(&cfg, &model, DEFAULT_TAIL_TARGET, &mut VsController, 0, 5, None);
    assert_eq!(rec.outcome, RecordOutcome::FailTooFewPixels, "{rec:?}");
}

#[test]
fn pipeline_stage_failure_is_recorded() {
    let model = tip_model(2);
    // a tail target longer than the thread cannot be grasped
    let rec = run_full_pipeline(&stiff_exact(), &model, 1.0, &mut VsController, 0, 5, None);
    assert!(matches!(rec.outcome, RecordOutcome::StageError { ref stage, .. } if stage == "trace"), "{rec:?}");
}

#[test]
fn episode_records_reconcile_with_table() {
    let mut cfg = Config::default();
    cfg.seed = 4;
    cfg.campaign.needles = vec![1, 2];
    cfg.campaign.threads = vec![2, 4];
    cfg.campaign.episodes = 4;
    let out = run_campaign(&cfg, &ControllerKind::Vs).unwrap();
    assert_eq!(out.episodes.len(), 8);
    let dir = tempfile::tempdir().unwrap();
    report(&out, dir.path(), ReportOptions { grid: true }).unwrap();
    let recs = read_episodes_jsonl(&dir.path().join("episodes.jsonl")).unwrap();
    assert_eq!(recs.len(), out.episodes.len());
    let table = read_results_csv(&dir.path().join("results.csv")).unwrap();
    assert_eq!(table, out.table);
    for c in &table.cells {
        let n = recs.iter().filter(|r| (r.needle, r.thread, r.angle) == (c.needle, c.thread, c.angle)).count();
        assert_eq!(n, c.episodes);
        let wins = recs
            .iter()
            .filter(|r| (r.needle, r.thread, r.angle) == (c.needle, c.thread, c.angle) && r.outcome.is_success())
            .count();
        assert_eq!(wins, c.successes);
    }
    assert!(table.cell(1, 4, 60.0).unwrap().excluded);
    assert!(std::fs::read_to_string(dir.path().join("results.txt")).unwrap().contains("controller: vs"));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "version = 7").unwrap();
    let s = Command::new(BIN).args(["--out", out, "--config", bad.to_str().unwrap(), "render"]).status().unwrap();
    assert_eq!(s.code(), Some(1));

    let s = Command::new(BIN).args(["--out", out, "eval", "--policy", "/nonexistent.json", "--episodes", "1"]).status().unwrap();
    assert_eq!(s.code(), Some(1));

    let s = Command::new(BIN).args(["--out", out, "--resolution", "7x7", "render"]).status().unwrap();
    assert_eq!(s.code(), Some(1));

    let s = Command::new(BIN).args(["--out", out, "--resolution", "200x150", "--seed", "3", "render"]).status().unwrap();
    assert_eq!(s.code(), Some(0));
    for f in ["grip.pgm", "eyelet.pgm", "render.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let pgm = std::fs::read(dir.path().join("eyelet.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n200 150\n255\n"));
}

#[test]
fn cli_eval_writes_outputs_and_images() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let s = Command::new(BIN)
        .args(["--out", out, "--seed", "2", "--resolution", "200x150", "eval", "--episodes", "1", "--grid", "--images"])
        .output()
        .unwrap();
    assert_eq!(s.status.code(), Some(0), "{}", String::from_utf8_lossy(&s.stderr));
    let table = read_results_csv(&dir.path().join("results.csv")).unwrap();
    let executed = table.cells.iter().filter(|c| !c.excluded).count();
    assert_eq!(executed, 9);
    assert_eq!(table.cells.len(), 12);
    let images = std::fs::read_dir(dir.path().join("images")).unwrap().count();
    assert!(images >= 2 * executed);
    assert!(String::from_utf8_lossy(&s.stdout).contains("needle \\ thread"));
}

#[test]
fn readme_config_example_parses() {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    let block = readme.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
    let cfg = Config::parse(block).unwrap();
    assert_eq!(cfg, Config::default());
}
