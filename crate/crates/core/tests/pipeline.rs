//! Stage gating and manifest behaviour of the file-based pipeline.

use rfmp::pipeline::{run, RunConfig, RunManifest, Stage, StageStatus};
use rfmp::Error;

fn small(dir: &std::path::Path, stages: Vec<Stage>) -> RunConfig {
    RunConfig {
        output_dir: dir.to_path_buf(),
        stages,
        synth_clients: 400,
        restarts: 5,
        sweep_restarts: 2,
        k_max: 4,
        ..RunConfig::default()
    }
}

fn status(m: &RunManifest, stage: Stage) -> StageStatus {
    m.stages.iter().find(|s| s.stage == stage).unwrap().status
}

#[test]
fn cluster_stage_runs_on_saved_features() {
    let dir = tempfile::tempdir().unwrap();
    let first = run(&small(
        dir.path(),
        vec![Stage::Synth, Stage::Ingest, Stage::Features],
    ))
    .unwrap();
    assert!(first.succeeded());
    assert_eq!(status(&first, Stage::Cluster), StageStatus::NotRequested);
    let features = std::fs::read(dir.path().join("features.csv")).unwrap();

    let cfg = RunConfig {
        k: Some(3),
        ..small(dir.path(), vec![Stage::Cluster])
    };
    let second = run(&cfg).unwrap();
    assert!(second.succeeded(), "{:?}", second.stages);
    assert_eq!(status(&second, Stage::Cluster), StageStatus::Completed);
    assert_eq!(status(&second, Stage::Synth), StageStatus::NotRequested);
    assert!(dir.path().join("model.txt").exists());
    assert_eq!(
        std::fs::read(dir.path().join("features.csv")).unwrap(),
        features
    );
    assert!(second.verify(dir.path()).unwrap().is_empty());
}

#[test]
fn missing_inputs_fail_and_skip_later_stages() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(&small(dir.path(), vec![Stage::Cluster, Stage::Stats])).unwrap();
    assert!(!m.succeeded());
    assert_eq!(status(&m, Stage::Cluster), StageStatus::Failed);
    assert_eq!(status(&m, Stage::Stats), StageStatus::Skipped);
    // the manifest is written even when a stage fails
    assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
}

#[test]
fn invalid_configuration_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        k_min: 1,
        ..small(dir.path(), vec![Stage::Synth])
    };
    assert!(matches!(run(&cfg), Err(Error::Config(_))));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn tampered_output_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(&small(dir.path(), vec![Stage::Synth])).unwrap();
    std::fs::write(dir.path().join("synth_clients.csv"), "tampered\n").unwrap();
    assert_eq!(
        m.verify(dir.path()).unwrap(),
        vec!["synth_clients.csv".to_string()]
    );
}
