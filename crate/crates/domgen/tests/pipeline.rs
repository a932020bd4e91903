mod common;

use common::small_config;
use domgen::experiment::{run_experiment, Learner, ResultsTable, RunOptions, TableFormat};

const SINGLE: RunOptions = RunOptions { single_context: true, verbose: false };

#[test]
fn full_run_emits_every_row_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 600, 200);
    let out = run_experiment(&cfg, &SINGLE).unwrap();
    let names: Vec<&str> = out.table.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(
        names,
        ["model 1", "model 2", "model 3", "model 4", "model 5", "EnA", "EnM", "EnM2", "HCNN", "EnT", "RF", "SVM", "LR"]
    );
    for row in &out.table.rows {
        for v in row.columns() {
            assert!((0.0..=1.0).contains(&v), "{row:?}");
        }
    }
    let hcnn = out.metadata.hcnn.as_ref().unwrap();
    assert!((hcnn.ratio - 1.0).abs() <= 0.05);
    assert_eq!(hcnn.target_param_count, 5 * out.metadata.base_param_count.unwrap());
    assert!(!out.metadata.partial);

    let csv = std::fs::read_to_string(&out.csv_path).unwrap();
    assert_eq!(out.table.render(TableFormat::Csv).unwrap(), csv);
    assert_eq!(ResultsTable::parse_csv(&csv).unwrap().render(TableFormat::Csv).unwrap(), csv);
    assert!(std::fs::read_to_string(&out.markdown_path).unwrap().contains("| **EnA** |"));
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(&out.metadata_path).unwrap()).unwrap();
    assert_eq!(meta["completed_rows"].as_array().unwrap().len(), 13);
    assert_eq!(std::fs::read_dir(dir.path().join("out/checkpoints")).unwrap().count(), 5 + 3 + 3);

    // Per-model seeds make the parallel schedule reproduce the serial table.
    let mut par = cfg.clone();
    par.output.name = "parallel".into();
    let again = run_experiment(&par, &RunOptions::default()).unwrap();
    assert_eq!(std::fs::read(&again.csv_path).unwrap(), csv.as_bytes());
}

#[test]
fn single_context_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 400, 100);
    cfg.num_models = domgen::experiment::NumModels::Count(3);
    cfg.learners = vec![Learner::Base, Learner::EnA, Learner::EnM, Learner::EnM2, Learner::EnT, Learner::Rf, Learner::Svm, Learner::Lr];
    cfg.output.checkpoints = false;
    let a = run_experiment(&cfg, &SINGLE).unwrap();
    let first = std::fs::read(&a.csv_path).unwrap();
    let b = run_experiment(&cfg, &SINGLE).unwrap();
    assert_eq!(std::fs::read(&b.csv_path).unwrap(), first);
    assert!(!dir.path().join("out/checkpoints").exists());

    cfg.seed += 1;
    let c = run_experiment(&cfg, &SINGLE).unwrap();
    assert_ne!(c.table, a.table);
}

#[test]
fn disabled_learners_are_omitted() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 300, 100);
    cfg.num_models = domgen::experiment::NumModels::Count(2);
    cfg.learners = vec![Learner::Base, Learner::EnA, Learner::Lr];
    let out = run_experiment(&cfg, &SINGLE).unwrap();
    let names: Vec<&str> = out.table.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["model 1", "model 2", "EnA", "LR"]);
    assert!(out.metadata.hcnn.is_none());
}

#[test]
fn failing_stage_still_writes_completed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 300, 100);
    cfg.num_models = domgen::experiment::NumModels::Count(2);
    cfg.learners = vec![Learner::Base, Learner::EnA, Learner::EnT, Learner::Rf];
    cfg.forest.n_trees = 0;
    let err = run_experiment(&cfg, &SINGLE).unwrap_err();
    assert_eq!(err.stage(), Some("classical"));

    let csv = std::fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    let table = ResultsTable::parse_csv(&csv).unwrap();
    let names: Vec<&str> = table.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["model 1", "model 2", "EnA"]);
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/results.json")).unwrap()).unwrap();
    assert_eq!(meta["partial"], true);
    assert_eq!(meta["failed_stage"], "classical");
}

#[test]
fn unreadable_target_fails_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 100, 50);
    std::fs::write(&cfg.target.paths[0], b"DGIM garbage").unwrap();
    cfg.output.name = "broken".into();
    let err = run_experiment(&cfg, &SINGLE).unwrap_err();
    assert_eq!(err.stage(), Some("load"));
    assert!(!dir.path().join("out/broken.csv").exists());
    assert!(dir.path().join("out/broken.json").exists());
}
