use std::fs;
use std::path::Path;

use pta_core::checkpoint;
use pta_core::data::Split;
use pta_core::harness::{self, ExperimentConfig, PolicyChoice};
use pta_core::training::{evaluate_best, final_evaluation, split_sets};
use pta_core::PtaError;

fn config(tasks: usize, policies: &str, decoders: &str, seeds: &str, metas: usize) -> ExperimentConfig {
    let json = format!(
        r#"{{
        "schema_version": 1,
        "data": {{"synthetic": {{
            "num_tasks": {tasks}, "input_dim": 5, "samples_per_task": [80],
            "teacher_width": 6, "label_kind": "classification", "outputs": 3,
            "mixing": 0.8
        }}}},
        "model": {{"input_dim": 5, "hidden_layers": [{{"units": 8, "activation": "relu"}}],
                  "embedding_dim": 6}},
        "decoders": {decoders},
        "policies": {policies},
        "schedule": {{"meta_iteration_length": 3, "meta_iterations": {metas}, "batch_size": 8}},
        "optimizer": {{"kind": "adam", "learning_rate": 0.01}},
        "seeds": {seeds}
    }}"#
    );
    ExperimentConfig::from_json(&json).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn one_cell_three_seeds() {
    let cfg = config(1, r#"["PTA-I"]"#, "[1]", "[0, 1, 2]", 4);
    let dir = tempfile::tempdir().unwrap();
    let summary = harness::run_sweep(&cfg, dir.path(), 2).unwrap();
    assert_eq!(summary.runs.len(), 3);
    assert_eq!(summary.cells.len(), 1);
    assert!(summary.failures.is_empty());
    let metrics = fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().join("metrics.jsonl").exists())
        .count();
    assert_eq!(metrics, 3);
    let cell = &summary.cells[0];
    assert_eq!((cell.runs, cell.failed), (3, 0));
    assert_eq!(cell.improvement_pct, Some(0.0));
    let on_disk: serde_json::Value = serde_json::from_slice(&read(&dir.path().join("summary.json"))).unwrap();
    assert_eq!(on_disk["cells"].as_array().unwrap().len(), 1);
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = config(2, r#"["PTA-HGD"]"#, "[3]", "[5]", 4);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let name = harness::run_dir_name("PTA-HGD", 3, 5);
    harness::run_to_dir(&cfg, &cfg.policies[0], 3, 5, &a.path().join(&name)).unwrap();
    harness::run_to_dir(&cfg, &cfg.policies[0], 3, 5, &b.path().join(&name)).unwrap();
    for file in ["metrics.jsonl", "trajectories.csv", "snapshots.jsonl", "run.json", "checkpoint.bin"] {
        assert_eq!(read(&a.path().join(&name).join(file)), read(&b.path().join(&name).join(file)), "{file}");
    }
}

#[test]
fn trajectory_rows_cover_every_decoder() {
    let cfg = config(2, r#"["PTA-F"]"#, "[3]", "[0]", 10);
    let dir = tempfile::tempdir().unwrap();
    harness::run_to_dir(&cfg, &cfg.policies[0], 3, 0, dir.path()).unwrap();
    let loaded = harness::load_run(dir.path()).unwrap();
    let mut buf = Vec::new();
    assert_eq!(harness::export_trajectories(&loaded, &mut buf).unwrap(), 60);

    let text = String::from_utf8(buf).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 60);
    // Frozen decoders keep their parameters and dropout rate; only the cost moves.
    for t in 0..2 {
        for d in 1..3 {
            let own: Vec<&Vec<&str>> = rows
                .iter()
                .filter(|r| r[1] == t.to_string() && r[2] == d.to_string())
                .collect();
            assert_eq!(own.len(), 10);
            for r in &own[1..] {
                assert_eq!(r[4..], own[0][4..]);
            }
        }
        let trained: Vec<&Vec<&str>> = rows.iter().filter(|r| r[1] == t.to_string() && r[2] == "0").collect();
        assert_ne!(trained[0][5..], trained[9][5..]);
    }
}

#[test]
fn checkpoint_reproduces_the_reported_evaluation() {
    let cfg = config(2, r#"["PTA-GP"]"#, "[2]", "[3]", 5);
    let dir = tempfile::tempdir().unwrap();
    let out = harness::run_to_dir(&cfg, &cfg.policies[0], 2, 3, dir.path()).unwrap();
    let joint = checkpoint::load(&dir.path().join("checkpoint.bin")).unwrap();
    let datasets = cfg.datasets(3).unwrap();
    let val = split_sets(&datasets, Split::Val).unwrap();
    assert_eq!(evaluate_best(&joint, &val).unwrap(), out.final_eval.validation);
    assert_eq!(final_evaluation(&joint, &datasets).unwrap(), out.final_eval);
    let manifest = harness::load_run(dir.path()).unwrap().manifest;
    assert_eq!(manifest.final_eval, out.final_eval);
}

#[test]
fn dropout_report_needs_hyperperturbation() {
    let cfg = config(2, r#"["PTA-HGD", "PTA-GD"]"#, "[3]", "[0]", 12);
    let dir = tempfile::tempdir().unwrap();
    harness::run_to_dir(&cfg, &cfg.policies[0], 3, 0, &dir.path().join("h")).unwrap();
    harness::run_to_dir(&cfg, &cfg.policies[1], 3, 0, &dir.path().join("g")).unwrap();

    let h = harness::load_run(&dir.path().join("h")).unwrap();
    let schedules = harness::dropout_schedules(&h.metrics, &h.manifest.spec.policy, 5).unwrap();
    assert_eq!(schedules.len(), 2);
    for s in &schedules {
        assert_eq!(s.mean.len(), 12);
        assert_eq!(s.moving_average.len(), 12);
        assert!(s.mean.iter().all(|r| (0.2..=0.8).contains(r)));
        let tail = s.mean[7..].iter().sum::<f64>() / 5.0;
        assert!((s.moving_average[11] - tail).abs() < 1e-12);
    }

    let g = harness::load_run(&dir.path().join("g")).unwrap();
    let err = harness::dropout_schedules(&g.metrics, &g.manifest.spec.policy, 5).unwrap_err();
    assert!(matches!(err, PtaError::Contract(_)));
}

#[test]
fn runs_without_snapshots_cannot_export() {
    let mut cfg = config(1, r#"["PTA-I"]"#, "[1]", "[0]", 2);
    cfg.snapshots = false;
    let dir = tempfile::tempdir().unwrap();
    harness::run_to_dir(&cfg, &cfg.policies[0], 1, 0, dir.path()).unwrap();
    assert!(!dir.path().join("trajectories.csv").exists());
    let loaded = harness::load_run(dir.path()).unwrap();
    assert!(harness::export_trajectories(&loaded, &mut Vec::new()).is_err());
}

#[test]
fn divergent_runs_are_recorded_and_leave_partial_metrics() {
    let json = r#"{
        "schema_version": 1,
        "data": {"synthetic": {
            "num_tasks": 1, "input_dim": 4, "samples_per_task": [60],
            "teacher_width": 4, "label_kind": "regression", "outputs": 2,
            "mixing": 1.0
        }},
        "model": {"input_dim": 4, "hidden_layers": [{"units": 8, "activation": "relu"}],
                  "embedding_dim": 4},
        "decoders": [2],
        "policies": ["PTA-I"],
        "schedule": {"meta_iteration_length": 1, "meta_iterations": 50, "batch_size": 8},
        "optimizer": {"kind": "sgd", "learning_rate": 1e6},
        "seeds": [0, 1]
    }"#;
    let cfg = ExperimentConfig::from_json(json).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let summary = harness::run_sweep(&cfg, dir.path(), 1).unwrap();
    assert_eq!(summary.failures.len(), 2);
    assert!(summary.runs.is_empty());
    assert_eq!(summary.cells[0].failed, 2);
    assert!(dir.path().join("summary.json").exists());
    let run = dir.path().join("runs").join(harness::run_dir_name("PTA-I", 2, 0));
    assert!(run.join("metrics.jsonl.partial").exists());
    assert!(!run.join("metrics.jsonl").exists());
}

#[test]
fn csv_tasks_train_like_synthetic_ones() {
    let src = config(2, r#"["PTA-I"]"#, "[2]", "[0]", 3);
    let dir = tempfile::tempdir().unwrap();
    for (t, ds) in src.datasets(0).unwrap().iter().enumerate() {
        pta_core::data::export_csv(ds, &dir.path().join(format!("task{t}.csv"))).unwrap();
    }
    let json = r#"{
        "schema_version": 1,
        "data": {"csv": {
            "tasks": [
                {"path": "task0.csv", "label_column": "label", "label_kind": "classification"},
                {"path": "task1.csv", "label_column": "label", "label_kind": "classification"}
            ]
        }},
        "model": {"input_dim": 5, "hidden_layers": [{"units": 8, "activation": "relu"}],
                  "embedding_dim": 6},
        "decoders": [2],
        "policies": [{"greedy": true, "perturb": true}],
        "schedule": {"meta_iteration_length": 3, "meta_iterations": 3, "batch_size": 8},
        "optimizer": {"kind": "adam", "learning_rate": 0.01},
        "seeds": [0]
    }"#;
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, json).unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    assert_eq!(cfg.policy(&cfg.policies[0]).unwrap().name(), "PTA-GP");
    let datasets = cfg.datasets(0).unwrap();
    assert_eq!(datasets.len(), 2);
    assert_eq!(datasets[0].len(), 80);
    let out = harness::run_to_dir(&cfg, &PolicyChoice::Name("PTA-GP".into()), 2, 0, &dir.path().join("run")).unwrap();
    assert_eq!(out.metrics.len(), 3);
}
