mod common;

use std::fs;
use std::path::Path;

use lassopv_core::evalsuite::{Direction, EvalOptions, StatKind};
use lassopv_core::pipeline::*;

fn null_config(dir: &Path, n: usize, k: usize, parallelism: usize) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::GenerateNull {
            n_samples: n,
            n_vars: k,
            seed: 5,
        },
        dag: DagSource::CompleteRandomOrder { seed: 6 },
        reduce: None,
        max_knots: None,
        evaluation: EvaluationConfig::default(),
        output_dir: dir.to_path_buf(),
        parallelism,
        strict: true,
    }
}

fn report_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn null_run_writes_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let m = run_experiment(&null_config(tmp.path(), 60, 30, 2)).unwrap();
    assert_eq!(m.n_tasks, 29);
    assert_eq!(m.n_failed, 0);
    for f in &m.outputs {
        assert!(tmp.path().join(&f.name).exists());
        assert_eq!(f.sha256.len(), 64);
    }
    let names: Vec<&str> = m.outputs.iter().map(|f| f.name.as_str()).collect();
    for want in ["selection.tsv", "pvalues.tsv", "report.json", "histogram.csv", "ks.csv", "r2_curve.csv", "auc.csv", "scatter_q0.05.csv"] {
        assert!(names.contains(&want), "{want}");
    }
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn reruns_are_byte_identical_at_any_parallelism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&null_config(a.path(), 50, 40, 1)).unwrap();
    run_experiment(&null_config(b.path(), 50, 40, 4)).unwrap();
    assert_eq!(report_files(a.path()), report_files(b.path()));
}

#[test]
fn reduction_to_one_node_gives_empty_report() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = null_config(tmp.path(), 20, 10, 1);
    c.reduce = Some(1);
    let m = run_experiment(&c).unwrap();
    assert_eq!(m.n_tasks, 0);
    assert!(m.warnings.iter().any(|w| w.contains("no regression tasks")));
}

#[test]
fn external_evaluation_of_own_output_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let c = null_config(tmp.path(), 40, 25, 1);
    let result = execute(&c).unwrap();
    run_experiment(&c).unwrap();
    for file in ["pvalues.tsv", "selection.tsv"] {
        let again = evaluate_external(&tmp.path().join(file), StatKind::Pvalue, &result.options).unwrap();
        assert_eq!(again, result.report, "{file}");
    }
    let generic = evaluate_external(
        &tmp.path().join("pvalues.tsv"),
        StatKind::Generic(Direction::SmallerIsSignificant),
        &EvalOptions::default(),
    )
    .unwrap();
    assert!(generic.histogram.is_none());
}

#[test]
fn config_paths_resolve_against_config_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let data = "A\tB\tC\n1\t2\t0.5\n2\t1\t0.1\n3\t5\t0.9\n4\t3\t-0.2\n";
    fs::write(tmp.path().join("data.tsv"), data).unwrap();
    fs::write(tmp.path().join("dag.tsv"), "source\ttarget\nA\tB\nB\tC\nA\tC\n").unwrap();
    let cfg = r#"{
        "dataset": {"load": {"path": "data.tsv"}},
        "dag": {"dag_file": {"path": "dag.tsv"}},
        "output_dir": "out",
        "evaluation": {"n_thresholds": 10}
    }"#;
    fs::write(tmp.path().join("cfg.json"), cfg).unwrap();
    let c = ExperimentConfig::load(&tmp.path().join("cfg.json")).unwrap();
    assert_eq!(c.output_dir, tmp.path().join("out"));
    let m = run_experiment(&c).unwrap();
    assert_eq!(m.n_tasks, 2);
    let sel = fs::read_to_string(tmp.path().join("out/selection.tsv")).unwrap();
    assert_eq!(sel.lines().count(), 1 + 1 + 2);
}

#[test]
fn failing_task_is_recorded_or_fatal_in_strict_mode() {
    let tmp = tempfile::tempdir().unwrap();
    // C duplicates A, so regressing D on {A, C} fails
    let data = "A\tB\tC\tD\n1\t2\t1\t0.5\n2\t1\t2\t0.1\n3\t5\t3\t0.9\n4\t3\t4\t-0.2\n";
    fs::write(tmp.path().join("data.tsv"), data).unwrap();
    fs::write(tmp.path().join("dag.tsv"), "source\ttarget\nA\tB\nA\tD\nC\tD\n").unwrap();
    let mut c = ExperimentConfig {
        dataset: DatasetSource::Load {
            path: "data.tsv".into(),
            format: None,
            rank_normalize: false,
        },
        dag: DagSource::DagFile { path: "dag.tsv".into() },
        reduce: None,
        max_knots: None,
        evaluation: EvaluationConfig::default(),
        output_dir: "out".into(),
        parallelism: 1,
        strict: false,
    }
    .relative_to(tmp.path());
    let m = run_experiment(&c).unwrap();
    assert_eq!(m.n_failed, 1);
    assert!(m.tasks.iter().any(|t| !t.ok && t.error.as_deref().unwrap().contains("duplicates")));
    c.strict = true;
    assert!(run_experiment(&c).is_err());
}
