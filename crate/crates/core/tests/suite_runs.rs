use std::path::PathBuf;

use mapf_llm::backend::BackendSpec;
use mapf_llm::experiment::{load_results, run_suite, suite_run_ids, to_csv, SuiteConfig, RESULTS_FILE};
use mapf_llm::prompting::{MapEncoding, Mode};
use mapf_llm::solver_loop::{read_transcript, RunStatus, TranscriptRecord};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn config(map: &str, counts: Vec<usize>, out: &std::path::Path) -> SuiteConfig {
    let mut cfg = SuiteConfig::new(map, counts, out);
    cfg.data_dir = data_dir();
    cfg.loop_cfg.record_timestamps = false;
    cfg
}

#[test]
fn oracle_suite_on_empty_map() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = config("empty-8-8", vec![2, 4, 8], out.path());
    cfg.parallelism = 4;
    let rep = run_suite(&cfg).unwrap();
    assert_eq!(rep.cells.len(), 3);
    for c in &rep.cells {
        assert_eq!(c.runs, 5);
        assert_eq!(c.success_rate, 100.0, "{c:?}");
        assert_eq!(c.avg_iterations_per_step, Some(1.0));
        // empty map: tom collapses to no encoding
        assert_eq!(c.variant, "sbs-none-sso");
    }
    let recs = load_results(out.path()).unwrap();
    assert_eq!(recs.len(), 15);
    for r in &recs {
        let t = read_transcript(&out.path().join(&r.transcript_file)).unwrap();
        assert!(matches!(t.first(), Some(TranscriptRecord::Meta { .. })));
        assert!(matches!(t.last(), Some(TranscriptRecord::End { status: RunStatus::Success })));
    }
}

#[test]
fn reruns_resume_without_duplicates() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = config("empty-8-8", vec![2], out.path());
    cfg.scenarios = vec![1, 2];
    let first = run_suite(&cfg).unwrap();
    let before = std::fs::read_to_string(out.path().join(RESULTS_FILE)).unwrap();
    let second = run_suite(&cfg).unwrap();
    assert_eq!(before, std::fs::read_to_string(out.path().join(RESULTS_FILE)).unwrap());
    assert_eq!(to_csv(&first), to_csv(&second));

    // widening the suite only runs the new cells
    cfg.scenarios = vec![1, 2, 3];
    run_suite(&cfg).unwrap();
    let recs = load_results(out.path()).unwrap();
    assert_eq!(recs.len(), 3);
    let ids: Vec<String> = recs.into_iter().map(|r| r.run_id).collect();
    let mut want = suite_run_ids(&cfg).unwrap();
    want.sort();
    let mut got = ids;
    got.sort();
    assert_eq!(got, want);
}

#[test]
fn always_colliding_backend_never_succeeds() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = config("room-32-32-4", vec![2], out.path());
    cfg.backend = BackendSpec::Scripted {
        responses: vec!["Agent 1: (5,5)\nAgent 2: (5,5)".into()],
        cycle: true,
    };
    let rep = run_suite(&cfg).unwrap();
    let c = &rep.cells[0];
    assert_eq!(c.success_rate, 0.0);
    assert_eq!(c.failures.iteration_limit, 5);
    assert_eq!(c.avg_iterations_per_step, None);
    assert_eq!(c.avg_makespan_ratio, None);
}

#[test]
fn variant_grid_and_repeats() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = config("room-32-32-4", vec![2], out.path());
    cfg.scenarios = vec![1];
    cfg.repeats = 2;
    cfg.variants.modes = vec![Mode::Sbs, Mode::Os];
    cfg.variants.map_encodings = vec![MapEncoding::Tom, MapEncoding::Too];
    cfg.variants.sso = vec![false];
    cfg.parallelism = 3;
    let rep = run_suite(&cfg).unwrap();
    assert_eq!(rep.cells.len(), 4);
    assert!(rep.cells.iter().all(|c| c.runs == 2 && c.success_rate == 100.0));
    let labels: Vec<&str> = rep.cells.iter().map(|c| c.variant.as_str()).collect();
    assert_eq!(labels, ["os-tom", "os-too", "sbs-tom", "sbs-too"]);
}

#[test]
fn missing_data_is_an_error() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config("no-such-map", vec![2], out.path());
    assert!(run_suite(&cfg).is_err());
}
