use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use htgen::config::PipelineConfig;
use htgen::equiv::VerdictStatus;
use htgen::export::{export_bundle, load_bundle, ExportError};
use htgen::netlist::{write_structural_verilog, Cell, CellKind, Pin};
use htgen::pipeline::{run_pipeline, run_pipeline_with, CandidateOutcome, PipelineError, REPORT_FILE};
use htgen::policy::Outcome;
use htgen::synthetic::{generate, SynthParams};
use htgen::templates::GraphRewrite;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn c17_cfg(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::small_design(fixture("c17.bench"));
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn c17_accepts_with_exhaustive_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&c17_cfg(&dir.path().join("out"))).unwrap();
    assert!(out.report.accepted >= 1);
    for inst in &out.instances {
        assert!(!inst.verdicts.is_empty());
        for v in &inst.verdicts {
            assert_eq!(v.verdict.status, VerdictStatus::EquivalentExhaustive, "{}", v.check);
        }
    }
    let stages: Vec<&str> = out.report.stages.iter().map(|s| s.stage.as_str()).collect();
    for s in ["parse_graph", "scoap", "mining", "insertion", "checks", "export"] {
        assert!(stages.contains(&s), "{s}");
    }
    assert!(dir.path().join("out").join(REPORT_FILE).is_file());
}

#[test]
fn identical_configs_give_identical_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_pipeline(&c17_cfg(&dir.path().join("a"))).unwrap();
    let b = run_pipeline(&c17_cfg(&dir.path().join("b"))).unwrap();
    assert_eq!(a.bundle.manifest, b.bundle.manifest);
    for f in ["golden.v", "trojan.v", "labels.csv", "cones.json", "splits.json", "manifest.json"] {
        let x = std::fs::read(dir.path().join("a/bundle").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b/bundle").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn bundle_reload_and_cell_diff() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&c17_cfg(&dir.path().join("out"))).unwrap();
    let back = load_bundle(&dir.path().join("out/bundle")).unwrap();
    assert_eq!(back.labels, out.bundle.labels);
    assert_eq!(back.cones, out.bundle.cones);
    assert_eq!(back.splits, out.bundle.splits);

    let g: BTreeSet<String> = back.golden.cells.iter().map(|c| c.name.clone()).collect();
    let t: BTreeSet<String> = back.trojan.cells.iter().map(|c| c.name.clone()).collect();
    let added: BTreeSet<String> = t.difference(&g).cloned().collect();
    let want: BTreeSet<String> = out
        .instances
        .iter()
        .flat_map(|i| i.plan.rewrite.new_cells.iter().map(|c| c.name.clone()))
        .collect();
    assert_eq!(added, want);
    assert!(g.is_subset(&t));

    // tampering is detected
    let labels = dir.path().join("out/bundle/labels.csv");
    let mut text = std::fs::read_to_string(&labels).unwrap();
    text.push_str("extra,clean,\n");
    std::fs::write(&labels, text).unwrap();
    assert!(matches!(
        load_bundle(&dir.path().join("out/bundle")),
        Err(ExportError::Digest(f)) if f == "labels.csv"
    ));
}

#[test]
fn mismatch_verdict_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&c17_cfg(&dir.path().join("out"))).unwrap();
    let mut insts = out.instances.clone();
    insts[0].verdicts[1].verdict.status = VerdictStatus::Mismatch;
    let err = export_bundle(&out.golden, &insts, (0.7, 0.15, 0.15), 1, &dir.path().join("x")).unwrap_err();
    match err {
        ExportError::Mismatch(c) => assert_eq!(c, insts[0].plan.cone_id),
        other => panic!("{other}"),
    }
    assert!(!dir.path().join("x").exists());
}

#[test]
fn empty_result_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        input: fixture("c17.bench"),
        output_dir: dir.path().join("out"),
        ..PipelineConfig::default()
    };
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    match err {
        PipelineError::Empty(r) => {
            assert_eq!(r.accepted, 0);
            assert!(r.message.unwrap().contains("threshold"));
        }
        other => panic!("{other}"),
    }
    assert!(dir.path().join("out").join(REPORT_FILE).is_file());
    assert!(!dir.path().join("out/bundle").exists());
}

#[test]
fn config_error_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = c17_cfg(dir.path());
    cfg.alpha = 0.1;
    assert_eq!(run_pipeline(&cfg).unwrap_err().exit_code(), 2);
    let mut cfg = c17_cfg(dir.path());
    cfg.clock = Some("nope".into());
    assert_eq!(run_pipeline(&cfg).unwrap_err().exit_code(), 2);
}

#[test]
fn unparseable_input_is_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bench");
    std::fs::write(&bad, "INPUT(a)\nOUTPUT(y)\ny = FROB(a)\n").unwrap();
    let mut cfg = PipelineConfig::small_design(&bad);
    cfg.output_dir = dir.path().join("out");
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("parse"));
}

/// Drives the splice's A input from the complement of the original value,
/// so the trigger-inactive path is no longer a wire.
fn break_splice(rw: &mut GraphRewrite) {
    let bad = format!("ht__{}_bad", rw.tag);
    let mux = rw.new_cells.iter_mut().find(|c| c.name == rw.splice_instance).unwrap();
    for (p, net) in mux.inputs.iter_mut() {
        if *p == Pin::Data(0) {
            *net = bad.clone();
        }
    }
    rw.new_cells.push(Cell::gate(format!("ht__{}_badinv", rw.tag), CellKind::Inv, [rw.orig_net.clone()], bad.clone()));
    rw.new_nets.push(bad.clone());
    rw.payload_nets.push(bad);
}

#[test]
fn broken_template_feeds_equivalence_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = c17_cfg(&dir.path().join("out"));
    let err = run_pipeline_with(&cfg, Some(&break_splice)).unwrap_err();
    let PipelineError::Empty(report) = err else {
        panic!("expected an empty result");
    };
    let failed = report.count(CandidateOutcome::FailedEquivalence);
    assert!(failed > 0);
    assert_eq!(report.count(CandidateOutcome::Accepted), 0);
    let text = std::fs::read_to_string(dir.path().join("out/history.jsonl")).unwrap();
    let hist = htgen::policy::read_history(text.as_bytes()).unwrap();
    let classified = report.candidates.iter().filter(|c| c.outcome.history_outcome().is_some()).count();
    assert_eq!(hist.len(), classified);
    assert_eq!(hist.iter().filter(|h| h.outcome == Outcome::FailedEquivalence).count(), failed);
    for c in &report.candidates {
        if c.outcome == CandidateOutcome::FailedEquivalence {
            assert!(c.detail.as_ref().unwrap().contains("cone_equivalence"));
        }
    }
}

#[test]
fn scan_touching_template_fails_scan() {
    let dir = tempfile::tempdir().unwrap();
    let n = generate(&SynthParams::scan_chained(8, 120, 6, 11));
    let path = dir.path().join("d.v");
    std::fs::write(&path, write_structural_verilog(&n)).unwrap();
    let mut cfg = PipelineConfig::small_design(&path);
    cfg.output_dir = dir.path().join("out");
    let hook = |rw: &mut GraphRewrite| {
        let net = format!("ht__{}_probe", rw.tag);
        rw.new_cells.push(Cell::gate(format!("ht__{}_probe_i", rw.tag), CellKind::Buf, ["scan_en"], net.clone()));
        rw.new_nets.push(net.clone());
        rw.trigger_nets.push(net);
    };
    let err = run_pipeline_with(&cfg, Some(&hook)).unwrap_err();
    let PipelineError::Empty(report) = err else {
        panic!("expected an empty result");
    };
    let scan = report.count(CandidateOutcome::FailedScan);
    assert!(scan > 0);
    assert_eq!(
        scan + report.count(CandidateOutcome::Inapplicable) + report.count(CandidateOutcome::SkippedOverlap),
        report.candidates.len()
    );
}

#[test]
fn env_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = c17_cfg(&dir.path().join("from_cfg"));
    std::env::set_var(htgen::config::OUTPUT_DIR_ENV, dir.path().join("from_env"));
    let cfg = cfg.with_env();
    std::env::remove_var(htgen::config::OUTPUT_DIR_ENV);
    assert_eq!(cfg.output_dir, dir.path().join("from_env"));
}

#[test]
fn policy_history_and_retraining() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = c17_cfg(&dir.path().join("out"));
    cfg.policy.history = Some(dir.path().join("hist.jsonl"));
    cfg.policy.weights = Some(dir.path().join("w.json"));
    cfg.policy.retrain = true;
    // first run: accepted only, single class, no weights yet
    run_pipeline(&cfg).unwrap();
    // a broken run adds negatives, so the policy can be trained
    let _ = run_pipeline_with(&cfg, Some(&break_splice));
    assert!(dir.path().join("w.json").is_file());
    let out = run_pipeline(&cfg).unwrap();
    assert!(!out.report.cold_start);
}
