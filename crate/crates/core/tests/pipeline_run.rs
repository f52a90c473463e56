use std::fs;
use std::io::Write;
use std::path::Path;

use surgforge::dataset::ManifestRecord;
use surgforge::filtering::{TextualLabel, VisualLabel};
use surgforge::hierarchy::GranularityLevel;
use surgforge::pipeline::workdir::read_jsonl;
use surgforge::pipeline::{PipelineConfig, PipelineError, Runner, Stage};

fn write_corpus(dir: &Path) {
    fs::create_dir_all(dir.join("media")).unwrap();
    let media = |scenes: &[(u64, u64, &str)]| {
        let scenes: Vec<_> = scenes
            .iter()
            .map(|(s, e, d)| serde_json::json!({"start_ms": s, "end_ms": e, "description": d}))
            .collect();
        serde_json::json!({"duration_ms": 40000, "scenes": scenes}).to_string()
    };
    fs::write(
        dir.join("media/a.json"),
        media(&[(
            0,
            40000,
            "laparoscopic view of the gallbladder with grasper and hook dissection",
        )]),
    )
    .unwrap();
    fs::write(
        dir.join("media/b.json"),
        media(&[
            (0, 20000, "speaker at a podium presenting slides"),
            (20000, 40000, "laparoscopic view of hernia mesh placement with graspers"),
        ]),
    )
    .unwrap();
    let transcript = |lines: &[&str]| {
        let mut segments = Vec::new();
        let mut words = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            let start = i as u64 * 5000;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            for (k, w) in tokens.iter().enumerate() {
                let ws = start + k as u64 * 400;
                words.push(serde_json::json!({"word": w, "start_ms": ws, "end_ms": ws + 350}));
            }
            let end = start + tokens.len() as u64 * 400;
            segments.push(serde_json::json!({"text": line, "start_ms": start, "end_ms": end}));
        }
        serde_json::json!({"segments": segments, "word_segments": words}).to_string()
    };
    fs::write(
        dir.join("a.json"),
        transcript(&[
            "Phase one the gallbladder is retracted with a grasper.",
            "The cystic duct is dissected with the hook.",
            "Next the cystic artery is clipped and divided.",
            "The duct is clipped twice and cut with scissors.",
            "Finally the gallbladder is removed from the liver bed.",
            "The specimen is placed in a retrieval bag.",
        ]),
    )
    .unwrap();
    fs::write(
        dir.join("b.json"),
        transcript(&[
            "Phase one welcome everyone to the session.",
            "Thanks for coming today.",
            "Now the hernia sac is dissected with graspers.",
            "The mesh is positioned and fixed with tacks.",
        ]),
    )
    .unwrap();
    let corpus = [
        r#"{"video_id":"a","media":"media/a.json","duration_ms":40000,"title":"Cholecystectomy","procedure_type":"cholecystectomy","fps":25,"source":"public","transcript":"a.json"}"#,
        r#"{"video_id":"b","media":"media/b.json","duration_ms":40000,"title":"Hernia talk","procedure_type":"hernia","fps":30,"source":"private","transcript":"b.json"}"#,
    ];
    fs::write(dir.join("corpus.jsonl"), corpus.join("\n") + "\n").unwrap();
}

fn config(dir: &Path, workers: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        mock: true,
        workers,
        ..Default::default()
    };
    cfg.paths.corpus = Some(dir.join("corpus.jsonl"));
    cfg.paths.work_dir = Some(dir.join("work"));
    cfg
}

#[test]
fn full_run_produces_consistent_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let runner = Runner::new(config(dir.path(), 2)).unwrap();
    let report = runner.run(&Stage::ALL).unwrap();
    assert!(report.discarded.is_empty());
    assert_eq!(report.stages[&Stage::Enrich].ran, 2);

    let records: Vec<ManifestRecord> = read_jsonl(&runner.manifest_path()).unwrap();
    assert_eq!(Some(records.len()), report.manifest_records);
    assert!(records.windows(2).all(|w| w[0].key() < w[1].key()));
    for r in &records {
        let pass = r.visual_label == Some(VisualLabel::Surgical) && r.textual_label == Some(TextualLabel::Descriptive);
        assert_eq!(r.retained, Some(pass), "{:?}", r.key());
        assert_eq!(r.caption_enriched.is_some(), pass, "{:?}", r.key());
        if r.level == GranularityLevel::Task {
            assert!(r.parent_step.is_some() && r.parent_phase.is_some());
        }
        assert!(r.taxonomy.is_some());
    }
    assert!(records.iter().any(|r| r.retained == Some(true)));
}

#[test]
fn stage_without_input_is_a_precondition_failure() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let runner = Runner::new(config(dir.path(), 1)).unwrap();
    let err = runner.run(&[Stage::Filter]).unwrap_err();
    assert!(
        matches!(
            err,
            PipelineError::Precondition {
                missing: Stage::Align,
                ..
            }
        ),
        "{err}"
    );
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn torn_ledger_resumes_without_redoing_work() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let runner = Runner::new(config(dir.path(), 1)).unwrap();
    runner.run(&[Stage::Ingest, Stage::Segment]).unwrap();
    drop(runner);

    let ledger = dir.path().join("work/checkpoints.jsonl");
    let mut f = fs::OpenOptions::new().append(true).open(&ledger).unwrap();
    f.write_all(br#"{"video_id":"a","stage":"ali"#).unwrap();
    drop(f);

    let runner = Runner::new(config(dir.path(), 1)).unwrap();
    let report = runner.run(&Stage::ALL).unwrap();
    assert_eq!(report.stages[&Stage::Ingest].already_done, 2);
    assert_eq!(report.stages[&Stage::Segment].already_done, 2);
    assert_eq!(report.stages[&Stage::Align].ran, 2);
}

#[test]
fn worker_count_does_not_change_the_manifest() {
    let manifest = |workers| {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path());
        let runner = Runner::new(config(dir.path(), workers)).unwrap();
        runner.run(&Stage::ALL).unwrap();
        fs::read(runner.manifest_path()).unwrap()
    };
    assert_eq!(manifest(1), manifest(6));
}
