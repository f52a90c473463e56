//! Acceptance suite. Each criterion runs in isolation and prints one
//! PASS/FAIL line; the process exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use surgforge::backend::protocol::{AsrDocument, AsrSegment, AsrWord};
use surgforge::contrastive::toy::{
    recall_at_1, synthetic_split, train_toy, SyntheticConfig, ToyEncoders, ToyTrainConfig,
};
use surgforge::contrastive::{info_nce, info_nce_grad, similarity_matrix, Temperature};
use surgforge::eval::metrics::{average_precision, videowise_accuracy_f1, VideoSequence};
use surgforge::eval::EvalError;
use surgforge::filtering::{propagate_labels, vote_clip, VisualLabel};
use surgforge::hierarchy::{align_segments, validate_hierarchy, GranularityLevel, HierarchySegmentation, Segment};
use surgforge::transcript::{ingest_transcript, Millis, Transcript};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))?;
    Ok(took)
}

// ---------------------------------------------------------------- alignment

fn random_transcript(rng: &mut ChaCha8Rng, id: usize) -> Transcript {
    let n_words = rng.random_range(1..=200usize);
    let mut words = Vec::with_capacity(n_words);
    let mut t: Millis = rng.random_range(0..2000);
    for i in 0..n_words {
        let len = rng.random_range(1..800);
        words.push(AsrWord {
            word: format!("w{i}"),
            start_ms: t,
            end_ms: t + len,
        });
        t += len + rng.random_range(0..400);
    }
    let duration = t + rng.random_range(0..3000);
    let mut segments = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let j = (i + rng.random_range(1..12usize)).min(words.len());
        segments.push(AsrSegment {
            text: words[i..j]
                .iter()
                .map(|w| w.word.as_str())
                .collect::<Vec<_>>()
                .join(" "),
            start_ms: words[i].start_ms,
            end_ms: words[j - 1].end_ms,
        });
        i = j;
    }
    let doc = AsrDocument {
        duration_ms: Some(duration),
        segments,
        word_segments: words,
    };
    ingest_transcript(&format!("t{id}"), &doc, duration).expect("generated transcript is valid")
}

fn random_level(rng: &mut ChaCha8Rng, level: GranularityLevel, n: usize, duration: Millis) -> Vec<Segment> {
    (0..n)
        .map(|index| {
            let a = rng.random_range(0..=duration + 500);
            let b = rng.random_range(0..=duration + 500);
            Segment {
                level,
                index,
                t_start: a.min(b),
                t_end: a.max(b),
                topic: None,
            }
        })
        .collect()
}

fn brute_caption(t: &Transcript, s: &Segment) -> String {
    let mut picked = Vec::new();
    for w in &t.words {
        if s.t_start <= w.t_start && w.t_end <= s.t_end {
            picked.push(w.text.clone());
        }
    }
    picked.join(" ")
}

fn brute_parent(parents: &[Segment], s: &Segment) -> Option<usize> {
    parents
        .iter()
        .position(|p| p.t_start <= s.t_start && s.t_end <= p.t_end)
}

fn alignment_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for id in 0..1000 {
        let t = random_transcript(&mut rng, id);
        let hier = loop {
            let (np, ns, nt) = (rng.random_range(1..4), rng.random_range(1..8), rng.random_range(1..16));
            let proposal = HierarchySegmentation {
                phases: random_level(&mut rng, GranularityLevel::Phase, np, t.duration),
                steps: random_level(&mut rng, GranularityLevel::Step, ns, t.duration),
                tasks: random_level(&mut rng, GranularityLevel::Task, nt, t.duration),
            };
            if let Ok((h, _)) = validate_hierarchy(proposal, &t) {
                break h;
            }
        };
        for level in [GranularityLevel::Phase, GranularityLevel::Step, GranularityLevel::Task] {
            let got = align_segments(&t, &hier, level);
            let mut expected = Vec::new();
            let mut dropped = 0;
            for s in hier.level(level) {
                let caption = brute_caption(&t, s);
                if caption.is_empty() {
                    dropped += 1;
                    continue;
                }
                let (step, phase) = match level {
                    GranularityLevel::Phase => (None, None),
                    GranularityLevel::Step => (None, brute_parent(&hier.phases, s)),
                    GranularityLevel::Task => (brute_parent(&hier.steps, s), brute_parent(&hier.phases, s)),
                };
                expected.push((s.index, s.t_start, s.t_end, caption, step, phase));
            }
            let actual: Vec<_> = got
                .pairs
                .iter()
                .map(|p| {
                    (
                        p.clip_index,
                        p.t_start,
                        p.t_end,
                        p.caption.clone(),
                        p.parent_step,
                        p.parent_phase,
                    )
                })
                .collect();
            checked += expected.len();
            if actual != expected || got.dropped_empty != dropped {
                mismatches += 1;
            }
        }
    }
    let took = within(Duration::from_secs(10), start)?;
    ensure(mismatches == 0, || format!("{mismatches} mismatched levels"))?;
    Ok(format!("1000 transcripts, {checked} pairs, 0 mismatches in {took:.2?}"))
}

// --------------------------------------------------------------------- vote

fn vote_enumeration() -> Outcome {
    for count in 0..=24usize {
        let labels: Vec<VisualLabel> = (0..24)
            .map(|i| {
                if i < count {
                    VisualLabel::Surgical
                } else {
                    VisualLabel::NonSurgical
                }
            })
            .collect();
        let want = if count >= 13 {
            VisualLabel::Surgical
        } else {
            VisualLabel::NonSurgical
        };
        let got = vote_clip(&labels, 0.5);
        ensure(got == want, || format!("count {count}: got {got}, want {want}"))?;
    }
    Ok("25 cases at N=24, boundary 12 is non-surgical".into())
}

// -------------------------------------------------------------- propagation

fn split(rng: &mut ChaCha8Rng, lo: Millis, hi: Millis, n: usize, level: GranularityLevel) -> Vec<Segment> {
    let width = (hi - lo) / n as Millis;
    (0..n)
        .map(|i| {
            let a = lo + i as Millis * width;
            let b = a + width;
            let s = a + rng.random_range(0..width / 4);
            let e = b - rng.random_range(0..width / 4);
            Segment {
                level,
                index: 0,
                t_start: s,
                t_end: e.max(s + 1),
                topic: None,
            }
        })
        .collect()
}

fn random_nested(rng: &mut ChaCha8Rng) -> HierarchySegmentation {
    let n = rng.random_range(1..4);
    let phases = split(rng, 0, 1_000_000, n, GranularityLevel::Phase);
    let mut steps = Vec::new();
    for p in &phases {
        let n = rng.random_range(1..4);
        steps.extend(split(rng, p.t_start, p.t_end, n, GranularityLevel::Step));
    }
    let mut tasks = Vec::new();
    for s in &steps {
        let n = rng.random_range(1..6);
        tasks.extend(split(rng, s.t_start, s.t_end, n, GranularityLevel::Task));
    }
    let index = |mut v: Vec<Segment>| {
        for (i, s) in v.iter_mut().enumerate() {
            s.index = i;
        }
        v
    };
    HierarchySegmentation {
        phases: index(phases),
        steps: index(steps),
        tasks: index(tasks),
    }
}

fn brute_lift(parent: &Segment, tasks: &[Segment], labels: &[VisualLabel]) -> VisualLabel {
    let inside: Vec<VisualLabel> = tasks
        .iter()
        .zip(labels)
        .filter(|(t, _)| parent.t_start <= t.t_start && t.t_end <= parent.t_end)
        .map(|(_, l)| *l)
        .collect();
    if inside.iter().all(|l| *l == inside[0]) {
        return inside[0];
    }
    let surgical = inside.iter().filter(|l| **l == VisualLabel::Surgical).count();
    if 2 * surgical > inside.len() {
        VisualLabel::Surgical
    } else {
        VisualLabel::NonSurgical
    }
}

fn propagation_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut parents = 0usize;
    for case in 0..1000 {
        let h = random_nested(&mut rng);
        let labels: Vec<VisualLabel> = h
            .tasks
            .iter()
            .map(|_| {
                if rng.random_bool(0.5) {
                    VisualLabel::Surgical
                } else {
                    VisualLabel::NonSurgical
                }
            })
            .collect();
        let got = propagate_labels(&labels, &h).map_err(|e| format!("case {case}: {e}"))?;
        let steps: Vec<_> = h.steps.iter().map(|s| brute_lift(s, &h.tasks, &labels)).collect();
        let phases: Vec<_> = h.phases.iter().map(|p| brute_lift(p, &h.tasks, &labels)).collect();
        ensure(got.steps == steps && got.phases == phases, || {
            format!("case {case} differs")
        })?;
        parents += steps.len() + phases.len();
    }
    Ok(format!("1000 hierarchies, {parents} parents, 0 mismatches"))
}

// ------------------------------------------------------------------ infonce

fn unit_rows(rng: &mut ChaCha8Rng, b: usize, d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(b, d, |_, _| rng.random_range(-1.0f64..1.0));
    for mut r in m.row_iter_mut() {
        let n: f64 = r.norm().max(1e-3);
        r /= n;
    }
    m
}

fn rel_err(num: &DMatrix<f64>, ana: &DMatrix<f64>) -> f64 {
    (num - ana).norm() / num.norm().max(ana.norm()).max(1e-12)
}

fn info_nce_checks() -> Outcome {
    let one = Temperature::from_tau(1.0).map_err(|e| e.to_string())?;
    let same = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
    let l = info_nce(&same, &same, one).map_err(|e| e.to_string())?;
    ensure((l - 2f64.ln()).abs() <= 1e-9, || format!("identical case gave {l}"))?;
    let eye = DMatrix::<f64>::identity(2, 2);
    let l = info_nce(&eye, &eye, one).map_err(|e| e.to_string())?;
    let want = (1.0 + (-1.0f64).exp()).ln();
    ensure((l - want).abs() <= 1e-9, || format!("basis case gave {l}, want {want}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for case in 0..100 {
        let b = rng.random_range(2..7);
        let d = rng.random_range(2..7);
        let zv = unit_rows(&mut rng, b, d);
        let zt = unit_rows(&mut rng, b, d);
        let log_tau = rng.random_range(-2.0..0.5);
        let tau = Temperature::from_log_tau(log_tau).map_err(|e| e.to_string())?;
        let g = info_nce_grad(&zv, &zt, tau).map_err(|e| e.to_string())?;
        let loss = |zv: &DMatrix<f64>, zt: &DMatrix<f64>, lt: f64| {
            info_nce(zv, zt, Temperature::from_log_tau(lt).unwrap()).unwrap()
        };
        let mut num_v = DMatrix::zeros(b, d);
        let mut num_t = DMatrix::zeros(b, d);
        for k in 0..b * d {
            let (mut p, mut m) = (zv.clone(), zv.clone());
            p[k] += h;
            m[k] -= h;
            num_v[k] = (loss(&p, &zt, log_tau) - loss(&m, &zt, log_tau)) / (2.0 * h);
            let (mut p, mut m) = (zt.clone(), zt.clone());
            p[k] += h;
            m[k] -= h;
            num_t[k] = (loss(&zv, &p, log_tau) - loss(&zv, &m, log_tau)) / (2.0 * h);
        }
        let num_tau = (loss(&zv, &zt, log_tau + h) - loss(&zv, &zt, log_tau - h)) / (2.0 * h);
        let e_tau = (num_tau - g.d_log_tau).abs() / num_tau.abs().max(g.d_log_tau.abs()).max(1e-12);
        let e = rel_err(&num_v, &g.d_zv).max(rel_err(&num_t, &g.d_zt)).max(e_tau);
        ensure(e < 1e-5, || format!("case {case}: relative error {e:e}"))?;
        worst = worst.max(e);
    }
    Ok(format!(
        "closed forms within 1e-9, 100 gradient checks, worst relative error {worst:.1e}"
    ))
}

// ---------------------------------------------------------------------- toy

fn toy_training() -> Outcome {
    let start = Instant::now();
    let cfg = SyntheticConfig::default();
    let (train, held) = synthetic_split(&cfg).map_err(|e| e.to_string())?;
    let enc = ToyEncoders::random(cfg.input_dim, 8, 1);
    let run = train_toy(&train, enc, &ToyTrainConfig::default()).map_err(|e| e.to_string())?;
    let sim = similarity_matrix(
        &run.encoders.encode_video(&held.video),
        &run.encoders.encode_text(&held.text),
    )
    .map_err(|e| e.to_string())?;
    let (v2t, t2v) = (recall_at_1(&sim), recall_at_1(&sim.transpose()));
    let took = within(Duration::from_secs(30), start)?;
    ensure(v2t == 1.0 && t2v == 1.0, || format!("held-out recall@1 {v2t} / {t2v}"))?;
    Ok(format!(
        "held-out recall@1 1.0 both ways after {} steps in {took:.2?}",
        run.trace.len()
    ))
}

// ------------------------------------------------------------------ metrics

fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let rank = |i: usize| {
        1 + (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let positives: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    let mut total = 0.0;
    for &i in &positives {
        let r = rank(i);
        let hits = positives.iter().filter(|&&j| rank(j) <= r).count();
        total += hits as f64 / r as f64;
    }
    total / positives.len() as f64
}

fn metrics_oracles() -> Outcome {
    let mut cases = 0usize;
    for n in 1..=8usize {
        for mask in 0..(1u32 << n) {
            let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            for code in 0..3usize.pow(n as u32) {
                let scores: Vec<f64> = (0..n).map(|i| (code / 3usize.pow(i as u32) % 3) as f64).collect();
                let got = average_precision(&scores, &labels);
                if mask == 0 {
                    ensure(got == Err(EvalError::NoPositives), || {
                        format!("no positives gave {got:?}")
                    })?;
                } else {
                    let want = brute_ap(&scores, &labels);
                    let got = got.map_err(|e| e.to_string())?;
                    ensure((got - want).abs() < 1e-12, || {
                        format!("scores {scores:?} labels {labels:?}: {got} vs {want}")
                    })?;
                }
                cases += 1;
            }
        }
    }

    let video = |predicted: &[usize], truth: &[usize]| VideoSequence {
        video_id: "a".into(),
        predicted: predicted.to_vec(),
        truth: truth.to_vec(),
    };
    // Class 0: tp 1, fp 0, fn 1 gives F1 2/3. Class 1: tp 2, fp 1, fn 0 gives F1 0.8.
    let r = videowise_accuracy_f1(&[video(&[0, 1, 1, 1], &[0, 0, 1, 1])]).map_err(|e| e.to_string())?;
    let want = (2.0 / 3.0 + 0.8) / 2.0;
    ensure((r.mean_f1 - want).abs() <= 1e-9, || {
        format!("F1 {} vs {want}", r.mean_f1)
    })?;
    ensure((r.mean_f1 - 0.7333).abs() < 5e-5, || format!("F1 {}", r.mean_f1))?;

    let r = videowise_accuracy_f1(&[video(&[2, 0, 1, 1], &[2, 0, 1, 1])]).map_err(|e| e.to_string())?;
    ensure(r.mean_accuracy == 1.0 && r.mean_f1 == 1.0, || {
        format!("perfect gave accuracy {} F1 {}", r.mean_accuracy, r.mean_f1)
    })?;
    Ok(format!("{cases} AP cases, F1 {want:.4}, perfect predictions 1.0"))
}

// ---------------------------------------------------------------- pipeline

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus.jsonl")
}

fn run_pipeline(work: &Path, extra: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_surgforge"))
        .args(["pipeline", "--mock", "--seed", "7", "--corpus"])
        .arg(fixtures())
        .arg("--work")
        .arg(work)
        .args(extra)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("pipeline {extra:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })?;
    std::fs::read(work.join("manifest.jsonl")).map_err(|e| e.to_string())
}

fn records(bytes: &[u8]) -> Result<Vec<Value>, String> {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect()
}

fn stats_json(work: &Path) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_surgforge"))
        .args(["stats", "--json", "--work"])
        .arg(work)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        String::from_utf8_lossy(&out.stderr).into_owned()
    })?;
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = run_pipeline(&tmp.path().join("a"), &[])?;
    let b = run_pipeline(&tmp.path().join("b"), &[])?;
    let w1 = run_pipeline(&tmp.path().join("w1"), &["--workers", "1"])?;
    let w8 = run_pipeline(&tmp.path().join("w8"), &["--workers", "8"])?;
    ensure(a == b, || "two runs differ".into())?;
    ensure(w1 == w8 && w1 == a, || "worker counts 1 and 8 differ".into())?;

    let mut retained: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut total = 0usize;
    for r in records(&a)? {
        total += 1;
        if r["retained"] == Value::Bool(true) {
            let key = format!("{}{}", &r["level"].as_str().unwrap_or("?")[..1], r["clip_index"]);
            retained
                .entry(r["video_id"].as_str().unwrap_or("?").to_string())
                .or_default()
                .push(key);
        }
    }
    let expected: BTreeMap<String, Vec<String>> = [
        ("v01", vec!["p0", "p1", "s0", "s1", "s2", "t0", "t1", "t2"]),
        ("v02", vec!["p1", "s1", "s2", "t1", "t2"]),
        ("v03", vec!["p0", "s0", "t0", "t1", "t3"]),
        ("v05", vec!["p0", "s0", "t0", "t1"]),
    ]
    .into_iter()
    .map(|(v, k)| (v.to_string(), k.into_iter().map(String::from).collect()))
    .collect();
    ensure(total == 31, || format!("{total} records, want 31"))?;
    ensure(retained == expected, || format!("retained clips {retained:?}"))?;

    let stats = stats_json(&tmp.path().join("a"))?;
    let ret = &stats["retention"];
    let counts: Vec<u64> = [
        "total",
        "retained",
        "rejected",
        "visual_fail",
        "textual_fail",
        "both_fail",
        "enriched",
    ]
    .iter()
    .map(|k| ret[k].as_u64().unwrap_or(u64::MAX))
    .collect();
    ensure(counts == [31, 22, 9, 7, 7, 5, 22], || {
        format!("retention counts {counts:?}")
    })?;
    ensure(stats["videos"] == 4, || format!("videos {}", stats["videos"]))?;
    Ok(format!(
        "{} manifest bytes identical across runs and workers 1/8, 22 of 31 retained",
        a.len()
    ))
}

fn ablations() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let no_dmf = records(&run_pipeline(&tmp.path().join("dmf"), &["--no-dmf"])?)?;
    ensure(!no_dmf.is_empty(), || "empty manifest".into())?;
    let kept = no_dmf.iter().filter(|r| r["retained"] == Value::Bool(true)).count();
    ensure(kept == no_dmf.len(), || {
        format!("{kept} of {} retained without DMF", no_dmf.len())
    })?;

    let no_ce = records(&run_pipeline(&tmp.path().join("ce"), &["--no-ce"])?)?;
    ensure(!no_ce.is_empty(), || "empty manifest".into())?;
    let enriched = no_ce.iter().filter(|r| r.get("caption_enriched").is_some()).count();
    ensure(enriched == 0, || {
        format!("{enriched} records carry caption_enriched without CE")
    })?;
    Ok(format!(
        "no-dmf retained {kept}/{kept}, no-ce {} records without caption_enriched",
        no_ce.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("alignment oracle", alignment_oracle),
        ("exhaustive vote check", vote_enumeration),
        ("propagation equivalence", propagation_equivalence),
        ("InfoNCE correctness", info_nce_checks),
        ("toy contrastive training", toy_training),
        ("metrics oracles", metrics_oracles),
        ("end-to-end determinism", determinism),
        ("ablation toggles", ablations),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
