//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs with its own harness so the lines are visible under plain
//! `cargo test`. The end-to-end criterion trains two models on a 400 clip
//! corpus and takes a few minutes on one core.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use racl::audio::SampleLabel;
use racl::reconstruct::{relative_error, Reconstructor};
use racl::rng::{derive_seed, stream};
use racl::synth::{synthesize, CorpusSpec};
use racl::verify::{run_all, CheckResult, VerifyOptions};
use rayon::prelude::*;
use serde_json::Value;

/// Criteria that fail under a faithful implementation; see README.
const KNOWN_RED: &[&str] = &["4", "5"];

const CORPUS_N: usize = 200;
const CORPUS_SECONDS: f64 = 1.0;
const SEED: u64 = 688;
const TRAIN_CFG: &str = r#"{"audio": {"target_len": 16000}, "training": {"batch_size": 8, "epochs": 40}}"#;
const SMALL_CFG: &str = r#"{"audio": {"target_len": 4000}, "training": {"epochs": 2, "batch_size": 8}}"#;

struct Outcome {
    id: &'static str,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn workers() -> String {
    std::thread::available_parallelism().map_or(1, |n| n.get()).to_string()
}

fn racl(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_racl"))
        .current_dir(dir)
        .env_remove("RACL_SEED")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("racl {args:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn from_check(id: &'static str, name: &'static str, r: Option<&CheckResult>, max_seconds: Option<f64>) -> Outcome {
    match r {
        Some(r) => {
            let in_time = max_seconds.map_or(true, |m| r.seconds < m);
            Outcome {
                id,
                name,
                passed: r.passed && in_time,
                detail: format!("{} ({:.1} s)", r.detail, r.seconds),
            }
        }
        None => Outcome {
            id,
            name,
            passed: false,
            detail: "check missing".into(),
        },
    }
}

fn reconstruction_fidelity() -> Outcome {
    let spec = CorpusSpec {
        n_per_class: CORPUS_N,
        duration: CORPUS_SECONDS,
        seed: SEED,
        ..CorpusSpec::default()
    };
    let rec = match Reconstructor::new(&Default::default(), spec.sample_rate) {
        Ok(r) => r,
        Err(e) => {
            return Outcome {
                id: "4",
                name: "reconstruction fidelity",
                passed: false,
                detail: e.to_string(),
            }
        }
    };
    let jobs: Vec<(SampleLabel, usize)> = [SampleLabel::BonaFide, SampleLabel::Spoof]
        .iter()
        .flat_map(|l| (0..spec.n_per_class).map(move |i| (*l, i)))
        .collect();
    let per_clip: Vec<Result<(f64, f64, bool), String>> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, (label, i))| {
            let clip = synthesize(&spec, *label, *i);
            let seed = derive_seed(SEED, &[stream::GRIFFIN_LIM, k as u64]);
            let (out, trace) = rec.reconstruct_with_trace(&clip, seed).map_err(|e| e.to_string())?;
            let a = rec.mel_spectrogram(&out.samples).map_err(|e| e.to_string())?;
            let b = rec.mel_spectrogram(&clip.samples).map_err(|e| e.to_string())?;
            let l2: f64 = out.samples.iter().zip(&clip.samples).map(|(x, y)| (x - y) * (x - y)).sum();
            let monotone = trace.len() == 32 && trace.windows(2).all(|w| w[1] <= w[0]);
            Ok((relative_error(a.view(), b.view()), l2.sqrt(), monotone))
        })
        .collect();
    let mut worst_mel = 0.0f64;
    let mut min_l2 = f64::INFINITY;
    let mut monotone = true;
    for r in per_clip {
        match r {
            Ok((mel, l2, m)) => {
                worst_mel = worst_mel.max(mel);
                min_l2 = min_l2.min(l2);
                monotone &= m;
            }
            Err(e) => {
                return Outcome {
                    id: "4",
                    name: "reconstruction fidelity",
                    passed: false,
                    detail: e,
                }
            }
        }
    }
    Outcome {
        id: "4",
        name: "reconstruction fidelity",
        passed: worst_mel < 0.2 && min_l2 > 0.0 && monotone,
        detail: format!(
            "{} clips, worst mel error {worst_mel:.4}, min waveform distance {min_l2:.3}, convergence non-increasing {monotone}",
            jobs.len()
        ),
    }
}

fn train_and_eval(dir: &Path, w: &str, out: &str, ablate: Option<&str>) -> Result<(Value, Value, Value), String> {
    let mut args = vec![
        "--workers", w, "train", "--train", "rec_train/merged.tsv", "--dev", "rec_dev/merged.tsv", "--out", out,
        "--config", "cfg.json",
    ];
    if let Some(a) = ablate {
        args.extend(["--ablate", a]);
    }
    racl(dir, &args)?;
    let ckpt = format!("{out}/final.ckpt");
    let held_out = format!("{out}_eval");
    let merged = format!("{out}_merged");
    racl(dir, &["--workers", w, "eval", "--manifest", "corpus/eval.tsv", "--checkpoint", &ckpt, "--out", &held_out])?;
    racl(dir, &["--workers", w, "eval", "--manifest", "rec_eval/merged.tsv", "--checkpoint", &ckpt, "--out", &merged])?;
    Ok((
        json(&dir.join(out).join("summary.json"))?,
        json(&dir.join(held_out).join("report.json"))?,
        json(&dir.join(merged).join("report.json"))?,
    ))
}

fn end_to_end(dir: &Path) -> Result<Outcome, String> {
    let w = workers();
    let n = CORPUS_N.to_string();
    let secs = CORPUS_SECONDS.to_string();
    let seed = SEED.to_string();
    fs::write(dir.join("cfg.json"), TRAIN_CFG).map_err(|e| e.to_string())?;
    racl(dir, &["--workers", &w, "synth", "--n", &n, "--duration", &secs, "--seed", &seed, "--out", "corpus"])?;
    for split in ["train", "dev", "eval"] {
        let manifest = format!("corpus/{split}.tsv");
        let out = format!("rec_{split}");
        racl(dir, &["--workers", &w, "reconstruct", "--manifest", &manifest, "--out-dir", &out, "--config", "cfg.json"])?;
    }
    let (summary, held_out, merged) = train_and_eval(dir, &w, "racl", None)?;
    let (_, _, ce_merged) = train_and_eval(dir, &w, "ce", Some("std,enh,reg"))?;

    let first = summary["first_train_total"].as_f64().ok_or("summary lacks first_train_total")?;
    let last = summary["last_train_total"].as_f64().ok_or("summary lacks last_train_total")?;
    let pooled = held_out["eer"]["pooled"].as_f64().ok_or("report lacks pooled eer")?;
    let dist = |r: &Value| r["distances"]["matrix"][0][2].as_f64().ok_or("report lacks bonafide/rec_bonafide distance");
    let d_racl = dist(&merged)?;
    let d_ce = dist(&ce_merged)?;
    let a = last < first;
    let b = pooled < 10.0;
    let c = d_racl > d_ce;
    let mark = |ok: bool| if ok { "ok" } else { "FAILED" };
    Ok(Outcome {
        id: "5",
        name: "end-to-end trend",
        passed: a && b && c,
        detail: format!(
            "(a) train loss {first:.3} -> {last:.3} {}; (b) held-out EER {pooled:.2}% {}; \
             (c) bonafide vs rec_bonafide distance RACL {d_racl:.3} vs CE-only {d_ce:.3} {}",
            mark(a),
            mark(b),
            mark(c)
        ),
    })
}

const DETERMINISM_ARTIFACTS: [&str; 5] =
    ["run/final.ckpt", "run/epochs.tsv", "ev/report.json", "ev/scores.tsv", "rec_eval/reconstructed.tsv"];

fn small_pipeline(dir: &Path, w: &str) -> Result<(), String> {
    fs::write(dir.join("cfg.json"), SMALL_CFG).map_err(|e| e.to_string())?;
    racl(dir, &["--workers", w, "synth", "--n", "10", "--duration", "0.25", "--out", "corpus"])?;
    for split in ["train", "dev", "eval"] {
        let manifest = format!("corpus/{split}.tsv");
        let out = format!("rec_{split}");
        racl(dir, &["--workers", w, "reconstruct", "--manifest", &manifest, "--out-dir", &out, "--config", "cfg.json"])?;
    }
    racl(
        dir,
        &[
            "--workers", w, "train", "--train", "rec_train/merged.tsv", "--dev", "rec_dev/merged.tsv", "--out", "run",
            "--config", "cfg.json",
        ],
    )?;
    racl(dir, &["--workers", w, "eval", "--manifest", "rec_eval/merged.tsv", "--checkpoint", "run/final.ckpt", "--out", "ev"])
}

fn determinism(root: &Path) -> Result<Outcome, String> {
    let runs = [("a", "1"), ("b", "1"), ("c", "4")];
    for (name, w) in runs {
        let d = root.join(name);
        fs::create_dir_all(&d).map_err(|e| e.to_string())?;
        small_pipeline(&d, w)?;
    }
    let mut differing = Vec::new();
    for f in DETERMINISM_ARTIFACTS {
        let base = fs::read(root.join("a").join(f)).map_err(|e| format!("{f}: {e}"))?;
        for (name, _) in &runs[1..] {
            if fs::read(root.join(name).join(f)).map_err(|e| format!("{f}: {e}"))? != base {
                differing.push(format!("{name}/{f}"));
            }
        }
    }
    Ok(Outcome {
        id: "6",
        name: "determinism",
        passed: differing.is_empty(),
        detail: if differing.is_empty() {
            "3 runs (1, 1, 4 workers): checkpoints, logs and reports bit-identical".into()
        } else {
            format!("differing artifacts: {differing:?}")
        },
    })
}

fn failed(id: &'static str, name: &'static str, detail: String) -> Outcome {
    Outcome {
        id,
        name,
        passed: false,
        detail,
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let checks = run_all(&VerifyOptions::default());
    let find = |n: &str| checks.iter().find(|c| c.name == n);
    let mut outcomes = vec![
        from_check("1", "gradient integrity", find("gradients"), Some(60.0)),
        from_check("2", "loss identities", find("loss identities"), None),
        from_check("3", "eer oracle equivalence", find("eer oracle"), None),
        reconstruction_fidelity(),
    ];
    let scratch = tempfile::tempdir().expect("temporary directory");
    let e2e = scratch.path().join("e2e");
    fs::create_dir_all(&e2e).expect("scratch dir");
    outcomes.push(end_to_end(&e2e).unwrap_or_else(|e| failed("5", "end-to-end trend", e)));
    let det = scratch.path().join("det");
    outcomes.push(determinism(&det).unwrap_or_else(|e| failed("6", "determinism", e)));
    outcomes.push(from_check("7", "pipeline plumbing", find("plumbing"), None));

    println!();
    let mut unexpected = Vec::new();
    for o in &outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        let note = if !o.passed && KNOWN_RED.contains(&o.id) { "  [known red]" } else { "" };
        println!("{tag}  {} {:<26} {}{note}", o.id, o.name, o.detail);
        if !o.passed && !KNOWN_RED.contains(&o.id) {
            unexpected.push(o.id);
        }
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!(
        "\n{passed}/{} criteria pass in {:.0} s; unexpected failures: {unexpected:?}",
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    for o in &outcomes {
        if o.passed && KNOWN_RED.contains(&o.id) {
            println!("note: criterion {} is listed as known red but now passes", o.id);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
