use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use racl::audio::{prepare, resample, write_wav, AudioClip, Manifest, ManifestEntry};
use racl::augment::AugmentPools;
use racl::config::{check_hash, RunConfig};
use racl::eval::{build_report, embeddings_to_tsv, score_manifest, scores_to_tsv, write_text};
use racl::features::Extractor;
use racl::model::{train, Checkpoint, Detector, EpochLog};
use racl::reconstruct::Reconstructor;
use racl::rng::{derive_seed, stream};
use racl::synth::{generate, CorpusSpec};
use racl::verify::{format_table, run_all, VerifyOptions};
use racl::{RaclError, Result};

#[derive(Parser)]
#[command(name = "racl", version, about = "Audio deepfake detection: synth, reconstruct, train, eval, verify")]
struct Cli {
    /// Worker threads; results are identical for any value.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed and RACL_SEED.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic bona fide / spoof corpus.
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 688)]
        seed: u64,
        /// Clip duration in seconds.
        #[arg(long, default_value_t = 4.0)]
        duration: f64,
        #[arg(long, default_value_t = 16000)]
        sample_rate: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
    /// Write mel round-trip reconstructions of every manifest row.
    Reconstruct {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        overwrite: bool,
    },
    /// Train the aggregation kernel and classifier head.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma-separated loss terms to disable: std, enh, reg.
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<String>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Score a manifest and write scores, embeddings and a JSON report.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to config.json next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Manifest column holding the subset tag (0 = path, 1 = label).
        #[arg(long)]
        subset_col: Option<usize>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Run gradient, loss, EER, reconstruction and determinism checks.
    Verify {
        /// Corrupt one analytic gradient; the run must then fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Print the resolved run config.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

enum Outcome {
    Ok,
    Partial,
    VerifyFailed,
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() && dir.read_dir().map_err(|e| RaclError::io(dir, e))?.next().is_some() {
        if !overwrite {
            return Err(RaclError::Config(format!(
                "{} is not empty; pass --overwrite to replace it",
                dir.display()
            )));
        }
        std::fs::remove_dir_all(dir).map_err(|e| RaclError::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| RaclError::io(dir, e))
}

/// `target` expressed relative to the directory `base`.
fn relative_path(target: &Path, base: &Path) -> PathBuf {
    let (Ok(t), Ok(b)) = (std::fs::canonicalize(target), std::fs::canonicalize(base)) else {
        return target.to_path_buf();
    };
    let tc: Vec<_> = t.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = tc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &tc[common..] {
        out.push(c);
    }
    out
}

fn check_manifest(m: &Manifest, path: &Path, cfg: &RunConfig) -> Result<()> {
    match m.meta.get("data_hash") {
        Some(found) => check_hash(&path.display().to_string(), &cfg.data_hash(), found),
        None => Ok(()),
    }
}

fn cmd_synth(n: usize, seed: u64, duration: f64, sample_rate: u32, out: &Path, overwrite: bool) -> Result<Outcome> {
    prepare_out_dir(out, overwrite)?;
    let spec = CorpusSpec {
        n_per_class: n,
        duration,
        seed,
        sample_rate,
        ..CorpusSpec::default()
    };
    let m = generate(&spec, out, &[])?;
    println!("wrote {} clips to {}", m.entries.len(), out.display());
    Ok(Outcome::Ok)
}

fn cmd_reconstruct(manifest: &Path, out: &Path, cfg: &RunConfig, overwrite: bool) -> Result<Outcome> {
    let input = Manifest::load(manifest)?;
    prepare_out_dir(out, overwrite)?;
    std::fs::create_dir_all(out.join("wav")).map_err(|e| RaclError::io(out, e))?;
    std::fs::write(out.join("config.json"), cfg.to_json()).map_err(|e| RaclError::io(out, e))?;
    let rec = Reconstructor::new(&cfg.spectrogram, cfg.audio.sample_rate)?;
    let results: Vec<std::result::Result<ManifestEntry, String>> = input
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let run = || -> Result<ManifestEntry> {
                let clip = resample(&input.read_clip(entry)?, cfg.audio.sample_rate)?;
                let seed = derive_seed(cfg.seed, &[stream::GRIFFIN_LIM, i as u64]);
                let out_clip = rec.reconstruct_clip(&clip, seed)?;
                let stem = Path::new(&entry.path).file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
                let rel = format!("wav/{i:05}_{stem}_rec.wav");
                write_wav(&out.join(&rel), &out_clip)?;
                let mut e = ManifestEntry::new(rel, out_clip.label);
                e.extra = entry.extra.clone();
                Ok(e)
            };
            run().map_err(|e| format!("{}: {e}", entry.path))
        })
        .collect();

    let mut recon = Manifest::new(out);
    recon.meta.insert("config_hash".into(), cfg.hash_hex());
    recon.meta.insert("data_hash".into(), cfg.data_hash());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(e) => recon.entries.push(e),
            Err(msg) => failures.push(msg),
        }
    }
    recon.save(&out.join("reconstructed.tsv"))?;

    let mut merged = recon.clone();
    let originals = input.entries.iter().map(|e| ManifestEntry {
        path: relative_path(&input.resolve(e), out).display().to_string(),
        ..e.clone()
    });
    merged.entries = originals.chain(recon.entries.iter().cloned()).collect();
    merged.save(&out.join("merged.tsv"))?;
    println!(
        "reconstructed {} of {} rows into {}",
        recon.entries.len(),
        input.entries.len(),
        out.display()
    );
    if failures.is_empty() {
        Ok(Outcome::Ok)
    } else {
        for f in &failures {
            eprintln!("error: {f}");
        }
        Ok(Outcome::Partial)
    }
}

fn load_prepared(path: &Path, cfg: &RunConfig, keep: impl Fn(&ManifestEntry) -> bool + Sync) -> Result<Vec<AudioClip>> {
    let m = Manifest::load(path)?;
    check_manifest(&m, path, cfg)?;
    m.entries
        .par_iter()
        .filter(|e| keep(e))
        .map(|e| {
            let clip = m.read_clip(e)?;
            prepare(&clip, cfg.audio.sample_rate, cfg.audio.target_len)
        })
        .collect()
}

fn load_pools(cfg: &RunConfig) -> Result<AugmentPools> {
    let load_dir = |dir: &Option<PathBuf>| -> Result<Vec<AudioClip>> {
        let Some(dir) = dir else { return Ok(Vec::new()) };
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| RaclError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        files
            .par_iter()
            .map(|p| {
                let c = racl::audio::read_wav(p, racl::SampleLabel::BonaFide, &p.display().to_string())?;
                resample(&c, cfg.audio.sample_rate)
            })
            .collect()
    };
    Ok(AugmentPools {
        noise: load_dir(&cfg.augment.noise_dir)?,
        music: load_dir(&cfg.augment.music_dir)?,
        speech: load_dir(&cfg.augment.speech_dir)?,
        rir: load_dir(&cfg.augment.rir_dir)?,
    })
}

fn cmd_train(train_path: &Path, dev_path: &Path, out: &Path, cfg: &RunConfig, overwrite: bool) -> Result<Outcome> {
    let train_clips = load_prepared(train_path, cfg, |_| true)?;
    let include_dev = cfg.reconstruct.include_dev;
    let dev_clips = load_prepared(dev_path, cfg, |e| include_dev || !e.label.is_reconstructed())?;
    let pools = load_pools(cfg)?;
    prepare_out_dir(out, overwrite)?;
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| RaclError::io(&ckpt_dir, e))?;
    std::fs::write(out.join("config.json"), cfg.to_json()).map_err(|e| RaclError::io(out, e))?;
    let hash = cfg.hash_hex();
    let mut log = format!("# config_hash={hash}\n{}\n", EpochLog::TSV_HEADER);
    let log_path = out.join("epochs.tsv");
    let outcome = train(cfg, &train_clips, &dev_clips, &pools, |entry, ckpt| {
        log.push_str(&entry.tsv_row());
        log.push('\n');
        write_text(&log_path, &log)?;
        ckpt.save(&ckpt_dir.join(format!("epoch_{:03}.ckpt", entry.epoch)))
    })?;
    outcome.final_checkpoint.save(&out.join("final.ckpt"))?;
    let summary = serde_json::json!({
        "config_hash": hash,
        "best_epoch": outcome.best_epoch,
        "averaged_epochs": outcome.averaged_epochs,
        "averaged_dev": outcome.averaged_dev,
        "first_train_total": outcome.log.first().map(|l| l.train.total),
        "last_train_total": outcome.log.last().map(|l| l.train.total),
    });
    write_text(&out.join("summary.json"), &serde_json::to_string_pretty(&summary).expect("json"))?;
    println!(
        "trained {} epochs; best epoch {}, averaged dev loss {:.5}",
        outcome.log.len(),
        outcome.best_epoch,
        outcome.averaged_dev.total
    );
    Ok(Outcome::Ok)
}

fn cmd_eval(
    manifest: &Path,
    checkpoint: &Path,
    out: &Path,
    config: Option<&Path>,
    subset_col: Option<usize>,
    overwrite: bool,
) -> Result<Outcome> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let default_cfg = checkpoint.parent().map(|d| d.join("config.json"));
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => match default_cfg.filter(|p| p.exists()) {
            Some(p) => RunConfig::load(&p)?,
            None => RunConfig::default(),
        },
    };
    cfg.validate()?;
    check_hash(&checkpoint.display().to_string(), &cfg.hash_hex(), &ckpt.config_hash_hex())?;
    let m = Manifest::load(manifest)?;
    prepare_out_dir(out, overwrite)?;
    let detector = Detector::new(Extractor::new(&cfg.features, cfg.audio.sample_rate)?, ckpt.params)?;
    let scored = score_manifest(&m, &detector, &cfg, subset_col)?;
    write_text(&out.join("scores.tsv"), &scores_to_tsv(&scored.records))?;
    write_text(&out.join("embeddings.tsv"), &embeddings_to_tsv(&scored.records, &scored.embeddings))?;
    let report = build_report(&cfg, ckpt.epoch, &scored)?;
    write_text(&out.join("report.json"), &report.to_json())?;
    println!(
        "scored {} rows; average EER {:.3}%{}",
        report.scored,
        report.eer.average,
        report.eer.pooled.map(|p| format!(", pooled {p:.3}%")).unwrap_or_default()
    );
    if scored.failures.is_empty() {
        Ok(Outcome::Ok)
    } else {
        for f in &scored.failures {
            eprintln!("error: {f}");
        }
        Ok(Outcome::Partial)
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.max(1))
        .build_global()
        .map_err(|e| RaclError::Config(format!("--workers: {e}")))?;
    match cli.command {
        Command::Synth {
            n,
            seed,
            duration,
            sample_rate,
            out,
            overwrite,
        } => cmd_synth(n, seed, duration, sample_rate, &out, overwrite),
        Command::Reconstruct {
            manifest,
            out_dir,
            common,
            overwrite,
        } => cmd_reconstruct(&manifest, &out_dir, &resolve_config(&common)?, overwrite),
        Command::Train {
            train,
            dev,
            out,
            common,
            epochs,
            ablate,
            overwrite,
        } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            cfg.ablate(&ablate)?;
            cfg.validate()?;
            cmd_train(&train, &dev, &out, &cfg, overwrite)
        }
        Command::Eval {
            manifest,
            checkpoint,
            out,
            config,
            subset_col,
            overwrite,
        } => cmd_eval(&manifest, &checkpoint, &out, config.as_deref(), subset_col, overwrite),
        Command::Verify { inject_fault } => {
            let results = run_all(&VerifyOptions {
                inject_gradient_fault: inject_fault,
            });
            print!("{}", format_table(&results));
            if results.iter().all(|r| r.passed) {
                Ok(Outcome::Ok)
            } else {
                for r in results.iter().filter(|r| !r.passed) {
                    eprintln!("verification failed: {}", r.name);
                }
                Ok(Outcome::VerifyFailed)
            }
        }
        Command::Config { common } => {
            println!("{}", resolve_config(&common)?.to_json());
            Ok(Outcome::Ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Ok(Outcome::VerifyFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
