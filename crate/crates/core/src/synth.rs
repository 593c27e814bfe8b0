//! Deterministic synthetic corpus.
//!
//! Bona fide clips are harmonic tone complexes with vibrato, slow per-harmonic
//! frequency jitter, a syllable-rate amplitude envelope and a low-passed noise
//! floor. Spoof clips come from the same generator with the harmonic phase
//! quantized, most of the jitter removed and notch filters applied, the kind
//! of spectral fingerprint a vocoder leaves. Both classes are normalized to
//! loudness drawn from the same distribution, so level carries no label
//! information.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioClip, Manifest, ManifestEntry, SampleLabel};
use crate::error::{RaclError, Result};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub n_per_class: usize,
    /// Seconds per clip.
    pub duration: f64,
    pub seed: u64,
    pub sample_rate: u32,
    /// Fractions of each class assigned to the train and dev splits; the
    /// rest is the evaluation split.
    pub train_fraction: f64,
    pub dev_fraction: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_per_class: 200,
            duration: 4.0,
            seed: 688,
            sample_rate: 16_000,
            train_fraction: 0.6,
            dev_fraction: 0.2,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_per_class > 0
            && self.duration > 0.0
            && self.duration.is_finite()
            && self.sample_rate >= 8000
            && self.train_fraction >= 0.0
            && self.dev_fraction >= 0.0
            && self.train_fraction + self.dev_fraction <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(RaclError::Config(format!("invalid corpus spec {self:?}")))
        }
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    /// Split name of the `i`-th clip of a class.
    pub fn split(&self, i: usize) -> &'static str {
        let n = self.n_per_class as f64;
        let train = (self.train_fraction * n).round() as usize;
        let dev = ((self.train_fraction + self.dev_fraction) * n).round() as usize;
        if i < train {
            "train"
        } else if i < dev {
            "dev"
        } else {
            "eval"
        }
    }
}

/// Spoof artifact family, used as the subset tag.
const SUBSETS: [(&str, f64, usize); 3] = [("A", 32.0, 2), ("B", 64.0, 2), ("C", 16.0, 1)];

struct Voice {
    f0: f64,
    vibrato_rate: f64,
    vibrato_depth: f64,
    vibrato_phase: f64,
    env_rate: f64,
    env_phase: f64,
    tilt: f64,
    jitter: f64,
}

/// Second-order notch (RBJ cookbook), applied in place.
fn notch(x: &mut [f64], freq: f64, q: f64, sample_rate: f64) {
    let w0 = 2.0 * PI * freq / sample_rate;
    let alpha = w0.sin() / (2.0 * q);
    let c = w0.cos();
    let a0 = 1.0 + alpha;
    let (b0, b1, b2) = (1.0 / a0, -2.0 * c / a0, 1.0 / a0);
    let (a1, a2) = (-2.0 * c / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = b0 * *v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = *v;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

fn quantize_phase(phase: f64, levels: f64) -> f64 {
    let step = 2.0 * PI / levels;
    (phase.rem_euclid(2.0 * PI) / step).round() * step
}

/// Generates one clip. The index also selects the spoof artifact family.
pub fn synthesize(spec: &CorpusSpec, label: SampleLabel, index: usize) -> AudioClip {
    let class = label.index() as u64;
    let mut rng = rng_for(spec.seed, &[stream::SYNTH, class, index as u64]);
    let sr = spec.sample_rate as f64;
    let n = spec.samples();
    let spoof = !label.is_bona_fide();
    let (_, levels, notches) = SUBSETS[index % SUBSETS.len()];

    let voice = Voice {
        f0: rng.gen_range(100.0..250.0),
        vibrato_rate: rng.gen_range(4.0..7.0),
        vibrato_depth: rng.gen_range(0.005..0.02),
        vibrato_phase: rng.gen_range(0.0..2.0 * PI),
        env_rate: rng.gen_range(2.5..5.0),
        env_phase: rng.gen_range(0.0..2.0 * PI),
        tilt: rng.gen_range(0.8..1.4),
        jitter: if spoof { 0.0008 } else { 0.004 },
    };
    let harmonics = ((0.45 * sr / (voice.f0 * 1.03)) as usize).clamp(1, 20);
    let rho: f64 = 0.999;
    let innovation = voice.jitter * (1.0 - rho * rho).sqrt();

    let mut phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let mut drift: Vec<f64> = (0..harmonics)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            voice.jitter * e
        })
        .collect();
    let amps: Vec<f64> = (1..=harmonics).map(|h| (h as f64).powf(-voice.tilt)).collect();

    let mut x = vec![0.0; n];
    for (i, out) in x.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let f = voice.f0 * (1.0 + voice.vibrato_depth * (2.0 * PI * voice.vibrato_rate * t + voice.vibrato_phase).sin());
        let env = 0.55 + 0.45 * (2.0 * PI * voice.env_rate * t + voice.env_phase).sin();
        let mut s = 0.0;
        for h in 0..harmonics {
            let p = if spoof { quantize_phase(phases[h], levels) } else { phases[h] };
            s += amps[h] * p.sin();
            let e: f64 = StandardNormal.sample(&mut rng);
            drift[h] = rho * drift[h] + innovation * e;
            phases[h] = (phases[h] + 2.0 * PI * (h + 1) as f64 * f * (1.0 + drift[h]) / sr) % (2.0 * PI);
        }
        *out = env * s;
    }

    let signal_rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let floor = signal_rms * 10f64.powf(-35.0 / 20.0);
    let mut lp = 0.0;
    for v in x.iter_mut() {
        let w: f64 = StandardNormal.sample(&mut rng);
        lp = 0.9 * lp + 0.1 * w;
        *v += floor * lp * 3.0;
    }
    if spoof {
        for _ in 0..notches {
            let f = rng.gen_range(1000.0..(0.4 * sr).min(6000.0));
            notch(&mut x, f, 4.0, sr);
        }
    }

    let target = rng.gen_range(0.05..0.15);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let mut gain = if rms > 0.0 { target / rms } else { 0.0 };
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())) * gain;
    if peak > 0.99 {
        gain *= 0.99 / peak;
    }
    x.iter_mut().for_each(|v| *v *= gain);
    let name = format!("{}_{index:04}", label.as_str());
    AudioClip::new(x, spec.sample_rate, label, name)
}

/// Writes `n_per_class` clips per class under `out_dir` plus `manifest.tsv`
/// (all rows, with split and subset columns) and one manifest per split.
pub fn generate(spec: &CorpusSpec, out_dir: &Path, meta: &[(String, String)]) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir.join("wav")).map_err(|e| RaclError::io(out_dir, e))?;
    let jobs: Vec<(SampleLabel, usize)> = [SampleLabel::BonaFide, SampleLabel::Spoof]
        .into_iter()
        .flat_map(|l| (0..spec.n_per_class).map(move |i| (l, i)))
        .collect();
    let entries: Vec<ManifestEntry> = jobs
        .par_iter()
        .map(|&(label, i)| {
            let clip = synthesize(spec, label, i);
            let rel = format!("wav/{}.wav", clip.source_id);
            write_wav(&out_dir.join(&rel), &clip)?;
            let mut e = ManifestEntry::new(rel, label);
            e.extra = vec![spec.split(i).to_string(), SUBSETS[i % SUBSETS.len()].0.to_string()];
            Ok(e)
        })
        .collect::<Result<_>>()?;

    let mut manifest = Manifest::new(out_dir);
    manifest.meta.insert("generator".into(), "synth".into());
    manifest.meta.insert("seed".into(), spec.seed.to_string());
    manifest.meta.insert("n_per_class".into(), spec.n_per_class.to_string());
    manifest.meta.insert("duration".into(), spec.duration.to_string());
    manifest.meta.insert("sample_rate".into(), spec.sample_rate.to_string());
    for (k, v) in meta {
        manifest.meta.insert(k.clone(), v.clone());
    }
    manifest.entries = entries;
    manifest.save(&out_dir.join("manifest.tsv"))?;
    for split in ["train", "dev", "eval"] {
        let mut part = manifest.clone();
        part.entries.retain(|e| e.extra.first().map(String::as_str) == Some(split));
        part.save(&out_dir.join(format!("{split}.tsv")))?;
    }
    Ok(manifest)
}
