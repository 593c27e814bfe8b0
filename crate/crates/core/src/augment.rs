//! Training-time waveform augmentation: additive noise, music and babble at a
//! drawn SNR, and room-impulse-response convolution.

use std::path::PathBuf;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{mean_square, AudioClip};
use crate::error::{RaclError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub noise_snr_db: [f64; 2],
    pub music_snr_db: [f64; 2],
    pub speech_snr_db: [f64; 2],
    pub speech_mix_count: [usize; 2],
    /// Probability of each category; the remainder is "no augmentation".
    pub p_noise: f64,
    pub p_music: f64,
    pub p_babble: f64,
    pub p_rir: f64,
    /// Pool directories of WAV files. A category with no pool is skipped.
    pub noise_dir: Option<PathBuf>,
    pub music_dir: Option<PathBuf>,
    pub speech_dir: Option<PathBuf>,
    pub rir_dir: Option<PathBuf>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_snr_db: [0.0, 15.0],
            music_snr_db: [5.0, 15.0],
            speech_snr_db: [13.0, 20.0],
            speech_mix_count: [3, 8],
            p_noise: 0.2,
            p_music: 0.2,
            p_babble: 0.2,
            p_rir: 0.2,
            noise_dir: None,
            music_dir: None,
            speech_dir: None,
            rir_dir: None,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("noise_snr_db", self.noise_snr_db),
            ("music_snr_db", self.music_snr_db),
            ("speech_snr_db", self.speech_snr_db),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(RaclError::Config(format!("augment.{name}: need lower <= upper")));
            }
        }
        let [lo, hi] = self.speech_mix_count;
        if lo == 0 || lo > hi {
            return Err(RaclError::Config(
                "augment.speech_mix_count: need 1 <= lower <= upper".into(),
            ));
        }
        let probs = [self.p_noise, self.p_music, self.p_babble, self.p_rir];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || probs.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(RaclError::Config(
                "augment probabilities must lie in [0, 1] and sum to at most 1".into(),
            ));
        }
        Ok(())
    }

    pub fn has_pools(&self) -> bool {
        self.noise_dir.is_some() || self.music_dir.is_some() || self.speech_dir.is_some() || self.rir_dir.is_some()
    }
}

/// Interferer and impulse-response clips loaded from the configured pools.
#[derive(Debug, Clone, Default)]
pub struct AugmentPools {
    pub noise: Vec<AudioClip>,
    pub music: Vec<AudioClip>,
    pub speech: Vec<AudioClip>,
    pub rir: Vec<AudioClip>,
}

impl AugmentPools {
    pub fn is_empty(&self) -> bool {
        self.noise.is_empty() && self.music.is_empty() && self.speech.is_empty() && self.rir.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    None,
    Noise,
    Music,
    Babble,
    Rir,
}

/// Gain `g` with `10 log10(signal / (g^2 noise)) = snr_db`.
pub fn snr_gain(signal_power: f64, noise_power: f64, snr_db: f64) -> Result<f64> {
    if !(signal_power > 0.0 && noise_power > 0.0) {
        return Err(RaclError::DegeneratePower {
            signal: signal_power,
            noise: noise_power,
        });
    }
    Ok((signal_power / noise_power * 10f64.powf(-snr_db / 10.0)).sqrt())
}

/// Tiles a short interferer cyclically or cuts a random window from a long one.
pub fn fit_length<R: Rng>(x: &[f64], len: usize, rng: &mut R) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(RaclError::EmptyInput);
    }
    if x.len() > len {
        let start = rng.gen_range(0..=x.len() - len);
        Ok(x[start..start + len].to_vec())
    } else {
        Ok(x.iter().copied().cycle().take(len).collect())
    }
}

fn peak_guard(mut x: Vec<f64>) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        x.iter_mut().for_each(|s| *s /= peak);
    }
    x
}

/// `clip + g * interferer` before any clipping guard. The interferer must
/// already match the clip length.
pub fn mix_at_snr(clip: &[f64], interferer: &[f64], snr_db: f64) -> Result<Vec<f64>> {
    if clip.is_empty() || interferer.is_empty() {
        return Err(RaclError::EmptyInput);
    }
    if clip.len() != interferer.len() {
        return Err(RaclError::Shape(format!(
            "interferer has {} samples, clip has {}",
            interferer.len(),
            clip.len()
        )));
    }
    let g = snr_gain(mean_square(clip), mean_square(interferer), snr_db)?;
    Ok(clip.iter().zip(interferer).map(|(s, n)| s + g * n).collect())
}

pub fn mix_additive<R: Rng>(clip: &AudioClip, interferer: &AudioClip, snr_db: f64, rng: &mut R) -> Result<AudioClip> {
    if clip.is_empty() {
        return Err(RaclError::EmptyInput);
    }
    let fitted = fit_length(&interferer.samples, clip.len(), rng)?;
    Ok(clip.with_samples(peak_guard(mix_at_snr(&clip.samples, &fitted, snr_db)?)))
}

/// Sums `utterances` (each fitted to the clip length) into one babble track.
pub fn babble_track<R: Rng>(len: usize, utterances: &[&AudioClip], count: [usize; 2], rng: &mut R) -> Result<Vec<f64>> {
    if utterances.len() < count[0] || utterances.len() > count[1] {
        return Err(RaclError::Config(format!(
            "babble needs {} to {} utterances, got {}",
            count[0],
            count[1],
            utterances.len()
        )));
    }
    let mut track = vec![0.0; len];
    for u in utterances {
        for (t, v) in track.iter_mut().zip(fit_length(&u.samples, len, rng)?) {
            *t += v;
        }
    }
    Ok(track)
}

pub fn mix_babble<R: Rng>(
    clip: &AudioClip,
    utterances: &[&AudioClip],
    snr_db: f64,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<AudioClip> {
    let track = babble_track(clip.len(), utterances, cfg.speech_mix_count, rng)?;
    Ok(clip.with_samples(peak_guard(mix_at_snr(&clip.samples, &track, snr_db)?)))
}

/// Full linear convolution truncated to `len` output samples.
pub fn convolve_truncated(x: &[f64], h: &[f64], len: usize) -> Vec<f64> {
    if h.len() <= 64 {
        return (0..len)
            .map(|n| {
                let lo = n.saturating_sub(x.len() - 1);
                (lo..=n.min(h.len() - 1)).map(|k| h[k] * x[n - k]).sum()
            })
            .collect();
    }
    let full = x.len() + h.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let load = |s: &[f64]| {
        let mut b = vec![Complex64::new(0.0, 0.0); n];
        for (d, &v) in b.iter_mut().zip(s) {
            d.re = v;
        }
        b
    };
    let mut a = load(x);
    let mut b = load(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a.iter().take(len).map(|c| c.re / n as f64).collect()
}

/// Reverberates `clip` with `rir`, keeping the clip length and its peak.
pub fn convolve_rir(clip: &AudioClip, rir: &AudioClip) -> Result<AudioClip> {
    if clip.is_empty() || rir.is_empty() {
        return Err(RaclError::EmptyInput);
    }
    if rir.len() > clip.len() {
        return Err(RaclError::Shape(format!(
            "impulse response ({} samples) is longer than the clip ({})",
            rir.len(),
            clip.len()
        )));
    }
    let mut out = convolve_truncated(&clip.samples, &rir.samples, clip.len());
    let target = clip.peak();
    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 && peak != target {
        let scale = target / peak;
        out.iter_mut().for_each(|s| *s *= scale);
    }
    Ok(clip.with_samples(out))
}

/// Draws one category per sample. Categories without a pool fall back to
/// no augmentation.
pub fn draw_category<R: Rng>(cfg: &AugmentConfig, pools: &AugmentPools, rng: &mut R) -> Category {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (p, cat, available) in [
        (cfg.p_noise, Category::Noise, !pools.noise.is_empty()),
        (cfg.p_music, Category::Music, !pools.music.is_empty()),
        (cfg.p_babble, Category::Babble, pools.speech.len() >= cfg.speech_mix_count[0]),
        (cfg.p_rir, Category::Rir, !pools.rir.is_empty()),
    ] {
        acc += p;
        if u < acc {
            return if available { cat } else { Category::None };
        }
    }
    Category::None
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Applies one randomly drawn augmentation. Silent clips pass through
/// unchanged since no SNR is defined for them.
pub fn augment<R: Rng>(clip: &AudioClip, cfg: &AugmentConfig, pools: &AugmentPools, rng: &mut R) -> Result<AudioClip> {
    let category = draw_category(cfg, pools, rng);
    if category != Category::None && clip.power() == 0.0 {
        return Ok(clip.clone());
    }
    let pick = |pool: &[AudioClip], rng: &mut R| pool[rng.gen_range(0..pool.len())].clone();
    match category {
        Category::None => Ok(clip.clone()),
        Category::Noise => {
            let snr = uniform(rng, cfg.noise_snr_db);
            let n = pick(&pools.noise, rng);
            mix_or_skip(clip, mix_additive(clip, &n, snr, rng))
        }
        Category::Music => {
            let snr = uniform(rng, cfg.music_snr_db);
            let n = pick(&pools.music, rng);
            mix_or_skip(clip, mix_additive(clip, &n, snr, rng))
        }
        Category::Babble => {
            let snr = uniform(rng, cfg.speech_snr_db);
            let hi = cfg.speech_mix_count[1].min(pools.speech.len());
            let count = rng.gen_range(cfg.speech_mix_count[0]..=hi);
            let picks: Vec<&AudioClip> = rand::seq::index::sample(rng, pools.speech.len(), count)
                .into_iter()
                .map(|i| &pools.speech[i])
                .collect();
            mix_or_skip(clip, mix_babble(clip, &picks, snr, cfg, rng))
        }
        Category::Rir => {
            let rir = pick(&pools.rir, rng);
            if rir.len() > clip.len() {
                let cut = rir.with_samples(rir.samples[..clip.len()].to_vec());
                convolve_rir(clip, &cut)
            } else {
                convolve_rir(clip, &rir)
            }
        }
    }
}

/// A silent interferer window leaves the clip untouched instead of failing
/// the whole batch.
fn mix_or_skip(clip: &AudioClip, mixed: Result<AudioClip>) -> Result<AudioClip> {
    match mixed {
        Err(RaclError::DegeneratePower { .. }) => {
            log::debug!("{}: silent interferer window, augmentation skipped", clip.source_id);
            Ok(clip.clone())
        }
        other => other,
    }
}
