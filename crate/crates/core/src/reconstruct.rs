//! Hard-sample generation by analysis and resynthesis.
//!
//! A clip goes through STFT magnitude, mel projection, pseudo-inverse back to
//! linear frequency and Griffin-Lim phase recovery. The result is close to
//! the source in the mel domain but carries the smearing and phase artifacts
//! of a lossy spectral round trip.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use rustfft::num_complex::Complex64;

use crate::audio::AudioClip;
use crate::dsp::{magnitude, MelFilterbank, SpectrogramConfig, StftEngine};
use crate::error::{RaclError, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone)]
pub struct GriffinLimOutput {
    pub samples: Vec<f64>,
    /// Spectral convergence after each iteration, measured over the full
    /// two-sided spectrum of the internal frame domain.
    pub convergence: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Reconstructor {
    pub cfg: SpectrogramConfig,
    pub sample_rate: u32,
    engine: StftEngine,
    filterbank: MelFilterbank,
}

/// Squared norm over the two-sided spectrum represented by one-sided bins.
fn two_sided_sq_norm<'a>(bins: usize, values: impl Iterator<Item = (usize, f64)> + 'a) -> f64 {
    values
        .map(|(k, v)| {
            let w = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
            w * v * v
        })
        .sum()
}

impl Reconstructor {
    pub fn new(cfg: &SpectrogramConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate,
            engine: StftEngine::from_config(cfg),
            filterbank: MelFilterbank::new(cfg, sample_rate)?,
        })
    }

    pub fn engine(&self) -> &StftEngine {
        &self.engine
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn stft(&self, samples: &[f64]) -> Result<Array2<Complex64>> {
        self.engine.stft(samples)
    }

    pub fn mel_project(&self, mag: ArrayView2<'_, f64>) -> Array2<f64> {
        self.filterbank.project(mag)
    }

    pub fn mel_invert(&self, mel: ArrayView2<'_, f64>) -> Array2<f64> {
        self.filterbank.invert(mel)
    }

    pub fn mel_spectrogram(&self, samples: &[f64]) -> Result<Array2<f64>> {
        Ok(self.mel_project(magnitude(&self.stft(samples)?).view()))
    }

    /// Phase retrieval by alternating projection, starting from a seeded
    /// uniformly random phase. Each iteration maps the current spectra to the
    /// closest `len` sample signal, re-analyzes it and records the magnitude
    /// mismatch before restoring the target magnitude. The output is the
    /// signal of the final estimate.
    pub fn griffin_lim(&self, mag: ArrayView2<'_, f64>, len: usize, seed: u64) -> Result<GriffinLimOutput> {
        let bins = mag.ncols();
        let expected = self.engine.frame_count(len + self.engine.fft_size);
        if len < self.engine.fft_size || mag.nrows() != expected || bins != self.engine.bins() {
            return Err(RaclError::Shape(format!(
                "magnitude of {}x{} does not describe a {len} sample signal ({expected}x{} expected)",
                mag.nrows(),
                bins,
                self.engine.bins()
            )));
        }
        let mut rng = rng_for(seed, &[crate::rng::stream::GRIFFIN_LIM]);
        let mut spec: Array2<Complex64> =
            mag.mapv(|m| Complex64::from_polar(m, rng.gen_range(0.0..2.0 * PI)));
        let target_norm = two_sided_sq_norm(
            bins,
            mag.indexed_iter().map(|((_, k), &v)| (k, v)),
        )
        .sqrt();

        let mut convergence = Vec::with_capacity(self.cfg.griffin_lim_iters);
        for _ in 0..self.cfg.griffin_lim_iters {
            let y = self.engine.istft(spec.view(), len);
            let rebuilt = self.engine.stft(&y)?;
            let diff = two_sided_sq_norm(
                bins,
                rebuilt
                    .indexed_iter()
                    .zip(mag.iter())
                    .map(|(((_, k), c), &m)| (k, c.norm() - m)),
            )
            .sqrt();
            convergence.push(if target_norm > 0.0 { diff / target_norm } else { 0.0 });
            Zip::from(&mut spec).and(&rebuilt).and(mag).for_each(|s, r, &m| {
                let n = r.norm();
                *s = if n > 0.0 { r * (m / n) } else { Complex64::new(m, 0.0) };
            });
        }
        Ok(GriffinLimOutput {
            samples: self.engine.istft(spec.view(), len),
            convergence,
        })
    }

    /// Full mel round trip. The result keeps length and rate, and its label
    /// moves to the reconstructed provenance of the source class.
    pub fn reconstruct_clip(&self, clip: &AudioClip, seed: u64) -> Result<AudioClip> {
        Ok(self.reconstruct_with_trace(clip, seed)?.0)
    }

    pub fn reconstruct_with_trace(&self, clip: &AudioClip, seed: u64) -> Result<(AudioClip, Vec<f64>)> {
        let mag = magnitude(&self.stft(&clip.samples)?);
        let mel = self.mel_project(mag.view());
        let approx = self.mel_invert(mel.view());
        let out = self.griffin_lim(approx.view(), clip.len(), seed)?;
        let mut samples = out.samples;
        let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if peak > 1.0 {
            samples.iter_mut().for_each(|s| *s /= peak);
        }
        Ok((
            AudioClip {
                samples,
                sample_rate: clip.sample_rate,
                label: clip.label.reconstructed(),
                source_id: clip.source_id.clone(),
            },
            out.convergence,
        ))
    }
}

/// Relative Frobenius error `||a - b|| / ||b||`.
pub fn relative_error(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let num: f64 = Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + (x - y) * (x - y));
    let den: f64 = b.iter().map(|v| v * v).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SampleLabel;

    fn sine(freq: f64, len: usize, sr: u32) -> Vec<f64> {
        (0..len)
            .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / sr as f64).sin())
            .collect()
    }

    fn harmonic(len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| {
                let t = i as f64 / 16000.0;
                let f0 = 140.0 * (1.0 + 0.02 * (2.0 * PI * 5.0 * t).sin());
                (1..12)
                    .map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64)
                    .sum::<f64>()
                    * 0.2
                    * (0.6 + 0.4 * (2.0 * PI * 3.0 * t).sin())
            })
            .collect()
    }

    fn peak_bin(x: &[f64]) -> usize {
        let mut planner = rustfft::FftPlanner::new();
        let fft = planner.plan_fft_forward(x.len());
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.process(&mut buf);
        (0..x.len() / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap()
    }

    #[test]
    fn convergence_is_non_increasing() {
        let r = Reconstructor::new(&SpectrogramConfig::default(), 16000).unwrap();
        let x = harmonic(16000);
        let clip = AudioClip::new(x, 16000, SampleLabel::BonaFide, "h");
        let (_, trace) = r.reconstruct_with_trace(&clip, 3).unwrap();
        assert_eq!(trace.len(), 32);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn sine_keeps_its_frequency() {
        let r = Reconstructor::new(&SpectrogramConfig::default(), 16000).unwrap();
        let x = sine(440.0, 16000, 16000);
        let mag = magnitude(&r.stft(&x).unwrap());
        let out = r.griffin_lim(mag.view(), x.len(), 1).unwrap();
        // 1 s at 16 kHz: bin k is k Hz
        let k = peak_bin(&out.samples);
        assert!((k as i64 - 440).abs() <= 1, "peak at {k}");
    }

    #[test]
    fn harmonic_signal_magnitude_correlates() {
        let r = Reconstructor::new(&SpectrogramConfig::default(), 16000).unwrap();
        let x = harmonic(16000);
        let mag = magnitude(&r.stft(&x).unwrap());
        let out = r.griffin_lim(mag.view(), x.len(), 9).unwrap();
        let mag2 = magnitude(&r.stft(&out.samples).unwrap());
        let (a, b): (Vec<f64>, Vec<f64>) = mag.iter().zip(mag2.iter()).map(|(a, b)| (*a, *b)).unzip();
        let corr = pearson(&a, &b);
        assert!(corr > 0.9, "correlation {corr}");
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn reconstruction_is_a_hard_sample() {
        let r = Reconstructor::new(&SpectrogramConfig::default(), 16000).unwrap();
        let clip = AudioClip::new(harmonic(16000), 16000, SampleLabel::BonaFide, "h");
        let out = r.reconstruct_clip(&clip, 5).unwrap();
        assert_eq!(out.label, SampleLabel::RecBonaFide);
        assert_eq!(out.len(), clip.len());
        assert_eq!(out.sample_rate, clip.sample_rate);
        let wave_dist: f64 = clip.samples.iter().zip(&out.samples).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(wave_dist > 0.0);
        let mel_a = r.mel_spectrogram(&clip.samples).unwrap();
        let mel_b = r.mel_spectrogram(&out.samples).unwrap();
        let err = relative_error(mel_b.view(), mel_a.view());
        assert!(err < 0.2, "mel error {err}");
        let ratio = out.rms() / clip.rms();
        assert!((0.25..=4.0).contains(&ratio));

        let again = r.reconstruct_clip(&clip, 5).unwrap();
        assert_eq!(again.samples, out.samples);
        let spoof = AudioClip { label: SampleLabel::Spoof, ..clip };
        assert_eq!(r.reconstruct_clip(&spoof, 5).unwrap().label, SampleLabel::RecSpoof);
    }
}
