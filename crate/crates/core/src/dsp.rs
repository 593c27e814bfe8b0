//! Short-time Fourier analysis and mel filterbanks.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{RaclError, Result};

/// Analysis parameters for spectrograms and Griffin-Lim resynthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrogramConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub griffin_lim_iters: usize,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            fft_size: 1024,
            hop: 256,
            mel_bins: 80,
            fmin: 0.0,
            fmax: 8000.0,
            griffin_lim_iters: 32,
        }
    }
}

impl SpectrogramConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let err = |m: String| Err(RaclError::Config(m));
        if self.fft_size < 2 || self.fft_size % 2 != 0 {
            return err(format!("fft_size must be even and >= 2, got {}", self.fft_size));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return err(format!("hop must be in 1..=fft_size, got {}", self.hop));
        }
        if self.mel_bins == 0 || self.mel_bins >= self.bins() {
            return err(format!(
                "mel_bins must be in 1..{}, got {}",
                self.bins(),
                self.mel_bins
            ));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= sample_rate as f64 / 2.0) {
            return err(format!(
                "need 0 <= fmin < fmax <= {}, got fmin={} fmax={}",
                sample_rate as f64 / 2.0,
                self.fmin,
                self.fmax
            ));
        }
        Ok(())
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// FFT plans and window for one frame size.
#[derive(Clone)]
pub struct StftEngine {
    pub fft_size: usize,
    pub hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftEngine")
            .field("fft_size", &self.fft_size)
            .field("hop", &self.hop)
            .finish()
    }
}

impl StftEngine {
    pub fn new(fft_size: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fft_size,
            hop,
            window: hann(fft_size),
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        }
    }

    pub fn from_config(cfg: &SpectrogramConfig) -> Self {
        Self::new(cfg.fft_size, cfg.hop)
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of uncentered frames that fit in `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.fft_size {
            0
        } else {
            (len - self.fft_size) / self.hop + 1
        }
    }

    /// Windowed one-sided spectra of uncentered frames of `x`.
    pub fn frames(&self, x: &[f64]) -> Array2<Complex64> {
        let n_frames = self.frame_count(x.len());
        let bins = self.bins();
        let mut out = Array2::zeros((n_frames, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_size];
        for (f, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let start = f * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(x[start + i] * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            for (r, b) in row.iter_mut().zip(&buf[..bins]) {
                *r = *b;
            }
        }
        out
    }

    /// Unnormalized windowed overlap-add of frame spectra together with the
    /// summed squared window at each sample.
    fn overlap_sums(&self, spec: ArrayView2<'_, Complex64>) -> (Vec<f64>, Vec<f64>) {
        let n_frames = spec.nrows();
        if n_frames == 0 {
            return (Vec::new(), Vec::new());
        }
        let n = self.fft_size;
        let len = (n_frames - 1) * self.hop + n;
        let mut y = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (f, row) in spec.axis_iter(Axis(0)).enumerate() {
            for k in 0..=n / 2 {
                buf[k] = row[k];
            }
            for k in 1..n / 2 {
                buf[n - k] = row[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = f * self.hop;
            for i in 0..n {
                let w = self.window[i];
                y[start + i] += w * buf[i].re / n as f64;
                norm[start + i] += w * w;
            }
        }
        (y, norm)
    }

    /// Least-squares signal estimate from (possibly inconsistent) frame
    /// spectra: windowed overlap-add normalized by the summed squared window.
    /// Samples covered by no window energy are set to zero.
    pub fn overlap_add(&self, spec: ArrayView2<'_, Complex64>) -> Vec<f64> {
        let (mut y, norm) = self.overlap_sums(spec);
        for (v, d) in y.iter_mut().zip(&norm) {
            *v = if *d > 1e-10 { *v / d } else { 0.0 };
        }
        y
    }

    /// Reflection padding of `fft_size / 2` on both sides.
    pub fn reflect_pad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.fft_size / 2;
        if x.len() <= pad {
            return Err(RaclError::Shape(format!(
                "signal of {} samples is too short for reflection padding of {}",
                x.len(),
                pad
            )));
        }
        let mut out = Vec::with_capacity(x.len() + 2 * pad);
        out.extend((1..=pad).rev().map(|i| x[i]));
        out.extend_from_slice(x);
        out.extend((0..pad).map(|i| x[x.len() - 2 - i]));
        Ok(out)
    }

    /// Centered STFT: reflection-padded, Hann-windowed, one-sided.
    /// Returns `1 + len / hop` frames.
    pub fn stft(&self, x: &[f64]) -> Result<Array2<Complex64>> {
        if x.len() < self.fft_size {
            return Err(RaclError::Shape(format!(
                "signal of {} samples is shorter than one frame ({})",
                x.len(),
                self.fft_size
            )));
        }
        Ok(self.frames(&self.reflect_pad(x)?))
    }

    /// Least-squares inverse of [`stft`](Self::stft) for a `len` sample
    /// signal. Contributions landing in the reflected margins are folded back
    /// onto the samples they mirror, so for any frame spectra the result is
    /// the signal whose centered STFT is closest to them.
    pub fn istft(&self, spec: ArrayView2<'_, Complex64>, len: usize) -> Vec<f64> {
        let pad = self.fft_size / 2;
        let (y, norm) = self.overlap_sums(spec);
        let mut num = vec![0.0; len];
        let mut den = vec![0.0; len];
        for (p, (v, d)) in y.iter().zip(&norm).enumerate() {
            let src = if p < pad {
                Some(pad - p)
            } else if p < pad + len {
                Some(p - pad)
            } else {
                (2 * len + pad - 2).checked_sub(p)
            };
            if let Some(j) = src.filter(|&j| j < len) {
                num[j] += v;
                den[j] += d;
            }
        }
        num.iter().zip(&den).map(|(v, d)| if *d > 1e-10 { v / d } else { 0.0 }).collect()
    }
}

pub fn magnitude(spec: &Array2<Complex64>) -> Array2<f64> {
    spec.mapv(|c| c.norm())
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank with its Moore-Penrose pseudo-inverse.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `mel_bins x fft_bins`.
    pub weights: Array2<f64>,
    /// Nonzero column range of each filter.
    support: Vec<(usize, usize)>,
    /// `fft_bins x mel_bins`, computed on first use.
    pinv: std::sync::OnceLock<Array2<f64>>,
}

impl MelFilterbank {
    pub fn new(cfg: &SpectrogramConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        let bins = cfg.bins();
        let lo = hz_to_mel(cfg.fmin);
        let hi = hz_to_mel(cfg.fmax);
        let edges: Vec<f64> = (0..cfg.mel_bins + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.mel_bins + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / cfg.fft_size as f64;
        let mut weights = Array2::zeros((cfg.mel_bins, bins));
        let mut support = Vec::with_capacity(cfg.mel_bins);
        for m in 0..cfg.mel_bins {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut first = usize::MAX;
            let mut last = 0;
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0);
                if w > 0.0 {
                    weights[[m, k]] = w;
                    first = first.min(k);
                    last = k + 1;
                }
            }
            if first == usize::MAX {
                return Err(RaclError::Config(format!(
                    "mel filter {m} covers no FFT bin; reduce mel_bins or increase fft_size"
                )));
            }
            support.push((first, last));
        }
        Ok(Self {
            weights,
            support,
            pinv: std::sync::OnceLock::new(),
        })
    }

    pub fn mel_bins(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fft_bins(&self) -> usize {
        self.weights.ncols()
    }

    pub fn support(&self, filter: usize) -> (usize, usize) {
        self.support[filter]
    }

    /// `frames x fft_bins` magnitudes to `frames x mel_bins`.
    pub fn project(&self, mag: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((mag.nrows(), self.mel_bins()));
        for (row_in, mut row_out) in mag.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            for (m, o) in row_out.iter_mut().enumerate() {
                let (a, b) = self.support[m];
                let w = self.weights.row(m);
                *o = (a..b).map(|k| w[k] * row_in[k]).sum();
            }
        }
        out
    }

    pub fn pseudo_inverse(&self) -> &Array2<f64> {
        self.pinv.get_or_init(|| {
            let (rows, cols) = self.weights.dim();
            let m = nalgebra::DMatrix::from_fn(rows, cols, |i, j| self.weights[[i, j]]);
            let svd = m.svd(true, true);
            let tol = svd.singular_values.max() * 1e-12 * cols as f64;
            let p = svd
                .pseudo_inverse(tol)
                .expect("SVD computed with both factors");
            Array2::from_shape_fn((cols, rows), |(i, j)| p[(i, j)])
        })
    }

    /// `frames x mel_bins` to `frames x fft_bins` through the pseudo-inverse,
    /// negatives clamped to zero.
    pub fn invert(&self, mel: ArrayView2<'_, f64>) -> Array2<f64> {
        mel.dot(&self.pseudo_inverse().t()).mapv(|v| v.max(0.0))
    }
}
