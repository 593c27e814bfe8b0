//! Frozen multi-layer feature extraction and adaptive layer aggregation.
//!
//! The extractor turns a clip into `L` layer outputs of shape `T x D`. Each
//! layer is summarized by global average pooling into a descriptor `z_l`; a
//! zero-padded 1-D convolution over the descriptor vector followed by a
//! sigmoid gives per-layer weights, and the aggregated feature is the
//! weighted sum of the layers.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp::{MelFilterbank, SpectrogramConfig, StftEngine};
use crate::error::{RaclError, Result};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Number of frozen layers `L`.
    pub layers: usize,
    /// Layer width `D`.
    pub dim: usize,
    pub extractor_seed: u64,
    pub fft_size: usize,
    pub hop: usize,
    pub mel_bins: usize,
    /// Aggregation kernel size; `None` picks it from `layers`.
    pub kernel_size: Option<usize>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            layers: 12,
            dim: 64,
            extractor_seed: 688,
            fft_size: 1024,
            hop: 256,
            mel_bins: 80,
            kernel_size: None,
        }
    }
}

impl FeatureConfig {
    pub fn kernel_size(&self) -> usize {
        self.kernel_size.unwrap_or_else(|| adaptive_kernel_size(self.layers))
    }

    pub fn frames(&self, len: usize) -> usize {
        if len < self.fft_size {
            0
        } else {
            (len - self.fft_size) / self.hop + 1
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.layers == 0 || self.dim == 0 {
            return Err(RaclError::Config("features.layers and features.dim must be positive".into()));
        }
        let k = self.kernel_size();
        if k % 2 == 0 || k == 0 || k > self.layers {
            return Err(RaclError::Config(format!(
                "features.kernel_size must be odd and in 1..={}, got {k}",
                self.layers
            )));
        }
        self.spectrogram(sample_rate).validate(sample_rate)
    }

    fn spectrogram(&self, sample_rate: u32) -> SpectrogramConfig {
        SpectrogramConfig {
            fft_size: self.fft_size,
            hop: self.hop,
            mel_bins: self.mel_bins,
            fmin: 0.0,
            fmax: sample_rate as f64 / 2.0,
            griffin_lim_iters: 0,
        }
    }
}

/// `L` layer outputs sharing one `T x D` shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    layers: Vec<Array2<f64>>,
}

impl FeatureStack {
    pub fn new(layers: Vec<Array2<f64>>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(RaclError::Shape("feature stack needs at least one layer".into()));
        };
        let dim = first.dim();
        if let Some(bad) = layers.iter().position(|l| l.dim() != dim) {
            return Err(RaclError::Shape(format!(
                "layer {bad} has shape {:?}, expected {dim:?}",
                layers[bad].dim()
            )));
        }
        if layers.iter().any(|l| l.iter().any(|v| !v.is_finite())) {
            return Err(RaclError::Numeric("non-finite value in feature stack".into()));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Array2<f64>] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `(T, D)`.
    pub fn frame_shape(&self) -> (usize, usize) {
        self.layers[0].dim()
    }
}

const LOG_FLOOR: f64 = 1e-5;
const LOG_SHIFT: f64 = 4.0;
const LOG_SCALE: f64 = 0.25;
const LAYER_GAIN: f64 = 1.2;
const BIAS_STD: f64 = 0.05;

/// Seeded frozen stand-in for a pretrained speech encoder: log-mel frames,
/// a linear projection to `D`, then `L` affine+tanh layers.
#[derive(Debug, Clone)]
pub struct Extractor {
    cfg: FeatureConfig,
    engine: StftEngine,
    filterbank: MelFilterbank,
    projection: Array2<f64>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl Extractor {
    pub fn new(cfg: &FeatureConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        let mut rng = rng_for(cfg.extractor_seed, &[stream::EXTRACTOR]);
        let mut gaussian = |rows: usize, cols: usize, std: f64| {
            let n = Normal::new(0.0, std).expect("positive std");
            Array2::from_shape_simple_fn((rows, cols), || n.sample(&mut rng))
        };
        let projection = gaussian(cfg.mel_bins, cfg.dim, 1.0 / (cfg.mel_bins as f64).sqrt());
        let mut weights = Vec::with_capacity(cfg.layers);
        let mut biases = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            weights.push(gaussian(cfg.dim, cfg.dim, LAYER_GAIN / (cfg.dim as f64).sqrt()));
            biases.push(gaussian(1, cfg.dim, BIAS_STD).remove_axis(Axis(0)));
        }
        let spec = cfg.spectrogram(sample_rate);
        Ok(Self {
            cfg: cfg.clone(),
            engine: StftEngine::from_config(&spec),
            filterbank: MelFilterbank::new(&spec, sample_rate)?,
            projection,
            weights,
            biases,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Normalized log-mel frames, `T x mel_bins`.
    pub fn log_mel(&self, samples: &[f64]) -> Result<Array2<f64>> {
        if samples.len() < self.cfg.fft_size {
            return Err(RaclError::Shape(format!(
                "clip of {} samples is shorter than one analysis frame ({})",
                samples.len(),
                self.cfg.fft_size
            )));
        }
        let mag = self.engine.frames(samples).mapv(|c| c.norm());
        Ok(self
            .filterbank
            .project(mag.view())
            .mapv(|m| ((m + LOG_FLOOR).ln() + LOG_SHIFT) * LOG_SCALE))
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureStack> {
        if clip.samples.iter().any(|s| !s.is_finite()) {
            return Err(RaclError::Numeric(format!("{}: non-finite sample", clip.source_id)));
        }
        let mut x = self.log_mel(&clip.samples)?.dot(&self.projection);
        let mut layers = Vec::with_capacity(self.cfg.layers);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            x = (x.dot(w) + b).mapv(f64::tanh);
            layers.push(x.clone());
        }
        FeatureStack::new(layers)
    }
}

/// Global average pooling of every layer.
pub fn gap(stack: &FeatureStack) -> Vec<f64> {
    stack.layers.iter().map(|l| l.mean().unwrap_or(0.0)).collect()
}

/// Kernel size from the layer count: the odd integer nearest to
/// `|log2(L) / 2 + 1/2|`, at least 3, capped at the largest odd value <= L.
pub fn adaptive_kernel_size(layers: usize) -> usize {
    assert!(layers >= 1, "layer count must be positive");
    let t = ((layers as f64).log2() / 2.0 + 0.5).abs();
    let nearest_odd = (2.0 * ((t - 1.0) / 2.0).round() + 1.0).max(1.0) as usize;
    let cap = if layers % 2 == 1 { layers } else { layers - 1 };
    nearest_odd.max(3).min(cap)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniform initialization in `[-1/sqrt(k), 1/sqrt(k)]`.
pub fn init_kernel(k: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, &[stream::KERNEL_INIT]);
    let bound = 1.0 / (k as f64).sqrt();
    (0..k).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Same-length cross-correlation with zero padding of `(k - 1) / 2`.
pub fn conv1d_same(z: &[f64], kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() - 1) / 2;
    (0..z.len())
        .map(|l| {
            kernel
                .iter()
                .enumerate()
                .filter_map(|(i, w)| (l + i).checked_sub(r).and_then(|j| z.get(j)).map(|zj| w * zj))
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    /// `T x D` weighted sum of layers.
    pub agg: Array2<f64>,
    /// Per-layer gates in (0, 1).
    pub weights: Vec<f64>,
    pub descriptors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationGrads {
    pub kernel: Vec<f64>,
    /// Only filled when requested; the extractor is frozen during training.
    pub stack: Option<Vec<Array2<f64>>>,
}

fn check_kernel(kernel: &[f64], layers: usize) -> Result<()> {
    if kernel.len() % 2 == 0 || kernel.len() > layers {
        return Err(RaclError::Config(format!(
            "aggregation kernel must have odd length <= {layers}, got {}",
            kernel.len()
        )));
    }
    Ok(())
}

pub fn aggregate(stack: &FeatureStack, kernel: &[f64]) -> Result<Aggregation> {
    check_kernel(kernel, stack.num_layers())?;
    let descriptors = gap(stack);
    let weights: Vec<f64> = conv1d_same(&descriptors, kernel).into_iter().map(sigmoid).collect();
    let mut agg = Array2::zeros(stack.frame_shape());
    for (w, layer) in weights.iter().zip(&stack.layers) {
        agg.scaled_add(*w, layer);
    }
    Ok(Aggregation {
        agg,
        weights,
        descriptors,
    })
}

/// Reverse pass of [`aggregate`] given `dL/d agg`.
pub fn aggregate_backward(
    stack: &FeatureStack,
    forward: &Aggregation,
    kernel: &[f64],
    grad_agg: ArrayView2<'_, f64>,
    want_stack: bool,
) -> Result<AggregationGrads> {
    check_kernel(kernel, stack.num_layers())?;
    if grad_agg.dim() != stack.frame_shape() {
        return Err(RaclError::Shape(format!(
            "gradient shape {:?} does not match frames {:?}",
            grad_agg.dim(),
            stack.frame_shape()
        )));
    }
    let n_layers = stack.num_layers();
    let r = (kernel.len() - 1) / 2;
    let grad_pre: Vec<f64> = stack
        .layers
        .iter()
        .zip(&forward.weights)
        .map(|(layer, &w)| {
            let g_w = Zip::from(layer).and(&grad_agg).fold(0.0, |acc, f, g| acc + f * g);
            g_w * w * (1.0 - w)
        })
        .collect();
    let z = &forward.descriptors;
    let grad_kernel = (0..kernel.len())
        .map(|i| {
            (0..n_layers)
                .filter_map(|l| (l + i).checked_sub(r).and_then(|j| z.get(j)).map(|zj| grad_pre[l] * zj))
                .sum()
        })
        .collect();

    let stack_grad = want_stack.then(|| {
        let (t, d) = stack.frame_shape();
        let count = (t * d) as f64;
        (0..n_layers)
            .map(|j| {
                let g_z: f64 = (0..n_layers)
                    .filter_map(|l| (j + r).checked_sub(l).and_then(|i| kernel.get(i)).map(|k| grad_pre[l] * k))
                    .sum();
                grad_agg.mapv(|g| forward.weights[j] * g + g_z / count)
            })
            .collect()
    });
    Ok(AggregationGrads {
        kernel: grad_kernel,
        stack: stack_grad,
    })
}
