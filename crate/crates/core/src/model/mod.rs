//! Trainable classifier head, optimizer, checkpoints and the training loop.
//!
//! The head pools the aggregated `T x D` feature over time with learned
//! per-dimension attention, then runs two affine+tanh blocks `D -> H -> E`
//! and a final affine map to two logits. The `E`-dimensional activation is
//! the embedding the contrastive and variance terms act on.

mod checkpoint;
mod optim;
mod train;

pub use checkpoint::{average_checkpoints, averaging_window, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{lr_at, Adam, OptimizerConfig};
pub use train::{
    batch_gradients, evaluate_batch, stratified_order, train, BatchResult, EpochLog, LossSummary, TrainOutcome,
    TrainingConfig,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{RaclError, Result};
use crate::features::{aggregate, init_kernel, Aggregation, Extractor, FeatureStack};
use crate::losses::spoof_probability;
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub hidden: usize,
    pub embedding: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            embedding: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `D x D` attention scores: `s = x A`, softmax over time per column.
    pub attention: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

/// Everything that trains: the aggregation kernel and the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub kernel: Array1<f64>,
    pub head: HeadParams,
}

fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

impl Params {
    pub fn init(dim: usize, head: &HeadConfig, kernel_size: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[stream::HEAD_INIT]);
        let att_bound = 0.1 / (dim as f64).sqrt();
        Self {
            kernel: Array1::from(init_kernel(kernel_size, seed)),
            head: HeadParams {
                attention: Array2::from_shape_simple_fn((dim, dim), || rng.gen_range(-att_bound..=att_bound)),
                w1: xavier(&mut rng, dim, head.hidden),
                b1: Array1::zeros(head.hidden),
                w2: xavier(&mut rng, head.hidden, head.embedding),
                b2: Array1::zeros(head.embedding),
                w3: xavier(&mut rng, head.embedding, 2),
                b3: Array1::zeros(2),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, s| s.fill(0.0));
        z
    }

    pub fn dim(&self) -> usize {
        self.head.attention.nrows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.head.w2.ncols()
    }

    /// Names and shapes in serialization order.
    pub fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let h = &self.head;
        vec![
            ("kernel", self.kernel.shape().to_vec()),
            ("attention", h.attention.shape().to_vec()),
            ("w1", h.w1.shape().to_vec()),
            ("b1", h.b1.shape().to_vec()),
            ("w2", h.w2.shape().to_vec()),
            ("b2", h.b2.shape().to_vec()),
            ("w3", h.w3.shape().to_vec()),
            ("b3", h.b3.shape().to_vec()),
        ]
    }

    pub fn for_each(&self, mut f: impl FnMut(&'static str, &[f64])) {
        let h = &self.head;
        f("kernel", self.kernel.as_slice().expect("contiguous"));
        f("attention", h.attention.as_slice().expect("contiguous"));
        f("w1", h.w1.as_slice().expect("contiguous"));
        f("b1", h.b1.as_slice().expect("contiguous"));
        f("w2", h.w2.as_slice().expect("contiguous"));
        f("b2", h.b2.as_slice().expect("contiguous"));
        f("w3", h.w3.as_slice().expect("contiguous"));
        f("b3", h.b3.as_slice().expect("contiguous"));
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&'static str, &mut [f64])) {
        let h = &mut self.head;
        f("kernel", self.kernel.as_slice_mut().expect("contiguous"));
        f("attention", h.attention.as_slice_mut().expect("contiguous"));
        f("w1", h.w1.as_slice_mut().expect("contiguous"));
        f("b1", h.b1.as_slice_mut().expect("contiguous"));
        f("w2", h.w2.as_slice_mut().expect("contiguous"));
        f("b2", h.b2.as_slice_mut().expect("contiguous"));
        f("w3", h.w3.as_slice_mut().expect("contiguous"));
        f("b3", h.b3.as_slice_mut().expect("contiguous"));
    }

    pub fn len(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, s| n += s.len());
        n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each(|_, s| out.extend_from_slice(s));
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(RaclError::Shape(format!(
                "flat parameter vector has {} values, expected {}",
                flat.len(),
                self.len()
            )));
        }
        let mut offset = 0;
        self.for_each_mut(|_, s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        Ok(())
    }

    /// `self += other`, elementwise in fixed order.
    pub fn add_assign(&mut self, other: &Params) {
        let flat = other.flatten();
        let mut offset = 0;
        self.for_each_mut(|_, s| {
            for (a, b) in s.iter_mut().zip(&flat[offset..]) {
                *a += b;
            }
            offset += s.len();
        });
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Activations kept from [`forward`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct Tape {
    input: Array2<f64>,
    alpha: Array2<f64>,
    pooled: Array1<f64>,
    hidden: Array1<f64>,
    embedding: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub logits: [f64; 2],
    pub embedding: Array1<f64>,
    pub tape: Tape,
}

/// Column-wise softmax over rows (time).
pub fn softmax_over_time(scores: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = scores.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let m = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        col.mapv_inplace(|v| (v - m).exp());
        let s = col.sum();
        col.mapv_inplace(|v| v / s);
    }
    out
}

pub fn forward(agg: ArrayView2<'_, f64>, head: &HeadParams) -> Result<HeadOutput> {
    if agg.ncols() != head.attention.nrows() || agg.nrows() == 0 {
        return Err(RaclError::Shape(format!(
            "head expects T x {} input, got {:?}",
            head.attention.nrows(),
            agg.dim()
        )));
    }
    if agg.iter().any(|v| !v.is_finite()) {
        return Err(RaclError::Numeric("non-finite head input".into()));
    }
    let alpha = softmax_over_time(agg.dot(&head.attention).view());
    let pooled = (&alpha * &agg).sum_axis(Axis(0));
    let hidden = (pooled.dot(&head.w1) + &head.b1).mapv(f64::tanh);
    let embedding = (hidden.dot(&head.w2) + &head.b2).mapv(f64::tanh);
    let l = embedding.dot(&head.w3) + &head.b3;
    Ok(HeadOutput {
        logits: [l[0], l[1]],
        embedding: embedding.clone(),
        tape: Tape {
            input: agg.to_owned(),
            alpha,
            pooled,
            hidden,
            embedding,
        },
    })
}

/// Reverse pass: parameter gradients and `dL/d agg`. The embedding gradient
/// is injected at the tap and adds to what flows back from the logits.
pub fn backward(
    tape: &Tape,
    head: &HeadParams,
    grad_logits: [f64; 2],
    grad_embedding: ArrayView1<'_, f64>,
) -> Result<(HeadParams, Array2<f64>)> {
    if grad_embedding.len() != tape.embedding.len() {
        return Err(RaclError::Shape(format!(
            "embedding gradient has {} values, tape has {}",
            grad_embedding.len(),
            tape.embedding.len()
        )));
    }
    let gl = Array1::from(grad_logits.to_vec());
    let outer = |a: &Array1<f64>, b: &Array1<f64>| {
        Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
    };

    let g_w3 = outer(&tape.embedding, &gl);
    let g_emb = &grad_embedding + &head.w3.dot(&gl);
    let g_u2 = &g_emb * &tape.embedding.mapv(|e| 1.0 - e * e);
    let g_w2 = outer(&tape.hidden, &g_u2);
    let g_hidden = head.w2.dot(&g_u2);
    let g_u1 = &g_hidden * &tape.hidden.mapv(|h| 1.0 - h * h);
    let g_w1 = outer(&tape.pooled, &g_u1);
    let g_pooled = head.w1.dot(&g_u1);

    // pooled_j = sum_t alpha_tj x_tj, alpha = softmax_t(x A)
    let x = &tape.input;
    let g_scores = &tape.alpha * &(x - &tape.pooled) * &g_pooled;
    let g_attention = x.t().dot(&g_scores).as_standard_layout().into_owned();
    let g_input = &tape.alpha * &g_pooled + g_scores.dot(&head.attention.t());

    Ok((
        HeadParams {
            attention: g_attention,
            w1: g_w1,
            b1: g_u1,
            w2: g_w2,
            b2: g_u2,
            w3: g_w3,
            b3: gl,
        },
        g_input,
    ))
}

/// Spoof probability and embedding for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub score: f64,
    pub logits: [f64; 2],
    pub embedding: Array1<f64>,
    pub layer_weights: Vec<f64>,
}

/// Frozen extractor plus trained parameters.
#[derive(Debug, Clone)]
pub struct Detector {
    pub extractor: Extractor,
    pub params: Params,
}

impl Detector {
    pub fn new(extractor: Extractor, params: Params) -> Result<Self> {
        if params.dim() != extractor.config().dim {
            return Err(RaclError::Shape(format!(
                "parameters expect D = {}, extractor produces D = {}",
                params.dim(),
                extractor.config().dim
            )));
        }
        if params.kernel.len() > extractor.config().layers {
            return Err(RaclError::Shape("aggregation kernel longer than the layer count".into()));
        }
        Ok(Self { extractor, params })
    }

    pub fn forward_stack(&self, stack: &FeatureStack) -> Result<(Aggregation, HeadOutput)> {
        let agg = aggregate(stack, self.params.kernel.as_slice().expect("contiguous"))?;
        let out = forward(agg.agg.view(), &self.params.head)?;
        Ok((agg, out))
    }

    /// Scores a clip that is already at the working rate and length.
    pub fn score(&self, clip: &AudioClip) -> Result<Scored> {
        let stack = self.extractor.extract(clip)?;
        let (agg, out) = self.forward_stack(&stack)?;
        Ok(Scored {
            score: spoof_probability(out.logits),
            logits: out.logits,
            embedding: out.embedding,
            layer_weights: agg.weights,
        })
    }
}
