use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{average_checkpoints, averaging_window, backward, forward, lr_at, Adam, Checkpoint, HeadOutput, Params};
use crate::audio::{AudioClip, SampleLabel};
use crate::augment::{augment, AugmentPools};
use crate::config::RunConfig;
use crate::error::{RaclError, Result};
use crate::features::{aggregate, aggregate_backward, Aggregation, Extractor, FeatureStack};
use crate::losses::{component_loss, racl_total, Component, LossBreakdown, RaclWeights};
use crate::rng::{derive_seed, rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Best checkpoint plus this many minus one predecessors are averaged.
    pub average_window: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            average_window: 5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 || self.average_window == 0 {
            return Err(RaclError::Config(
                "training needs epochs >= 1, batch_size >= 2 and average_window >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Mean loss components over a set of batches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub cls: f64,
    pub std: f64,
    pub enh: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossSummary {
    pub fn mean(items: &[LossBreakdown]) -> LossSummary {
        let n = items.len().max(1) as f64;
        let mut s = LossSummary::default();
        for b in items {
            s.cls += b.cls;
            s.std += b.std;
            s.enh += b.enh;
            s.reg += b.reg();
            s.total += b.total;
        }
        LossSummary {
            cls: s.cls / n,
            std: s.std / n,
            enh: s.enh / n,
            reg: s.reg / n,
            total: s.total / n,
        }
    }

    fn values(&self) -> [f64; 5] {
        [self.cls, self.std, self.enh, self.reg, self.total]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossSummary,
    pub dev: LossSummary,
}

impl EpochLog {
    pub const TSV_HEADER: &'static str = "epoch\tlr\ttrain_cls\ttrain_std\ttrain_enh\ttrain_reg\ttrain_total\t\
                                          dev_cls\tdev_std\tdev_enh\tdev_reg\tdev_total";

    pub fn tsv_row(&self) -> String {
        let mut row = format!("{}\t{:e}", self.epoch, self.lr);
        for v in self.train.values().iter().chain(self.dev.values().iter()) {
            row.push_str(&format!("\t{v:.17e}"));
        }
        row
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Averaged parameters, tagged with the best epoch and their own dev loss.
    pub final_checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub averaged_epochs: Vec<usize>,
    pub log: Vec<EpochLog>,
    pub averaged_dev: LossSummary,
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    /// Value of the requested component.
    pub value: f64,
    pub breakdown: LossBreakdown,
    pub grads: Params,
}

/// Batches in which every provenance class is spread evenly. Each class is
/// shuffled (when `shuffle_seed` is given), then classes are merged by
/// relative position so every batch sees the corpus class mix.
pub fn stratified_order(labels: &[SampleLabel], batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut merged: Vec<(f64, usize, usize)> = Vec::with_capacity(labels.len());
    for (g, class) in SampleLabel::ALL.iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == *class).collect();
        if let Some(seed) = shuffle_seed {
            members.shuffle(&mut rng_for(seed, &[g as u64]));
        }
        let n = members.len() as f64;
        merged.extend(members.into_iter().enumerate().map(|(k, i)| ((k as f64 + 0.5) / n, g, i)));
    }
    merged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = merged.into_iter().map(|(_, _, i)| i).collect();
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}

fn forward_all(params: &Params, stacks: &[FeatureStack]) -> Result<Vec<(Aggregation, HeadOutput)>> {
    let kernel = params.kernel.as_slice().expect("contiguous");
    stacks
        .par_iter()
        .map(|s| {
            let agg = aggregate(s, kernel)?;
            let out = forward(agg.agg.view(), &params.head)?;
            Ok((agg, out))
        })
        .collect()
}

fn gather(outs: &[(Aggregation, HeadOutput)]) -> (Array2<f64>, Array2<f64>) {
    let e = outs[0].1.embedding.len();
    let mut emb = Array2::zeros((outs.len(), e));
    let mut logits = Array2::zeros((outs.len(), 2));
    for (i, (_, o)) in outs.iter().enumerate() {
        emb.row_mut(i).assign(&o.embedding);
        logits[[i, 0]] = o.logits[0];
        logits[[i, 1]] = o.logits[1];
    }
    (emb, logits)
}

/// Loss breakdown of a batch without gradients.
pub fn evaluate_batch(
    params: &Params,
    stacks: &[FeatureStack],
    labels: &[SampleLabel],
    w: &RaclWeights,
) -> Result<LossBreakdown> {
    if stacks.is_empty() || stacks.len() != labels.len() {
        return Err(RaclError::Shape(format!("{} stacks for {} labels", stacks.len(), labels.len())));
    }
    let outs = forward_all(params, stacks)?;
    let (emb, logits) = gather(&outs);
    racl_total(emb.view(), logits.view(), labels, w)
}

/// Value of one loss component and its gradient with respect to every
/// trainable parameter. Per-sample work runs in parallel; the gradient sum
/// is taken serially in sample order.
pub fn batch_gradients(
    params: &Params,
    stacks: &[FeatureStack],
    labels: &[SampleLabel],
    w: &RaclWeights,
    component: Component,
) -> Result<BatchResult> {
    if stacks.is_empty() || stacks.len() != labels.len() {
        return Err(RaclError::Shape(format!("{} stacks for {} labels", stacks.len(), labels.len())));
    }
    let outs = forward_all(params, stacks)?;
    let (emb, logits) = gather(&outs);
    let breakdown = racl_total(emb.view(), logits.view(), labels, w)?;
    let (value, g_emb, g_logits) = if component == Component::Total {
        (breakdown.total, breakdown.grad_embeddings.clone(), breakdown.grad_logits.clone())
    } else {
        component_loss(component, emb.view(), logits.view(), labels, w)?
    };
    let kernel = params.kernel.as_slice().expect("contiguous");
    let per_sample: Vec<Params> = (0..stacks.len())
        .into_par_iter()
        .map(|i| {
            let (agg, out) = &outs[i];
            let gl = [g_logits[[i, 0]], g_logits[[i, 1]]];
            let (head, g_input) = backward(&out.tape, &params.head, gl, g_emb.row(i))?;
            let g_agg = aggregate_backward(&stacks[i], agg, kernel, g_input.view(), false)?;
            Ok(Params {
                kernel: g_agg.kernel.into(),
                head,
            })
        })
        .collect::<Result<_>>()?;
    let mut grads = params.zeros_like();
    for g in &per_sample {
        grads.add_assign(g);
    }
    Ok(BatchResult {
        value,
        breakdown,
        grads,
    })
}

fn extract_all(extractor: &Extractor, clips: &[&AudioClip]) -> Result<Vec<FeatureStack>> {
    clips.par_iter().map(|c| extractor.extract(c)).collect()
}

/// Batched mean loss over a fixed, unshuffled evaluation set.
fn evaluate_set(
    params: &Params,
    stacks: &[FeatureStack],
    labels: &[SampleLabel],
    batches: &[Vec<usize>],
    w: &RaclWeights,
) -> Result<LossSummary> {
    let mut parts = Vec::with_capacity(batches.len());
    for batch in batches {
        let s: Vec<FeatureStack> = batch.iter().map(|&i| stacks[i].clone()).collect();
        let l: Vec<SampleLabel> = batch.iter().map(|&i| labels[i]).collect();
        parts.push(evaluate_batch(params, &s, &l, w)?);
    }
    Ok(LossSummary::mean(&parts))
}

/// Full training run over prepared clips (working rate, fixed length).
///
/// `on_epoch` sees every epoch's log entry and checkpoint as soon as they
/// exist, which is where callers persist them.
pub fn train(
    cfg: &RunConfig,
    train_clips: &[AudioClip],
    dev_clips: &[AudioClip],
    pools: &AugmentPools,
    mut on_epoch: impl FnMut(&EpochLog, &Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_clips.len() < 2 {
        return Err(RaclError::EmptyInput);
    }
    if dev_clips.is_empty() {
        return Err(RaclError::Config("the dev set is empty; checkpoint selection needs it".into()));
    }
    let extractor = Extractor::new(&cfg.features, cfg.audio.sample_rate)?;
    let tc = &cfg.training;
    let w = &cfg.losses;
    let hash = cfg.hash();
    let mut params = Params::init(
        cfg.features.dim,
        &cfg.head,
        cfg.features.kernel_size(),
        cfg.seed,
    );
    let mut adam = Adam::new(&cfg.optimizer, params.len());

    let train_labels: Vec<SampleLabel> = train_clips.iter().map(|c| c.label).collect();
    let dev_labels: Vec<SampleLabel> = dev_clips.iter().map(|c| c.label).collect();
    let dev_refs: Vec<&AudioClip> = dev_clips.iter().collect();
    let dev_stacks = extract_all(&extractor, &dev_refs)?;
    let dev_batches = stratified_order(&dev_labels, tc.batch_size, None);

    let mut log = Vec::with_capacity(tc.epochs);
    let mut checkpoints: Vec<Checkpoint> = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        let lr = lr_at(&cfg.optimizer, epoch);
        let batches = stratified_order(
            &train_labels,
            tc.batch_size,
            Some(derive_seed(cfg.seed, &[stream::SHUFFLE, epoch as u64])),
        );
        let mut parts = Vec::with_capacity(batches.len());
        for batch in &batches {
            let clips: Vec<AudioClip> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = rng_for(cfg.seed, &[stream::AUGMENT, epoch as u64, i as u64]);
                    augment(&train_clips[i], &cfg.augment, pools, &mut rng)
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&AudioClip> = clips.iter().collect();
            let stacks = extract_all(&extractor, &refs)?;
            let labels: Vec<SampleLabel> = batch.iter().map(|&i| train_labels[i]).collect();
            let res = batch_gradients(&params, &stacks, &labels, w, Component::Total).map_err(|e| {
                RaclError::Numeric(format!("epoch {epoch}: {e}"))
            })?;
            let mut flat = params.flatten();
            adam.step(&mut flat, &res.grads.flatten(), lr)?;
            params.assign_flat(&flat)?;
            if !params.is_finite() {
                return Err(RaclError::Numeric(format!(
                    "epoch {epoch}: parameters became non-finite (batch loss {})",
                    res.breakdown.total
                )));
            }
            parts.push(res.breakdown);
        }
        let train_summary = LossSummary::mean(&parts);
        let dev_summary = evaluate_set(&params, &dev_stacks, &dev_labels, &dev_batches, w)?;
        let entry = EpochLog {
            epoch,
            lr,
            train: train_summary,
            dev: dev_summary,
        };
        log::info!(
            "epoch {epoch}: lr {lr:e} train {:.5} dev {:.5}",
            train_summary.total,
            dev_summary.total
        );
        let ckpt = Checkpoint {
            epoch: epoch as u32,
            val_loss: dev_summary.total,
            config_hash: hash,
            params: params.clone(),
        };
        on_epoch(&entry, &ckpt)?;
        log.push(entry);
        checkpoints.push(ckpt);
    }

    let best_epoch = checkpoints
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.val_loss.total_cmp(&b.1.val_loss).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("at least one epoch");
    let window = averaging_window(best_epoch, tc.average_window);
    let averaged_epochs: Vec<usize> = window.clone().collect();
    let chosen: Vec<&Checkpoint> = checkpoints[window].iter().collect();
    let averaged = average_checkpoints(&chosen)?;
    let averaged_dev = evaluate_set(&averaged, &dev_stacks, &dev_labels, &dev_batches, w)?;
    Ok(TrainOutcome {
        final_checkpoint: Checkpoint {
            epoch: best_epoch as u32,
            val_loss: averaged_dev.total,
            config_hash: hash,
            params: averaged,
        },
        best_epoch,
        averaged_epochs,
        log,
        averaged_dev,
    })
}
