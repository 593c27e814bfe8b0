//! Self-verification suite behind `racl verify`.
//!
//! Every check is cheap enough to run on a laptop in well under a minute and
//! reports a single pass/fail line.

use std::time::Instant;

use ndarray::{array, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::audio::{fix_length, AudioClip, SampleLabel};
use crate::augment::mix_at_snr;
use crate::error::Result;
use crate::eval::{eer, eer_oracle};
use crate::features::FeatureStack;
use crate::losses::{contrastive, racl_total, variance_reg, weighted_ce, Component, Pair, RaclWeights};
use crate::model::{batch_gradients, evaluate_batch, lr_at, Checkpoint, HeadConfig, OptimizerConfig, Params};
use crate::reconstruct::{relative_error, Reconstructor};
use crate::rng::rng_for;
use crate::synth::{synthesize, CorpusSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Corrupts one analytic gradient entry so the gradient check must fail.
    pub inject_gradient_fault: bool,
}

/// Relative error with an absolute floor for near-zero gradients.
pub const GRAD_REL_FLOOR: f64 = 1e-6;
pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_REL_FLOOR)
}

/// A random problem small enough for exhaustive finite differences.
pub struct GradProblem {
    pub params: Params,
    pub stacks: Vec<FeatureStack>,
    pub labels: Vec<SampleLabel>,
}

pub fn grad_problem(seed: u64) -> GradProblem {
    let (layers, t, d) = (5, 4, 6);
    let mut rng = rng_for(seed, &[0x6772_6164]);
    let mut params = Params::init(d, &HeadConfig { hidden: 5, embedding: 4 }, 3, seed);
    params.for_each_mut(|name, s| {
        if name.starts_with('b') || name == "attention" {
            s.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    });
    let mut labels: Vec<SampleLabel> = SampleLabel::ALL.iter().flat_map(|&l| [l, l]).collect();
    labels.shuffle(&mut rng);
    let stacks = labels
        .iter()
        .map(|_| {
            let layers = (0..layers)
                .map(|_| Array2::from_shape_simple_fn((t, d), || rng.gen_range(-1.0..1.0)))
                .collect();
            FeatureStack::new(layers).expect("consistent shapes")
        })
        .collect();
    GradProblem { params, stacks, labels }
}

fn component_value(c: Component, b: &crate::losses::LossBreakdown) -> f64 {
    match c {
        Component::Cls => b.cls,
        Component::Std => b.std,
        Component::Enh => b.enh,
        Component::Reg => b.reg(),
        Component::Total => b.total,
    }
}

/// Worst relative error of backprop against central differences, per
/// component, over every trainable parameter of the problem.
pub fn gradient_errors(p: &GradProblem, w: &RaclWeights, fault: bool) -> Result<[(Component, f64); 5]> {
    let base = p.params.flatten();
    let mut analytic = Vec::with_capacity(5);
    for c in Component::ALL {
        let mut g = batch_gradients(&p.params, &p.stacks, &p.labels, w, c)?.grads.flatten();
        if fault {
            g[base.len() / 2] *= 1.0 + 1e-2;
            g[base.len() / 2] += 1e-3;
        }
        analytic.push(g);
    }
    let mut worst = [0.0f64; 5];
    let mut probe = p.params.clone();
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] = base[i] + GRAD_STEP;
        probe.assign_flat(&v)?;
        let plus = evaluate_batch(&probe, &p.stacks, &p.labels, w)?;
        v[i] = base[i] - GRAD_STEP;
        probe.assign_flat(&v)?;
        let minus = evaluate_batch(&probe, &p.stacks, &p.labels, w)?;
        for (k, c) in Component::ALL.iter().enumerate() {
            let fd = (component_value(*c, &plus) - component_value(*c, &minus)) / (2.0 * GRAD_STEP);
            worst[k] = worst[k].max(rel_error(analytic[k][i], fd));
        }
    }
    Ok([
        (Component::Cls, worst[0]),
        (Component::Std, worst[1]),
        (Component::Enh, worst[2]),
        (Component::Reg, worst[3]),
        (Component::Total, worst[4]),
    ])
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn check_gradients(opts: &VerifyOptions) -> Result<(bool, String)> {
    let w = RaclWeights::default();
    let mut worst = 0.0f64;
    for b in 0..20 {
        let p = grad_problem(1000 + b);
        for (_, e) in gradient_errors(&p, &w, opts.inject_gradient_fault)? {
            worst = worst.max(e);
        }
    }
    Ok((worst < GRAD_TOL, format!("20 batches, worst relative error {worst:.2e}")))
}

fn check_loss_identities() -> Result<(bool, String)> {
    let w = RaclWeights::default();
    let same = array![[0.3, -0.2], [0.3, -0.2]];
    let far = array![[0.0, 0.0], [1.5, 0.0]];
    let c1 = contrastive(same.view(), &[Pair { i: 0, j: 1, same: true }], 1.0).map(|l| l.value);
    let c2 = contrastive(far.view(), &[Pair { i: 0, j: 1, same: false }], 1.0).map(|l| l.value);
    let reg = variance_reg(Array2::from_elem((5, 3), 0.4).view(), &[0, 1, 2, 3, 4], 1e-4).map(|l| l.value);
    let logits = array![[0.3, -1.2], [2.0, 0.1], [-0.4, 0.9], [0.0, 0.0]];
    let emb = array![[0.1, 0.2], [0.3, -0.1], [0.0, 0.5], [-0.2, 0.2]];
    let labels = [SampleLabel::BonaFide, SampleLabel::Spoof, SampleLabel::RecBonaFide, SampleLabel::RecSpoof];
    let ce = weighted_ce(logits.view(), &labels, w.class_weights);
    let ce_only = racl_total(emb.view(), logits.view(), &labels, &RaclWeights::ce_only())?;
    let bitwise = ce_only.total.to_bits() == ce.value.to_bits()
        && ce_only.grad_logits.iter().zip(&ce.grad).all(|(a, b)| a.to_bits() == b.to_bits());
    let ok = c1 == Some(0.0)
        && c2 == Some(0.0)
        && reg.is_some_and(|r| (r + 0.99).abs() <= 1e-12)
        && bitwise
        && w.ce_coefficient() == 0.3;
    Ok((
        ok,
        format!(
            "contrastive {c1:?}/{c2:?}, reg {reg:?}, ce-only bitwise {bitwise}, ce coefficient {}",
            w.ce_coefficient()
        ),
    ))
}

/// Random score sets with heavy ties: scores drawn from a coarse grid half
/// of the time.
pub fn random_score_set(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_for(seed, &[0x6565_72]);
    let coarse = rng.gen_bool(0.5);
    let nb = rng.gen_range(1..40);
    let ns = rng.gen_range(1..40);
    let shift = rng.gen_range(-0.3..0.3);
    let mut draw = |n: usize, shift: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                if coarse {
                    (rng.gen_range(0..6) as f64 / 5.0 + shift).clamp(0.0, 1.0)
                } else {
                    (rng.gen::<f64>() + shift).clamp(0.0, 1.0)
                }
            })
            .collect()
    };
    let bona = draw(nb, 0.0);
    let spoof = draw(ns, shift);
    (bona, spoof)
}

fn check_eer() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut worst_mono = 0.0f64;
    for s in 0..1000 {
        let (bona, spoof) = random_score_set(s);
        let fast = eer(&bona, &spoof)?;
        worst = worst.max((fast - eer_oracle(&bona, &spoof)?).abs());
        let t = |v: &[f64]| v.iter().map(|x| (3.0 * x).exp() + x * x * x).collect::<Vec<_>>();
        worst_mono = worst_mono.max((fast - eer(&t(&bona), &t(&spoof))?).abs());
    }
    Ok((
        worst < 1e-9 && worst_mono < 1e-9,
        format!("1000 sets, max |fast - oracle| {worst:.1e}, max transform shift {worst_mono:.1e}"),
    ))
}

fn check_reconstruction() -> Result<(bool, String)> {
    let spec = CorpusSpec {
        duration: 1.0,
        ..CorpusSpec::default()
    };
    let rec = Reconstructor::new(&Default::default(), spec.sample_rate)?;
    let mut worst_mel = 0.0f64;
    let mut monotone = true;
    let mut min_l2 = f64::INFINITY;
    for (i, label) in [SampleLabel::BonaFide, SampleLabel::Spoof].iter().enumerate() {
        let clip = synthesize(&spec, *label, i);
        let (out, trace) = rec.reconstruct_with_trace(&clip, 7)?;
        monotone &= trace.windows(2).all(|w| w[1] <= w[0]);
        let mel_a = rec.mel_spectrogram(&out.samples)?;
        let mel_b = rec.mel_spectrogram(&clip.samples)?;
        worst_mel = worst_mel.max(relative_error(mel_a.view(), mel_b.view()));
        let l2: f64 = out.samples.iter().zip(&clip.samples).map(|(a, b)| (a - b) * (a - b)).sum();
        min_l2 = min_l2.min(l2.sqrt());
    }
    Ok((
        worst_mel < 0.2 && min_l2 > 0.0 && monotone,
        format!("mel error {worst_mel:.3}, waveform distance {min_l2:.3}, monotone {monotone}"),
    ))
}

fn check_determinism() -> Result<(bool, String)> {
    let p = grad_problem(77);
    let w = RaclWeights::default();
    let run = |threads: usize| -> Result<Vec<u64>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| crate::RaclError::Config(e.to_string()))?;
        pool.install(|| {
            let g = batch_gradients(&p.params, &p.stacks, &p.labels, &w, Component::Total)?;
            Ok(g.grads.flatten().iter().map(|v| v.to_bits()).collect())
        })
    };
    let one = run(1)?;
    let four = run(4)?;
    let spec = CorpusSpec {
        duration: 0.25,
        ..CorpusSpec::default()
    };
    let same_clip = synthesize(&spec, SampleLabel::Spoof, 1) == synthesize(&spec, SampleLabel::Spoof, 1);
    Ok((one == four && same_clip, format!("1 vs 4 workers identical: {}", one == four)))
}

fn check_plumbing() -> Result<(bool, String)> {
    let mut rng = rng_for(5, &[]);
    let mut worst_snr = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(100..2000);
        let clip: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let noise: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let snr = rng.gen_range(-5.0..25.0);
        let mixed = mix_at_snr(&clip, &noise, snr)?;
        let resid: Vec<f64> = mixed.iter().zip(&clip).map(|(m, c)| m - c).collect();
        let measured = 10.0 * (crate::audio::mean_square(&clip) / crate::audio::mean_square(&resid)).log10();
        worst_snr = worst_snr.max((measured - snr).abs());
    }
    let clip = AudioClip::new(vec![0.1, -0.2, 0.3], 16000, SampleLabel::BonaFide, "p");
    let once = fix_length(&clip, 7)?;
    let idempotent = fix_length(&once, 7)? == once;
    let ckpt = Checkpoint {
        epoch: 4,
        val_loss: 0.125,
        config_hash: [1; 32],
        params: grad_problem(3).params,
    };
    let round_trip = Checkpoint::from_bytes(&ckpt.to_bytes())? == ckpt;
    let cfg = OptimizerConfig::default();
    let lrs = [lr_at(&cfg, 0), lr_at(&cfg, 10), lr_at(&cfg, 25)];
    let ok = worst_snr < 0.01 && idempotent && round_trip && lrs == [5e-4, 2.5e-4, 1.25e-4];
    Ok((
        ok,
        format!("snr error {worst_snr:.1e} dB, fix_length idempotent {idempotent}, checkpoint {round_trip}, lr {lrs:?}"),
    ))
}

pub fn run_all(opts: &VerifyOptions) -> Vec<CheckResult> {
    vec![
        timed("gradients", || check_gradients(opts)),
        timed("loss identities", check_loss_identities),
        timed("eer oracle", check_eer),
        timed("reconstruction", check_reconstruction),
        timed("determinism", check_determinism),
        timed("plumbing", check_plumbing),
    ]
}

pub fn format_table(results: &[CheckResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{:<4}  {:<16} {:>7.2}s  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        ));
    }
    out
}
