//! The RACL objective.
//!
//! ```text
//! total = (1 - alpha - beta) * cls + alpha * std + beta * enh + gamma * (reg_bona + reg_spoof)
//! ```
//!
//! `cls` is class-weighted cross-entropy on the logits. `std` and `enh` are
//! margin contrastive losses on the embeddings: `std` over all pairs with
//! binary same-class targets, `enh` restricted to bona fide and reconstructed
//! bona fide samples. `reg` is a hinge on the per-dimension standard
//! deviation of each class, rewarding compact clusters.
//!
//! Every term returns its value together with its gradient with respect to
//! the batch embeddings or logits.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::audio::SampleLabel;
use crate::error::{RaclError, Result};

fn to_decimal(x: f64) -> Option<(i128, u32)> {
    let text = format!("{x}");
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let scale = u32::try_from(frac.len()).ok()?;
    Some((format!("{int}{frac}").parse().ok()?, scale))
}

fn decimal_complement(a: f64, b: f64) -> Option<f64> {
    let (ma, sa) = to_decimal(a)?;
    let (mb, sb) = to_decimal(b)?;
    let scale = sa.max(sb);
    let one = 10i128.checked_pow(scale)?;
    let m = one
        .checked_sub(ma.checked_mul(10i128.checked_pow(scale - sa)?)?)?
        .checked_sub(mb.checked_mul(10i128.checked_pow(scale - sb)?)?)?;
    format!("{m}e-{scale}").parse().ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RaclWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub margin: f64,
    pub delta: f64,
    /// Cross-entropy weights for (bona fide, non-bona fide).
    pub class_weights: [f64; 2],
}

impl Default for RaclWeights {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.1,
            gamma: 0.3,
            margin: 1.0,
            delta: 1e-4,
            class_weights: [10.0, 1.0],
        }
    }
}

impl RaclWeights {
    /// Plain weighted cross-entropy.
    pub fn ce_only() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            ..Self::default()
        }
    }

    /// `1 - alpha - beta`, evaluated on the weights' shortest decimal forms
    /// and rounded once, so 0.6 and 0.1 give exactly 0.3.
    pub fn ce_coefficient(&self) -> f64 {
        decimal_complement(self.alpha, self.beta).unwrap_or(1.0 - self.alpha - self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0
            && self.beta >= 0.0
            && self.gamma >= 0.0
            && self.alpha + self.beta < 1.0
            && self.margin > 0.0
            && self.delta > 0.0
            && self.class_weights.iter().all(|w| *w > 0.0 && w.is_finite());
        if ok {
            Ok(())
        } else {
            Err(RaclError::Config(format!(
                "loss weights need alpha, beta, gamma >= 0, alpha + beta < 1, margin > 0, delta > 0 \
                 and positive class weights; got {self:?}"
            )))
        }
    }
}

/// Scalar loss and its gradient with respect to one batch matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array2<f64>,
}

impl LossGrad {
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            value: 0.0,
            grad: Array2::zeros((rows, cols)),
        }
    }
}

/// An unordered pair of batch rows with its target: `same = true` (Y = 1)
/// pulls the pair together, `false` pushes it beyond the margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub same: bool,
}

/// All `i < j` pairs with binary-label targets.
pub fn make_pairs_std(labels: &[SampleLabel]) -> Vec<Pair> {
    let mut pairs = Vec::with_capacity(labels.len() * labels.len().saturating_sub(1) / 2);
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            pairs.push(Pair {
                i,
                j,
                same: labels[i].binary() == labels[j].binary(),
            });
        }
    }
    pairs
}

/// Pairs among bona fide and reconstructed bona fide samples only; a pair is
/// "same" when both rows share the provenance.
pub fn make_pairs_enh(labels: &[SampleLabel]) -> Vec<Pair> {
    let eligible: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, SampleLabel::BonaFide | SampleLabel::RecBonaFide))
        .map(|(i, _)| i)
        .collect();
    let mut pairs = Vec::new();
    for (a, &i) in eligible.iter().enumerate() {
        for &j in &eligible[a + 1..] {
            pairs.push(Pair {
                i,
                j,
                same: labels[i] == labels[j],
            });
        }
    }
    pairs
}

/// Mean over pairs of `Y D^2 + (1 - Y) max(0, m - D)^2`, `D` Euclidean.
/// Returns `None` for an empty pair list.
pub fn contrastive(embeddings: ArrayView2<'_, f64>, pairs: &[Pair], margin: f64) -> Option<LossGrad> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let mut out = LossGrad::zero(embeddings.nrows(), embeddings.ncols());
    for p in pairs {
        let diff = &embeddings.row(p.i) - &embeddings.row(p.j);
        let d2 = diff.dot(&diff);
        let (term, coeff) = if p.same {
            (d2, 2.0)
        } else {
            let d = d2.sqrt();
            let gap = margin - d;
            if gap > 0.0 && d > 0.0 {
                (gap * gap, -2.0 * gap / d)
            } else if gap > 0.0 {
                // coincident pair: no defined direction
                (gap * gap, 0.0)
            } else {
                (0.0, 0.0)
            }
        };
        out.value += term;
        if coeff != 0.0 {
            let g = diff * (coeff / n);
            out.grad.row_mut(p.i).scaled_add(1.0, &g);
            out.grad.row_mut(p.j).scaled_add(-1.0, &g);
        }
    }
    out.value /= n;
    Some(out)
}

/// `-(1/d) sum_j max(0, 1 - sqrt(Var_j + delta))` over `rows`, population
/// variance. Returns `None` with fewer than two rows.
pub fn variance_reg(embeddings: ArrayView2<'_, f64>, rows: &[usize], delta: f64) -> Option<LossGrad> {
    if rows.len() < 2 {
        return None;
    }
    let n = rows.len() as f64;
    let d = embeddings.ncols();
    let sub = embeddings.select(Axis(0), rows);
    let mean = sub.mean_axis(Axis(0)).expect("non-empty");
    let centered = &sub - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
    let mut out = LossGrad::zero(embeddings.nrows(), d);
    let mut dvar = vec![0.0; d];
    for j in 0..d {
        let s = (var[j] + delta).sqrt();
        if s < 1.0 {
            out.value -= (1.0 - s) / d as f64;
            // d/dVar of -(1 - sqrt(Var + delta)) / d
            dvar[j] = 1.0 / (2.0 * s * d as f64);
        }
    }
    for (r, &row) in rows.iter().enumerate() {
        for j in 0..d {
            if dvar[j] != 0.0 {
                out.grad[[row, j]] = dvar[j] * 2.0 * centered[[r, j]] / n;
            }
        }
    }
    Some(out)
}

fn log_softmax2(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    let lse = m + ((a - m).exp() + (b - m).exp()).ln();
    (a - lse, b - lse)
}

/// Probability of the non-bona-fide class for one logit pair.
pub fn spoof_probability(logits: [f64; 2]) -> f64 {
    log_softmax2(logits[0], logits[1]).1.exp()
}

/// Class-weighted binary cross-entropy on two-way logits, mean over the
/// batch. Column 1 is the non-bona-fide logit.
pub fn weighted_ce(logits: ArrayView2<'_, f64>, labels: &[SampleLabel], class_weights: [f64; 2]) -> LossGrad {
    let m = labels.len() as f64;
    let mut out = LossGrad::zero(logits.nrows(), 2);
    for (i, label) in labels.iter().enumerate() {
        let y = label.binary() as usize;
        let w = class_weights[y];
        let (lp0, lp1) = log_softmax2(logits[[i, 0]], logits[[i, 1]]);
        let lp = [lp0, lp1];
        out.value -= w * lp[y] / m;
        for k in 0..2 {
            let indicator = if k == y { 1.0 } else { 0.0 };
            out.grad[[i, k]] = w * (lp[k].exp() - indicator) / m;
        }
    }
    out
}

/// Per-component values and the combined gradients for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub std: f64,
    pub enh: f64,
    pub reg_bona: f64,
    pub reg_spoof: f64,
    pub total: f64,
    pub grad_embeddings: Array2<f64>,
    pub grad_logits: Array2<f64>,
    /// Terms that contributed zero because the batch lacked the samples to
    /// define them.
    pub degenerate: Vec<&'static str>,
}

impl LossBreakdown {
    pub fn reg(&self) -> f64 {
        self.reg_bona + self.reg_spoof
    }
}

/// Which term(s) of the objective to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Cls,
    Std,
    Enh,
    Reg,
    Total,
}

impl Component {
    pub const ALL: [Component; 5] = [Component::Cls, Component::Std, Component::Enh, Component::Reg, Component::Total];

    pub fn name(self) -> &'static str {
        match self {
            Component::Cls => "cls",
            Component::Std => "std",
            Component::Enh => "enh",
            Component::Reg => "reg",
            Component::Total => "total",
        }
    }
}

/// Evaluates the full objective. Terms with zero weight are skipped, so the
/// all-zero configuration reduces exactly to [`weighted_ce`].
pub fn racl_total(
    embeddings: ArrayView2<'_, f64>,
    logits: ArrayView2<'_, f64>,
    labels: &[SampleLabel],
    w: &RaclWeights,
) -> Result<LossBreakdown> {
    let b = labels.len();
    if b == 0 || embeddings.nrows() != b || logits.nrows() != b || logits.ncols() != 2 {
        return Err(RaclError::Shape(format!(
            "batch of {b} labels with embeddings {:?} and logits {:?}",
            embeddings.dim(),
            logits.dim()
        )));
    }
    let mut degenerate = Vec::new();
    let ce = weighted_ce(logits, labels, w.class_weights);
    let ce_coeff = w.ce_coefficient();
    let mut total = ce_coeff * ce.value;
    let grad_logits = if ce_coeff == 1.0 { ce.grad } else { ce.grad * ce_coeff };
    let mut grad_embeddings = Array2::zeros(embeddings.dim());

    let mut accumulate = |lg: &LossGrad, weight: f64, total: &mut f64| {
        *total += weight * lg.value;
        grad_embeddings.scaled_add(weight, &lg.grad);
    };

    let mut std = 0.0;
    if w.alpha != 0.0 {
        match contrastive(embeddings, &make_pairs_std(labels), w.margin) {
            Some(lg) => {
                std = lg.value;
                accumulate(&lg, w.alpha, &mut total);
            }
            None => degenerate.push("std"),
        }
    }
    let mut enh = 0.0;
    if w.beta != 0.0 {
        match contrastive(embeddings, &make_pairs_enh(labels), w.margin) {
            Some(lg) => {
                enh = lg.value;
                accumulate(&lg, w.beta, &mut total);
            }
            None => degenerate.push("enh"),
        }
    }
    let (mut reg_bona, mut reg_spoof) = (0.0, 0.0);
    if w.gamma != 0.0 {
        let (bona, spoof): (Vec<usize>, Vec<usize>) = (0..b).partition(|&i| labels[i].is_bona_fide());
        match variance_reg(embeddings, &bona, w.delta) {
            Some(lg) => {
                reg_bona = lg.value;
                accumulate(&lg, w.gamma, &mut total);
            }
            None => degenerate.push("reg_bona"),
        }
        match variance_reg(embeddings, &spoof, w.delta) {
            Some(lg) => {
                reg_spoof = lg.value;
                accumulate(&lg, w.gamma, &mut total);
            }
            None => degenerate.push("reg_spoof"),
        }
    }
    if !total.is_finite() {
        return Err(RaclError::Numeric(format!("non-finite loss (cls {}, std {std}, enh {enh})", ce.value)));
    }
    for d in &degenerate {
        log::debug!("loss term {d} undefined for this batch, contributes 0");
    }
    Ok(LossBreakdown {
        cls: ce.value,
        std,
        enh,
        reg_bona,
        reg_spoof,
        total,
        grad_embeddings,
        grad_logits,
        degenerate,
    })
}

/// Value and gradients of a single component, as used by gradient checks.
/// `Total` delegates to [`racl_total`].
pub fn component_loss(
    component: Component,
    embeddings: ArrayView2<'_, f64>,
    logits: ArrayView2<'_, f64>,
    labels: &[SampleLabel],
    w: &RaclWeights,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let zeros_e = || Array2::zeros(embeddings.dim());
    let zeros_l = || Array2::zeros(logits.dim());
    Ok(match component {
        Component::Cls => {
            let lg = weighted_ce(logits, labels, w.class_weights);
            (lg.value, zeros_e(), lg.grad)
        }
        Component::Std | Component::Enh => {
            let pairs = if component == Component::Std {
                make_pairs_std(labels)
            } else {
                make_pairs_enh(labels)
            };
            match contrastive(embeddings, &pairs, w.margin) {
                Some(lg) => (lg.value, lg.grad, zeros_l()),
                None => (0.0, zeros_e(), zeros_l()),
            }
        }
        Component::Reg => {
            let (bona, spoof): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i].is_bona_fide());
            let mut value = 0.0;
            let mut grad = zeros_e();
            for rows in [bona, spoof] {
                if let Some(lg) = variance_reg(embeddings, &rows, w.delta) {
                    value += lg.value;
                    grad += &lg.grad;
                }
            }
            (value, grad, zeros_l())
        }
        Component::Total => {
            let lb = racl_total(embeddings, logits, labels, w)?;
            (lb.total, lb.grad_embeddings, lb.grad_logits)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use SampleLabel::*;

    fn pair_loss(a: &[f64], b: &[f64], same: bool, m: f64) -> f64 {
        let e = Array2::from_shape_vec((2, a.len()), a.iter().chain(b).copied().collect()).unwrap();
        contrastive(e.view(), &[Pair { i: 0, j: 1, same }], m).unwrap().value
    }

    #[test]
    fn contrastive_examples() {
        assert_eq!(pair_loss(&[0.3, 0.1], &[0.3, 0.1], true, 1.0), 0.0);
        assert_eq!(pair_loss(&[0.0, 0.0], &[1.0, 0.0], false, 1.0), 0.0);
        assert_eq!(pair_loss(&[0.0, 0.0], &[3.0, 4.0], false, 1.0), 0.0);
        assert!((pair_loss(&[0.0], &[0.2], false, 1.0) - 0.64).abs() < 1e-15);
        assert!((pair_loss(&[0.0], &[0.5], true, 1.0) - 0.25).abs() < 1e-15);
        let e = Array2::<f64>::zeros((2, 2));
        assert!(contrastive(e.view(), &[], 1.0).is_none());
    }

    #[test]
    fn contrastive_gradient_is_zero_at_the_kink() {
        let e = array![[0.0, 0.0], [0.6, 0.8]];
        let lg = contrastive(e.view(), &[Pair { i: 0, j: 1, same: false }], 1.0).unwrap();
        assert_eq!(lg.value, 0.0);
        assert!(lg.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn std_pairs() {
        assert_eq!(make_pairs_std(&[BonaFide, Spoof, RecBonaFide, RecSpoof]).len(), 6);
        assert_eq!(make_pairs_std(&[BonaFide, Spoof]), vec![Pair { i: 0, j: 1, same: false }]);
        assert_eq!(make_pairs_std(&[BonaFide, RecBonaFide]), vec![Pair { i: 0, j: 1, same: false }]);
        assert!(make_pairs_std(&[Spoof, RecSpoof])[0].same);
    }

    #[test]
    fn enh_pairs() {
        assert_eq!(
            make_pairs_enh(&[BonaFide, RecBonaFide, Spoof, RecSpoof]),
            vec![Pair { i: 0, j: 1, same: false }]
        );
        assert_eq!(make_pairs_enh(&[BonaFide, BonaFide]), vec![Pair { i: 0, j: 1, same: true }]);
        assert!(make_pairs_enh(&[Spoof, RecSpoof]).is_empty());
        let p = make_pairs_enh(&[RecBonaFide, Spoof, RecBonaFide]);
        assert_eq!(p, vec![Pair { i: 0, j: 2, same: true }]);
    }

    #[test]
    fn variance_reg_examples() {
        let same = Array2::from_elem((4, 3), 0.7);
        let lg = variance_reg(same.view(), &[0, 1, 2, 3], 1e-4).unwrap();
        assert!((lg.value + 0.99).abs() < 1e-12);

        let wide = array![[-1.0, 2.0], [1.0, -2.0]];
        assert_eq!(variance_reg(wide.view(), &[0, 1], 1e-4).unwrap().value, 0.0);

        // Var = [0, 1]
        let mixed = array![[0.5, -1.0], [0.5, 1.0]];
        let lg = variance_reg(mixed.view(), &[0, 1], 1e-4).unwrap();
        assert!((lg.value + 0.495).abs() < 1e-12);

        assert!(variance_reg(mixed.view(), &[0], 1e-4).is_none());
    }

    #[test]
    fn weighted_ce_examples() {
        let even = array![[0.0, 0.0]];
        let lg = weighted_ce(even.view(), &[BonaFide], [10.0, 1.0]);
        assert!((lg.value - 10.0 * 2f64.ln()).abs() < 1e-12);
        let lg = weighted_ce(even.view(), &[Spoof], [10.0, 1.0]);
        assert!((lg.value - 2f64.ln()).abs() < 1e-12);
        let confident = array![[40.0, -40.0], [-40.0, 40.0]];
        let lg = weighted_ce(confident.view(), &[BonaFide, RecSpoof], [10.0, 1.0]);
        assert!(lg.value < 1e-30);
        // stable for huge logits
        let huge = array![[1e4, -1e4]];
        assert!(weighted_ce(huge.view(), &[Spoof], [10.0, 1.0]).value.is_finite());
    }

    #[test]
    fn total_combines_components() {
        let w = RaclWeights::default();
        assert_eq!(w.ce_coefficient(), 0.3);
        let odd = RaclWeights { alpha: 0.125, beta: 1e-20, ..w.clone() };
        assert_eq!(odd.ce_coefficient(), 0.875 - 1e-20);
        assert_eq!(RaclWeights::ce_only().ce_coefficient(), 1.0);
        let (cls, std, enh, reg) = (1.0, 2.0, 3.0, -0.5);
        let total = w.ce_coefficient() * cls + w.alpha * std + w.beta * enh + w.gamma * reg;
        assert!((total - 1.65).abs() < 1e-12);
    }

    fn random_batch(seed: u64, b: usize, e: usize) -> (Array2<f64>, Array2<f64>, Vec<SampleLabel>) {
        let mut rng = rng_for(seed, &[]);
        let emb = Array2::from_shape_simple_fn((b, e), || rng.gen_range(-1.0..1.0));
        let logits = Array2::from_shape_simple_fn((b, 2), || rng.gen_range(-3.0..3.0));
        let labels = (0..b).map(|i| SampleLabel::ALL[i % 4]).collect();
        (emb, logits, labels)
    }

    #[test]
    fn ce_only_is_bitwise_weighted_ce() {
        let (emb, logits, labels) = random_batch(11, 8, 5);
        let lb = racl_total(emb.view(), logits.view(), &labels, &RaclWeights::ce_only()).unwrap();
        let ce = weighted_ce(logits.view(), &labels, [10.0, 1.0]);
        assert_eq!(lb.total.to_bits(), ce.value.to_bits());
        assert_eq!(lb.grad_logits, ce.grad);
        assert!(lb.grad_embeddings.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn degenerate_terms_are_reported() {
        let (emb, logits, _) = random_batch(12, 2, 3);
        let lb = racl_total(emb.view(), logits.view(), &[Spoof, RecSpoof], &RaclWeights::default()).unwrap();
        assert_eq!(lb.enh, 0.0);
        assert!(lb.degenerate.contains(&"enh"));
        assert!(lb.degenerate.contains(&"reg_bona"));
        assert!(!lb.degenerate.contains(&"reg_spoof"));
    }

    fn fd_check(component: Component, seed: u64) {
        let w = RaclWeights::default();
        let (emb, logits, labels) = random_batch(seed, 9, 4);
        let (_, ge, gl) = component_loss(component, emb.view(), logits.view(), &labels, &w).unwrap();
        let h = 1e-5;
        let eval = |e: &Array2<f64>, l: &Array2<f64>| component_loss(component, e.view(), l.view(), &labels, &w).unwrap().0;
        for idx in 0..emb.len() {
            let (r, c) = (idx / emb.ncols(), idx % emb.ncols());
            let mut p = emb.clone();
            let mut m = emb.clone();
            p[[r, c]] += h;
            m[[r, c]] -= h;
            let fd = (eval(&p, &logits) - eval(&m, &logits)) / (2.0 * h);
            assert!((fd - ge[[r, c]]).abs() < 1e-7 * (1.0 + fd.abs()), "{component:?} emb[{r},{c}] {fd} vs {}", ge[[r, c]]);
        }
        for idx in 0..logits.len() {
            let (r, c) = (idx / 2, idx % 2);
            let mut p = logits.clone();
            let mut m = logits.clone();
            p[[r, c]] += h;
            m[[r, c]] -= h;
            let fd = (eval(&emb, &p) - eval(&emb, &m)) / (2.0 * h);
            assert!((fd - gl[[r, c]]).abs() < 1e-7 * (1.0 + fd.abs()), "{component:?} logit[{r},{c}]");
        }
    }

    #[test]
    fn component_gradients_match_finite_differences() {
        for seed in 0..5 {
            for c in Component::ALL {
                fd_check(c, 100 + seed);
            }
        }
    }

    #[test]
    fn enh_descent_separates_bona_from_reconstructions() {
        let labels = [BonaFide, BonaFide, RecBonaFide, RecBonaFide, Spoof];
        let mut rng = rng_for(21, &[]);
        let mut emb = Array2::from_shape_simple_fn((5, 3), || rng.gen_range(-0.1..0.1));
        let pairs = make_pairs_enh(&labels);
        for _ in 0..2000 {
            let lg = contrastive(emb.view(), &pairs, 1.0).unwrap();
            emb.scaled_add(-0.5, &lg.grad);
        }
        let dist = |i: usize, j: usize| {
            let d = &emb.row(i) - &emb.row(j);
            d.dot(&d).sqrt()
        };
        assert!(dist(0, 2) >= 1.0 - 1e-3 && dist(1, 3) >= 1.0 - 1e-3);
        assert!(dist(0, 1) < 1e-3 && dist(2, 3) < 1e-3);
    }

    proptest! {
        #[test]
        fn bounds_and_translation_invariance(seed in 0u64..500, shift in -3.0f64..3.0) {
            let (emb, logits, labels) = random_batch(seed, 8, 4);
            let w = RaclWeights::default();
            let lb = racl_total(emb.view(), logits.view(), &labels, &w).unwrap();
            prop_assert!(lb.cls >= 0.0 && lb.std >= 0.0 && lb.enh >= 0.0);
            prop_assert!((-1.0..=0.0).contains(&lb.reg_bona) && (-1.0..=0.0).contains(&lb.reg_spoof));
            let moved = emb.mapv(|v| v + shift);
            let lb2 = racl_total(moved.view(), logits.view(), &labels, &w).unwrap();
            prop_assert!((lb.std - lb2.std).abs() < 1e-9);
            prop_assert!((lb.enh - lb2.enh).abs() < 1e-9);
            prop_assert!((lb.reg() - lb2.reg()).abs() < 1e-9);
        }

        #[test]
        fn pair_swap_swaps_gradients(seed in 0u64..500, same in any::<bool>()) {
            let (emb, _, _) = random_batch(seed, 2, 3);
            let a = contrastive(emb.view(), &[Pair { i: 0, j: 1, same }], 1.0).unwrap();
            let b = contrastive(emb.view(), &[Pair { i: 1, j: 0, same }], 1.0).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-15);
            for c in 0..3 {
                prop_assert!((a.grad[[0, c]] - b.grad[[0, c]]).abs() < 1e-15);
                prop_assert!((a.grad[[0, c]] + a.grad[[1, c]]).abs() < 1e-15);
            }
        }
    }
}
