use ndarray::{Array1, Array2};
use proptest::prelude::*;
use racl::audio::{fix_length, AudioClip, SampleLabel};
use racl::eval::{eer, eer_oracle, embedding_distances};
use racl::features::{aggregate, FeatureStack};
use racl::losses::{contrastive, make_pairs_enh, make_pairs_std, variance_reg, weighted_ce, Pair};
use racl::model::{stratified_order, Checkpoint, HeadConfig, Params};

const LABELS: [SampleLabel; 4] = [
    SampleLabel::BonaFide,
    SampleLabel::Spoof,
    SampleLabel::RecBonaFide,
    SampleLabel::RecSpoof,
];

fn label() -> impl Strategy<Value = SampleLabel> {
    (0usize..4).prop_map(|i| LABELS[i])
}

fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![(0u8..8).prop_map(|v| v as f64 / 7.0), 0.0f64..1.0], 1..max)
}

fn matrix(rows: std::ops::Range<usize>, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    rows.prop_flat_map(move |r| {
        prop::collection::vec(-2.0f64..2.0, r * cols)
            .prop_map(move |v| Array2::from_shape_vec((r, cols), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn eer_matches_oracle(bona in scores(40), spoof in scores(40)) {
        let fast = eer(&bona, &spoof).unwrap();
        let slow = eer_oracle(&bona, &spoof).unwrap();
        prop_assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        prop_assert!((0.0..=100.0).contains(&fast));
    }

    #[test]
    fn eer_ignores_increasing_transforms(bona in scores(30), spoof in scores(30), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let f = |v: &f64| (a * v + b).exp();
        let tb: Vec<f64> = bona.iter().map(f).collect();
        let ts: Vec<f64> = spoof.iter().map(f).collect();
        let base = eer(&bona, &spoof).unwrap();
        prop_assert!((eer(&tb, &ts).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn eer_label_swap_reflects_scores(bona in scores(30), spoof in scores(30)) {
        let nb: Vec<f64> = bona.iter().map(|v| -v).collect();
        let ns: Vec<f64> = spoof.iter().map(|v| -v).collect();
        let a = eer_oracle(&bona, &spoof).unwrap();
        let b = eer_oracle(&ns, &nb).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn contrastive_is_nonnegative_and_symmetric(e in matrix(2..6, 3), same in any::<bool>(), m in 0.1f64..3.0) {
        let ab = contrastive(e.view(), &[Pair { i: 0, j: 1, same }], m).unwrap();
        let ba = contrastive(e.view(), &[Pair { i: 1, j: 0, same }], m).unwrap();
        prop_assert!(ab.value >= 0.0);
        prop_assert!((ab.value - ba.value).abs() < 1e-12);
        for c in 0..3 {
            prop_assert!((ab.grad[[0, c]] - ba.grad[[0, c]]).abs() < 1e-12);
            prop_assert!((ab.grad[[0, c]] + ab.grad[[1, c]]).abs() < 1e-12);
        }
    }

    #[test]
    fn losses_are_translation_invariant(e in matrix(2..8, 4), shift in prop::collection::vec(-5.0f64..5.0, 4), labels in prop::collection::vec(label(), 8)) {
        let n = e.nrows();
        let labels = &labels[..n];
        let moved = &e + &Array1::from(shift);
        let pairs = make_pairs_std(labels);
        let rows: Vec<usize> = (0..n).collect();
        let a = contrastive(e.view(), &pairs, 1.0).unwrap().value;
        let b = contrastive(moved.view(), &pairs, 1.0).unwrap().value;
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        let va = variance_reg(e.view(), &rows, 1e-4).unwrap().value;
        let vb = variance_reg(moved.view(), &rows, 1e-4).unwrap().value;
        prop_assert!((va - vb).abs() < 1e-9);
    }

    #[test]
    fn variance_reg_stays_in_range(e in matrix(2..10, 5), delta in 1e-8f64..1e-2) {
        let rows: Vec<usize> = (0..e.nrows()).collect();
        let v = variance_reg(e.view(), &rows, delta).unwrap().value;
        prop_assert!((-1.0..=0.0).contains(&v), "{v}");
    }

    #[test]
    fn weighted_ce_is_nonnegative(l in matrix(1..10, 2), labels in prop::collection::vec(label(), 10)) {
        let lg = weighted_ce(l.view(), &labels[..l.nrows()], [10.0, 1.0]);
        prop_assert!(lg.value >= 0.0 && lg.value.is_finite());
    }

    #[test]
    fn pair_counts(labels in prop::collection::vec(label(), 0..12)) {
        let n = labels.len();
        prop_assert_eq!(make_pairs_std(&labels).len(), n * n.saturating_sub(1) / 2);
        let eligible = labels.iter().filter(|l| matches!(l, SampleLabel::BonaFide | SampleLabel::RecBonaFide)).count();
        let enh = make_pairs_enh(&labels);
        prop_assert_eq!(enh.len(), eligible * eligible.saturating_sub(1) / 2);
        for p in &enh {
            prop_assert_eq!(p.same, labels[p.i] == labels[p.j]);
        }
    }

    #[test]
    fn fix_length_is_idempotent(x in prop::collection::vec(-1.0f64..1.0, 1..300), target in 1usize..600) {
        let clip = AudioClip::new(x, 16000, SampleLabel::Spoof, "p");
        let once = fix_length(&clip, target).unwrap();
        prop_assert_eq!(once.len(), target);
        prop_assert_eq!(&fix_length(&once, target).unwrap(), &once);
    }

    #[test]
    fn layer_weights_are_open_unit(vals in prop::collection::vec(-1.0f64..=1.0, 5 * 2 * 3), kernel in prop::collection::vec(-10.0f64..10.0, 3)) {
        let layers: Vec<Array2<f64>> = vals
            .chunks(6)
            .map(|c| Array2::from_shape_vec((2, 3), c.to_vec()).unwrap())
            .collect();
        let agg = aggregate(&FeatureStack::new(layers).unwrap(), &kernel).unwrap();
        prop_assert!(agg.weights.iter().all(|w| *w > 0.0 && *w < 1.0));
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), epoch in 0u32..1000, loss in -10.0f64..10.0) {
        let c = Checkpoint {
            epoch,
            val_loss: loss,
            config_hash: [3; 32],
            params: Params::init(6, &HeadConfig { hidden: 4, embedding: 3 }, 3, seed),
        };
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn stratified_batches_partition(labels in prop::collection::vec(label(), 1..80), batch in 2usize..20, seed in any::<u64>()) {
        let order = stratified_order(&labels, batch, Some(seed));
        let mut seen: Vec<usize> = order.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..labels.len()).collect::<Vec<_>>());
        if labels.len() >= 2 {
            prop_assert!(order.iter().all(|b| b.len() >= 2));
        }
    }

    #[test]
    fn distance_matrix_is_symmetric_and_scales(e in matrix(2..12, 3), labels in prop::collection::vec(label(), 12), c in 0.1f64..10.0) {
        let n = e.nrows();
        let d = embedding_distances(e.view(), &labels[..n]).unwrap();
        let scaled = embedding_distances((&e * c).view(), &labels[..n]).unwrap();
        for a in LABELS {
            for b in LABELS {
                prop_assert_eq!(d.get(a, b), d.get(b, a));
                if let Some(v) = d.get(a, b) {
                    prop_assert!(v >= 0.0);
                    let s = scaled.get(a, b).unwrap();
                    prop_assert!((s - c * v).abs() <= 1e-9 * (1.0 + s.abs()), "{s} vs {}", c * v);
                }
            }
        }
    }
}
