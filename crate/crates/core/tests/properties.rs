use ndarray::Array2;
use proptest::prelude::*;
use ros_osda::dataset::{make_multi_rotation_label, rot90, split_multi_rotation_label, Image};
use ros_osda::losses::{cross_entropy, entropy_loss, one_hot, softmax_rows, Reduction};
use ros_osda::metrics::{auc_roc, hos, os, os_star};
use ros_osda::stage1::{normality_record, separate_target, ScoreMode};

fn square_image() -> impl Strategy<Value = Image> {
    (1usize..7, 1usize..4).prop_flat_map(|(n, c)| {
        prop::collection::vec(0.0f32..1.0, n * n * c).prop_map(move |data| Image::new(n, n, c, data).unwrap())
    })
}

/// Four rows of width `4k`, each a probability distribution.
fn rotation_rows() -> impl Strategy<Value = Array2<f64>> {
    (1usize..6).prop_flat_map(|k| {
        prop::collection::vec(0.0f64..1.0, 16 * k).prop_map(move |raw| {
            let mut a = Array2::from_shape_vec((4, 4 * k), raw).unwrap();
            for mut row in a.rows_mut() {
                row.mapv_inplace(|x| x * x * x);
                let s = row.sum();
                if s > 0.0 {
                    row /= s;
                } else {
                    row.fill(1.0 / (4 * k) as f64);
                }
            }
            a
        })
    })
}

proptest! {
    #[test]
    fn rot90_composes(img in square_image(), a in 0usize..4, b in 0usize..4) {
        let ab = rot90(&rot90(&img, a).unwrap(), b).unwrap();
        prop_assert_eq!(ab, rot90(&img, (a + b) % 4).unwrap());
    }

    #[test]
    fn rot90_identity_and_order_four(img in square_image()) {
        prop_assert_eq!(&rot90(&img, 0).unwrap(), &img);
        let mut x = img.clone();
        for _ in 0..4 {
            x = rot90(&x, 1).unwrap();
        }
        prop_assert_eq!(x, img);
    }

    #[test]
    fn rot90_quarter_turn_is_clockwise_permutation(img in square_image()) {
        let n = img.height();
        let r = rot90(&img, 1).unwrap();
        for y in 0..n {
            for x in 0..n {
                for c in 0..img.channels() {
                    prop_assert_eq!(r.get(y, x, c), img.get(n - 1 - x, y, c));
                }
            }
        }
    }

    #[test]
    fn softmax_rows_are_distributions(raw in prop::collection::vec(-80.0f64..80.0, 1..64)) {
        let cols = 1 + raw.len() % 8;
        let rows = raw.len() / cols;
        prop_assume!(rows > 0);
        let a = Array2::from_shape_vec((rows, cols), raw[..rows * cols].to_vec()).unwrap();
        for row in softmax_rows(&a).rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn losses_finite_and_nonnegative(logits in prop::collection::vec(-10.0f64..10.0, 8..=8), label in 0usize..8) {
        let p = softmax_rows(&Array2::from_shape_vec((1, 8), logits).unwrap());
        let y = one_hot(&[label], 8).unwrap();
        let ce = cross_entropy(&p, &y, Reduction::Sum).unwrap();
        let h = entropy_loss(&p, Reduction::Sum);
        prop_assert!(ce.is_finite() && ce >= 0.0);
        prop_assert!(h.is_finite() && h >= -1e-12 && h <= 8f64.ln() + 1e-9);
    }

    #[test]
    fn normality_in_unit_interval(rows in rotation_rows()) {
        for mode in [ScoreMode::Full, ScoreMode::EntropyOnly, ScoreMode::RotationOnly] {
            let r = normality_record(0, rows.view(), mode).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.normality));
            prop_assert!((0.0..=1.0).contains(&r.rotation_score));
            prop_assert!((0.0..=1.0).contains(&r.entropy_score));
            if mode == ScoreMode::Full {
                prop_assert_eq!(r.normality, r.rotation_score.max(r.entropy_score));
            }
        }
    }

    #[test]
    fn separation_is_disjoint_cover(scores in prop::collection::vec(0.0f64..1.0, 1..80)) {
        let recs: Vec<_> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut r = normality_record(i, Array2::from_elem((4, 4), 0.25).view(), ScoreMode::Full).unwrap();
                r.normality = s;
                r
            })
            .collect();
        let sep = separate_target(&recs).unwrap();
        prop_assert_eq!(sep.known_ids.len() + sep.unknown_ids.len(), scores.len());
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        for &id in &sep.known_ids {
            prop_assert!(scores[id] >= sep.threshold);
            prop_assert!(!sep.unknown_ids.contains(&id));
        }
        for &id in &sep.unknown_ids {
            prop_assert!(scores[id] < sep.threshold);
        }
        prop_assert!((sep.threshold - mean).abs() < 1e-12);
    }

    #[test]
    fn hos_symmetric_and_bounded(a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
        prop_assert_eq!(hos(a, b), hos(b, a));
        let h = hos(a, b);
        if a > 0.0 && b > 0.0 {
            prop_assert!(h >= a.min(b) - 1e-9);
        }
        prop_assert!(h <= (a + b) / 2.0 + 1e-9);
    }

    #[test]
    fn os_monotone(a in 0.0f64..=100.0, b in 0.0f64..=100.0, da in 0.0f64..10.0, db in 0.0f64..10.0, n in 1usize..30) {
        prop_assert!(os(a + da, b, n) >= os(a, b, n) - 1e-12);
        prop_assert!(os(a, b + db, n) >= os(a, b, n) - 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_transform(
        pairs in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..60),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let known: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(known.iter().any(|&k| k) && known.iter().any(|&k| !k));
        let base = auc_roc(&scores, &known).unwrap();
        let moved: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert!((auc_roc(&moved, &known).unwrap() - base).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn os_star_order_invariant(mut pairs in prop::collection::vec((0usize..4, 0usize..6), 1..50), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let before = os_star(&pairs, 3).ok();
        pairs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let after = os_star(&pairs, 3).ok();
        match (before, after) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
            (x, y) => prop_assert_eq!(x, y),
        }
    }
}

#[test]
fn multi_rotation_label_bijection() {
    for n_known in 1..=30 {
        let mut seen = vec![false; 4 * n_known];
        for y in 0..n_known {
            for i in 0..4 {
                let z = make_multi_rotation_label(y, i, n_known).unwrap();
                assert_eq!(z, 4 * y + i);
                assert!(!seen[z]);
                seen[z] = true;
                assert_eq!(split_multi_rotation_label(z, n_known).unwrap(), (y, i));
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert!(make_multi_rotation_label(n_known, 0, n_known).is_err());
        assert!(make_multi_rotation_label(0, 4, n_known).is_err());
        assert!(split_multi_rotation_label(4 * n_known, n_known).is_err());
    }
    assert_eq!(make_multi_rotation_label(2, 3, 3).unwrap(), 11);
}
