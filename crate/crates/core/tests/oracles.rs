//! Metric and scoring functions against independent brute-force references.

mod common;

use common::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ros_osda::harness::score_files;
use ros_osda::metrics::{auc_roc, hos, os, os_star, unk_accuracy};
use ros_osda::stage1::{normality_record, rotation_score, separate_target, NormalityRecord, ScoreMode};
use ros_osda::RosError;

const EXACT: f64 = 1e-9;

#[test]
fn metrics_match_confusion_and_pairwise_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let inst = random_instance(&mut rng);
        let star = os_star(&inst.pairs, inst.n_known);
        let unk = unk_accuracy(&inst.pairs, inst.n_known);
        match (os_star_oracle(&inst), &star) {
            (Some(o), Ok(v)) => assert!((o - v).abs() < EXACT, "case {case}"),
            (None, Err(RosError::UndefinedMetric(_))) => {}
            other => panic!("case {case}: {other:?}"),
        }
        match (unk_oracle(&inst), &unk) {
            (Some(o), Ok(v)) => assert!((o - v).abs() < EXACT, "case {case}"),
            (None, Err(RosError::UndefinedMetric(_))) => {}
            other => panic!("case {case}: {other:?}"),
        }
        if let (Ok(a), Ok(b)) = (star, unk) {
            assert!((os(a, b, inst.n_known) - os_oracle(a, b, inst.n_known)).abs() < EXACT);
            assert!((hos(a, b) - hos_oracle(a, b)).abs() < EXACT);
        }
        let known = known_mask(&inst);
        match (auc_oracle(&inst.scores, &known), auc_roc(&inst.scores, &known)) {
            (Some(o), Ok(v)) => assert!((o - v).abs() < EXACT, "case {case}"),
            (None, Err(RosError::UndefinedMetric(_))) => {}
            other => panic!("case {case}: {other:?}"),
        }
    }
}

#[test]
fn auc_worked_example_by_pairs() {
    let scores = [0.9, 0.4, 0.6, 0.1];
    let known = [true, true, false, false];
    // pairs (0.9,0.6) (0.9,0.1) (0.4,0.1) ordered, (0.4,0.6) not
    assert_eq!(auc_oracle(&scores, &known), Some(0.75));
    assert!((auc_roc(&scores, &known).unwrap() - 0.75).abs() < EXACT);
}

#[test]
fn rotation_score_worked_example_by_enumeration() {
    let rows = vec![
        vec![0.7, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0],
        vec![0.0, 0.6, 0.0, 0.0, 0.0, 0.4, 0.0, 0.0],
        vec![0.0, 0.0, 0.8, 0.0, 0.0, 0.0, 0.2, 0.0],
        vec![0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5],
    ];
    // k=0: 0.7+0.6+0.8+0.5 = 2.6, k=1: 0.3+0.4+0.2+0.5 = 1.4
    assert!((rotation_score_oracle(&rows) - 0.65).abs() < EXACT);
    let arr = Array2::from_shape_fn((4, 8), |(i, j)| rows[i][j]);
    assert!((rotation_score(arr.view()).unwrap() - 0.65).abs() < EXACT);
}

#[test]
fn rotation_score_matches_enumeration_on_random_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let k = rng.random_range(1..=6);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let raw: Vec<f64> = (0..4 * k).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let arr = Array2::from_shape_fn((4, 4 * k), |(i, j)| rows[i][j]);
        assert!((rotation_score(arr.view()).unwrap() - rotation_score_oracle(&rows)).abs() < EXACT);
    }
}

#[test]
fn separation_matches_rule_recheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let records: Vec<NormalityRecord> = (0..100)
        .map(|id| {
            let n = rng.random::<f64>();
            NormalityRecord {
                sample_id: id,
                rotation_score: n,
                entropy_score: 0.0,
                normality: n,
                rotation_probs: vec![],
            }
        })
        .collect();
    let sep = separate_target(&records).unwrap();
    let mut mean = 0.0;
    for r in &records {
        mean += r.normality;
    }
    mean /= records.len() as f64;
    for r in &records {
        let in_known = sep.known_ids.contains(&r.sample_id);
        let in_unknown = sep.unknown_ids.contains(&r.sample_id);
        assert!(in_known != in_unknown);
        assert_eq!(in_known, r.normality >= mean);
    }
}

#[test]
fn normality_record_uniform_and_onehot() {
    let uniform = Array2::from_elem((4, 8), 0.125);
    let r = normality_record(0, uniform.view(), ScoreMode::Full).unwrap();
    assert!((r.normality - 0.125).abs() < EXACT);
    let mut onehot = Array2::zeros((4, 8));
    for i in 0..4 {
        onehot[[i, 4 + i]] = 1.0;
    }
    assert_eq!(
        normality_record(1, onehot.view(), ScoreMode::Full).unwrap().normality,
        1.0
    );
}

#[test]
fn hand_written_prediction_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("predictions.csv");
    std::fs::write(
        &path,
        "sample_id,predicted_label,ground_truth,max_confidence\n0,0,0,0.9\n1,1,1,0.8\n2,1,0,0.7\n3,2,2,0.6\n",
    )
    .unwrap();
    let r = score_files(&path, None, 2, "hand").unwrap();
    // class 0: 1 of 2, class 1: 1 of 1, unknown: 1 of 1
    assert!((r.os_star - 75.0).abs() < EXACT);
    assert!((r.unk - 100.0).abs() < EXACT);
    assert!((r.os - 250.0 / 3.0).abs() < EXACT);
    assert!((r.hos - 15000.0 / 175.0).abs() < EXACT);
    assert_eq!(r.per_class_accuracy[&0], 50.0);
}
