//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ros_osda::dataset::{make_multi_rotation_label, rot90, split_multi_rotation_label, Image};
use ros_osda::harness::{run_ablations, run_pipeline_on, ExperimentConfig, RunPaths, ABLATION_SWITCHES};
use ros_osda::losses::{
    cross_entropy, cross_entropy_grad, entropy_grad, entropy_loss, one_hot, softmax_rows, CentroidTable, Reduction,
};
use ros_osda::metrics::{auc_roc, hos, openness, os, os_star, unk_accuracy};
use ros_osda::stage1::{normality_record, separate_target, NormalityRecord, ScoreMode};
use ros_osda::RosError;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(label: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || {
        format!("{label} = {got}, expected {want} ± {tol}")
    })
}

fn budget(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn metric_numbers() -> Outcome {
    let t = Instant::now();
    within("hos(88.4, 76.7)", hos(88.4, 76.7), 82.1, 0.05)?;
    within("os(100, 0, 10)", os(100.0, 0.0, 10), 90.9, 0.05)?;
    for (k, n, want) in [(10, 21, 0.52), (25, 65, 0.62), (10, 65, 0.85), (5, 65, 0.92)] {
        within(
            &format!("openness({k},{n})"),
            openness(k, n).map_err(|e| e.to_string())?,
            want,
            0.005,
        )?;
    }
    budget(t.elapsed(), Duration::from_secs(1))?;
    Ok(format!("hos {:.3}, os {:.3}", hos(88.4, 76.7), os(100.0, 0.0, 10)))
}

fn oracle_equivalence() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut compared = 0;
    for case in 0..200 {
        let inst = random_instance(&mut rng);
        let star = os_star(&inst.pairs, inst.n_known).ok();
        let unk = unk_accuracy(&inst.pairs, inst.n_known).ok();
        let check = |name: &str, a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => within(&format!("case {case} {name}"), x, y, 1e-9),
            (None, None) => Ok(()),
            _ => Err(format!("case {case} {name}: defined {a:?} vs oracle {b:?}")),
        };
        check("os_star", star, os_star_oracle(&inst))?;
        check("unk", unk, unk_oracle(&inst))?;
        if let (Some(a), Some(b)) = (star, unk) {
            check("os", Some(os(a, b, inst.n_known)), Some(os_oracle(a, b, inst.n_known)))?;
            check("hos", Some(hos(a, b)), Some(hos_oracle(a, b)))?;
        }
        let known = known_mask(&inst);
        check(
            "auc",
            auc_roc(&inst.scores, &known).ok(),
            auc_oracle(&inst.scores, &known),
        )?;
        compared += 1;
    }
    budget(t.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{compared} random sets agree to 1e-9"))
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut p = Array2::from_shape_fn((16, 8), |_| rng.random_range(0.2..1.0));
        for mut row in p.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        let labels: Vec<usize> = (0..16).map(|_| rng.random_range(0..8)).collect();
        let y = one_hot(&labels, 8).map_err(|e| e.to_string())?;
        let g = cross_entropy_grad(&p, &y, Reduction::Sum).map_err(|e| e.to_string())?;
        let ce = fd_max_rel_error(&p, &g, 1e-5, |q| cross_entropy(q, &y, Reduction::Sum).unwrap());
        let ent = fd_max_rel_error(&p, &entropy_grad(&p, Reduction::Sum), 1e-5, |q| {
            entropy_loss(q, Reduction::Sum)
        });
        let centroids = Array2::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0));
        let table = CentroidTable::from_centroids(centroids, 0.5).map_err(|e| e.to_string())?;
        let v = Array2::from_shape_fn((16, 8), |_| rng.random_range(-2.0..2.0));
        let cg = table.grad(&v, &labels, Reduction::Sum).map_err(|e| e.to_string())?;
        let center = fd_max_rel_error(&v, &cg, 1e-5, |w| table.loss(w, &labels, Reduction::Sum).unwrap());
        for (name, err) in [("cross_entropy", ce), ("entropy_loss", ent), ("center_loss", center)] {
            ensure(err < 1e-4, || format!("{name} instance {seed}: relative error {err:e}"))?;
            worst = worst.max(err);
        }
    }
    budget(t.elapsed(), Duration::from_secs(30))?;
    Ok(format!("3 losses x 20 instances, max relative error {worst:.2e}"))
}

fn random_image(rng: &mut ChaCha8Rng) -> Image {
    let n = rng.random_range(1..9);
    let c = rng.random_range(1..4);
    Image::new(n, n, c, (0..n * n * c).map(|_| rng.random()).collect()).unwrap()
}

fn structural_invariants() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let img = random_image(&mut rng);
        let (a, b) = (rng.random_range(0..4), rng.random_range(0..4));
        let composed = rot90(&rot90(&img, a).unwrap(), b).unwrap();
        ensure(composed == rot90(&img, (a + b) % 4).unwrap(), || {
            "rot90 composition".into()
        })?;
        ensure(rot90(&img, 0).unwrap() == img, || "rot90 identity".into())?;
        let n = img.height();
        let q = rot90(&img, 1).unwrap();
        ensure(
            (0..n).all(|y| (0..n).all(|x| q.get(y, x, 0) == img.get(n - 1 - x, y, 0))),
            || "rot90 clockwise permutation".into(),
        )?;
    }
    let non_square = Image::new(2, 3, 1, vec![0.0; 6]).unwrap();
    ensure(matches!(rot90(&non_square, 1), Err(RosError::Shape(_))), || {
        "non-square accepted".into()
    })?;

    for n_known in 1..=30 {
        for y in 0..n_known {
            for i in 0..4 {
                let z = make_multi_rotation_label(y, i, n_known).map_err(|e| e.to_string())?;
                ensure(z == 4 * y + i, || format!("z({y},{i}) = {z}"))?;
                ensure(split_multi_rotation_label(z, n_known).ok() == Some((y, i)), || {
                    format!("inverse of {z}")
                })?;
            }
        }
    }

    for _ in 0..200 {
        let logits = Array2::from_shape_fn((4, 9), |_| rng.random_range(-60.0..60.0));
        for row in softmax_rows(&logits).rows() {
            within("softmax row sum", row.sum(), 1.0, 1e-6)?;
        }
    }

    let mut records = Vec::new();
    for id in 0..1000 {
        let k = rng.random_range(1..8);
        let sharp: f64 = rng.random_range(0.1..6.0);
        let logits = Array2::from_shape_fn((4, 4 * k), |_| rng.random_range(-sharp..sharp));
        let rows = softmax_rows(&logits);
        let r = normality_record(id, rows.view(), ScoreMode::Full).map_err(|e| e.to_string())?;
        ensure((0.0..=1.0).contains(&r.normality), || {
            format!("N = {} out of [0,1]", r.normality)
        })?;
        records.push(r);
    }
    let sep = separate_target(&records).map_err(|e| e.to_string())?;
    let mean = records.iter().map(|r| r.normality).sum::<f64>() / records.len() as f64;
    let mut seen = vec![0u8; records.len()];
    for &id in sep.known_ids.iter().chain(&sep.unknown_ids) {
        seen[id] += 1;
    }
    ensure(seen.iter().all(|&c| c == 1), || {
        "separation is not a disjoint cover".into()
    })?;
    for r in &records {
        let known = sep.known_ids.binary_search(&r.sample_id).is_ok();
        ensure(known == (r.normality >= mean), || {
            format!("sample {} on wrong side", r.sample_id)
        })?;
    }
    budget(t.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "1000 tuples in [0,1]; {} known / {} unknown",
        sep.known_ids.len(),
        sep.unknown_ids.len()
    ))
}

fn tuple(rows: [[f64; 8]; 4]) -> Array2<f64> {
    Array2::from_shape_fn((4, 8), |(i, j)| rows[i][j])
}

fn hand_traced_scores() -> Outcome {
    let t = Instant::now();
    let u = [0.125; 8];
    let tuples = [
        tuple([
            [0.7, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0],
            [0.0, 0.6, 0.0, 0.0, 0.0, 0.4, 0.0, 0.0],
            [0.0, 0.0, 0.8, 0.0, 0.0, 0.0, 0.2, 0.0],
            [0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5],
        ]),
        tuple([
            [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        ]),
        tuple([u, u, u, u]),
        tuple([[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]; 4]),
        tuple([
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            u,
            u,
        ]),
    ];
    // (rotation score, entropy score, N) traced by hand
    let expected = [
        (0.65, 0.702_152_534_3, 0.702_152_534_3),
        (1.0, 1.0, 1.0),
        (0.125, 0.0, 0.125),
        (0.25, 1.0, 1.0),
        (0.5625, 0.5, 0.5625),
    ];
    let mut records: Vec<NormalityRecord> = Vec::new();
    for (id, (rows, (rot, ent, n))) in tuples.iter().zip(expected).enumerate() {
        let r = normality_record(id, rows.view(), ScoreMode::Full).map_err(|e| e.to_string())?;
        within(&format!("tuple {id} rotation"), r.rotation_score, rot, 1e-9)?;
        within(&format!("tuple {id} entropy"), r.entropy_score, ent, 1e-9)?;
        within(&format!("tuple {id} N"), r.normality, n, 1e-9)?;
        records.push(r);
    }
    let sep = separate_target(&records).map_err(|e| e.to_string())?;
    within("threshold", sep.threshold, 0.677_930_506_9, 1e-9)?;
    ensure(sep.known_ids == [0, 1, 3] && sep.unknown_ids == [2, 4], || {
        format!("known {:?} unknown {:?}", sep.known_ids, sep.unknown_ids)
    })?;
    budget(t.elapsed(), Duration::from_secs(1))?;
    Ok("5 tuples, threshold 0.677931, known {0,1,3}".into())
}

struct Shared {
    base: ExperimentConfig,
    metrics_seed0: Vec<u8>,
    per_seed: Duration,
    _dirs: Vec<tempfile::TempDir>,
}

fn synthetic_end_to_end(shared: &mut Option<Shared>) -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = ExperimentConfig {
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::synthetic_preset()
    };
    let data = base.load_data().map_err(|e| e.to_string())?;
    let t_ros = Instant::now();
    let ros = run_pipeline_on(&base, &data).map_err(|e| e.to_string())?;
    let per_seed = t_ros.elapsed() / base.seeds.len() as u32;
    let baseline_cfg = base.with_switch("source_only").map_err(|e| e.to_string())?;
    let baseline = run_pipeline_on(&baseline_cfg, &data).map_err(|e| e.to_string())?;

    let auc = ros.aggregate.auc_roc.ok_or("no AUC reported")?;
    let (hos_ros, hos_base, unk) = (ros.aggregate.hos, baseline.aggregate.hos, ros.aggregate.unk);
    let detail = format!(
        "AUC {auc:.4}, HOS {hos_ros:.1} vs baseline {hos_base:.1}, UNK {unk:.1}, OS* {:.1}",
        ros.aggregate.os_star
    );
    let metrics_seed0 =
        std::fs::read(RunPaths::new(dir.path(), &base.config_hash(), 0).metrics()).map_err(|e| e.to_string())?;
    *shared = Some(Shared {
        base,
        metrics_seed0,
        per_seed,
        _dirs: vec![dir],
    });
    ensure(auc >= 0.85, || format!("Stage I AUC below 0.85: {detail}"))?;
    ensure(hos_ros >= hos_base + 10.0, || format!("HOS gain below 10: {detail}"))?;
    ensure(unk >= 50.0, || format!("UNK below 50: {detail}"))?;
    budget(t.elapsed(), Duration::from_secs(15 * 60))?;
    Ok(format!("{detail}, {:.0?}", t.elapsed()))
}

fn ablation_harness() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = ExperimentConfig {
        samples_per_class: 40,
        epochs_stage1: 1,
        epochs_stage2: 1,
        seeds: vec![0],
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::synthetic_preset()
    };
    let both = ExperimentConfig {
        no_rot_score: true,
        no_ent_score: true,
        ..base.clone()
    };
    ensure(matches!(both.validate(), Err(RosError::Validation(_))), || {
        "no_rot_score + no_ent_score accepted".into()
    })?;
    let rows = run_ablations(&base).map_err(|e| e.to_string())?;
    let mut expected = vec!["ros".to_string()];
    expected.extend(ABLATION_SWITCHES.iter().map(|s| s.to_string()));
    let labels: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
    ensure(labels == expected, || format!("labels {labels:?}"))?;
    let mut hashes: Vec<&str> = rows.iter().map(|r| r.config_hash.as_str()).collect();
    hashes.sort_unstable();
    hashes.dedup();
    ensure(hashes.len() == rows.len(), || "ablations share a config hash".into())?;
    ensure(dir.path().join("ablations.csv").exists(), || {
        "ablations.csv missing".into()
    })?;
    for r in &rows {
        println!(
            "    {:<20} AUC {:>6} HOS {:5.1} OS* {:5.1} UNK {:5.1}",
            r.label,
            r.auc_roc.map_or("n/a".into(), |a| format!("{a:.3}")),
            r.report.hos,
            r.report.os_star,
            r.report.unk
        );
    }
    Ok(format!("{} configurations, distinct labels and hashes", rows.len()))
}

fn determinism(shared: &Option<Shared>) -> Outcome {
    let shared = shared
        .as_ref()
        .ok_or("criterion 6 did not produce a run to compare with")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let again = ExperimentConfig {
        seeds: vec![0],
        output_dir: dir.path().to_path_buf(),
        ..shared.base.clone()
    };
    ensure(again.config_hash() == shared.base.config_hash(), || {
        "config hash changed".into()
    })?;
    let t = Instant::now();
    let data = again.load_data().map_err(|e| e.to_string())?;
    run_pipeline_on(&again, &data).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let second =
        std::fs::read(RunPaths::new(dir.path(), &again.config_hash(), 0).metrics()).map_err(|e| e.to_string())?;
    ensure(second == shared.metrics_seed0, || {
        "metrics.json differs between executions".into()
    })?;
    budget(elapsed, shared.per_seed * 2 + Duration::from_secs(5))?;
    Ok(format!("{} bytes identical, rerun {elapsed:.0?}", second.len()))
}

fn main() {
    let mut shared = None;
    let mut failures = 0;
    let mut report = |n: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(o) => o,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into())),
        };
        match outcome {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail}) [{:.1?}]", t.elapsed()),
            Err(why) => {
                failures += 1;
                println!("criterion {n} {name}: FAIL ({why}) [{:.1?}]", t.elapsed());
            }
        }
    };
    report(1, "metric reference values", &mut metric_numbers);
    report(2, "oracle equivalence", &mut oracle_equivalence);
    report(3, "gradient verification", &mut gradients);
    report(4, "structural invariants", &mut structural_invariants);
    report(5, "normality-score hand trace", &mut hand_traced_scores);
    report(6, "synthetic end-to-end", &mut || synthetic_end_to_end(&mut shared));
    report(7, "ablation harness", &mut ablation_harness);
    report(8, "determinism", &mut || determinism(&shared));
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 8 acceptance criteria passed");
}
