//! Open-set metrics from raw (prediction, truth) pairs, aggregated over runs
//! and printed as a results table.

use ros_osda::metrics::{aggregate_runs, format_table, hos, openness, os, MetricsReport};
use ros_osda::stage2::PredictionRecord;

fn run(pairs: &[(usize, usize)]) -> MetricsReport {
    let preds: Vec<PredictionRecord> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(p, t))| PredictionRecord {
            sample_id: i,
            predicted_label: p,
            ground_truth: t,
            confidence: vec![],
        })
        .collect();
    MetricsReport::from_predictions(&preds, 3, 6, None, "demo").expect("all classes present")
}

fn main() -> ros_osda::Result<()> {
    let a = run(&[(0, 0), (1, 1), (2, 2), (3, 3), (3, 3), (0, 3)]);
    let b = run(&[(0, 0), (2, 1), (2, 2), (3, 3), (1, 3), (3, 3)]);
    let mean = aggregate_runs(&[a.clone(), b.clone()])?;
    print!("{}", format_table(&[("run a".into(), a), ("run b".into(), b)]));
    println!("HOS {:.1} ± {:.1} over {} runs", mean.hos, mean.std.hos, mean.n_runs);
    println!("OS with 3 known classes, OS*=100 UNK=0: {:.1}", os(100.0, 0.0, 3));
    println!("HOS(88.4, 76.7) = {:.1}", hos(88.4, 76.7));
    println!("openness 25 of 65 classes: {:.3}", openness(25, 65)?);
    Ok(())
}
