//! Recomputes metrics from predictions.csv and scores.csv alone, as written by
//! a run or by any other model.

use ros_osda::harness::score_files;

fn main() -> ros_osda::Result<()> {
    let dir = std::env::temp_dir().join("ros-score-files");
    std::fs::create_dir_all(&dir).map_err(|e| ros_osda::RosError::io(&dir, e))?;
    let preds = dir.join("predictions.csv");
    let scores = dir.join("scores.csv");
    let write = |p: &std::path::Path, s: &str| std::fs::write(p, s).map_err(|e| ros_osda::RosError::io(p, e));
    write(
        &preds,
        "sample_id,predicted_label,ground_truth,max_confidence\n\
         0,0,0,0.91\n1,1,1,0.84\n2,0,1,0.55\n3,2,2,0.62\n4,2,2,0.70\n5,1,2,0.51\n",
    )?;
    write(
        &scores,
        "sample_id,rotation_score,entropy_score,normality,partition\n\
         0,0.9,0.8,0.9,known\n1,0.8,0.7,0.8,known\n2,0.6,0.5,0.6,known\n\
         3,0.2,0.1,0.2,unknown\n4,0.3,0.3,0.3,unknown\n5,0.7,0.4,0.7,known\n",
    )?;
    let report = score_files(&preds, Some(&scores), 2, "external")?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}
