//! Trains Stage I on a small synthetic split and reports how well the
//! normality score ranks known target samples above unknown ones.

use ros_osda::harness::{evaluate_stage1_only, ExperimentConfig};

fn main() -> ros_osda::Result<()> {
    let config = ExperimentConfig {
        samples_per_class: 60,
        epochs_stage1: 2,
        seeds: vec![0, 1],
        output_dir: std::env::temp_dir().join("ros-stage1-auc"),
        ..ExperimentConfig::synthetic_preset()
    };
    for cfg in [
        config.clone(),
        config.with_switch("no_anchor_s1")?,
        config.with_switch("no_rot_score")?,
    ] {
        let report = evaluate_stage1_only(&cfg)?;
        println!(
            "{:<14} AUC {:.4} ± {:.4} over seeds {:?}",
            report.label,
            report.auc_mean,
            report.auc_std,
            report.auc_per_seed.iter().map(|(s, _)| s).collect::<Vec<_>>()
        );
    }
    Ok(())
}
