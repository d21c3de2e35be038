//! Runs the base configuration plus one variant per ablation switch and
//! writes ablations.csv.

use ros_osda::harness::{run_ablations, ExperimentConfig};

fn main() -> ros_osda::Result<()> {
    let base = ExperimentConfig {
        samples_per_class: 50,
        epochs_stage1: 1,
        epochs_stage2: 1,
        seeds: vec![0],
        output_dir: std::env::temp_dir().join("ros-ablations"),
        ..ExperimentConfig::synthetic_preset()
    };
    for row in run_ablations(&base)? {
        println!(
            "{:<20} {}  AUC {:>6}  OS* {:5.1}  UNK {:5.1}  HOS {:5.1}",
            row.label,
            row.config_hash,
            row.auc_roc.map_or("-".into(), |a| format!("{a:.3}")),
            row.report.os_star,
            row.report.unk,
            row.report.hos
        );
    }
    println!("{}", base.output_dir.join("ablations.csv").display());
    Ok(())
}
