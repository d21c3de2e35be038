//! Both stages end to end against the source-only baseline, with every
//! artifact written under the output directory.
//!
//! cargo run --release --example full_pipeline -- /tmp/ros-run

use ros_osda::harness::{run_pipeline_on, ExperimentConfig, RunPaths};

fn main() -> ros_osda::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("ros-run"), Into::into);
    let config = ExperimentConfig {
        samples_per_class: 80,
        seeds: vec![0],
        output_dir: out,
        ..ExperimentConfig::synthetic_preset()
    };
    let data = config.load_data()?;
    let ros = run_pipeline_on(&config, &data)?;
    let baseline = run_pipeline_on(&config.with_switch("source_only")?, &data)?;

    for (name, r) in [("ROS", &ros.aggregate), ("source only", &baseline.aggregate)] {
        println!(
            "{name:<12} OS* {:5.1}  UNK {:5.1}  OS {:5.1}  HOS {:5.1}",
            r.os_star, r.unk, r.os, r.hos
        );
    }
    println!("AUC-ROC {:.4}", ros.aggregate.auc_roc.unwrap_or(f64::NAN));
    let paths = RunPaths::new(&config.output_dir, &ros.config_hash, 0);
    println!("artifacts in {}", paths.dir.display());
    Ok(())
}
