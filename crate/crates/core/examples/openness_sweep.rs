//! Varies the number of known classes over shifted class windows and plots
//! OS*, UNK and HOS against openness.

use ros_osda::harness::{run_openness_sweep, ExperimentConfig, OpennessSweepSpec};

fn main() -> ros_osda::Result<()> {
    let config = ExperimentConfig {
        n_known: 4,
        n_unknown: 4,
        samples_per_class: 40,
        epochs_stage1: 2,
        epochs_stage2: 2,
        seeds: vec![0],
        output_dir: std::env::temp_dir().join("ros-sweep"),
        ..ExperimentConfig::synthetic_preset()
    };
    let sweep = OpennessSweepSpec::consecutive(8, &[5, 3, 2], 2)?;
    let report = run_openness_sweep(&config, &sweep)?;
    println!("known  openness  OS*    UNK    HOS");
    for p in &report.points {
        println!(
            "{:<6} {:<9.3} {:<6.1} {:<6.1} {:.1}",
            p.n_known, p.openness, p.os_star, p.unk, p.hos
        );
    }
    println!("{}", report.series_path.display());
    println!("{}", report.plot_path.display());
    Ok(())
}
