//! Generates the synthetic source/target pair, prints its shape and writes it
//! out in the image-folder layout so it can be reloaded as a folder dataset.
//!
//! cargo run --release --example synth_dataset -- /tmp/ros-synth

use ros_osda::dataset::{export_folder, generate_pool, generate_synthetic, SyntheticSpec};

fn main() -> ros_osda::Result<()> {
    let spec = SyntheticSpec {
        samples_per_class: 20,
        ..Default::default()
    };
    let (source, target, split) = generate_synthetic(&spec)?;
    println!("known   {:?}", split.known);
    println!("unknown {:?}", split.unknown);
    println!("openness {:.3}", split.openness());
    println!(
        "source {} samples, target {} samples, {}px",
        source.len(),
        target.len(),
        spec.image_size
    );

    let unknown_in_target = target
        .samples
        .iter()
        .filter(|s| s.class_label >= split.n_known())
        .count();
    println!("target unknown samples {unknown_in_target}");

    let dest = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("ros-synth"), Into::into);
    let (src_pool, tgt_pool) = generate_pool(&spec)?;
    export_folder(&dest, &src_pool, &tgt_pool, "source", "target")?;
    println!("wrote {}", dest.display());
    Ok(())
}
