//! Rotations and the joint class-rotation labels used by the Stage I heads.

use ros_osda::dataset::{build_rotation_set, make_multi_rotation_label, rot90, split_multi_rotation_label, Image};
use ros_osda::dataset::{generate_synthetic, SyntheticSpec};

fn show(img: &Image) {
    for y in 0..img.height() {
        let row: Vec<String> = (0..img.width()).map(|x| format!("{:.0}", img.get(y, x, 0))).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> ros_osda::Result<()> {
    let img = Image::new(3, 3, 1, (1..=9).map(|v| v as f32).collect())?;
    for i in 0..4 {
        println!("rot90 x{i}");
        show(&rot90(&img, i)?);
    }

    let n_known = 3;
    for y in 0..n_known {
        let zs: Vec<usize> = (0..4)
            .map(|i| make_multi_rotation_label(y, i, n_known).unwrap())
            .collect();
        println!("class {y} -> z {zs:?}");
    }
    assert_eq!(split_multi_rotation_label(7, n_known)?, (1, 3));

    let spec = SyntheticSpec {
        n_known: 2,
        n_unknown: 1,
        samples_per_class: 2,
        image_size: 16,
        ..Default::default()
    };
    let (source, _, _) = generate_synthetic(&spec)?;
    let quads = build_rotation_set(&source.samples, spec.n_known)?;
    println!("{} samples -> {} rotated pairs", source.len(), quads.len());
    for q in quads.iter().take(4) {
        println!("sample {} rotation {} label {}", q.sample_id, q.rotation, q.label);
    }
    Ok(())
}
