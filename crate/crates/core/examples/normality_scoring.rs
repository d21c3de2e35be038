//! Normality scores and the mean-threshold separation on hand-made rotation
//! posteriors with two known classes.

use ndarray::Array2;
use ros_osda::stage1::{normality_record, separate_target, ScoreMode};

fn main() -> ros_osda::Result<()> {
    let confident = Array2::from_shape_fn((4, 8), |(i, j)| if j == 4 + i { 1.0 } else { 0.0 });
    let uniform = Array2::from_elem((4, 8), 0.125);
    let mixed = Array2::from_shape_fn((4, 8), |(i, j)| match (i, j) {
        (0, 0) => 0.7,
        (0, 4) => 0.3,
        (1, 1) => 0.6,
        (1, 5) => 0.4,
        (2, 2) => 0.8,
        (2, 6) => 0.2,
        (3, 3) | (3, 7) => 0.5,
        _ => 0.0,
    });
    // right class, wrong rotations: low rotation score, high entropy score
    let stuck = Array2::from_shape_fn((4, 8), |(_, j)| if j == 0 { 1.0 } else { 0.0 });

    let tuples = [confident, uniform, mixed, stuck];
    let mut records = Vec::new();
    for (id, rows) in tuples.iter().enumerate() {
        records.push(normality_record(id, rows.view(), ScoreMode::Full)?);
    }
    println!("id  rot     ent     N");
    for r in &records {
        println!(
            "{:<3} {:.4}  {:.4}  {:.4}",
            r.sample_id, r.rotation_score, r.entropy_score, r.normality
        );
    }
    let sep = separate_target(&records)?;
    println!("threshold {:.4}", sep.threshold);
    println!("known {:?} unknown {:?}", sep.known_ids, sep.unknown_ids);

    let rot_only = normality_record(3, tuples[3].view(), ScoreMode::RotationOnly)?;
    println!("sample 3 with the entropy score ablated: N = {:.4}", rot_only.normality);
    Ok(())
}
