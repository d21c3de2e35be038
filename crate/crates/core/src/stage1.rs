//! Stage I: train the encoder with the semantic (C1) and multi-rotation (R1)
//! heads on the source, score every target sample for normality, and split
//! the target into known and unknown parts around the mean score.

use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{rot90, Dataset, Image, NUM_ROTATIONS};
use crate::error::{Result, RosError};
use crate::losses::{row_entropy, softmax_rows, stage1_objective, CentroidTable, LossWeights, Reduction, Stage1Batch};
use crate::network::{
    gather_columns, split_rotation_grad, stack_rotation_input, to_columns, to_rows, HeadRole, Mode, NetworkBundle,
    HEAD_HIDDEN,
};
use crate::optim::{sgd_step, InverseDecay, SgdConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub epochs: usize,
    /// Quadruples per batch; each batch holds `batch_size / 4` anchors with all four rotations.
    pub batch_size: usize,
    pub schedule: InverseDecay,
    pub sgd: SgdConfig,
    pub encoder_lr_mult: f32,
    pub head_lr_mult: f32,
    pub weights: LossWeights,
    pub reduction: Reduction,
    pub centroid_alpha: f64,
    /// Relative rotation (`[E(x), E(x̃)]`); `false` feeds the rotated features twice.
    pub use_anchor: bool,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 32,
            schedule: InverseDecay::default(),
            sgd: SgdConfig::default(),
            encoder_lr_mult: 10.0,
            head_lr_mult: 10.0,
            weights: LossWeights::default(),
            reduction: Reduction::Mean,
            centroid_alpha: 0.5,
            use_anchor: true,
            seed: 0,
        }
    }
}

/// Mean value of every loss term over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub terms: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub warnings: Vec<String>,
}

impl TrainingLog {
    /// One JSON object per line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for w in &self.warnings {
            out.push_str(&serde_json::json!({ "warning": w }).to_string());
            out.push('\n');
        }
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("log serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Default)]
pub(crate) struct EpochAccumulator {
    sums: BTreeMap<String, f64>,
    total: f64,
    steps: usize,
}

impl EpochAccumulator {
    pub(crate) fn add(&mut self, breakdown: &crate::losses::LossBreakdown, total: f64) {
        for t in &breakdown.terms {
            *self.sums.entry(t.name.clone()).or_default() += t.value;
        }
        self.total += total;
        self.steps += 1;
    }

    pub(crate) fn finish(self, stage: &str, epoch: usize, lr: f64) -> EpochLog {
        let n = self.steps.max(1) as f64;
        EpochLog {
            stage: stage.to_owned(),
            epoch,
            lr,
            total: self.total / n,
            terms: self.sums.into_iter().map(|(k, v)| (k, v / n)).collect(),
        }
    }
}

/// Deterministic RNG for `(seed, epoch)`.
pub(crate) fn epoch_rng(seed: u64, salt: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(epoch as u64 + 1);
    rng
}

pub(crate) fn check_finite(stage: &str, epoch: usize, step: usize, total: f64) -> Result<()> {
    if total.is_finite() {
        Ok(())
    } else {
        Err(RosError::Training {
            stage: stage.to_owned(),
            reason: format!("non-finite loss {total} at epoch {epoch}, step {step}"),
        })
    }
}

/// Trains E, C1 and R1 on the relative-rotation expansion of the source set.
pub fn train_stage1(bundle: &mut NetworkBundle, source: &Dataset, config: &Stage1Config) -> Result<TrainingLog> {
    if source.is_empty() {
        return Err(RosError::validation("stage 1 needs a nonempty source set"));
    }
    if config.batch_size < NUM_ROTATIONS {
        return Err(RosError::validation(
            "stage 1 batch size must hold at least one anchor (4 quadruples)",
        ));
    }
    config.weights.validate()?;
    bundle.head(HeadRole::C1)?;
    bundle.head(HeadRole::R1)?;
    let n_known = bundle.n_known;
    if let Some(bad) = source.samples.iter().find(|s| s.class_label >= n_known) {
        return Err(RosError::validation(format!(
            "source sample {} has label {} but the network knows {n_known} classes",
            bad.sample_id, bad.class_label
        )));
    }

    bundle.set_lr_multipliers(config.encoder_lr_mult, config.head_lr_mult, 1.0);
    bundle.zero_grad();
    let mut table = CentroidTable::new(NUM_ROTATIONS * n_known, HEAD_HIDDEN, config.centroid_alpha)?;
    let anchors_per_batch = config.batch_size / NUM_ROTATIONS;
    let steps_per_epoch = source.len().div_ceil(anchors_per_batch);
    let total_steps = (config.epochs * steps_per_epoch).max(1);
    let mut log = TrainingLog::default();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..source.len()).collect();
        order.shuffle(&mut epoch_rng(config.seed, 1, epoch));
        let mut acc = EpochAccumulator::default();
        let mut lr = config.schedule.lr(0.0);
        for (batch_idx, chunk) in order.chunks(anchors_per_batch).enumerate() {
            lr = config.schedule.lr(step as f64 / total_steps as f64);
            let (breakdown, total) = stage1_step(bundle, source, chunk, config, &mut table, lr)?;
            check_finite("stage1", epoch, batch_idx, total)?;
            acc.add(&breakdown, total);
            step += 1;
        }
        let entry = acc.finish("stage1", epoch, lr);
        log::debug!("stage1 epoch {epoch}: total {:.4}", entry.total);
        log.epochs.push(entry);
    }
    Ok(log)
}

fn stage1_step(
    bundle: &mut NetworkBundle,
    source: &Dataset,
    chunk: &[usize],
    config: &Stage1Config,
    table: &mut CentroidTable,
    lr: f64,
) -> Result<(crate::losses::LossBreakdown, f64)> {
    let b = chunk.len();
    let anchors: Vec<&Image> = chunk.iter().map(|&i| &source.samples[i].image).collect();
    let rotated: Vec<Image> = (1..NUM_ROTATIONS)
        .flat_map(|r| anchors.iter().map(move |img| rot90(img, r)))
        .collect::<Result<_>>()?;
    let mut batch: Vec<&Image> = anchors.clone();
    batch.extend(rotated.iter());

    // column r*b + j holds rotation r of anchor j; rotation 0 is the anchor itself
    let feats = bundle.encode(&batch, Mode::Train)?;
    let anchor_idx: Vec<usize> = (0..NUM_ROTATIONS).flat_map(|_| 0..b).collect();
    let anchor_feats = gather_columns(&feats, &anchor_idx);
    let rot_input = stack_rotation_input(&anchor_feats, &feats, config.use_anchor)?;

    let (sem_logits, _) = bundle
        .head_mut(HeadRole::C1)?
        .forward(&feats.slice(s![.., ..b]).to_owned(), Mode::Train)?;
    let (rot_logits, v) = bundle.head_mut(HeadRole::R1)?.forward(&rot_input, Mode::Train)?;

    let semantic_labels: Vec<usize> = chunk.iter().map(|&i| source.samples[i].class_label).collect();
    let rotation_labels: Vec<usize> = (0..NUM_ROTATIONS)
        .flat_map(|r| semantic_labels.iter().map(move |&y| NUM_ROTATIONS * y + r))
        .collect();
    let semantic_probs = softmax_rows(&to_rows(&sem_logits));
    let rotation_probs = softmax_rows(&to_rows(&rot_logits));
    let penultimate = to_rows(&v);
    let loss = stage1_objective(
        &Stage1Batch {
            semantic_probs: &semantic_probs,
            semantic_labels: &semantic_labels,
            rotation_probs: &rotation_probs,
            rotation_labels: &rotation_labels,
            penultimate: &penultimate,
        },
        &config.weights,
        table,
        config.reduction,
    )?;
    if !loss.total.is_finite() {
        return Ok((loss.breakdown, loss.total));
    }

    let grad_rot_in = bundle.head_mut(HeadRole::R1)?.backward(
        &to_columns(&loss.grad_rotation_logits),
        Some(&to_columns(&loss.grad_penultimate)),
    );
    let (grad_top, mut grad_feats) = split_rotation_grad(&grad_rot_in);
    if config.use_anchor {
        for (col, &a) in anchor_idx.iter().enumerate() {
            let top = grad_top.column(col).to_owned();
            let mut dst = grad_feats.column_mut(a);
            dst += &top;
        }
    } else {
        grad_feats += &grad_top;
    }
    let grad_sem_in = bundle
        .head_mut(HeadRole::C1)?
        .backward(&to_columns(&loss.grad_semantic_logits), None);
    {
        let mut anchor_grad = grad_feats.slice_mut(s![.., ..b]);
        anchor_grad += &grad_sem_in;
    }
    bundle.encoder.backward(&grad_feats);
    sgd_step(bundle.params_mut(), lr, &config.sgd);
    bundle.zero_grad();
    table.update(&penultimate, &rotation_labels)?;
    Ok((loss.breakdown, loss.total))
}

/// Which components enter the normality score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// `max(rotation score, entropy score)`.
    #[default]
    Full,
    /// Entropy score only (rotation score ablated).
    EntropyOnly,
    /// Rotation score only (entropy score ablated).
    RotationOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityRecord {
    pub sample_id: usize,
    pub rotation_score: f64,
    pub entropy_score: f64,
    pub normality: f64,
    /// R1 softmax for rotations 0..3, each of width `4|C_s|`.
    #[serde(skip)]
    pub rotation_probs: Vec<Vec<f64>>,
}

fn check_rotation_rows(rows: ArrayView2<f64>) -> Result<usize> {
    if rows.nrows() != NUM_ROTATIONS || rows.ncols() == 0 || !rows.ncols().is_multiple_of(NUM_ROTATIONS) {
        return Err(RosError::shape(format!(
            "expected 4 rows of width 4·|C_s|, got {:?}",
            rows.dim()
        )));
    }
    Ok(rows.ncols() / NUM_ROTATIONS)
}

/// `(1/4) · max_k Σ_i ẑ_i[4k + i]`: how consistently the four rotated views agree
/// on one class with the right orientation.
pub fn rotation_score(rows: ArrayView2<f64>) -> Result<f64> {
    let n_known = check_rotation_rows(rows)?;
    let best = (0..n_known)
        .map(|k| {
            (0..NUM_ROTATIONS)
                .map(|i| rows[[i, NUM_ROTATIONS * k + i]])
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best / NUM_ROTATIONS as f64)
}

/// `1 − mean_i H(ẑ_i)` with `H` the Shannon entropy normalized by `log(4|C_s|)`.
pub fn entropy_score(rows: ArrayView2<f64>) -> Result<f64> {
    check_rotation_rows(rows)?;
    let norm = (rows.ncols() as f64).ln();
    let mean_h = rows
        .axis_iter(Axis(0))
        .map(|r| if norm > 0.0 { row_entropy(r) / norm } else { 0.0 })
        .sum::<f64>()
        / NUM_ROTATIONS as f64;
    Ok((1.0 - mean_h).clamp(0.0, 1.0))
}

/// Builds the record for one sample from its four R1 softmax rows.
pub fn normality_record(sample_id: usize, rows: ArrayView2<f64>, mode: ScoreMode) -> Result<NormalityRecord> {
    let rotation = rotation_score(rows)?;
    let entropy = entropy_score(rows)?;
    let normality = match mode {
        ScoreMode::Full => rotation.max(entropy),
        ScoreMode::EntropyOnly => entropy,
        ScoreMode::RotationOnly => rotation,
    };
    Ok(NormalityRecord {
        sample_id,
        rotation_score: rotation,
        entropy_score: entropy,
        normality,
        rotation_probs: rows.axis_iter(Axis(0)).map(|r| r.to_vec()).collect(),
    })
}

const SCORE_CHUNK: usize = 128;

/// Scores every target sample with E and R1 in evaluation mode.
pub fn compute_normality_scores(
    bundle: &mut NetworkBundle,
    target: &Dataset,
    use_anchor: bool,
    mode: ScoreMode,
) -> Result<Vec<NormalityRecord>> {
    bundle.head(HeadRole::R1)?;
    let mut records = Vec::with_capacity(target.len());
    for chunk in target.samples.chunks(SCORE_CHUNK) {
        let anchors: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        let anchor_feats = bundle.encode(&anchors, Mode::Eval)?;
        let mut per_rotation = Vec::with_capacity(NUM_ROTATIONS);
        for i in 0..NUM_ROTATIONS {
            let rotated_feats = if i == 0 {
                anchor_feats.clone()
            } else {
                let rotated: Vec<Image> = anchors.iter().map(|img| rot90(img, i)).collect::<Result<_>>()?;
                let refs: Vec<&Image> = rotated.iter().collect();
                bundle.encode(&refs, Mode::Eval)?
            };
            let out = bundle.rotation_from_features(&anchor_feats, &rotated_feats, use_anchor, HeadRole::R1)?;
            per_rotation.push(out.probs);
        }
        for (j, sample) in chunk.iter().enumerate() {
            let rows = Array2::from_shape_fn((NUM_ROTATIONS, per_rotation[0].ncols()), |(i, m)| {
                per_rotation[i][[j, m]]
            });
            records.push(normality_record(sample.sample_id, rows.view(), mode)?);
        }
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Known,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationResult {
    pub threshold: f64,
    pub known_ids: Vec<usize>,
    pub unknown_ids: Vec<usize>,
    pub records: Vec<NormalityRecord>,
}

impl SeparationResult {
    pub fn partition_of(&self, sample_id: usize) -> Option<Partition> {
        if self.known_ids.binary_search(&sample_id).is_ok() {
            Some(Partition::Known)
        } else if self.unknown_ids.binary_search(&sample_id).is_ok() {
            Some(Partition::Unknown)
        } else {
            None
        }
    }

    /// No target sample is treated as known or unknown (source-only training).
    pub fn empty() -> Self {
        Self {
            threshold: f64::NAN,
            known_ids: Vec::new(),
            unknown_ids: Vec::new(),
            records: Vec::new(),
        }
    }
}

/// Threshold at the mean normality; a sample is known iff `N ≥ mean`.
pub fn separate_target(records: &[NormalityRecord]) -> Result<SeparationResult> {
    if records.is_empty() {
        return Err(RosError::domain("cannot separate an empty target set"));
    }
    let threshold = records.iter().map(|r| r.normality).sum::<f64>() / records.len() as f64;
    let (mut known_ids, mut unknown_ids) = (Vec::new(), Vec::new());
    for r in records {
        if r.normality >= threshold {
            known_ids.push(r.sample_id);
        } else {
            unknown_ids.push(r.sample_id);
        }
    }
    known_ids.sort_unstable();
    unknown_ids.sort_unstable();
    Ok(SeparationResult {
        threshold,
        known_ids,
        unknown_ids,
        records: records.to_vec(),
    })
}

/// CSV with `sample_id,rotation_score,entropy_score,normality,assigned_partition`, six decimals.
pub fn scores_to_csv(separation: &SeparationResult) -> String {
    let mut out = String::from("sample_id,rotation_score,entropy_score,normality,assigned_partition\n");
    for r in &separation.records {
        let part = match separation.partition_of(r.sample_id) {
            Some(Partition::Known) => "known",
            _ => "unknown",
        };
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            r.sample_id, r.rotation_score, r.entropy_score, r.normality, part
        ));
    }
    out
}
