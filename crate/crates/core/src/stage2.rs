//! Stage II: adapt E with C2 (known classes + unknown) and R2 on the source,
//! the target part separated as unknown, and the part separated as known.

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{rot90, Dataset, Image, NUM_ROTATIONS};
use crate::error::{Result, RosError};
use crate::losses::{softmax_rows, stage2_objective, LossBreakdown, LossWeights, Reduction, Stage2Batch};
use crate::network::{split_rotation_grad, stack_rotation_input, to_columns, to_rows, HeadRole, Mode, NetworkBundle};
use crate::optim::{sgd_step, InverseDecay, SgdConfig};
use crate::stage1::{check_finite, epoch_rng, EpochAccumulator, SeparationResult, TrainingLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub epochs: usize,
    /// Nominal batch size of each stream.
    pub batch_size: usize,
    pub schedule: InverseDecay,
    pub sgd: SgdConfig,
    pub encoder_lr_mult: f32,
    pub head_lr_mult: f32,
    /// Extra learning-rate factor on the unknown-class row of C2.
    pub unknown_lr_mult: f32,
    pub weights: LossWeights,
    pub reduction: Reduction,
    pub use_anchor: bool,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 32,
            schedule: InverseDecay::default(),
            sgd: SgdConfig::default(),
            encoder_lr_mult: 10.0,
            head_lr_mult: 10.0,
            unknown_lr_mult: 2.0,
            weights: LossWeights::default(),
            reduction: Reduction::Mean,
            use_anchor: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamBatchPlan {
    pub source_batch: usize,
    pub unknown_batch: usize,
    pub known_batch: usize,
    pub iterations: usize,
}

impl StreamBatchPlan {
    /// Equal nominal batch per stream (capped by the stream size); the epoch
    /// length covers the largest stream once, smaller streams cycle.
    pub fn new(n_source: usize, n_unknown: usize, n_known: usize, batch_size: usize) -> Self {
        let batch = |n: usize| n.min(batch_size);
        let iterations = [n_source, n_unknown, n_known]
            .into_iter()
            .map(|n| if n == 0 { 0 } else { n.div_ceil(batch(n)) })
            .max()
            .unwrap_or(0);
        Self {
            source_batch: batch(n_source),
            unknown_batch: batch(n_unknown),
            known_batch: batch(n_known),
            iterations,
        }
    }
}

/// Reshuffling cyclic sampler over a fixed list of dataset indices.
struct Stream {
    items: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
}

impl Stream {
    fn new(items: Vec<usize>) -> Self {
        Self {
            order: items.clone(),
            items,
            pos: 0,
        }
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) {
        self.order.clone_from(&self.items);
        self.order.shuffle(rng);
        self.pos = 0;
    }

    fn next_batch(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        if self.items.is_empty() {
            return out;
        }
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn index_of_ids(target: &Dataset, ids: &[usize]) -> Result<Vec<usize>> {
    let lookup: std::collections::HashMap<usize, usize> = target
        .samples
        .iter()
        .enumerate()
        .map(|(idx, s)| (s.sample_id, idx))
        .collect();
    ids.iter()
        .map(|id| {
            lookup
                .get(id)
                .copied()
                .ok_or_else(|| RosError::validation(format!("separation refers to unknown sample id {id}")))
        })
        .collect()
}

/// Trains E, C2 and R2. Target ground-truth labels are never read: the target
/// set only contributes images, routed by the separation partitions.
pub fn train_stage2(
    bundle: &mut NetworkBundle,
    source: &Dataset,
    target: &Dataset,
    separation: &SeparationResult,
    config: &Stage2Config,
) -> Result<TrainingLog> {
    if source.is_empty() {
        return Err(RosError::validation("stage 2 needs a nonempty source set"));
    }
    if config.batch_size == 0 {
        return Err(RosError::validation("stage 2 batch size must be positive"));
    }
    config.weights.validate()?;
    bundle.head(HeadRole::C2)?;
    bundle.head(HeadRole::R2)?;
    let n_known = bundle.n_known;
    if source.samples.iter().any(|s| s.class_label >= n_known) {
        return Err(RosError::validation("source labels exceed the known-class count"));
    }

    let mut log = TrainingLog::default();
    if separation.known_ids.is_empty() && separation.unknown_ids.is_empty() {
        let msg = "empty known and unknown target streams: training on the source only".to_owned();
        log::warn!("{msg}");
        log.warnings.push(msg);
    }

    let mut source_stream = Stream::new((0..source.len()).collect());
    let mut unknown_stream = Stream::new(index_of_ids(target, &separation.unknown_ids)?);
    let mut known_stream = Stream::new(index_of_ids(target, &separation.known_ids)?);
    let plan = StreamBatchPlan::new(
        source_stream.items.len(),
        unknown_stream.items.len(),
        known_stream.items.len(),
        config.batch_size,
    );

    bundle.set_lr_multipliers(config.encoder_lr_mult, config.head_lr_mult, config.unknown_lr_mult);
    bundle.zero_grad();
    let total_steps = (config.epochs * plan.iterations).max(1);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut rng = epoch_rng(config.seed, 2, epoch);
        source_stream.reset(&mut rng);
        unknown_stream.reset(&mut rng);
        known_stream.reset(&mut rng);
        let mut acc = EpochAccumulator::default();
        let mut lr = config.schedule.lr(0.0);
        for it in 0..plan.iterations {
            lr = config.schedule.lr(step as f64 / total_steps as f64);
            let src = source_stream.next_batch(plan.source_batch, &mut rng);
            let unk = unknown_stream.next_batch(plan.unknown_batch, &mut rng);
            let knw = known_stream.next_batch(plan.known_batch, &mut rng);
            let rotations: Vec<usize> = knw.iter().map(|_| rng.random_range(0..NUM_ROTATIONS)).collect();
            let (breakdown, total) = stage2_step(
                bundle,
                source,
                target,
                StepStreams {
                    source: &src,
                    unknown: &unk,
                    known: &knw,
                    rotations: &rotations,
                },
                config,
                lr,
            )?;
            check_finite("stage2", epoch, it, total)?;
            acc.add(&breakdown, total);
            step += 1;
        }
        log.epochs.push(acc.finish("stage2", epoch, lr));
    }
    Ok(log)
}

struct StepStreams<'a> {
    source: &'a [usize],
    unknown: &'a [usize],
    known: &'a [usize],
    rotations: &'a [usize],
}

fn stage2_step(
    bundle: &mut NetworkBundle,
    source: &Dataset,
    target: &Dataset,
    streams: StepStreams<'_>,
    config: &Stage2Config,
    lr: f64,
) -> Result<(LossBreakdown, f64)> {
    let (ns, nu, nk) = (streams.source.len(), streams.unknown.len(), streams.known.len());
    let use_rotation = nk > 0 && config.weights.lambda_2_2 > 0.0;
    let rotated: Vec<Image> = if use_rotation {
        streams
            .known
            .iter()
            .zip(streams.rotations)
            .map(|(&k, &r)| rot90(&target.samples[k].image, r))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut images: Vec<&Image> = Vec::with_capacity(ns + nu + 2 * nk);
    images.extend(streams.source.iter().map(|&i| &source.samples[i].image));
    images.extend(streams.unknown.iter().map(|&i| &target.samples[i].image));
    images.extend(streams.known.iter().map(|&i| &target.samples[i].image));
    images.extend(rotated.iter());

    let n_sem = ns + nu + nk;
    let feats = bundle.encode(&images, Mode::Train)?;
    let (sem_logits, _) = bundle
        .head_mut(HeadRole::C2)?
        .forward(&feats.slice(s![.., ..n_sem]).to_owned(), Mode::Train)?;
    let sem_probs = softmax_rows(&to_rows(&sem_logits));
    let width = sem_probs.ncols();

    let rotation_probs = if use_rotation {
        let anchor = feats.slice(s![.., ns + nu..n_sem]).to_owned();
        let rot = feats.slice(s![.., n_sem..]).to_owned();
        let input = stack_rotation_input(&anchor, &rot, config.use_anchor)?;
        let (logits, _) = bundle.head_mut(HeadRole::R2)?.forward(&input, Mode::Train)?;
        softmax_rows(&to_rows(&logits))
    } else {
        Array2::zeros((0, NUM_ROTATIONS))
    };
    let rotation_labels: &[usize] = if use_rotation { streams.rotations } else { &[] };

    let source_labels: Vec<usize> = streams.source.iter().map(|&i| source.samples[i].class_label).collect();
    let loss = stage2_objective(
        &Stage2Batch {
            source_probs: &sem_probs.slice(s![..ns, ..]).to_owned(),
            source_labels: &source_labels,
            unknown_probs: &sem_probs.slice(s![ns..ns + nu, ..]).to_owned(),
            known_probs: &sem_probs.slice(s![ns + nu.., ..]).to_owned(),
            rotation_probs: &rotation_probs,
            rotation_labels,
        },
        &config.weights,
        config.reduction,
    )?;
    if !loss.total.is_finite() {
        return Ok((loss.breakdown, loss.total));
    }
    debug_assert_eq!(loss.grad_source_logits.ncols(), width);

    let grad_sem = concatenate![
        Axis(0),
        loss.grad_source_logits,
        loss.grad_unknown_logits,
        loss.grad_known_logits
    ];
    let grad_sem_in = bundle.head_mut(HeadRole::C2)?.backward(&to_columns(&grad_sem), None);
    let mut grad_feats = Array2::<f32>::zeros(feats.raw_dim());
    grad_feats.slice_mut(s![.., ..n_sem]).assign(&grad_sem_in);
    if use_rotation {
        let grad_rot_in = bundle
            .head_mut(HeadRole::R2)?
            .backward(&to_columns(&loss.grad_rotation_logits), None);
        let (grad_top, grad_bottom) = split_rotation_grad(&grad_rot_in);
        grad_feats.slice_mut(s![.., n_sem..]).assign(&grad_bottom);
        if config.use_anchor {
            let mut anchor = grad_feats.slice_mut(s![.., ns + nu..n_sem]);
            anchor += &grad_top;
        } else {
            let mut rot = grad_feats.slice_mut(s![.., n_sem..]);
            rot += &grad_top;
        }
    }
    bundle.encoder.backward(&grad_feats);
    sgd_step(bundle.params_mut(), lr, &config.sgd);
    bundle.zero_grad();
    Ok((loss.breakdown, loss.total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: usize,
    /// `0..|C_s|` for known classes, `|C_s|` for unknown.
    pub predicted_label: usize,
    pub ground_truth: usize,
    pub confidence: Vec<f64>,
}

impl PredictionRecord {
    pub fn max_confidence(&self) -> f64 {
        self.confidence.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0
}

const PREDICT_CHUNK: usize = 256;

/// Final `(|C_s|+1)`-way prediction with C2 in evaluation mode.
pub fn predict(bundle: &mut NetworkBundle, target: &Dataset) -> Result<Vec<PredictionRecord>> {
    bundle.head(HeadRole::C2)?;
    let mut out = Vec::with_capacity(target.len());
    for chunk in target.samples.chunks(PREDICT_CHUNK) {
        let images: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        let probs = bundle.forward_semantic(&images, HeadRole::C2)?.probs;
        for (sample, row) in chunk.iter().zip(probs.axis_iter(Axis(0))) {
            let confidence = row.to_vec();
            out.push(PredictionRecord {
                sample_id: sample.sample_id,
                predicted_label: argmax(&confidence),
                ground_truth: sample.class_label,
                confidence,
            });
        }
    }
    Ok(out)
}

/// CSV with `sample_id,predicted_label,ground_truth,max_confidence`.
pub fn predictions_to_csv(predictions: &[PredictionRecord]) -> String {
    let mut out = String::from("sample_id,predicted_label,ground_truth,max_confidence\n");
    for p in predictions {
        out.push_str(&format!(
            "{},{},{},{:.6}\n",
            p.sample_id,
            p.predicted_label,
            p.ground_truth,
            p.max_confidence()
        ));
    }
    out
}
