//! Loss terms and the two composite objectives.
//!
//! Every term works on sample-major `f64` rows and comes with an analytic
//! gradient, both with respect to its direct input (probabilities or
//! activations) and, for the softmax-based terms, with respect to logits.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RosError};

/// Lower clamp applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Sum over the batch, as the objectives are written.
    Sum,
    /// Sum divided by the number of rows of the term.
    #[default]
    Mean,
}

impl Reduction {
    fn scale(self, rows: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::Mean if rows == 0 => 0.0,
            Reduction::Mean => 1.0 / rows as f64,
        }
    }
}

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_EPS).ln()
}

pub fn softmax(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps = row.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    exps / sum
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let s = softmax(row.view());
        row.assign(&s);
    }
    out
}

pub fn one_hot(labels: &[usize], width: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), width));
    for (r, &l) in labels.iter().enumerate() {
        if l >= width {
            return Err(RosError::domain(format!("label {l} outside 0..{width}")));
        }
        out[[r, l]] = 1.0;
    }
    Ok(out)
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(RosError::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `−Σ_j y_j · log(ŷ_j)` over the batch, with the log clamped at [`LOG_EPS`].
pub fn cross_entropy(probs: &Array2<f64>, targets: &Array2<f64>, reduction: Reduction) -> Result<f64> {
    same_shape(probs, targets, "cross_entropy")?;
    let mut total = 0.0;
    Zip::from(probs).and(targets).for_each(|&p, &y| {
        if y != 0.0 {
            total -= y * clamped_ln(p);
        }
    });
    Ok(total * reduction.scale(probs.nrows()))
}

/// Gradient of [`cross_entropy`] with respect to the probabilities.
pub fn cross_entropy_grad(probs: &Array2<f64>, targets: &Array2<f64>, reduction: Reduction) -> Result<Array2<f64>> {
    same_shape(probs, targets, "cross_entropy_grad")?;
    let scale = reduction.scale(probs.nrows());
    Ok(Zip::from(probs)
        .and(targets)
        .map_collect(|&p, &y| if p > LOG_EPS { -scale * y / p } else { 0.0 }))
}

/// Gradient of `cross_entropy(softmax(logits), y)` with respect to the logits:
/// `(ŷ · Σy − y)` per row.
pub fn softmax_cross_entropy_grad(
    probs: &Array2<f64>,
    targets: &Array2<f64>,
    reduction: Reduction,
) -> Result<Array2<f64>> {
    same_shape(probs, targets, "softmax_cross_entropy_grad")?;
    let scale = reduction.scale(probs.nrows());
    let mut grad = Array2::zeros(probs.raw_dim());
    for ((mut g, p), y) in grad
        .axis_iter_mut(Axis(0))
        .zip(probs.axis_iter(Axis(0)))
        .zip(targets.axis_iter(Axis(0)))
    {
        let mass = y.sum();
        Zip::from(&mut g)
            .and(&p)
            .and(&y)
            .for_each(|g, &p, &y| *g = scale * (p * mass - y));
    }
    Ok(grad)
}

/// Shannon entropy `−Σ p log p` of each row (natural log, clamped).
pub fn row_entropy(row: ArrayView1<f64>) -> f64 {
    row.iter()
        .map(|&p| if p > 0.0 { -p * clamped_ln(p) } else { 0.0 })
        .sum()
}

/// `Σ_j −ĝ_j · log(ĝ_j)`, unweighted.
pub fn entropy_loss(probs: &Array2<f64>, reduction: Reduction) -> f64 {
    let total: f64 = probs.axis_iter(Axis(0)).map(row_entropy).sum();
    total * reduction.scale(probs.nrows())
}

/// Gradient of [`entropy_loss`] with respect to the probabilities: `−(log p + 1)`.
pub fn entropy_grad(probs: &Array2<f64>, reduction: Reduction) -> Array2<f64> {
    let scale = reduction.scale(probs.nrows());
    probs.mapv(|p| if p > LOG_EPS { -scale * (p.ln() + 1.0) } else { 0.0 })
}

/// Gradient of `entropy_loss(softmax(logits))` with respect to the logits:
/// `−p_k (log p_k + H)`.
pub fn softmax_entropy_grad(probs: &Array2<f64>, reduction: Reduction) -> Array2<f64> {
    let scale = reduction.scale(probs.nrows());
    let mut grad = Array2::zeros(probs.raw_dim());
    for (mut g, p) in grad.axis_iter_mut(Axis(0)).zip(probs.axis_iter(Axis(0))) {
        let h = row_entropy(p);
        Zip::from(&mut g).and(&p).for_each(|g, &p| {
            *g = if p > LOG_EPS { -scale * p * (p.ln() + h) } else { 0.0 };
        });
    }
    grad
}

/// Running per-class centroids for the center loss, one row per multi-rotation class.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidTable {
    centroids: Array2<f64>,
    alpha: f64,
}

impl CentroidTable {
    pub fn new(n_classes: usize, dim: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(RosError::validation(format!("centroid rate {alpha} outside (0, 1]")));
        }
        Ok(Self {
            centroids: Array2::zeros((n_classes, dim)),
            alpha,
        })
    }

    pub fn from_centroids(centroids: Array2<f64>, alpha: f64) -> Result<Self> {
        let mut t = Self::new(centroids.nrows(), centroids.ncols(), alpha)?;
        t.centroids = centroids;
        Ok(t)
    }

    pub fn centroids(&self) -> &Array2<f64> {
        &self.centroids
    }

    pub fn n_classes(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    fn check(&self, v: &Array2<f64>, labels: &[usize]) -> Result<()> {
        if v.nrows() != labels.len() || v.ncols() != self.dim() {
            return Err(RosError::shape(format!(
                "center loss got {:?} activations for {} labels, centroid width {}",
                v.dim(),
                labels.len(),
                self.dim()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.n_classes()) {
            return Err(RosError::domain(format!(
                "center-loss label {bad} outside 0..{}",
                self.n_classes()
            )));
        }
        Ok(())
    }

    /// `Σ_j ||v_j − γ(z_j)||²` without touching the centroids.
    pub fn loss(&self, v: &Array2<f64>, labels: &[usize], reduction: Reduction) -> Result<f64> {
        self.check(v, labels)?;
        let total: f64 = v
            .axis_iter(Axis(0))
            .zip(labels)
            .map(|(row, &z)| {
                row.iter()
                    .zip(self.centroids.row(z))
                    .map(|(a, c)| (a - c).powi(2))
                    .sum::<f64>()
            })
            .sum();
        Ok(total * reduction.scale(v.nrows()))
    }

    /// Gradient of [`CentroidTable::loss`] with respect to the activations: `2(v − γ)`.
    pub fn grad(&self, v: &Array2<f64>, labels: &[usize], reduction: Reduction) -> Result<Array2<f64>> {
        self.check(v, labels)?;
        let scale = 2.0 * reduction.scale(v.nrows());
        let mut g = v.clone();
        for (mut row, &z) in g.axis_iter_mut(Axis(0)).zip(labels) {
            Zip::from(&mut row)
                .and(self.centroids.row(z))
                .for_each(|a, &c| *a = scale * (*a - c));
        }
        Ok(g)
    }

    /// Moves every centroid touched by the batch: `γ ← γ − α(γ − mean of its batch members)`.
    pub fn update(&mut self, v: &Array2<f64>, labels: &[usize]) -> Result<()> {
        self.check(v, labels)?;
        let mut sums = Array2::<f64>::zeros(self.centroids.raw_dim());
        let mut counts = vec![0usize; self.n_classes()];
        for (row, &z) in v.axis_iter(Axis(0)).zip(labels) {
            let mut s = sums.row_mut(z);
            s += &row;
            counts[z] += 1;
        }
        for (z, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let mean = sums.row(z).mapv(|s| s / count as f64);
            let alpha = self.alpha;
            Zip::from(self.centroids.row_mut(z))
                .and(&mean)
                .for_each(|c, &m| *c -= alpha * (*c - m));
        }
        Ok(())
    }

    /// Loss value followed by the centroid update.
    pub fn center_loss(&mut self, v: &Array2<f64>, labels: &[usize], reduction: Reduction) -> Result<f64> {
        let value = self.loss(v, labels, reduction)?;
        self.update(v, labels)?;
        Ok(value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Multi-rotation cross-entropy weight in Stage I.
    pub lambda_1_1: f64,
    /// Center-loss weight in Stage I.
    pub lambda_1_2: f64,
    /// Entropy weight on the known-target stream in Stage II.
    pub lambda_2_1: f64,
    /// Rotation cross-entropy weight in Stage II.
    pub lambda_2_2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_1_1: 3.0,
            lambda_1_2: 0.1,
            lambda_2_1: 0.1,
            lambda_2_2: 3.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_1_1, self.lambda_1_2, self.lambda_2_1, self.lambda_2_2];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(RosError::validation("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: String,
    pub weight: f64,
    pub value: f64,
}

/// Named weighted terms of an objective; the objective is exactly `Σ weight · value`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub terms: Vec<LossTerm>,
}

impl LossBreakdown {
    fn push(&mut self, name: &str, weight: f64, value: f64) {
        self.terms.push(LossTerm {
            name: name.to_owned(),
            weight,
            value,
        });
    }

    pub fn total(&self) -> f64 {
        self.terms.iter().map(|t| t.weight * t.value).sum()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

/// Network outputs of one Stage I batch (sample-major rows).
pub struct Stage1Batch<'a> {
    pub semantic_probs: &'a Array2<f64>,
    pub semantic_labels: &'a [usize],
    pub rotation_probs: &'a Array2<f64>,
    pub rotation_labels: &'a [usize],
    pub penultimate: &'a Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct Stage1Loss {
    pub total: f64,
    pub breakdown: LossBreakdown,
    pub grad_semantic_logits: Array2<f64>,
    pub grad_rotation_logits: Array2<f64>,
    pub grad_penultimate: Array2<f64>,
}

/// `L1 = CE(ŷ, y) + λ11·CE(ẑ, z) + λ12·center(v, z)`, with logit/activation gradients.
/// The centroid table is read, not updated.
pub fn stage1_objective(
    batch: &Stage1Batch<'_>,
    weights: &LossWeights,
    table: &CentroidTable,
    reduction: Reduction,
) -> Result<Stage1Loss> {
    let y = one_hot(batch.semantic_labels, batch.semantic_probs.ncols())?;
    let z = one_hot(batch.rotation_labels, batch.rotation_probs.ncols())?;
    let semantic = cross_entropy(batch.semantic_probs, &y, reduction)?;
    let rotation = cross_entropy(batch.rotation_probs, &z, reduction)?;
    let center = table.loss(batch.penultimate, batch.rotation_labels, reduction)?;

    let mut breakdown = LossBreakdown::default();
    breakdown.push("semantic_ce", 1.0, semantic);
    breakdown.push("rotation_ce", weights.lambda_1_1, rotation);
    breakdown.push("center", weights.lambda_1_2, center);

    let grad_semantic_logits = softmax_cross_entropy_grad(batch.semantic_probs, &y, reduction)?;
    let grad_rotation_logits = softmax_cross_entropy_grad(batch.rotation_probs, &z, reduction)? * weights.lambda_1_1;
    let grad_penultimate = table.grad(batch.penultimate, batch.rotation_labels, reduction)? * weights.lambda_1_2;
    Ok(Stage1Loss {
        total: breakdown.total(),
        breakdown,
        grad_semantic_logits,
        grad_rotation_logits,
        grad_penultimate,
    })
}

/// Network outputs of one Stage II iteration. `unknown_probs` rows are
/// supervised with the extra class `|C_s|` (the last column).
pub struct Stage2Batch<'a> {
    pub source_probs: &'a Array2<f64>,
    pub source_labels: &'a [usize],
    pub unknown_probs: &'a Array2<f64>,
    pub known_probs: &'a Array2<f64>,
    pub rotation_probs: &'a Array2<f64>,
    pub rotation_labels: &'a [usize],
}

#[derive(Clone, Debug)]
pub struct Stage2Loss {
    pub total: f64,
    pub breakdown: LossBreakdown,
    pub grad_source_logits: Array2<f64>,
    pub grad_unknown_logits: Array2<f64>,
    pub grad_known_logits: Array2<f64>,
    pub grad_rotation_logits: Array2<f64>,
}

/// `L2 = CE over source ∪ D_unk + λ21·entropy over D_knw + λ22·rotation CE over D_knw`.
/// Empty streams contribute zero.
pub fn stage2_objective(batch: &Stage2Batch<'_>, weights: &LossWeights, reduction: Reduction) -> Result<Stage2Loss> {
    let width = batch.source_probs.ncols().max(batch.unknown_probs.ncols());
    if width == 0 {
        return Err(RosError::shape("stage2 objective needs a nonempty supervised stream"));
    }
    let unknown_label = width - 1;
    let mut labels = batch.source_labels.to_vec();
    labels.extend(std::iter::repeat_n(unknown_label, batch.unknown_probs.nrows()));
    let mut supervised = Array2::zeros((labels.len(), width));
    for (r, row) in batch
        .source_probs
        .axis_iter(Axis(0))
        .chain(batch.unknown_probs.axis_iter(Axis(0)))
        .enumerate()
    {
        if row.len() != width {
            return Err(RosError::shape("source and unknown streams disagree on class width"));
        }
        supervised.row_mut(r).assign(&row);
    }
    if batch.source_probs.nrows() != batch.source_labels.len() {
        return Err(RosError::shape("source probabilities and labels differ in length"));
    }
    let y = one_hot(&labels, width)?;
    let supervised_ce = cross_entropy(&supervised, &y, reduction)?;
    let grad_supervised = softmax_cross_entropy_grad(&supervised, &y, reduction)?;

    let entropy = entropy_loss(batch.known_probs, reduction);
    let grad_known_logits = softmax_entropy_grad(batch.known_probs, reduction) * weights.lambda_2_1;

    let (rotation, grad_rotation_logits) = if batch.rotation_probs.nrows() == 0 {
        (0.0, Array2::zeros(batch.rotation_probs.raw_dim()))
    } else {
        let q = one_hot(batch.rotation_labels, batch.rotation_probs.ncols())?;
        (
            cross_entropy(batch.rotation_probs, &q, reduction)?,
            softmax_cross_entropy_grad(batch.rotation_probs, &q, reduction)? * weights.lambda_2_2,
        )
    };

    let mut breakdown = LossBreakdown::default();
    breakdown.push("supervised_ce", 1.0, supervised_ce);
    breakdown.push("known_entropy", weights.lambda_2_1, entropy);
    breakdown.push("rotation_ce", weights.lambda_2_2, rotation);

    let n_source = batch.source_probs.nrows();
    Ok(Stage2Loss {
        total: breakdown.total(),
        breakdown,
        grad_source_logits: grad_supervised.slice(ndarray::s![..n_source, ..]).to_owned(),
        grad_unknown_logits: grad_supervised.slice(ndarray::s![n_source.., ..]).to_owned(),
        grad_known_logits,
        grad_rotation_logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cross_entropy_closed_forms() {
        let y = array![[0.0, 1.0, 0.0, 0.0]];
        assert_eq!(cross_entropy(&y, &y, Reduction::Sum).unwrap(), 0.0);
        let uniform = Array2::from_elem((1, 4), 0.25);
        let ce = cross_entropy(&uniform, &y, Reduction::Sum).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);

        let p = array![[0.7, 0.3], [0.2, 0.8]];
        let t = array![[1.0, 0.0], [1.0, 0.0]];
        let both = cross_entropy(&p, &t, Reduction::Sum).unwrap();
        let first = cross_entropy(
            &p.slice(ndarray::s![..1, ..]).to_owned(),
            &t.slice(ndarray::s![..1, ..]).to_owned(),
            Reduction::Sum,
        )
        .unwrap();
        let second = cross_entropy(
            &p.slice(ndarray::s![1.., ..]).to_owned(),
            &t.slice(ndarray::s![1.., ..]).to_owned(),
            Reduction::Sum,
        )
        .unwrap();
        assert!((both - first - second).abs() < 1e-12);
        assert!((cross_entropy(&p, &t, Reduction::Mean).unwrap() - both / 2.0).abs() < 1e-12);

        assert!(matches!(
            cross_entropy(&p, &array![[1.0, 0.0, 0.0]], Reduction::Sum),
            Err(RosError::Shape(_))
        ));
    }

    #[test]
    fn hard_zero_probability_is_clamped() {
        let p = array![[0.0, 1.0]];
        let y = array![[1.0, 0.0]];
        let ce = cross_entropy(&p, &y, Reduction::Sum).unwrap();
        assert!((ce - (-LOG_EPS.ln())).abs() < 1e-9);
    }

    #[test]
    fn entropy_closed_forms() {
        assert_eq!(entropy_loss(&array![[0.0, 1.0, 0.0]], Reduction::Sum), 0.0);
        let k = 5;
        let u = Array2::from_elem((1, k), 1.0 / k as f64);
        assert!((entropy_loss(&u, Reduction::Sum) - (k as f64).ln()).abs() < 1e-12);
        let a = array![[0.1, 0.2, 0.7]];
        let b = array![[0.7, 0.1, 0.2]];
        assert!((entropy_loss(&a, Reduction::Sum) - entropy_loss(&b, Reduction::Sum)).abs() < 1e-15);
    }

    #[test]
    fn center_loss_closed_forms_and_update() {
        let mut table = CentroidTable::new(2, 3, 0.5).unwrap();
        let v = array![[1.0, 0.0, 0.0]];
        assert_eq!(table.loss(&v, &[0], Reduction::Sum).unwrap(), 1.0);
        let at_center = array![[0.0, 0.0, 0.0]];
        assert_eq!(table.loss(&at_center, &[1], Reduction::Sum).unwrap(), 0.0);

        let u = array![0.5, -1.0, 2.0];
        let pair = ndarray::stack![Axis(0), u.clone(), -&u];
        let expected = 2.0 * u.dot(&u);
        assert!((table.loss(&pair, &[1, 1], Reduction::Sum).unwrap() - expected).abs() < 1e-12);

        // mean of the pair is the centroid itself, so class 1 stays put; class 0 moves halfway
        let value = table
            .center_loss(&ndarray::concatenate![Axis(0), pair, v], &[1, 1, 0], Reduction::Sum)
            .unwrap();
        assert!((value - expected - 1.0).abs() < 1e-12);
        assert_eq!(table.centroids().row(0).to_vec(), vec![0.5, 0.0, 0.0]);
        assert_eq!(table.centroids().row(1).to_vec(), vec![0.0, 0.0, 0.0]);

        assert!(matches!(table.loss(&v, &[2], Reduction::Sum), Err(RosError::Domain(_))));
        assert!(CentroidTable::new(2, 3, 0.0).is_err());
    }

    fn random_probs(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let logits = Array2::from_shape_simple_fn((rows, cols), || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) * 4.0 - 2.0
        });
        softmax_rows(&logits)
    }

    #[test]
    fn stage1_objective_is_weighted_sum_of_terms() {
        let sp = random_probs(4, 3, 1);
        let rp = random_probs(8, 12, 2);
        let v = random_probs(8, 6, 3);
        let table = CentroidTable::from_centroids(random_probs(12, 6, 4), 0.5).unwrap();
        let batch = Stage1Batch {
            semantic_probs: &sp,
            semantic_labels: &[0, 1, 2, 1],
            rotation_probs: &rp,
            rotation_labels: &[0, 5, 11, 3, 4, 6, 7, 8],
            penultimate: &v,
        };
        let out = stage1_objective(&batch, &LossWeights::default(), &table, Reduction::Mean).unwrap();
        let manual: f64 = out.breakdown.terms.iter().map(|t| t.weight * t.value).sum();
        assert!((out.total - manual).abs() < 1e-9);

        let zeroed = LossWeights {
            lambda_1_1: 0.0,
            lambda_1_2: 0.0,
            ..LossWeights::default()
        };
        let only_semantic = stage1_objective(&batch, &zeroed, &table, Reduction::Mean).unwrap();
        let y = one_hot(&[0, 1, 2, 1], 3).unwrap();
        assert!((only_semantic.total - cross_entropy(&sp, &y, Reduction::Mean).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn stage1_objective_zero_for_perfect_predictions() {
        let sp = one_hot(&[1, 0], 2).unwrap();
        let rp = one_hot(&[5, 2], 8).unwrap();
        let v = array![[0.5, 0.5], [0.0, 1.0]];
        let mut c = Array2::zeros((8, 2));
        c.row_mut(5).assign(&array![0.5, 0.5]);
        c.row_mut(2).assign(&array![0.0, 1.0]);
        let table = CentroidTable::from_centroids(c, 0.5).unwrap();
        let batch = Stage1Batch {
            semantic_probs: &sp,
            semantic_labels: &[1, 0],
            rotation_probs: &rp,
            rotation_labels: &[5, 2],
            penultimate: &v,
        };
        let out = stage1_objective(&batch, &LossWeights::default(), &table, Reduction::Sum).unwrap();
        assert_eq!(out.total, 0.0);
    }

    #[test]
    fn stage2_objective_reductions() {
        let src = random_probs(3, 4, 5);
        let unk = random_probs(2, 4, 6);
        let knw = random_probs(3, 4, 7);
        let rot = random_probs(3, 4, 8);
        let batch = Stage2Batch {
            source_probs: &src,
            source_labels: &[0, 2, 1],
            unknown_probs: &unk,
            known_probs: &knw,
            rotation_probs: &rot,
            rotation_labels: &[0, 1, 3],
        };
        let out = stage2_objective(&batch, &LossWeights::default(), Reduction::Sum).unwrap();
        let manual: f64 = out.breakdown.terms.iter().map(|t| t.weight * t.value).sum();
        assert!((out.total - manual).abs() < 1e-9);
        let y = one_hot(&[0, 2, 1], 4).unwrap();
        let expected_src = cross_entropy(&src, &y, Reduction::Sum).unwrap();
        let yu = one_hot(&[3, 3], 4).unwrap();
        let expected_unk = cross_entropy(&unk, &yu, Reduction::Sum).unwrap();
        assert!((out.breakdown.get("supervised_ce").unwrap() - expected_src - expected_unk).abs() < 1e-12);

        let zero = LossWeights {
            lambda_2_1: 0.0,
            lambda_2_2: 0.0,
            ..LossWeights::default()
        };
        let sup = stage2_objective(&batch, &zero, Reduction::Sum).unwrap();
        assert!((sup.total - expected_src - expected_unk).abs() < 1e-12);

        let empty = Array2::<f64>::zeros((0, 4));
        let no_known = Stage2Batch {
            source_probs: &src,
            source_labels: &[0, 2, 1],
            unknown_probs: &unk,
            known_probs: &empty,
            rotation_probs: &empty,
            rotation_labels: &[],
        };
        let out = stage2_objective(&no_known, &LossWeights::default(), Reduction::Mean).unwrap();
        assert_eq!(out.breakdown.get("known_entropy"), Some(0.0));
        assert_eq!(out.breakdown.get("rotation_ce"), Some(0.0));
    }
}
