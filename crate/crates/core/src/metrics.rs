//! Open-set evaluation: OS*, UNK, OS, HOS, AUC-ROC over normality scores,
//! openness, and multi-run aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RosError};
use crate::stage2::PredictionRecord;

/// Minimal view of a prediction needed by the metrics.
pub trait Labeled {
    fn predicted(&self) -> usize;
    fn truth(&self) -> usize;
}

impl Labeled for PredictionRecord {
    fn predicted(&self) -> usize {
        self.predicted_label
    }
    fn truth(&self) -> usize {
        self.ground_truth
    }
}

impl Labeled for (usize, usize) {
    fn predicted(&self) -> usize {
        self.0
    }
    fn truth(&self) -> usize {
        self.1
    }
}

/// Per-known-class accuracy (%) for classes present in the target; absent classes are listed separately.
pub fn per_class_accuracy<P: Labeled>(predictions: &[P], n_known: usize) -> (BTreeMap<usize, f64>, Vec<usize>) {
    let mut hits = vec![0usize; n_known];
    let mut counts = vec![0usize; n_known];
    for p in predictions {
        let t = p.truth();
        if t < n_known {
            counts[t] += 1;
            if p.predicted() == t {
                hits[t] += 1;
            }
        }
    }
    let mut acc = BTreeMap::new();
    let mut absent = Vec::new();
    for k in 0..n_known {
        if counts[k] == 0 {
            absent.push(k);
        } else {
            acc.insert(k, 100.0 * hits[k] as f64 / counts[k] as f64);
        }
    }
    (acc, absent)
}

/// Mean per-class accuracy over the known classes present in the target.
pub fn os_star<P: Labeled>(predictions: &[P], n_known: usize) -> Result<f64> {
    let (acc, _) = per_class_accuracy(predictions, n_known);
    if acc.is_empty() {
        return Err(RosError::UndefinedMetric(
            "OS* needs at least one known-class sample".into(),
        ));
    }
    Ok(acc.values().sum::<f64>() / acc.len() as f64)
}

/// Share of target-private samples predicted as the unknown class `n_known`.
pub fn unk_accuracy<P: Labeled>(predictions: &[P], n_known: usize) -> Result<f64> {
    let (mut total, mut hits) = (0usize, 0usize);
    for p in predictions.iter().filter(|p| p.truth() >= n_known) {
        total += 1;
        if p.predicted() == n_known {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(RosError::UndefinedMetric(
            "UNK needs at least one unknown-class sample".into(),
        ));
    }
    Ok(100.0 * hits as f64 / total as f64)
}

/// `|C_s|/(|C_s|+1) · OS* + 1/(|C_s|+1) · UNK`.
pub fn os(os_star: f64, unk: f64, n_known: usize) -> f64 {
    let k = n_known as f64;
    (k * os_star + unk) / (k + 1.0)
}

/// Harmonic mean of OS* and UNK; zero when either is zero.
pub fn hos(os_star: f64, unk: f64) -> f64 {
    if os_star <= 0.0 || unk <= 0.0 {
        0.0
    } else {
        2.0 * os_star * unk / (os_star + unk)
    }
}

/// Probability that a random known sample outscores a random unknown one, ties at ½,
/// computed from average ranks (Mann-Whitney U).
pub fn auc_roc(scores: &[f64], is_known: &[bool]) -> Result<f64> {
    if scores.len() != is_known.len() {
        return Err(RosError::shape(format!(
            "{} scores but {} labels",
            scores.len(),
            is_known.len()
        )));
    }
    let n_pos = is_known.iter().filter(|&&k| k).count();
    let n_neg = is_known.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(RosError::UndefinedMetric(
            "AUC-ROC needs both known and unknown samples".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(RosError::domain("AUC-ROC scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; a tie group shares the mean of its ranks
        let avg_rank = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg_rank * order[i..=j].iter().filter(|&&k| is_known[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// `1 − |C_s| / |C_t|`.
pub fn openness(n_known: usize, n_total: usize) -> Result<f64> {
    if n_known == 0 || n_known > n_total {
        return Err(RosError::validation(format!(
            "openness needs 1 <= n_known <= n_total, got {n_known} and {n_total}"
        )));
    }
    Ok(1.0 - n_known as f64 / n_total as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSpread {
    pub os_star: f64,
    pub unk: f64,
    pub os: f64,
    pub hos: f64,
    pub auc_roc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub n_known: usize,
    pub openness: f64,
    pub os_star: f64,
    pub unk: f64,
    pub os: f64,
    pub hos: f64,
    pub auc_roc: Option<f64>,
    pub per_class_accuracy: BTreeMap<usize, f64>,
    /// Known classes without target samples, left out of OS*.
    pub excluded_classes: Vec<usize>,
    pub n_runs: usize,
    /// Sample standard deviation across runs; zero for a single run.
    pub std: MetricSpread,
}

impl MetricsReport {
    pub fn from_predictions<P: Labeled>(
        predictions: &[P],
        n_known: usize,
        n_total: usize,
        auc: Option<f64>,
        config_hash: &str,
    ) -> Result<Self> {
        let (per_class, excluded) = per_class_accuracy(predictions, n_known);
        let os_star = os_star(predictions, n_known)?;
        let unk = unk_accuracy(predictions, n_known)?;
        Ok(Self {
            config_hash: config_hash.to_owned(),
            n_known,
            openness: openness(n_known, n_total)?,
            os_star,
            unk,
            os: os(os_star, unk, n_known),
            hos: hos(os_star, unk),
            auc_roc: auc,
            per_class_accuracy: per_class,
            excluded_classes: excluded,
            n_runs: 1,
            std: MetricSpread::default(),
        })
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample std per metric; HOS is the mean of the per-run HOS values.
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports
        .first()
        .ok_or_else(|| RosError::validation("aggregation needs at least one report"))?;
    if let Some(other) = reports
        .iter()
        .find(|r| r.config_hash != first.config_hash || r.n_known != first.n_known)
    {
        return Err(RosError::validation(format!(
            "cannot aggregate runs of configurations {} and {}",
            first.config_hash, other.config_hash
        )));
    }
    let pick = |f: fn(&MetricsReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    let (os_star, os_star_sd) = pick(|r| r.os_star);
    let (unk, unk_sd) = pick(|r| r.unk);
    let (os_v, os_sd) = pick(|r| r.os);
    let (hos_v, hos_sd) = pick(|r| r.hos);
    let aucs: Option<Vec<f64>> = reports.iter().map(|r| r.auc_roc).collect();
    let auc = aucs.map(|a| mean_std(&a));

    let mut per_class: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (&k, &v) in &r.per_class_accuracy {
            per_class.entry(k).or_default().push(v);
        }
    }
    let mut excluded: Vec<usize> = reports
        .iter()
        .flat_map(|r| r.excluded_classes.iter().copied())
        .collect();
    excluded.sort_unstable();
    excluded.dedup();

    Ok(MetricsReport {
        config_hash: first.config_hash.clone(),
        n_known: first.n_known,
        openness: first.openness,
        os_star,
        unk,
        os: os_v,
        hos: hos_v,
        auc_roc: auc.map(|a| a.0),
        per_class_accuracy: per_class.into_iter().map(|(k, v)| (k, mean_std(&v).0)).collect(),
        excluded_classes: excluded,
        n_runs: reports.iter().map(|r| r.n_runs).sum(),
        std: MetricSpread {
            os_star: os_star_sd,
            unk: unk_sd,
            os: os_sd,
            hos: hos_sd,
            auc_roc: auc.map(|a| a.1),
        },
    })
}

/// Fixed one-decimal table with OS*, UNK and HOS per row plus an `Avg` row.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = format!("{:<24} {:>6} {:>6} {:>6}\n", "shift", "OS*", "UNK", "HOS");
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<24} {:>6.1} {:>6.1} {:>6.1}\n",
            name, r.os_star, r.unk, r.hos
        ));
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| rows.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
        out.push_str(&format!(
            "{:<24} {:>6.1} {:>6.1} {:>6.1}\n",
            "Avg",
            avg(|r| r.os_star),
            avg(|r| r.unk),
            avg(|r| r.hos)
        ));
    }
    out
}
