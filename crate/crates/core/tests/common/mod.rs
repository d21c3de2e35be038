#![allow(dead_code)]

//! Brute-force reference implementations shared by the integration tests.

use rand::Rng;

/// `(predicted, truth)` pairs with `n_known` known classes and `n_total` classes overall.
#[derive(Clone, Debug)]
pub struct Instance {
    pub n_known: usize,
    pub n_total: usize,
    pub pairs: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
}

/// Counts `m[truth][predicted]`, predictions in `0..=n_known`.
pub fn confusion(inst: &Instance) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; inst.n_known + 1]; inst.n_total];
    for &(p, t) in &inst.pairs {
        m[t][p] += 1;
    }
    m
}

pub fn os_star_oracle(inst: &Instance) -> Option<f64> {
    let m = confusion(inst);
    let mut accs = Vec::new();
    for k in 0..inst.n_known {
        let row: usize = m[k].iter().sum();
        if row > 0 {
            accs.push(m[k][k] as f64 / row as f64);
        }
    }
    if accs.is_empty() {
        None
    } else {
        Some(100.0 * accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

pub fn unk_oracle(inst: &Instance) -> Option<f64> {
    let m = confusion(inst);
    let mut hit = 0;
    let mut total = 0;
    for row in &m[inst.n_known..] {
        hit += row[inst.n_known];
        total += row.iter().sum::<usize>();
    }
    (total > 0).then(|| 100.0 * hit as f64 / total as f64)
}

pub fn os_oracle(os_star: f64, unk: f64, n_known: usize) -> f64 {
    let w = 1.0 / (n_known as f64 + 1.0);
    (1.0 - w) * os_star + w * unk
}

pub fn hos_oracle(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        2.0 / (1.0 / a + 1.0 / b)
    }
}

/// Fraction of (known, unknown) pairs ordered correctly, ties ½.
pub fn auc_oracle(scores: &[f64], known: &[bool]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0usize;
    for (i, &ki) in known.iter().enumerate() {
        for (j, &kj) in known.iter().enumerate() {
            if ki && !kj {
                den += 1;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    (den > 0).then(|| num / den as f64)
}

/// At most 50 samples over at most 6 classes; scores drawn from a coarse grid so ties occur.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let n_total = rng.random_range(2..=6);
    let n_known = rng.random_range(1..n_total);
    let n = rng.random_range(1..=50);
    let pairs = (0..n)
        .map(|_| (rng.random_range(0..=n_known), rng.random_range(0..n_total)))
        .collect();
    let scores = (0..n).map(|_| rng.random_range(0..20) as f64 / 19.0).collect();
    Instance {
        n_known,
        n_total,
        pairs,
        scores,
    }
}

pub fn known_mask(inst: &Instance) -> Vec<bool> {
    inst.pairs.iter().map(|&(_, t)| t < inst.n_known).collect()
}

/// Rotation score by listing both class sums explicitly.
pub fn rotation_score_oracle(rows: &[Vec<f64>]) -> f64 {
    let n_known = rows[0].len() / 4;
    let mut sums = Vec::new();
    for k in 0..n_known {
        let mut s = 0.0;
        for (i, row) in rows.iter().enumerate() {
            s += row[k * 4 + i];
        }
        sums.push(s);
    }
    sums.into_iter().fold(f64::MIN, f64::max) / 4.0
}

/// Max relative error between analytic and central-difference gradients of `f` at `x`.
pub fn fd_max_rel_error(
    x: &ndarray::Array2<f64>,
    analytic: &ndarray::Array2<f64>,
    step: f64,
    f: impl Fn(&ndarray::Array2<f64>) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let mut plus = x.clone();
        plus[[r, c]] += step;
        let mut minus = x.clone();
        minus[[r, c]] -= step;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
        let a = analytic[[r, c]];
        let scale = a.abs().max(numeric.abs());
        let err = if scale < 1e-7 {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / scale
        };
        worst = worst.max(err);
    }
    worst
}
