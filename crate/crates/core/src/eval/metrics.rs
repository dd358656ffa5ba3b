//! Accuracy, rank-based macro AUROC and normalized mutual information.

use std::collections::BTreeMap;

use ndarray::ArrayView2;

use crate::error::{Error, Result};

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape("accuracy: prediction/label lengths differ or are empty"));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// 1-based ranks of `v`, tied values sharing their mean rank.
pub fn midranks(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("rank: NaN score"));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1
        let r = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    Ok(ranks)
}

/// One-vs-rest AUROC of `scores` (higher = positive).
pub fn auroc_binary(scores: &[f64], positive: &[bool]) -> Result<Option<f64>> {
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return Ok(None);
    }
    let ranks = midranks(scores)?;
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &b)| b).map(|(r, _)| r).sum();
    let u = rank_sum - (p * (p + 1)) as f64 / 2.0;
    Ok(Some(u / (p as f64 * n as f64)))
}

/// Per-class one-vs-rest AUROCs (`None` when a class lacks positives or
/// negatives) for `scores[N][K]`.
pub fn auroc_per_class(scores: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<Option<f64>>> {
    if scores.nrows() != labels.len() {
        return Err(Error::shape("auroc: score rows and labels differ"));
    }
    if scores.ncols() < 2 {
        return Err(Error::invalid("auroc: need at least 2 classes"));
    }
    (0..scores.ncols())
        .map(|k| {
            let col: Vec<f64> = scores.column(k).to_vec();
            let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            auroc_binary(&col, &pos)
        })
        .collect()
}

/// Macro average over classes with at least one positive and one negative.
pub fn auroc_macro(scores: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let per = auroc_per_class(scores, labels)?;
    let defined: Vec<f64> = per.into_iter().flatten().collect();
    if defined.is_empty() {
        return Err(Error::invalid("auroc: no class has both positives and negatives"));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies
/// (natural log). Two single-cluster partitions score 1.
pub fn nmi<A: Ord + Copy, B: Ord + Copy>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("nmi: partitions differ in length or are empty"));
    }
    let n = a.len() as f64;
    let mut joint: BTreeMap<(A, B), usize> = BTreeMap::new();
    let mut ca: BTreeMap<A, usize> = BTreeMap::new();
    let mut cb: BTreeMap<B, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (ca[&x] as f64 * cb[&y] as f64)).ln()
        })
        .sum();
    Ok((mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0))
}
