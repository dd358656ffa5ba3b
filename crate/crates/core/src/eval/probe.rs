//! Multinomial logistic-regression probe on frozen embeddings.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, auroc_macro, auroc_per_class};
use crate::error::{Error, Result};
use crate::rng;

pub const L2_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
pub const VALIDATION_FRACTION: f64 = 0.2;
pub const MAX_ITER: usize = 2000;
pub const GRAD_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u32,
    pub support: usize,
    pub recall: f64,
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub accuracy: f64,
    pub auroc: f64,
    /// Clustering NMI of the test embeddings (K-means with K = classes).
    pub nmi: f64,
    pub l2: f64,
    pub validation_accuracy: Vec<f64>,
    pub per_class: Vec<ClassMetrics>,
}

/// Fitted softmax classifier over standardized features.
#[derive(Debug, Clone)]
pub struct ProbeModel {
    pub classes: Vec<u32>,
    pub mean: Array1<f64>,
    pub scale: f64,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub iterations: usize,
}

impl ProbeModel {
    fn features(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / self.scale
    }

    pub fn probabilities(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let logits = self.features(x).dot(&self.weight) + &self.bias;
        softmax_rows(logits)
    }

    /// Class indices into `classes`; ties go to the lowest index.
    pub fn predict_index(&self, x: ArrayView2<f64>) -> Vec<usize> {
        self.probabilities(x).rows().into_iter().map(argmax).collect()
    }
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

/// Mean cross-entropy + (l2/2)‖W‖² and its gradient at (w, b).
fn objective(x: &Array2<f64>, y: &[usize], w: &Array2<f64>, b: &Array1<f64>, l2: f64) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mut p = softmax_rows(x.dot(w) + b);
    let mut loss = 0.0;
    for (i, &c) in y.iter().enumerate() {
        loss -= p[[i, c]].max(1e-300).ln();
        p[[i, c]] -= 1.0;
    }
    p /= n;
    let gw = x.t().dot(&p) + &(w * l2);
    let gb = p.sum_axis(Axis(0));
    (loss / n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>(), gw, gb)
}

/// Largest eigenvalue of `[x 1]ᵀ[x 1] / n` by power iteration.
fn gram_spectral_bound(x: &Array2<f64>) -> f64 {
    let n = x.nrows() as f64;
    let dim = x.ncols() + 1;
    let mut v = Array1::<f64>::from_elem(dim, 1.0 / (dim as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let head = v.slice(ndarray::s![..dim - 1]);
        let xv = x.dot(&head) + v[dim - 1];
        let mut next = Array1::<f64>::zeros(dim);
        next.slice_mut(ndarray::s![..dim - 1]).assign(&(x.t().dot(&xv) / n));
        next[dim - 1] = xv.sum() / n;
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = next / norm;
    }
    lambda
}

/// Accelerated gradient descent with adaptive restart, from zero weights.
fn fit(x: &Array2<f64>, y: &[usize], k: usize, l2: f64) -> (Array2<f64>, Array1<f64>, usize) {
    let dim = x.ncols();
    // softmax cross-entropy curvature is at most 1/2 of the design Gram
    let lipschitz = 1.05 * (0.5 * gram_spectral_bound(x) + l2) + 1e-12;
    let step = 1.0 / lipschitz;
    let mut w = Array2::<f64>::zeros((dim, k));
    let mut b = Array1::<f64>::zeros(k);
    let (mut yw, mut yb) = (w.clone(), b.clone());
    let mut t = 1.0f64;
    for it in 0..MAX_ITER {
        let (_, gw, gb) = objective(x, y, &yw, &yb, l2);
        let (_, gw_x, gb_x) = objective(x, y, &w, &b, l2);
        let gnorm = (gw_x.iter().map(|v| v * v).sum::<f64>() + gb_x.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if gnorm < GRAD_TOL {
            return (w, b, it);
        }
        let nw = &yw - &(gw * step);
        let nb = &yb - &(gb * step);
        let dw = &nw - &w;
        let db = &nb - &b;
        // restart momentum when it points uphill
        let uphill = (&gw_x * &dw).sum() + (&gb_x * &db).sum() > 0.0;
        let t_next = if uphill { 1.0 } else { (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0 };
        let beta = if uphill { 0.0 } else { (t - 1.0) / t_next };
        yw = &nw + &(&dw * beta);
        yb = &nb + &(&db * beta);
        w = nw;
        b = nb;
        t = t_next;
    }
    (w, b, MAX_ITER)
}

/// Fits a probe on `(x, labels)` with L2 strength `l2`.
pub fn fit_probe(x: ArrayView2<f64>, labels: &[u32], l2: f64) -> Result<ProbeModel> {
    if x.nrows() != labels.len() || x.nrows() == 0 {
        return Err(Error::shape("probe: embeddings and labels differ in length"));
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::DataContract("probe: need at least 2 classes in the training labels".into()));
    }
    let mean = x.mean_axis(Axis(0)).unwrap();
    let centered = &x - &mean;
    let rms = (centered.iter().map(|v| v * v).sum::<f64>() / centered.len().max(1) as f64).sqrt();
    let scale = if rms > 1e-12 { rms } else { 1.0 };
    let feats = centered / scale;
    let y: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    let (weight, bias, iterations) = fit(&feats, &y, classes.len(), l2);
    Ok(ProbeModel {
        classes,
        mean,
        scale,
        weight,
        bias,
        iterations,
    })
}

/// Stratified validation split: about `fraction` of each class, never the
/// whole class.
fn validation_split(labels: &[u32], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut r = rng::stream(seed, &[rng::STREAM_PROBE]);
    let (mut fit_idx, mut val_idx) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_class {
        idx.shuffle(&mut r);
        let take = ((idx.len() as f64 * fraction).round() as usize).min(idx.len() - 1);
        val_idx.extend_from_slice(&idx[..take]);
        fit_idx.extend_from_slice(&idx[take..]);
    }
    fit_idx.sort_unstable();
    val_idx.sort_unstable();
    (fit_idx, val_idx)
}

fn indices_into(classes: &[u32], labels: &[u32]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            classes
                .binary_search(l)
                .map_err(|_| Error::DataContract(format!("probe: class {l} absent from probe training labels")))
        })
        .collect()
}

/// Chooses L2 on a stratified validation split, refits on all training
/// rows, and reports test accuracy, macro AUROC and clustering NMI.
pub fn linear_probe(
    train_emb: ArrayView2<f64>,
    train_labels: &[u32],
    test_emb: ArrayView2<f64>,
    test_labels: &[u32],
    seed: u64,
) -> Result<EvalReport> {
    if test_emb.nrows() != test_labels.len() || test_emb.nrows() == 0 {
        return Err(Error::shape("probe: test embeddings and labels differ in length"));
    }
    if test_emb.ncols() != train_emb.ncols() {
        return Err(Error::shape("probe: train/test embedding widths differ"));
    }
    let (fit_idx, val_idx) = validation_split(train_labels, VALIDATION_FRACTION, seed);
    let mut best = (f64::NEG_INFINITY, L2_GRID[0]);
    let mut validation_accuracy = Vec::new();
    if val_idx.is_empty() {
        validation_accuracy = vec![f64::NAN; L2_GRID.len()];
    } else {
        let xf = train_emb.select(Axis(0), &fit_idx);
        let yf: Vec<u32> = fit_idx.iter().map(|&i| train_labels[i]).collect();
        let xv = train_emb.select(Axis(0), &val_idx);
        let yv: Vec<u32> = val_idx.iter().map(|&i| train_labels[i]).collect();
        for &l2 in &L2_GRID {
            let m = fit_probe(xf.view(), &yf, l2)?;
            let truth = indices_into(&m.classes, &yv)?;
            let acc = accuracy(&m.predict_index(xv.view()), &truth)?;
            validation_accuracy.push(acc);
            // ties keep the stronger regularization
            if acc >= best.0 {
                best = (acc, l2);
            }
        }
    }
    let l2 = best.1;
    let model = fit_probe(train_emb, train_labels, l2)?;
    let truth = indices_into(&model.classes, test_labels)?;
    let probs = model.probabilities(test_emb);
    let pred: Vec<usize> = probs.rows().into_iter().map(argmax).collect();
    let per_auc = auroc_per_class(probs.view(), &truth)?;
    let per_class = model
        .classes
        .iter()
        .enumerate()
        .map(|(j, &class)| {
            let members: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == j).collect();
            let recall = if members.is_empty() {
                0.0
            } else {
                members.iter().filter(|&&i| pred[i] == j).count() as f64 / members.len() as f64
            };
            ClassMetrics {
                class,
                support: members.len(),
                recall,
                auroc: per_auc[j],
            }
        })
        .collect();
    let nmi = super::clustering_nmi(test_emb, test_labels, model.classes.len(), seed)?;
    Ok(EvalReport {
        schema_version: super::SCHEMA_VERSION,
        accuracy: accuracy(&pred, &truth)?,
        auroc: auroc_macro(probs.view(), &truth)?,
        nmi,
        l2,
        validation_accuracy,
        per_class,
    })
}
