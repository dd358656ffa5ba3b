//! Similarity, per-view instance contrast, prototype co-training contrast and
//! the combined objective, each with exact gradients.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Instance-contrast temperature.
    pub temperature: f64,
    /// Weight of the co-training terms.
    pub lambda: f64,
    /// Temperature of the co-training contrast.
    pub proto_temperature: f64,
    /// Also place the positive pair in the instance-loss denominator.
    pub ntxent: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 0.1,
            // co-training logits are cosines at unit temperature, so their
            // gradients are ~10x weaker than the instance term at 0.1
            lambda: 5.0,
            proto_temperature: 1.0,
            ntxent: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !(self.proto_temperature > 0.0) {
            return Err(Error::invalid("loss: temperatures must be > 0"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("loss: lambda must be >= 0"));
        }
        Ok(())
    }
}

/// Cosine similarity.
pub fn sim(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu <= MIN_NORM || nv <= MIN_NORM {
        return Err(Error::DegenerateEmbedding);
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Unit rows plus the original norms.
fn normalize(x: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut z = x.to_owned();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in z.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        if n <= MIN_NORM {
            return Err(Error::DegenerateEmbedding);
        }
        row.mapv_inplace(|v| v / n);
        norms.push(n);
    }
    Ok((z, norms))
}

/// Pulls a gradient w.r.t. unit rows `z = x / |x|` back to `x`.
fn normalize_backward(z: &Array2<f64>, norms: &[f64], dz: Array2<f64>) -> Array2<f64> {
    let mut dx = dz;
    for ((mut g, zr), &n) in dx.axis_iter_mut(Axis(0)).zip(z.axis_iter(Axis(0))).zip(norms) {
        let proj = g.dot(&zr);
        g.zip_mut_with(&zr, |gv, &zv| *gv = (*gv - zv * proj) / n);
    }
    dx
}

/// `log(sum(exp(values)))` with max-subtraction, plus the softmax weights.
fn log_sum_exp(values: &[f64]) -> (f64, Vec<f64>) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (max + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

#[derive(Debug, Clone)]
pub struct InstanceLoss {
    pub value: f64,
    pub d_clean: Array2<f64>,
    pub d_augmented: Array2<f64>,
}

/// `-sum_i log[ exp(sim(z_i, z'_i)/tau) / sum_{k != i} exp(sim(z_i, z_k)/tau) ]`
/// over a batch of clean rows `z` and augmented rows `z'`. Negatives are the
/// other clean rows; with `ntxent` the positive term joins the denominator.
pub fn instance_loss(
    clean: ArrayView2<f64>,
    augmented: ArrayView2<f64>,
    tau: f64,
    ntxent: bool,
) -> Result<InstanceLoss> {
    let b = clean.nrows();
    if b < 2 {
        return Err(Error::invalid("instance loss requires at least 2 samples per batch"));
    }
    if augmented.dim() != clean.dim() {
        return Err(Error::shape("instance_loss: clean and augmented shapes differ"));
    }
    let (z, zn) = normalize(clean)?;
    let (za, zan) = normalize(augmented)?;
    let gram = z.dot(&z.t());
    let mut dz = Array2::<f64>::zeros(z.raw_dim());
    let mut dza = Array2::<f64>::zeros(za.raw_dim());
    let mut value = 0.0;
    let mut logits = Vec::with_capacity(b);
    for i in 0..b {
        let pos = z.row(i).dot(&za.row(i)) / tau;
        logits.clear();
        logits.extend((0..b).filter(|&k| k != i).map(|k| gram[[i, k]] / tau));
        if ntxent {
            logits.push(pos);
        }
        let (lse, weights) = log_sum_exp(&logits);
        value += lse - pos;

        // d(-pos)
        dz.row_mut(i).scaled_add(-1.0 / tau, &za.row(i));
        dza.row_mut(i).scaled_add(-1.0 / tau, &z.row(i));
        // d(lse)
        let negatives = (0..b).filter(|&k| k != i);
        for (k, &w) in negatives.zip(&weights) {
            let zk = z.row(k).to_owned();
            let zi = z.row(i).to_owned();
            dz.row_mut(i).scaled_add(w / tau, &zk);
            dz.row_mut(k).scaled_add(w / tau, &zi);
        }
        if ntxent {
            let w = weights[b - 1];
            dz.row_mut(i).scaled_add(w / tau, &za.row(i));
            dza.row_mut(i).scaled_add(w / tau, &z.row(i));
        }
    }
    Ok(InstanceLoss {
        value,
        d_clean: normalize_backward(&z, &zn, dz),
        d_augmented: normalize_backward(&za, &zan, dza),
    })
}

#[derive(Debug, Clone)]
pub struct CotLoss {
    pub value: f64,
    pub d_emb: Array2<f64>,
}

/// `-sum_i log[ exp(sim(e_i, p_{t_i})/tau) / sum_{j valid} exp(sim(e_i, p_j)/tau) ]`
/// where `targets[i]` selects row `t_i` of `prototypes`. Prototypes are
/// constants: no gradient is returned for them.
pub fn cot_loss(
    emb: ArrayView2<f64>,
    targets: &[usize],
    prototypes: ArrayView2<f64>,
    valid: &[bool],
    tau: f64,
) -> Result<CotLoss> {
    if targets.len() != emb.nrows() || valid.len() != prototypes.nrows() || prototypes.ncols() != emb.ncols() {
        return Err(Error::shape("cot_loss: inconsistent shapes"));
    }
    let active: Vec<usize> = (0..valid.len()).filter(|&j| valid[j]).collect();
    if active.is_empty() {
        return Err(Error::invalid("cot_loss: no valid prototype"));
    }
    let (e, en) = normalize(emb)?;
    let (p, _) = normalize(prototypes.select(Axis(0), &active).view())?;
    let slot: Vec<Option<usize>> = {
        let mut s = vec![None; valid.len()];
        for (pos, &j) in active.iter().enumerate() {
            s[j] = Some(pos);
        }
        s
    };
    let sims = e.dot(&p.t());
    let mut de = Array2::<f64>::zeros(e.raw_dim());
    let mut value = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let target = slot
            .get(t)
            .copied()
            .flatten()
            .ok_or_else(|| Error::invalid(format!("cot_loss: target prototype {t} is not valid")))?;
        let logits: Vec<f64> = sims.row(i).iter().map(|s| s / tau).collect();
        let (lse, weights) = log_sum_exp(&logits);
        value += lse - logits[target];
        let mut g = de.row_mut(i);
        g.scaled_add(-1.0 / tau, &p.row(target));
        for (j, &w) in weights.iter().enumerate() {
            g.scaled_add(w / tau, &p.row(j));
        }
    }
    Ok(CotLoss {
        value,
        d_emb: normalize_backward(&e, &en, de),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub inst_h: f64,
    pub inst_g: f64,
    pub cot_h: f64,
    pub cot_g: f64,
    pub total: f64,
}

/// `inst_h + inst_g + lambda * (cot_h + cot_g)`.
pub fn total_loss(inst_h: f64, inst_g: f64, cot_h: f64, cot_g: f64, lambda: f64) -> Result<LossBreakdown> {
    for (name, v) in [("inst_h", inst_h), ("inst_g", inst_g), ("cot_h", cot_h), ("cot_g", cot_g)] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: name.into(),
                epoch: 0,
                batch: 0,
            });
        }
    }
    Ok(LossBreakdown {
        inst_h,
        inst_g,
        cot_h,
        cot_g,
        total: inst_h + inst_g + lambda * (cot_h + cot_g),
    })
}
