//! Multi-way prototype bank: clustering, nearest-prototype assignment,
//! cross-view prototypes and moving-average updates.
//!
//! All clustering happens on l2-normalized embeddings. Intra-view
//! prototypes are stored unnormalized (so the moving average stays an exact
//! convex blend) and normalized whenever they are used for assignment.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Copy of `emb` with every nonzero row scaled to unit norm.
pub fn l2_normalize_rows(emb: ArrayView2<f64>) -> Array2<f64> {
    let mut out = emb.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (Euclidean) for every row; ties go to the
/// lowest index.
pub fn assign(emb: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Vec<usize> {
    emb.axis_iter(Axis(0))
        .map(|row| nearest(row, centroids).0)
        .collect()
}

fn nearest(row: ArrayView1<f64>, centroids: ArrayView2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.axis_iter(Axis(0)).enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

/// k-means++ seeded Lloyd iterations on the l2-normalized rows of `emb`.
///
/// Stops when no centroid moves more than `tol` or after `max_iter`
/// iterations. An empty cluster is reseeded with the point farthest from its
/// own centroid.
pub fn kmeans(emb: ArrayView2<f64>, c: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KMeansResult> {
    let n = emb.nrows();
    if c == 0 || n < c {
        return Err(Error::invalid(format!("kmeans: need N >= C >= 1, got N={n}, C={c}")));
    }
    let x = l2_normalize_rows(emb);
    let mut rng = rng::stream(seed, &[]);
    let mut centroids = plus_plus_init(x.view(), c, &mut rng);
    let mut history = Vec::new();
    let mut assignments = vec![0usize; n];
    for _ in 0..max_iter {
        let mut dist = vec![0.0; n];
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let (j, d) = nearest(row, centroids.view());
            assignments[i] = j;
            dist[i] = d;
        }
        history.push(dist.iter().sum());

        let mut next = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; c];
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let mut dst = next.row_mut(assignments[i]);
            dst += &row;
            counts[assignments[i]] += 1;
        }
        for (j, &m) in counts.iter().enumerate() {
            if m > 0 {
                next.row_mut(j).mapv_inplace(|v| v / m as f64);
            }
        }
        // distances of every point to its (updated) centroid, for reseeding
        let mut own: Vec<f64> = (0..n)
            .map(|i| sq_dist(x.row(i), next.row(assignments[i])))
            .collect();
        for j in (0..c).filter(|&j| counts[j] == 0) {
            let far = (0..n)
                .fold(0, |best, i| if own[i] > own[best] { i } else { best });
            next.row_mut(j).assign(&x.row(far));
            own[far] = 0.0;
        }
        let shift = centroids
            .axis_iter(Axis(0))
            .zip(next.axis_iter(Axis(0)))
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < tol {
            break;
        }
    }
    let mut final_inertia = 0.0;
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        let (j, d) = nearest(row, centroids.view());
        assignments[i] = j;
        final_inertia += d;
    }
    history.push(final_inertia);
    Ok(KMeansResult {
        centroids,
        assignments,
        inertia_history: history,
    })
}

fn plus_plus_init(x: ArrayView2<f64>, c: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::<f64>::zeros((c, x.ncols()));
    centroids.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centroids.row(0))).collect();
    for j in 1..c {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(j).assign(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centroids.row(j)));
        }
    }
    centroids
}

/// Mean of `emb` rows grouped by the other view's assignment. Clusters with
/// no members copy the matching `fallback` row and are flagged invalid.
pub fn cross_view_prototypes(
    emb: ArrayView2<f64>,
    other_assign: &[usize],
    c: usize,
    fallback: ArrayView2<f64>,
) -> Result<(Array2<f64>, Vec<bool>)> {
    if other_assign.len() != emb.nrows() {
        return Err(Error::shape(format!(
            "cross_view_prototypes: {} assignments for {} embeddings",
            other_assign.len(),
            emb.nrows()
        )));
    }
    if fallback.dim() != (c, emb.ncols()) {
        return Err(Error::shape("cross_view_prototypes: fallback prototypes have the wrong shape"));
    }
    let mut sums = Array2::<f64>::zeros((c, emb.ncols()));
    let mut counts = vec![0usize; c];
    for (row, &s) in emb.axis_iter(Axis(0)).zip(other_assign) {
        if s >= c {
            return Err(Error::invalid(format!("cross_view_prototypes: assignment {s} >= C={c}")));
        }
        let mut dst = sums.row_mut(s);
        dst += &row;
        counts[s] += 1;
    }
    let mut valid = vec![false; c];
    for j in 0..c {
        if counts[j] > 0 {
            sums.row_mut(j).mapv_inplace(|v| v / counts[j] as f64);
            valid[j] = true;
        } else {
            sums.row_mut(j).assign(&fallback.row(j));
        }
    }
    Ok((sums, valid))
}

/// Blends each prototype that has batch members towards their batch mean:
/// `p_c <- (1 - gamma) p_c + gamma * mean_c`.
pub fn moving_average_update(
    prototypes: &mut Array2<f64>,
    batch_emb: ArrayView2<f64>,
    batch_groups: &[usize],
    gamma: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("moving_average_update: gamma {gamma} not in [0, 1]")));
    }
    if batch_groups.len() != batch_emb.nrows() || batch_emb.ncols() != prototypes.ncols() {
        return Err(Error::shape("moving_average_update: batch does not match prototypes"));
    }
    let c = prototypes.nrows();
    let mut sums = Array2::<f64>::zeros(prototypes.raw_dim());
    let mut counts = vec![0usize; c];
    for (row, &s) in batch_emb.axis_iter(Axis(0)).zip(batch_groups) {
        if s >= c {
            return Err(Error::invalid(format!("moving_average_update: group {s} >= C={c}")));
        }
        let mut dst = sums.row_mut(s);
        dst += &row;
        counts[s] += 1;
    }
    for j in (0..c).filter(|&j| counts[j] > 0) {
        let m = counts[j] as f64;
        let mut p = prototypes.row_mut(j);
        p.zip_mut_with(&sums.row(j), |pv, &sv| *pv = (1.0 - gamma) * *pv + gamma * (sv / m));
    }
    Ok(())
}

/// Per-class mean embedding; every class `0..k` must be present.
pub fn semi_supervised_prototypes(emb: ArrayView2<f64>, labels: &[u32], k: usize) -> Result<Array2<f64>> {
    if labels.len() != emb.nrows() {
        return Err(Error::shape("semi_supervised_prototypes: label count differs from embedding rows"));
    }
    let mut sums = Array2::<f64>::zeros((k, emb.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &l) in emb.axis_iter(Axis(0)).zip(labels) {
        let l = l as usize;
        if l >= k {
            return Err(Error::invalid(format!("semi_supervised_prototypes: label {l} >= K={k}")));
        }
        let mut dst = sums.row_mut(l);
        dst += &row;
        counts[l] += 1;
    }
    if let Some(missing) = counts.iter().position(|&m| m == 0) {
        return Err(Error::DataContract(format!(
            "semi_supervised_prototypes: class {missing} has no labeled embedding"
        )));
    }
    for (j, &m) in counts.iter().enumerate() {
        sums.row_mut(j).mapv_inplace(|v| v / m as f64);
    }
    Ok(sums)
}

/// Prototype state for one way (one prototype count `c`). Suffix `_h` is
/// the time view, `_g` the frequency view.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeWay {
    pub c: usize,
    pub intra_h: Array2<f64>,
    pub intra_g: Array2<f64>,
    pub cross_h: Array2<f64>,
    pub cross_g: Array2<f64>,
    pub assign_h: Vec<usize>,
    pub assign_g: Vec<usize>,
    /// `cross_h[j]` is a real group mean (some instance has `assign_g == j`).
    pub valid_h: Vec<bool>,
    pub valid_g: Vec<bool>,
}

impl PrototypeWay {
    fn empty(c: usize) -> Self {
        PrototypeWay {
            c,
            intra_h: Array2::zeros((c, 0)),
            intra_g: Array2::zeros((c, 0)),
            cross_h: Array2::zeros((c, 0)),
            cross_g: Array2::zeros((c, 0)),
            assign_h: Vec::new(),
            assign_g: Vec::new(),
            valid_h: vec![false; c],
            valid_g: vec![false; c],
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.intra_h.ncols() > 0
    }

    /// Cross-view prototypes for instance `i`: `(cross_h[s_g[i]], cross_g[s_h[i]])`.
    pub fn select_cross_prototype(&self, i: usize, n: usize) -> Result<(ArrayView1<'_, f64>, ArrayView1<'_, f64>)> {
        if self.assign_h.len() != n || self.assign_g.len() != n {
            return Err(Error::invalid(format!(
                "stale prototype bank: assignments cover {} instances, dataset has {n}",
                self.assign_h.len()
            )));
        }
        if i >= n {
            return Err(Error::invalid(format!("instance {i} out of range (n={n})")));
        }
        Ok((self.cross_h.row(self.assign_g[i]), self.cross_g.row(self.assign_h[i])))
    }
}

/// Source of the intra-view prototypes at an epoch refresh.
#[derive(Debug, Clone, Copy)]
pub enum RefreshMode<'a> {
    /// Cluster every way from scratch.
    KmeansInit,
    /// Keep the carried (moving-averaged) intra prototypes.
    MovingAverage,
    /// Labeled class means for the way with `c == k`; other ways are
    /// clustered when `first` and carried otherwise.
    Labeled {
        indices: &'a [usize],
        labels: &'a [u32],
        k: usize,
        first: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub ways: Vec<PrototypeWay>,
}

impl PrototypeBank {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes[0] == 0 {
            return Err(Error::invalid("prototype bank: need at least one way with C >= 1"));
        }
        if sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "prototype bank: way sizes {sizes:?} must be strictly increasing"
            )));
        }
        Ok(PrototypeBank {
            ways: sizes.iter().map(|&c| PrototypeWay::empty(c)).collect(),
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.ways.iter().map(|w| w.c).collect()
    }

    /// Recomputes intra prototypes (per `mode`), assignments and cross-view
    /// prototypes of every way from full-dataset embeddings.
    pub fn refresh(
        &mut self,
        emb_h: ArrayView2<f64>,
        emb_g: ArrayView2<f64>,
        mode: RefreshMode<'_>,
        seed: u64,
    ) -> Result<()> {
        if emb_h.nrows() != emb_g.nrows() {
            return Err(Error::shape("refresh: views have different row counts"));
        }
        let eh = l2_normalize_rows(emb_h);
        let eg = l2_normalize_rows(emb_g);
        for (w, way) in self.ways.iter_mut().enumerate() {
            let cluster = |e: &Array2<f64>, view: u64| -> Result<Array2<f64>> {
                kmeans(e.view(), way.c, rng::derive_seed(seed, &[w as u64, view]), KMEANS_MAX_ITER, KMEANS_TOL)
                    .map(|r| r.centroids)
            };
            let (intra_h, intra_g) = match mode {
                RefreshMode::KmeansInit => (cluster(&eh, 0)?, cluster(&eg, 1)?),
                RefreshMode::MovingAverage => {
                    carried(way, eh.ncols())?;
                    (way.intra_h.clone(), way.intra_g.clone())
                }
                RefreshMode::Labeled { indices, labels, k, first } => {
                    if way.c == k {
                        let lh = eh.select(Axis(0), indices);
                        let lg = eg.select(Axis(0), indices);
                        (
                            semi_supervised_prototypes(lh.view(), labels, k)?,
                            semi_supervised_prototypes(lg.view(), labels, k)?,
                        )
                    } else if first {
                        (cluster(&eh, 0)?, cluster(&eg, 1)?)
                    } else {
                        carried(way, eh.ncols())?;
                        (way.intra_h.clone(), way.intra_g.clone())
                    }
                }
            };
            way.assign_h = assign(eh.view(), l2_normalize_rows(intra_h.view()).view());
            way.assign_g = assign(eg.view(), l2_normalize_rows(intra_g.view()).view());
            let (cross_h, valid_h) = cross_view_prototypes(eh.view(), &way.assign_g, way.c, intra_h.view())?;
            let (cross_g, valid_g) = cross_view_prototypes(eg.view(), &way.assign_h, way.c, intra_g.view())?;
            way.intra_h = intra_h;
            way.intra_g = intra_g;
            way.cross_h = cross_h;
            way.cross_g = cross_g;
            way.valid_h = valid_h;
            way.valid_g = valid_g;
        }
        Ok(())
    }
}

fn carried(way: &PrototypeWay, dim: usize) -> Result<()> {
    if !way.is_initialized() || way.intra_h.ncols() != dim {
        return Err(Error::invalid(format!(
            "refresh: way C={} has no carried prototypes of width {dim}",
            way.c
        )));
    }
    Ok(())
}
