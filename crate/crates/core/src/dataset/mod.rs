//! Time series containers, the synthetic generator, preprocessing and
//! batching.

mod io;
mod noise;
mod spectrum;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

pub use io::{load_dataset, read_csv, read_tsd, write_dataset, write_tsd};
pub use noise::{inject_noise, NoiseKind, NoiseSpec};
pub use spectrum::{compute_frequency_view, compute_frequency_view_with, FrequencyView};

/// `n` series of length `t` with `d` channels, stored row-major `[n][t][d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub samples: Vec<f32>,
    pub labels: Option<Vec<u32>>,
    pub class_count: Option<usize>,
}

impl TimeSeriesDataset {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        t: usize,
        d: usize,
        samples: Vec<f32>,
        labels: Option<Vec<u32>>,
        class_count: Option<usize>,
    ) -> Result<Self> {
        let ds = TimeSeriesDataset {
            name: name.into(),
            n,
            t,
            d,
            samples,
            labels,
            class_count,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.t < 2 || self.d < 1 {
            return Err(Error::format(format!(
                "invalid dimensions n={}, t={}, d={} (need n>=1, t>=2, d>=1)",
                self.n, self.t, self.d
            )));
        }
        if self.samples.len() != self.n * self.t * self.d {
            return Err(Error::format(format!(
                "payload size mismatch: expected {} values, found {}",
                self.n * self.t * self.d,
                self.samples.len()
            )));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(format!("non-finite sample value at flat index {i}")));
        }
        match (&self.labels, self.class_count) {
            (Some(labels), Some(k)) => {
                if labels.len() != self.n {
                    return Err(Error::format(format!(
                        "labels: expected {} entries, found {}",
                        self.n,
                        labels.len()
                    )));
                }
                if let Some(bad) = labels.iter().find(|&&l| l as usize >= k) {
                    return Err(Error::format(format!(
                        "labels: value {bad} out of range for class_count {k}"
                    )));
                }
            }
            (Some(_), None) => return Err(Error::format("class_count: required when labels are present")),
            (None, _) => {}
        }
        Ok(())
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.t * self.d;
        &self.samples[i * len..(i + 1) * len]
    }

    pub fn label(&self, i: usize) -> Option<u32> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn labels_or_err(&self) -> Result<&[u32]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::DataContract(format!("dataset '{}' has no labels", self.name)))
    }

    /// Copies the selected samples (and labels) into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("subset: empty index list"));
        }
        let mut samples = Vec::with_capacity(indices.len() * self.t * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::invalid(format!("subset: index {i} out of range (n={})", self.n)));
            }
            samples.extend_from_slice(self.sample(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(TimeSeriesDataset {
            name: self.name.clone(),
            n: indices.len(),
            t: self.t,
            d: self.d,
            samples,
            labels,
            class_count: self.class_count,
        })
    }

    /// Samples of the given indices as an `f64` batch `[B][T][d]`.
    pub fn batch_f64(&self, indices: &[usize]) -> ndarray::Array3<f64> {
        let len = self.t * self.d;
        let mut out = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            out.extend(self.sample(i).iter().map(|&v| v as f64));
        }
        ndarray::Array3::from_shape_vec((indices.len(), self.t, self.d), out)
            .expect("batch shape is consistent")
    }

    /// Sample indices grouped by label, in ascending index order.
    pub fn class_indices(&self) -> Option<BTreeMap<u32, Vec<usize>>> {
        let labels = self.labels.as_ref()?;
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        Some(by_class)
    }
}

/// Labeled-subset indices into a training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSubset {
    pub indices: Vec<usize>,
}

impl LabeledSubset {
    /// Checks distinctness, range, and that every class `0..k` is present.
    pub fn validate(&self, ds: &TimeSeriesDataset) -> Result<()> {
        let labels = ds.labels_or_err()?;
        let k = ds.class_count.unwrap_or(0);
        let mut seen = vec![false; ds.n];
        let mut classes = vec![false; k];
        for &i in &self.indices {
            if i >= ds.n {
                return Err(Error::invalid(format!(
                    "labeled subset index {i} outside the training set (n={})",
                    ds.n
                )));
            }
            if seen[i] {
                return Err(Error::invalid(format!("labeled subset index {i} repeated")));
            }
            seen[i] = true;
            classes[labels[i] as usize] = true;
        }
        if let Some(c) = classes.iter().position(|&p| !p) {
            return Err(Error::DataContract(format!("class {c} missing from labeled subset")));
        }
        Ok(())
    }
}

/// Observation noise of the synthetic generator.
pub const SYNTH_NOISE_STD: f64 = 0.3;

/// Signal strengths of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSignal {
    /// Sinusoid amplitude.
    pub amplitude: f64,
    /// Trend change over the whole window is `trend * (-1 + 2c/(k-1))`.
    pub trend: f64,
}

impl Default for SyntheticSignal {
    fn default() -> Self {
        // weak enough that an untrained encoder does not already separate
        // the classes
        SyntheticSignal {
            amplitude: 0.3,
            trend: 1.0,
        }
    }
}

/// Trend slope (change over the whole window) for class `c` of `k`.
fn synth_slope(c: usize, k: usize) -> f64 {
    -1.0 + 2.0 * c as f64 / (k - 1) as f64
}

/// Generates a labeled `k`-class dataset. Class `c` is a sinusoid at DFT
/// bin `c + 2` with a random phase per channel, plus a class-specific linear
/// trend and i.i.d. Gaussian noise (sigma 0.3). Samples are ordered
/// class-major.
pub fn generate_synthetic(
    n_per_class: usize,
    t: usize,
    d: usize,
    k: usize,
    seed: u64,
) -> Result<TimeSeriesDataset> {
    generate_synthetic_with(n_per_class, t, d, k, seed, SyntheticSignal::default())
}

/// [`generate_synthetic`] with explicit signal strengths.
pub fn generate_synthetic_with(
    n_per_class: usize,
    t: usize,
    d: usize,
    k: usize,
    seed: u64,
    signal: SyntheticSignal,
) -> Result<TimeSeriesDataset> {
    if k < 2 {
        return Err(Error::invalid(format!("generate_synthetic: k must be >= 2, got {k}")));
    }
    if t < 32 {
        return Err(Error::invalid(format!("generate_synthetic: t must be >= 32, got {t}")));
    }
    if n_per_class < 1 || d < 1 {
        return Err(Error::invalid("generate_synthetic: n_per_class and d must be >= 1"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, SYNTH_NOISE_STD).expect("valid std");
    let n = n_per_class * k;
    let mut samples = Vec::with_capacity(n * t * d);
    let mut labels = Vec::with_capacity(n);
    for c in 0..k {
        let freq = (c + 2) as f64;
        let slope = signal.trend * synth_slope(c, k);
        for _ in 0..n_per_class {
            let phases: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            for step in 0..t {
                let u = step as f64 / t as f64;
                for &phase in &phases {
                    let v = signal.amplitude * (2.0 * PI * freq * u + phase).sin()
                        + slope * (u - 0.5)
                        + noise.sample(&mut rng);
                    samples.push(v as f32);
                }
            }
            labels.push(c as u32);
        }
    }
    TimeSeriesDataset::new(
        format!("synthetic-k{k}-t{t}-d{d}-s{seed}"),
        n,
        t,
        d,
        samples,
        Some(labels),
        Some(k),
    )
}

/// Per-channel z-scoring statistics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Channels with a standard deviation below this are divided by 1 instead.
pub const MIN_STD: f64 = 1e-8;

impl ChannelStats {
    /// Mean and population standard deviation per channel over all samples
    /// and time steps.
    pub fn fit(ds: &TimeSeriesDataset) -> Self {
        let d = ds.d;
        let count = (ds.n * ds.t) as f64;
        let mut mean = vec![0.0; d];
        for (j, v) in ds.samples.iter().enumerate() {
            mean[j % d] += *v as f64;
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; d];
        for (j, v) in ds.samples.iter().enumerate() {
            let diff = *v as f64 - mean[j % d];
            var[j % d] += diff * diff;
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / count).sqrt();
                if s < MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        ChannelStats { mean, std }
    }

    pub fn apply(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        if ds.d != self.mean.len() {
            return Err(Error::shape(format!(
                "standardize: dataset has {} channels, statistics have {}",
                ds.d,
                self.mean.len()
            )));
        }
        let d = ds.d;
        let samples = ds
            .samples
            .iter()
            .enumerate()
            .map(|(j, &v)| ((v as f64 - self.mean[j % d]) / self.std[j % d]) as f32)
            .collect();
        Ok(TimeSeriesDataset {
            samples,
            ..ds.clone()
        })
    }
}

/// Z-scores `train` and every dataset in `others` with the training
/// statistics.
pub fn standardize(
    train: &TimeSeriesDataset,
    others: &[&TimeSeriesDataset],
) -> Result<(TimeSeriesDataset, Vec<TimeSeriesDataset>, ChannelStats)> {
    let stats = ChannelStats::fit(train);
    let train_std = stats.apply(train)?;
    let others_std = others
        .iter()
        .map(|ds| stats.apply(ds))
        .collect::<Result<Vec<_>>>()?;
    Ok((train_std, others_std, stats))
}

/// Splits `counts_total` items into parts proportional to `fractions` using
/// the largest-remainder method.
fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &j in order.iter().take(total.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

/// Index order in which every class is spread evenly: within each class the
/// indices are shuffled, then all indices are sorted by their relative
/// position inside their class.
fn stratified_order(ds: &TimeSeriesDataset, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, &[rng::STREAM_SPLIT]);
    match ds.class_indices() {
        None => {
            let mut idx: Vec<usize> = (0..ds.n).collect();
            idx.shuffle(&mut rng);
            idx
        }
        Some(by_class) => {
            let mut keyed: Vec<(f64, u32, usize)> = Vec::with_capacity(ds.n);
            for (class, mut members) in by_class {
                members.shuffle(&mut rng);
                let m = members.len() as f64;
                for (rank, i) in members.into_iter().enumerate() {
                    keyed.push(((rank as f64 + 0.5) / m, class, i));
                }
            }
            keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            keyed.into_iter().map(|(_, _, i)| i).collect()
        }
    }
}

/// Disjoint, exhaustive, label-stratified index split. Each part is returned
/// in ascending index order.
pub fn split_indices(ds: &TimeSeriesDataset, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::invalid("split: fractions must lie in [0, 1]"));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split: fractions sum to {sum}, expected 1")));
    }
    let counts = apportion(ds.n, fractions);
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!(
            "split: fraction {} yields an empty split (part {j}) for n={}",
            fractions[j], ds.n
        )));
    }
    let order = stratified_order(ds, seed);
    let mut parts = Vec::with_capacity(counts.len());
    let mut start = 0;
    for c in counts {
        let mut part = order[start..start + c].to_vec();
        part.sort_unstable();
        parts.push(part);
        start += c;
    }
    Ok(parts)
}

pub fn split(ds: &TimeSeriesDataset, fractions: &[f64], seed: u64) -> Result<Vec<TimeSeriesDataset>> {
    split_indices(ds, fractions, seed)?
        .iter()
        .map(|idx| ds.subset(idx))
        .collect()
}

/// Stratified labeled subset: `ceil(fraction * n_c)` samples of every class.
pub fn label_subset(ds: &TimeSeriesDataset, fraction: f64, seed: u64) -> Result<LabeledSubset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("label_subset: fraction {fraction} not in (0, 1]")));
    }
    let by_class = ds
        .class_indices()
        .ok_or_else(|| Error::DataContract("label_subset: dataset has no labels".into()))?;
    if let Some(k) = ds.class_count {
        if let Some(c) = (0..k as u32).find(|c| !by_class.contains_key(c)) {
            return Err(Error::DataContract(format!("label_subset: class {c} has no samples")));
        }
    }
    let mut rng = rng::stream(seed, &[rng::STREAM_SPLIT, 1]);
    let mut indices = Vec::new();
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let take = ((fraction * members.len() as f64) - 1e-9).ceil().max(1.0) as usize;
        indices.extend_from_slice(&members[..take.min(members.len())]);
    }
    indices.sort_unstable();
    Ok(LabeledSubset { indices })
}

/// Shuffled index batches. A trailing batch with fewer than two members is
/// merged into the previous one.
pub fn batches(n: usize, batch_size: usize, shuffle_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 || n < 2 {
        return Err(Error::invalid("instance loss requires at least 2 samples per batch"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
    let mut out: Vec<Vec<usize>> = perm.chunks(batch_size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().map_or(false, |b| b.len() < 2) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(n_per: usize, k: usize) -> TimeSeriesDataset {
        let n = n_per * k;
        let labels: Vec<u32> = (0..n).map(|i| (i / n_per) as u32).collect();
        let samples = (0..n * 4).map(|v| v as f32).collect();
        TimeSeriesDataset::new("x", n, 4, 1, samples, Some(labels), Some(k)).unwrap()
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = generate_synthetic(8, 64, 1, 4, 7).unwrap();
        let b = generate_synthetic(8, 64, 1, 4, 7).unwrap();
        assert_eq!(a, b);
        let by_class = a.class_indices().unwrap();
        assert_eq!(by_class.len(), 4);
        assert!(by_class.values().all(|m| m.len() == 8));
        assert!(generate_synthetic(8, 16, 1, 4, 7).is_err());
        assert!(generate_synthetic(8, 64, 1, 1, 7).is_err());
    }

    #[test]
    fn synthetic_spectra_peak_at_class_bins() {
        // without the trend, whose low-frequency energy can dominate bin 1
        let signal = SyntheticSignal { amplitude: 0.3, trend: 0.0 };
        let ds = generate_synthetic_with(16, 64, 1, 4, 3, signal).unwrap();
        let fv = compute_frequency_view(&ds);
        for class in 0..4usize {
            let members: Vec<usize> = (0..ds.n).filter(|&i| ds.label(i) == Some(class as u32)).collect();
            let mut mean = vec![0.0; fv.f];
            for &i in &members {
                for (f, m) in mean.iter_mut().enumerate() {
                    *m += fv.get(i, f, 0) / members.len() as f64;
                }
            }
            let argmax = (1..fv.f).max_by(|&a, &b| mean[a].partial_cmp(&mean[b]).unwrap()).unwrap();
            assert_eq!(argmax, class + 2);
        }
    }

    #[test]
    fn standardize_uses_train_statistics() {
        let train = TimeSeriesDataset::new("tr", 2, 3, 1, vec![0., 1., 2., 3., 4., 5.], None, None).unwrap();
        let test = TimeSeriesDataset::new("te", 1, 3, 1, vec![10., 11., 12.], None, None).unwrap();
        let (tr, others, stats) = standardize(&train, &[&test]).unwrap();
        let mean: f64 = tr.samples.iter().map(|&v| v as f64).sum::<f64>() / 6.0;
        let var: f64 = tr.samples.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-6);
        assert!((var.sqrt() - 1.0).abs() < 1e-6);
        assert!((stats.mean[0] - 2.5).abs() < 1e-12);
        let test_mean: f64 = others[0].samples.iter().map(|&v| v as f64).sum::<f64>() / 3.0;
        assert!(test_mean > 1.0);
    }

    #[test]
    fn constant_channel_standardizes_to_zero() {
        let ds = TimeSeriesDataset::new("c", 2, 3, 2, vec![5., 1., 5., 2., 5., 3., 5., 4., 5., 5., 5., 6.], None, None)
            .unwrap();
        let (tr, _, stats) = standardize(&ds, &[]).unwrap();
        assert_eq!(stats.std[0], 1.0);
        assert!(tr.samples.iter().step_by(2).all(|&v| v == 0.0));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = TimeSeriesDataset::new("u", 10, 2, 1, vec![0.0; 20], None, None).unwrap();
        let parts = split_indices(&ds, &[0.8, 0.2], 3).unwrap();
        assert_eq!(parts[0].len(), 8);
        assert_eq!(parts[1].len(), 2);
        assert_eq!(parts, split_indices(&ds, &[0.8, 0.2], 3).unwrap());
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(split_indices(&ds, &[0.99, 0.01], 3).is_err());
        assert!(split_indices(&ds, &[0.5, 0.4], 3).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let ds = labeled(20, 4);
        let parts = split_indices(&ds, &[0.8, 0.2], 9).unwrap();
        for part in &parts {
            let expected = part.len() / 4;
            let mut counts = [0usize; 4];
            for &i in part {
                counts[ds.label(i).unwrap() as usize] += 1;
            }
            assert!(counts.iter().all(|&c| c == expected), "{counts:?}");
        }
    }

    #[test]
    fn label_subset_per_class() {
        let ds = labeled(50, 4);
        let sub = label_subset(&ds, 0.1, 5).unwrap();
        assert_eq!(sub.indices.len(), 20);
        let mut counts = [0usize; 4];
        for &i in &sub.indices {
            counts[ds.label(i).unwrap() as usize] += 1;
        }
        assert_eq!(counts, [5; 4]);
        assert_eq!(sub, label_subset(&ds, 0.1, 5).unwrap());
        sub.validate(&ds).unwrap();
        assert!(LabeledSubset { indices: vec![0, 1] }.validate(&ds).is_err());
        assert!(LabeledSubset { indices: vec![0, 300] }.validate(&ds).is_err());
    }

    #[test]
    fn batch_partition_rules() {
        let sizes = |n, b| batches(n, b, 1).unwrap().iter().map(|x| x.len()).collect::<Vec<_>>();
        assert_eq!(sizes(10, 4), vec![4, 4, 2]);
        assert_eq!(sizes(9, 4), vec![4, 5]);
        let mut all = batches(10, 4, 1).unwrap().concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let err = batches(10, 1, 1).unwrap_err().to_string();
        assert!(err.contains("instance loss requires at least 2 samples per batch"));
    }
}
