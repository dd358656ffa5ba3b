//! Frozen-encoder evaluation: embedding extraction, linear probe, metrics,
//! ablation variants and noise-robustness sweeps.

pub mod metrics;
pub mod probe;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{inject_noise, split_indices, standardize, ChannelStats, NoiseKind, NoiseSpec, TimeSeriesDataset};
use crate::encoder::concat_views;
use crate::error::{Error, Result};
use crate::prototypes::{kmeans, KMEANS_MAX_ITER, KMEANS_TOL};
use crate::rng;
use crate::training::{embed_views, train_configured, TrainConfig, TrainState, ViewData, ViewSelection};

pub use metrics::{accuracy, auroc_macro, nmi};
pub use probe::{linear_probe, ClassMetrics, EvalReport};

pub const SCHEMA_VERSION: u32 = 1;
/// K-means restarts behind [`clustering_nmi`].
pub const NMI_RESTARTS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationVariant {
    /// Time view only.
    #[serde(rename = "T")]
    T,
    /// Frequency view only.
    #[serde(rename = "F")]
    F,
    /// Both views, instance losses only, concatenated.
    #[serde(rename = "T+F")]
    TplusF,
    #[serde(rename = "full")]
    Full,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [AblationVariant::T, AblationVariant::F, AblationVariant::TplusF, AblationVariant::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationVariant::T => "T",
            AblationVariant::F => "F",
            AblationVariant::TplusF => "T+F",
            AblationVariant::Full => "full",
        }
    }

    /// The widest slice the state supports.
    pub fn natural(state: &TrainState) -> Self {
        match (state.time.is_some(), state.freq.is_some()) {
            (true, false) => AblationVariant::T,
            (false, true) => AblationVariant::F,
            _ => AblationVariant::Full,
        }
    }

    /// Training config for this variant derived from the full config.
    pub fn train_config(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            AblationVariant::T => c.views = ViewSelection::TimeOnly,
            AblationVariant::F => c.views = ViewSelection::FrequencyOnly,
            AblationVariant::TplusF => {
                c.views = ViewSelection::Both;
                c.lambda = 0.0;
            }
            AblationVariant::Full => c.views = ViewSelection::Both,
        }
        c
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "t" => Ok(AblationVariant::T),
            "F" | "f" => Ok(AblationVariant::F),
            "T+F" | "t+f" | "TplusF" => Ok(AblationVariant::TplusF),
            "full" | "FULL" | "Full" => Ok(AblationVariant::Full),
            _ => Err(Error::invalid(format!("unknown variant '{s}' (expected T, F, T+F or full)"))),
        }
    }
}

/// Frozen embeddings in dataset order, sliced per `variant`: `[N][D]` for
/// T and F, `[N][2D]` (time then frequency) otherwise.
pub fn extract_from_views(state: &TrainState, data: &ViewData<'_>, variant: AblationVariant) -> Result<Array2<f64>> {
    let missing = |v: &str| Error::invalid(format!("variant {variant} needs the {v} encoder, absent from this state"));
    let (h, g) = embed_views(state, data)?;
    match variant {
        AblationVariant::T => h.ok_or_else(|| missing("time")),
        AblationVariant::F => g.ok_or_else(|| missing("frequency")),
        AblationVariant::TplusF | AblationVariant::Full => {
            let h = h.ok_or_else(|| missing("time"))?;
            let g = g.ok_or_else(|| missing("frequency"))?;
            concat_views(&h, &g)
        }
    }
}

pub fn extract_embeddings(state: &TrainState, ds: &TimeSeriesDataset, variant: AblationVariant) -> Result<Array2<f64>> {
    extract_from_views(state, &ViewData::new(ds, state.config.log_magnitude), variant)
}

/// NMI between ground truth and the best-inertia K-means partition (over
/// restarts) of `emb`.
pub fn clustering_nmi(emb: ArrayView2<f64>, labels: &[u32], k: usize, seed: u64) -> Result<f64> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..NMI_RESTARTS {
        let res = kmeans(emb, k, rng::derive_seed(seed, &[rng::STREAM_CLUSTER, 0xC1, r]), KMEANS_MAX_ITER, KMEANS_TOL)?;
        let inertia = res.inertia();
        if best.as_ref().is_none_or(|b| inertia < b.0) {
            best = Some((inertia, res.assignments));
        }
    }
    nmi(&best.unwrap().1, labels)
}

/// A standardized train/test pair.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: TimeSeriesDataset,
    pub test: TimeSeriesDataset,
    pub stats: ChannelStats,
}

/// Stratified split, then standardization with training statistics.
pub fn prepare_split(ds: &TimeSeriesDataset, test_fraction: f64, seed: u64) -> Result<Split> {
    let parts = split_indices(ds, &[1.0 - test_fraction, test_fraction], rng::derive_seed(seed, &[rng::STREAM_SPLIT]))?;
    let train = ds.subset(&parts[0])?;
    let test = ds.subset(&parts[1])?;
    from_parts(&train, &test)
}

/// Standardizes an existing train/test pair with training statistics.
pub fn from_parts(train: &TimeSeriesDataset, test: &TimeSeriesDataset) -> Result<Split> {
    let (train, mut rest, stats) = standardize(train, &[test])?;
    Ok(Split {
        train,
        test: rest.remove(0),
        stats,
    })
}

/// Which side of a split receives injected noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    Both,
    TrainOnly,
    TestOnly,
}

/// Corrupts a standardized split; train and test draw from distinct streams.
pub fn apply_noise(split: &Split, spec: &NoiseSpec, target: NoiseTarget) -> Result<Split> {
    let side = |ds: &TimeSeriesDataset, on: bool, tag: u64| -> Result<TimeSeriesDataset> {
        if !on {
            return Ok(ds.clone());
        }
        let s = NoiseSpec {
            seed: rng::derive_seed(spec.seed, &[rng::STREAM_NOISE, tag]),
            ..*spec
        };
        inject_noise(ds, &s)
    };
    Ok(Split {
        train: side(&split.train, target != NoiseTarget::TestOnly, 0)?,
        test: side(&split.test, target != NoiseTarget::TrainOnly, 1)?,
        stats: split.stats.clone(),
    })
}

/// Probes a trained state on a split.
pub fn evaluate(state: &TrainState, split: &Split, variant: AblationVariant, seed: u64) -> Result<EvalReport> {
    let train_labels = split.train.labels_or_err()?;
    let test_labels = split.test.labels_or_err()?;
    let tr = extract_embeddings(state, &split.train, variant)?;
    let te = extract_embeddings(state, &split.test, variant)?;
    linear_probe(tr.view(), train_labels, te.view(), test_labels, seed)
}

/// Trains `variant` on the split's training part and probes it.
pub fn run_variant(split: &Split, config: &TrainConfig, variant: AblationVariant) -> Result<(TrainState, EvalReport)> {
    let cfg = variant.train_config(config);
    let (state, _) = train_configured(&split.train, &cfg)?;
    let report = evaluate(&state, split, variant, cfg.seed)?;
    Ok((state, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: NoiseKind,
    pub level: f64,
    pub seed: u64,
    pub variant: AblationVariant,
    pub accuracy: f64,
    pub auroc: f64,
}

/// Every (level, seed, variant) cell: corrupt, train, probe. `sink` sees
/// each row as soon as it is computed.
pub fn robustness_sweep(
    split: &Split,
    levels: &[NoiseSpec],
    config: &TrainConfig,
    variants: &[AblationVariant],
    seeds: &[u64],
    target: NoiseTarget,
    mut sink: impl FnMut(&SweepRow) -> Result<()>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for spec in levels {
        spec.validate()?;
        for &seed in seeds {
            let noisy = apply_noise(split, &NoiseSpec { seed, ..*spec }, target)?;
            let cfg = TrainConfig { seed, ..config.clone() };
            for &variant in variants {
                let (_, rep) = run_variant(&noisy, &cfg, variant)?;
                let row = SweepRow {
                    kind: spec.kind,
                    level: spec.level,
                    seed,
                    variant,
                    accuracy: rep.accuracy,
                    auroc: rep.auroc,
                };
                sink(&row)?;
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub seed: u64,
    pub accuracy: f64,
    pub auroc: f64,
    pub nmi: f64,
}

pub fn run_ablation(
    split: &Split,
    variants: &[AblationVariant],
    config: &TrainConfig,
    seeds: &[u64],
    mut sink: impl FnMut(&AblationRow) -> Result<()>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..config.clone() };
        for &variant in variants {
            let (_, rep) = run_variant(split, &cfg, variant)?;
            let row = AblationRow {
                variant,
                seed,
                accuracy: rep.accuracy,
                auroc: rep.auroc,
                nmi: rep.nmi,
            };
            sink(&row)?;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Median of a nonempty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}
