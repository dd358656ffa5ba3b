//! Co-training loop: single-view warm-up, then per-epoch prototype refresh
//! and mini-batch optimization of the combined objective.
//!
//! Every random draw (initialization, shuffling, dropout masks, clustering)
//! comes from a stream derived from `(seed, stream, epoch, batch)`, so a run
//! is reproducible from its config alone and resumable from a checkpoint
//! without generator state.

use std::time::Instant;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::dataset::{compute_frequency_view_with, ChannelStats, FrequencyView, LabeledSubset, TimeSeriesDataset};
use crate::encoder::{
    backward_augmented, embed, forward_augmented, init_encoder, AdamHyper, AugmentedPass, EncoderConfig,
    EncoderParams, OptimizerState,
};
use crate::error::{Error, Result};
use crate::losses::{cot_loss, instance_loss, total_loss, LossBreakdown, LossConfig};
use crate::prototypes::{l2_normalize_rows, moving_average_update, PrototypeBank, RefreshMode};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrainMode {
    Unsupervised,
    SemiSupervised { labeled_fraction: f64 },
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Unsupervised => "unsupervised",
            TrainMode::SemiSupervised { .. } => "semi_supervised",
        }
    }
}

/// Which assignment groups the batch members in the moving-average update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MovingAverageGrouping {
    /// Group view-h embeddings by the view-g assignment (and vice versa).
    CrossView,
    /// Group each view by its own assignment.
    IntraView,
}

/// Starting value of the moving-averaged prototypes after a refresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MovingAverageStart {
    /// Start from the cross-view prototypes of the refresh.
    Cross,
    /// Start from the intra-view prototypes used for assignment.
    Intra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSelection {
    Both,
    TimeOnly,
    FrequencyOnly,
}

impl ViewSelection {
    pub fn has_time(self) -> bool {
        self != ViewSelection::FrequencyOnly
    }

    pub fn has_frequency(self) -> bool {
        self != ViewSelection::TimeOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub temperature: f64,
    pub lambda: f64,
    pub proto_temperature: f64,
    pub ntxent: bool,
    pub gamma: f64,
    /// Prototype counts per way; empty means `[K, 2K]`.
    pub prototype_ways: Vec<usize>,
    /// `K` for unlabeled data; labeled data defaults to its class count.
    pub num_prototypes: Option<usize>,
    pub lr: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub eq11_grouping: MovingAverageGrouping,
    pub moving_average_start: MovingAverageStart,
    pub views: ViewSelection,
    pub encoder: EncoderConfig,
    pub log_magnitude: bool,
    pub inference_batch: usize,
    /// Record the clustering NMI of the embeddings after every epoch.
    pub track_nmi: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 20,
            warmup_epochs: 5,
            temperature: 0.1,
            lambda: 5.0,
            proto_temperature: 1.0,
            ntxent: false,
            gamma: 0.01,
            prototype_ways: Vec::new(),
            num_prototypes: None,
            lr: 1e-3,
            seed: 0,
            mode: TrainMode::Unsupervised,
            eq11_grouping: MovingAverageGrouping::CrossView,
            moving_average_start: MovingAverageStart::Cross,
            views: ViewSelection::Both,
            encoder: EncoderConfig::default(),
            log_magnitude: false,
            inference_batch: 512,
            track_nmi: false,
        }
    }
}

impl TrainConfig {
    /// Epoch budgets used for the public benchmarks, batch 256.
    pub fn preset(name: &str) -> Option<Self> {
        let epochs = match name.to_ascii_lowercase().as_str() {
            "har" => 30,
            "sleep-edf" | "sleepedf" => 20,
            "epilepsy" => 40,
            "waveform" => 20,
            _ => return None,
        };
        Some(TrainConfig {
            epochs,
            batch_size: 256,
            ..TrainConfig::default()
        })
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            temperature: self.temperature,
            lambda: self.lambda,
            proto_temperature: self.proto_temperature,
            ntxent: self.ntxent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("instance loss requires at least 2 samples per batch"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("train: epochs must be >= 1"));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::invalid("train: warmup_epochs must not exceed epochs"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("train: gamma must lie in [0, 1]"));
        }
        if !(self.lr > 0.0) || self.inference_batch == 0 {
            return Err(Error::invalid("train: lr and inference_batch must be positive"));
        }
        if let TrainMode::SemiSupervised { labeled_fraction } = self.mode {
            if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
                return Err(Error::invalid("train: labeled_fraction must lie in (0, 1]"));
            }
        }
        self.loss().validate()?;
        self.encoder.validate()
    }

    /// Prototype counts for a dataset with `class_count` classes.
    pub fn resolve_ways(&self, class_count: Option<usize>) -> Result<Vec<usize>> {
        if !self.prototype_ways.is_empty() {
            return Ok(self.prototype_ways.clone());
        }
        let k = self.num_prototypes.or(class_count).ok_or_else(|| {
            Error::invalid("train: set prototype_ways or num_prototypes for unlabeled data")
        })?;
        Ok(vec![k, 2 * k])
    }
}

/// One view's encoder and optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewModel {
    pub config: EncoderConfig,
    pub params: EncoderParams,
    pub optimizer: OptimizerState,
}

impl ViewModel {
    fn new(config: EncoderConfig, seed: u64, lr: f64) -> Result<Self> {
        let params = init_encoder(&config, seed)?;
        let optimizer = OptimizerState::new(&params, AdamHyper { lr, ..AdamHyper::default() });
        Ok(ViewModel {
            config,
            params,
            optimizer,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub time: Option<ViewModel>,
    pub freq: Option<ViewModel>,
    pub bank: Option<PrototypeBank>,
    /// Completed epochs.
    pub epoch: usize,
    pub ways: Vec<usize>,
    pub class_count: Option<usize>,
    pub labeled: Option<LabeledSubset>,
    /// Standardization applied to the training data, when known.
    pub stats: Option<ChannelStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub inst_h: f64,
    pub inst_g: f64,
    pub cot_h: f64,
    pub cot_g: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub mode: String,
    pub inst_h: f64,
    pub inst_g: f64,
    pub cot_h: f64,
    pub cot_g: f64,
    pub total: f64,
    pub nmi: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricLog {
    pub batches: Vec<BatchRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl MetricLog {
    /// Per-batch loss CSV: `epoch,batch,inst_h,inst_g,cot_h,cot_g,total`.
    pub fn loss_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.batches {
            w.serialize(r).map_err(|e| Error::format(format!("loss csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(format!("loss csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// One JSON object per line, one line per epoch.
    pub fn epochs_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Loss columns only (drops wall time), for determinism comparisons.
    pub fn losses(&self) -> Vec<[f64; 5]> {
        self.batches
            .iter()
            .map(|r| [r.inst_h, r.inst_g, r.cot_h, r.cot_g, r.total])
            .collect()
    }
}

/// A dataset with its frequency view precomputed.
#[derive(Debug, Clone)]
pub struct ViewData<'a> {
    pub ds: &'a TimeSeriesDataset,
    pub freq: FrequencyView,
}

impl<'a> ViewData<'a> {
    pub fn new(ds: &'a TimeSeriesDataset, log_magnitude: bool) -> Self {
        ViewData {
            ds,
            freq: compute_frequency_view_with(ds, log_magnitude),
        }
    }

    pub fn time_batch(&self, idx: &[usize]) -> Array3<f64> {
        self.ds.batch_f64(idx)
    }

    pub fn freq_batch(&self, idx: &[usize]) -> Array3<f64> {
        self.freq.batch(idx)
    }
}

/// Embeds every sample of one view with dropout off, in dataset order.
pub fn embed_all(
    model: &ViewModel,
    n: usize,
    batch_size: usize,
    batch: impl Fn(&[usize]) -> Array3<f64>,
) -> Result<Array2<f64>> {
    let mut out = Array2::<f64>::zeros((n, model.config.embedding_dim));
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let emb = embed(&model.config, &model.params, &batch(chunk))?;
        out.slice_mut(s![chunk[0]..chunk[0] + chunk.len(), ..]).assign(&emb);
    }
    Ok(out)
}

/// Full-dataset clean embeddings of the time view (`h`) and frequency view (`g`).
pub fn embed_views(state: &TrainState, data: &ViewData<'_>) -> Result<(Option<Array2<f64>>, Option<Array2<f64>>)> {
    let n = data.ds.n;
    let bs = state.config.inference_batch;
    let h = state
        .time
        .as_ref()
        .map(|m| embed_all(m, n, bs, |idx| data.time_batch(idx)))
        .transpose()?;
    let g = state
        .freq
        .as_ref()
        .map(|m| embed_all(m, n, bs, |idx| data.freq_batch(idx)))
        .transpose()?;
    Ok((h, g))
}

/// Loss breakdown and parameter gradients of one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub breakdown: LossBreakdown,
    pub grad_time: Option<EncoderParams>,
    pub grad_freq: Option<EncoderParams>,
    pub clean_time: Option<Array2<f64>>,
    pub clean_freq: Option<Array2<f64>>,
}

struct ViewPass {
    pass: AugmentedPass,
    inst_value: f64,
    d_clean: Array2<f64>,
    d_aug: Array2<f64>,
}

fn view_pass(model: &ViewModel, batch: &Array3<f64>, seed: u64, loss: &LossConfig) -> Result<ViewPass> {
    let pass = forward_augmented(&model.config, &model.params, batch, seed)?;
    let inst = instance_loss(pass.pair.clean.view(), pass.pair.augmented.view(), loss.temperature, loss.ntxent)?;
    Ok(ViewPass {
        pass,
        inst_value: inst.value,
        d_clean: inst.d_clean,
        d_aug: inst.d_augmented,
    })
}

/// Evaluates the combined objective on batch `idx` and returns its
/// gradients. Co-training terms are active only when `co_training` is set
/// and both views exist; otherwise they are exactly zero. Dropout masks are
/// drawn from the `(epoch, batch)` streams of the run seed.
pub fn batch_objective(
    state: &TrainState,
    data: &ViewData<'_>,
    idx: &[usize],
    epoch: usize,
    batch: usize,
    co_training: bool,
) -> Result<BatchObjective> {
    let cfg = &state.config;
    let loss = cfg.loss();
    let seed = cfg.seed;
    let mut time = state
        .time
        .as_ref()
        .map(|m| {
            let s = rng::derive_seed(seed, &[rng::STREAM_DROPOUT_TIME, epoch as u64, batch as u64]);
            view_pass(m, &data.time_batch(idx), s, &loss)
        })
        .transpose()?;
    let mut freq = state
        .freq
        .as_ref()
        .map(|m| {
            let s = rng::derive_seed(seed, &[rng::STREAM_DROPOUT_FREQ, epoch as u64, batch as u64]);
            view_pass(m, &data.freq_batch(idx), s, &loss)
        })
        .transpose()?;

    let mut cot_h = 0.0;
    let mut cot_g = 0.0;
    let active = co_training && time.is_some() && freq.is_some();
    let lambda = if active { loss.lambda } else { 0.0 };
    if active {
        let bank = state
            .bank
            .as_ref()
            .ok_or_else(|| Error::invalid("co-training step without a refreshed prototype bank"))?;
        let (t, f) = (time.as_mut().unwrap(), freq.as_mut().unwrap());
        for way in &bank.ways {
            if way.assign_h.len() != data.ds.n {
                return Err(Error::invalid("stale prototype bank: assignments do not cover the dataset"));
            }
            let targets_h: Vec<usize> = idx.iter().map(|&i| way.assign_g[i]).collect();
            let targets_g: Vec<usize> = idx.iter().map(|&i| way.assign_h[i]).collect();
            let ch = cot_loss(
                t.pass.pair.clean.view(),
                &targets_h,
                way.cross_h.view(),
                &way.valid_h,
                loss.proto_temperature,
            )?;
            let cg = cot_loss(
                f.pass.pair.clean.view(),
                &targets_g,
                way.cross_g.view(),
                &way.valid_g,
                loss.proto_temperature,
            )?;
            cot_h += ch.value;
            cot_g += cg.value;
            t.d_clean.scaled_add(lambda, &ch.d_emb);
            f.d_clean.scaled_add(lambda, &cg.d_emb);
        }
    }
    let breakdown = total_loss(
        time.as_ref().map_or(0.0, |t| t.inst_value),
        freq.as_ref().map_or(0.0, |f| f.inst_value),
        cot_h,
        cot_g,
        lambda,
    )?;
    let grads = |model: Option<&ViewModel>, vp: Option<&ViewPass>| -> Result<Option<EncoderParams>> {
        match (model, vp) {
            (Some(m), Some(v)) => backward_augmented(&m.config, &m.params, &v.pass, v.d_clean.view(), v.d_aug.view()).map(Some),
            _ => Ok(None),
        }
    };
    Ok(BatchObjective {
        breakdown,
        grad_time: grads(state.time.as_ref(), time.as_ref())?,
        grad_freq: grads(state.freq.as_ref(), freq.as_ref())?,
        clean_time: time.map(|t| t.pass.pair.clean),
        clean_freq: freq.map(|f| f.pass.pair.clean),
    })
}

/// Builds untrained encoders (and an empty bank) for `ds`.
pub fn init_state(ds: &TimeSeriesDataset, config: &TrainConfig) -> Result<TrainState> {
    config.validate()?;
    let ways = config.resolve_ways(ds.class_count)?;
    PrototypeBank::new(&ways)?;
    let enc = EncoderConfig {
        input_channels: ds.d,
        ..config.encoder.clone()
    };
    let time = config
        .views
        .has_time()
        .then(|| ViewModel::new(enc.clone(), rng::derive_seed(config.seed, &[rng::STREAM_INIT_TIME]), config.lr))
        .transpose()?;
    let freq = config
        .views
        .has_frequency()
        .then(|| ViewModel::new(enc.clone(), rng::derive_seed(config.seed, &[rng::STREAM_INIT_FREQ]), config.lr))
        .transpose()?;
    Ok(TrainState {
        config: config.clone(),
        time,
        freq,
        bank: None,
        epoch: 0,
        ways,
        class_count: ds.class_count,
        labeled: None,
        stats: None,
    })
}

fn phase_name(state: &TrainState, epoch: usize) -> &'static str {
    if state.time.is_none() || state.freq.is_none() {
        "single_view"
    } else if epoch < state.config.warmup_epochs {
        "warmup"
    } else {
        "co_training"
    }
}

fn with_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { term, .. } => Error::NonFinite { term, epoch, batch },
        Error::DegenerateEmbedding => Error::NonFinite {
            term: "embedding (zero norm)".into(),
            epoch,
            batch,
        },
        other => other,
    }
}

/// Refreshes the prototype bank from full-dataset embeddings at the start of
/// co-training epoch `epoch`.
pub fn refresh_bank(state: &mut TrainState, data: &ViewData<'_>, epoch: usize) -> Result<()> {
    let (h, g) = embed_views(state, data)?;
    let (h, g) = (h.expect("co-training needs both views"), g.expect("co-training needs both views"));
    let first = state.bank.is_none();
    let mut bank = match state.bank.take() {
        Some(b) => b,
        None => PrototypeBank::new(&state.ways)?,
    };
    let labels: Vec<u32>;
    let mode = match (&state.labeled, first) {
        (Some(sub), _) => {
            let all = data.ds.labels_or_err()?;
            labels = sub.indices.iter().map(|&i| all[i]).collect();
            RefreshMode::Labeled {
                indices: &sub.indices,
                labels: &labels,
                k: state.class_count.unwrap_or(0),
                first,
            }
        }
        (None, true) => RefreshMode::KmeansInit,
        (None, false) => RefreshMode::MovingAverage,
    };
    bank.refresh(h.view(), g.view(), mode, rng::derive_seed(state.config.seed, &[rng::STREAM_CLUSTER, epoch as u64]))?;
    if state.config.moving_average_start == MovingAverageStart::Cross {
        // the labeled way keeps its class means; they are recomputed anyway
        let labeled_way = state.labeled.as_ref().and(state.class_count);
        for way in bank.ways.iter_mut().filter(|w| Some(w.c) != labeled_way) {
            way.intra_h = l2_normalize_rows(way.cross_h.view());
            way.intra_g = l2_normalize_rows(way.cross_g.view());
        }
    }
    state.bank = Some(bank);
    Ok(())
}

fn moving_average_step(state: &mut TrainState, idx: &[usize], obj: &BatchObjective) -> Result<()> {
    let gamma = state.config.gamma;
    let grouping = state.config.eq11_grouping;
    let bank = state.bank.as_mut().expect("co-training has a bank");
    let h = l2_normalize_rows(obj.clean_time.as_ref().unwrap().view());
    let g = l2_normalize_rows(obj.clean_freq.as_ref().unwrap().view());
    for way in bank.ways.iter_mut() {
        let (groups_h, groups_g): (Vec<usize>, Vec<usize>) = match grouping {
            MovingAverageGrouping::CrossView => idx.iter().map(|&i| (way.assign_g[i], way.assign_h[i])).unzip(),
            MovingAverageGrouping::IntraView => idx.iter().map(|&i| (way.assign_h[i], way.assign_g[i])).unzip(),
        };
        moving_average_update(&mut way.intra_h, h.view(), &groups_h, gamma)?;
        moving_average_update(&mut way.intra_g, g.view(), &groups_g, gamma)?;
        // back onto the unit sphere
        way.intra_h = l2_normalize_rows(way.intra_h.view());
        way.intra_g = l2_normalize_rows(way.intra_g.view());
    }
    Ok(())
}

/// Runs one epoch (index `state.epoch`) and advances the counter.
pub fn run_epoch(state: &mut TrainState, data: &ViewData<'_>, log: &mut MetricLog) -> Result<()> {
    let started = Instant::now();
    let epoch = state.epoch;
    let phase = phase_name(state, epoch);
    let co_training = phase == "co_training";
    if co_training {
        refresh_bank(state, data, epoch).map_err(|e| with_context(e, epoch, 0))?;
    }
    let order = crate::dataset::batches(
        data.ds.n,
        state.config.batch_size,
        rng::derive_seed(state.config.seed, &[rng::STREAM_SHUFFLE, epoch as u64]),
    )?;
    let mut sums = [0.0f64; 5];
    for (b, idx) in order.iter().enumerate() {
        let obj = batch_objective(state, data, idx, epoch, b, co_training).map_err(|e| with_context(e, epoch, b))?;
        let bd = obj.breakdown;
        if !bd.total.is_finite() {
            return Err(Error::NonFinite {
                term: "total".into(),
                epoch,
                batch: b,
            });
        }
        if let (Some(m), Some(g)) = (state.time.as_mut(), obj.grad_time.as_ref()) {
            m.optimizer.step(&mut m.params, g).map_err(|e| with_context(e, epoch, b))?;
        }
        if let (Some(m), Some(g)) = (state.freq.as_mut(), obj.grad_freq.as_ref()) {
            m.optimizer.step(&mut m.params, g).map_err(|e| with_context(e, epoch, b))?;
        }
        if co_training {
            moving_average_step(state, idx, &obj)?;
        }
        for (s, v) in sums.iter_mut().zip([bd.inst_h, bd.inst_g, bd.cot_h, bd.cot_g, bd.total]) {
            *s += v;
        }
        log.batches.push(BatchRecord {
            epoch,
            batch: b,
            inst_h: bd.inst_h,
            inst_g: bd.inst_g,
            cot_h: bd.cot_h,
            cot_g: bd.cot_g,
            total: bd.total,
        });
    }
    state.epoch += 1;
    let nmi = match (state.config.track_nmi, data.ds.labels.as_ref(), data.ds.class_count) {
        (true, Some(labels), Some(k)) => {
            let emb = crate::eval::extract_from_views(state, data, crate::eval::AblationVariant::natural(state))?;
            Some(crate::eval::clustering_nmi(emb.view(), labels, k, state.config.seed)?)
        }
        _ => None,
    };
    let m = order.len() as f64;
    log.epochs.push(EpochRecord {
        epoch,
        phase: phase.to_string(),
        mode: if state.labeled.is_some() { "semi_supervised" } else { "unsupervised" }.to_string(),
        inst_h: sums[0] / m,
        inst_g: sums[1] / m,
        cot_h: sums[2] / m,
        cot_g: sums[3] / m,
        total: sums[4] / m,
        nmi,
        wall_time_s: started.elapsed().as_secs_f64(),
    });
    Ok(())
}

/// Trains until `until_epoch` epochs have completed.
pub fn continue_training(state: &mut TrainState, data: &ViewData<'_>, until_epoch: usize, log: &mut MetricLog) -> Result<()> {
    if data.ds.d != state.time.as_ref().or(state.freq.as_ref()).map_or(data.ds.d, |m| m.config.input_channels)
        && !state.config.encoder.channel_shared
    {
        return Err(Error::shape("train: dataset channel count differs from the encoder"));
    }
    while state.epoch < until_epoch {
        run_epoch(state, data, log)?;
    }
    Ok(())
}

/// Unsupervised training on a standardized dataset.
pub fn train(ds: &TimeSeriesDataset, config: &TrainConfig) -> Result<(TrainState, MetricLog)> {
    let mut state = init_state(ds, config)?;
    let data = ViewData::new(ds, config.log_magnitude);
    let mut log = MetricLog::default();
    continue_training(&mut state, &data, config.epochs, &mut log)?;
    Ok((state, log))
}

/// Attaches a labeled subset to an untrained state.
pub fn attach_labeled_subset(state: &mut TrainState, ds: &TimeSeriesDataset, subset: &LabeledSubset) -> Result<()> {
    subset.validate(ds)?;
    let k = ds
        .class_count
        .ok_or_else(|| Error::DataContract("semi-supervised training needs labels".into()))?;
    if !state.ways.contains(&k) {
        return Err(Error::invalid(format!(
            "semi-supervised training needs a way with C = K = {k}, ways are {:?}",
            state.ways
        )));
    }
    state.labeled = Some(subset.clone());
    Ok(())
}

/// Training where the `K`-way intra-view prototypes are the class means of
/// the labeled subset, recomputed at every refresh. Labels never enter a
/// loss directly.
pub fn train_semi_supervised(
    ds: &TimeSeriesDataset,
    subset: &LabeledSubset,
    config: &TrainConfig,
) -> Result<(TrainState, MetricLog)> {
    let mut state = init_state(ds, config)?;
    attach_labeled_subset(&mut state, ds, subset)?;
    let data = ViewData::new(ds, config.log_magnitude);
    let mut log = MetricLog::default();
    continue_training(&mut state, &data, config.epochs, &mut log)?;
    Ok((state, log))
}

/// Untrained state for `config.mode`; semi-supervised runs draw their
/// labeled subset from `ds` with the run seed.
pub fn prepare_state(ds: &TimeSeriesDataset, config: &TrainConfig) -> Result<TrainState> {
    let mut state = init_state(ds, config)?;
    if let TrainMode::SemiSupervised { labeled_fraction } = config.mode {
        let subset = crate::dataset::label_subset(
            ds,
            labeled_fraction,
            rng::derive_seed(config.seed, &[rng::STREAM_SPLIT, 1]),
        )?;
        attach_labeled_subset(&mut state, ds, &subset)?;
    }
    Ok(state)
}

/// [`prepare_state`] then training to `config.epochs`.
pub fn train_configured(ds: &TimeSeriesDataset, config: &TrainConfig) -> Result<(TrainState, MetricLog)> {
    let mut state = prepare_state(ds, config)?;
    let data = ViewData::new(ds, config.log_magnitude);
    let mut log = MetricLog::default();
    continue_training(&mut state, &data, config.epochs, &mut log)?;
    Ok((state, log))
}

/// Continues training a channel-shared encoder on a target dataset with any
/// number of channels. Optimizer state and prototypes start fresh.
pub fn finetune_transfer(
    pretrained: &TrainState,
    target: &TimeSeriesDataset,
    config: &TrainConfig,
) -> Result<(TrainState, MetricLog)> {
    let models = [pretrained.time.as_ref(), pretrained.freq.as_ref()];
    if models.iter().flatten().any(|m| !m.config.channel_shared) {
        return Err(Error::invalid("finetune_transfer: pretrained encoder is not channel_shared"));
    }
    let mut fresh = init_state(target, config)?;
    for (dst, src) in [(&mut fresh.time, &pretrained.time), (&mut fresh.freq, &pretrained.freq)] {
        match (dst.as_mut(), src) {
            (Some(d), Some(s)) => {
                if d.params.named_tensors().iter().map(|t| t.1.clone()).collect::<Vec<_>>()
                    != s.params.named_tensors().iter().map(|t| t.1.clone()).collect::<Vec<_>>()
                {
                    return Err(Error::shape("finetune_transfer: encoder architecture differs from the pretrained one"));
                }
                d.params = s.params.clone();
                d.optimizer = OptimizerState::new(&d.params, d.optimizer.hyper);
            }
            (Some(_), None) => return Err(Error::invalid("finetune_transfer: pretrained state lacks a view")),
            _ => {}
        }
    }
    let data = ViewData::new(target, config.log_magnitude);
    let mut log = MetricLog::default();
    continue_training(&mut fresh, &data, config.epochs, &mut log)?;
    Ok((fresh, log))
}

#[cfg(test)]
mod tests;
