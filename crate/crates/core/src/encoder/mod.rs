//! Per-view convolutional pyramid encoder with a hand-written backward pass.
//!
//! Each level is a "same"-padded 1-D convolution, ReLU, width-2 max-pool and
//! (optionally) dropout. A global max-pool over time reads out a feature
//! vector that a linear layer projects to the embedding. Tensors are laid out
//! `[batch][time][channel]`; convolutions run as im2col + GEMM.

pub mod adam;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use adam::{AdamHyper, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub levels: usize,
    pub channels_per_level: Vec<usize>,
    pub kernel_size: usize,
    pub dropout_rate: f64,
    pub embedding_dim: usize,
    pub input_channels: usize,
    /// Run every input channel through the same univariate encoder and
    /// max-pool the readouts across channels.
    pub channel_shared: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            levels: 3,
            channels_per_level: vec![32, 64, 128],
            kernel_size: 5,
            dropout_rate: 0.1,
            embedding_dim: 64,
            input_channels: 1,
            channel_shared: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::invalid("encoder: levels must be >= 1"));
        }
        if self.channels_per_level.len() != self.levels {
            return Err(Error::invalid(format!(
                "encoder: channels_per_level has {} entries for {} levels",
                self.channels_per_level.len(),
                self.levels
            )));
        }
        if self.channels_per_level.contains(&0) || self.kernel_size == 0 || self.input_channels == 0 {
            return Err(Error::invalid("encoder: channel counts and kernel size must be positive"));
        }
        if self.embedding_dim < 2 {
            return Err(Error::invalid("encoder: embedding_dim must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("encoder: dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Channels seen by the first convolution.
    pub fn conv_input_channels(&self) -> usize {
        if self.channel_shared {
            1
        } else {
            self.input_channels
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[kernel * in_channels][out_channels]`, row `j * in + c` is tap `j`
    /// of input channel `c`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Learnable weights of one view's encoder. Gradients share this type.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub convs: Vec<ConvLayer>,
    pub proj_weight: Array2<f64>,
    pub proj_bias: Array1<f64>,
}

impl EncoderParams {
    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            convs: self
                .convs
                .iter()
                .map(|c| ConvLayer {
                    weight: Array2::zeros(c.weight.raw_dim()),
                    bias: Array1::zeros(c.bias.raw_dim()),
                })
                .collect(),
            proj_weight: Array2::zeros(self.proj_weight.raw_dim()),
            proj_bias: Array1::zeros(self.proj_bias.raw_dim()),
        }
    }

    /// Parameter tensors as `(name, shape, values)` in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.convs.len() + 2);
        for (l, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{l}.weight"), c.weight.shape().to_vec(), slice(c.weight.as_slice())));
            out.push((format!("conv{l}.bias"), c.bias.shape().to_vec(), slice(c.bias.as_slice())));
        }
        out.push(("proj.weight".into(), self.proj_weight.shape().to_vec(), slice(self.proj_weight.as_slice())));
        out.push(("proj.bias".into(), self.proj_bias.shape().to_vec(), slice(self.proj_bias.as_slice())));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.convs.len() + 2);
        for c in self.convs.iter_mut() {
            out.push(c.weight.as_slice_mut().expect("standard layout"));
            out.push(c.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.proj_weight.as_slice_mut().expect("standard layout"));
        out.push(self.proj_bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.named_tensors().into_iter().map(|(_, _, v)| v).collect()
    }

    pub fn add_assign(&mut self, other: &EncoderParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

fn slice(s: Option<&[f64]>) -> &[f64] {
    s.expect("parameters are kept in standard layout")
}

/// He-uniform kernels and zero biases.
pub fn init_encoder(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = rng::stream(seed, &[]);
    let k = config.kernel_size;
    let mut cin = config.conv_input_channels();
    let mut convs = Vec::with_capacity(config.levels);
    for &cout in &config.channels_per_level {
        let bound = (6.0 / (k * cin) as f64).sqrt();
        let weight = Array2::from_shape_fn((k * cin, cout), |_| rng.random_range(-bound..bound));
        convs.push(ConvLayer {
            weight,
            bias: Array1::zeros(cout),
        });
        cin = cout;
    }
    let bound = (6.0 / cin as f64).sqrt();
    let proj_weight = Array2::from_shape_fn((cin, config.embedding_dim), |_| rng.random_range(-bound..bound));
    Ok(EncoderParams {
        convs,
        proj_weight,
        proj_bias: Array1::zeros(config.embedding_dim),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dropout {
    Off,
    On(u64),
}

#[derive(Debug, Clone)]
struct LevelCache {
    len_in: usize,
    cols: Array2<f64>,
    act: Array2<f64>,
    pool_offset: Vec<u8>,
    mask: Option<Vec<f64>>,
}

/// Activations and dropout masks recorded by [`forward`], consumed by
/// [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    rows: usize,
    channels: usize,
    levels: Vec<LevelCache>,
    pooled_len: usize,
    time_argmax: Vec<usize>,
    channel_argmax: Option<Vec<usize>>,
    readout_mask: Option<Vec<f64>>,
    readout: Array2<f64>,
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
        .collect()
}

fn im2col(x: &Array3<f64>, k: usize) -> Array2<f64> {
    let (b, len, cin) = x.dim();
    let pad = (k - 1) / 2;
    let xs = x.as_slice().expect("standard layout");
    let mut cols = Array2::<f64>::zeros((b * len, k * cin));
    let cs = cols.as_slice_mut().unwrap();
    let width = k * cin;
    for bi in 0..b {
        for t in 0..len {
            let row = &mut cs[(bi * len + t) * width..(bi * len + t + 1) * width];
            for j in 0..k {
                let src = t as isize + j as isize - pad as isize;
                if src >= 0 && (src as usize) < len {
                    let off = (bi * len + src as usize) * cin;
                    row[j * cin..(j + 1) * cin].copy_from_slice(&xs[off..off + cin]);
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &Array2<f64>, b: usize, len: usize, cin: usize, k: usize) -> Array3<f64> {
    let pad = (k - 1) / 2;
    let mut dx = Array3::<f64>::zeros((b, len, cin));
    let dxs = dx.as_slice_mut().unwrap();
    let dcs = dcols.as_slice().expect("standard layout");
    let width = k * cin;
    for bi in 0..b {
        for t in 0..len {
            let row = &dcs[(bi * len + t) * width..(bi * len + t + 1) * width];
            for j in 0..k {
                let src = t as isize + j as isize - pad as isize;
                if src >= 0 && (src as usize) < len {
                    let off = (bi * len + src as usize) * cin;
                    for c in 0..cin {
                        dxs[off + c] += row[j * cin + c];
                    }
                }
            }
        }
    }
    dx
}

/// Rearranges `[B][L][d]` into `d` univariate rows per sample: `[B*d][L][1]`.
fn split_channels(batch: &Array3<f64>) -> Array3<f64> {
    let (b, len, d) = batch.dim();
    let mut out = Array3::<f64>::zeros((b * d, len, 1));
    for bi in 0..b {
        for c in 0..d {
            for t in 0..len {
                out[[bi * d + c, t, 0]] = batch[[bi, t, c]];
            }
        }
    }
    out
}

/// Runs the encoder on `batch` (`[B][L][c]`) and returns `[B][D]` plus the
/// cache needed by [`backward`].
pub fn forward(
    config: &EncoderConfig,
    params: &EncoderParams,
    batch: &Array3<f64>,
    dropout: Dropout,
) -> Result<(Array2<f64>, ForwardCache)> {
    let (b, len, d) = batch.dim();
    if b == 0 {
        return Err(Error::shape("encoder: empty batch"));
    }
    if len < config.kernel_size {
        return Err(Error::shape(format!(
            "encoder: input length {len} shorter than kernel size {}",
            config.kernel_size
        )));
    }
    if !config.channel_shared && d != config.input_channels {
        return Err(Error::shape(format!(
            "encoder: input has {d} channels, encoder expects {}",
            config.input_channels
        )));
    }
    let mut rng = match dropout {
        Dropout::On(seed) if config.dropout_rate > 0.0 => Some(rng::stream(seed, &[])),
        _ => None,
    };
    let mut x = if config.channel_shared {
        split_channels(batch)
    } else {
        batch.as_standard_layout().into_owned()
    };
    let rows = x.dim().0;
    let k = config.kernel_size;
    let mut levels = Vec::with_capacity(config.levels);
    for (l, conv) in params.convs.iter().enumerate() {
        let (_, len_in, _) = x.dim();
        let pooled = len_in / 2;
        if pooled == 0 {
            return Err(Error::shape(format!(
                "encoder: level {l} receives length {len_in}, which pools to 0"
            )));
        }
        let cout = conv.bias.len();
        let cols = im2col(&x, k);
        let mut act = cols.dot(&conv.weight);
        act += &conv.bias;
        act.mapv_inplace(|v| v.max(0.0));

        let a = act.as_slice().unwrap();
        let mut out = Array3::<f64>::zeros((rows, pooled, cout));
        let os = out.as_slice_mut().unwrap();
        let mut pool_offset = vec![0u8; rows * pooled * cout];
        for r in 0..rows {
            for p in 0..pooled {
                let lo = (r * len_in + 2 * p) * cout;
                let hi = lo + cout;
                let dst = (r * pooled + p) * cout;
                for c in 0..cout {
                    let (u, v) = (a[lo + c], a[hi + c]);
                    if v > u {
                        os[dst + c] = v;
                        pool_offset[dst + c] = 1;
                    } else {
                        os[dst + c] = u;
                    }
                }
            }
        }
        let mask = rng.as_mut().map(|r| dropout_mask(r, os.len(), config.dropout_rate));
        if let Some(m) = &mask {
            os.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
        }
        levels.push(LevelCache {
            len_in,
            cols,
            act,
            pool_offset,
            mask,
        });
        x = out;
    }

    let (_, pooled_len, channels) = x.dim();
    let xs = x.as_slice().unwrap();
    let mut row_readout = Array2::<f64>::zeros((rows, channels));
    let mut time_argmax = vec![0usize; rows * channels];
    for r in 0..rows {
        for c in 0..channels {
            let mut best = xs[r * pooled_len * channels + c];
            let mut arg = 0;
            for t in 1..pooled_len {
                let v = xs[(r * pooled_len + t) * channels + c];
                if v > best {
                    best = v;
                    arg = t;
                }
            }
            row_readout[[r, c]] = best;
            time_argmax[r * channels + c] = arg;
        }
    }

    let (mut readout, channel_argmax) = if config.channel_shared {
        let mut pooled = Array2::<f64>::zeros((b, channels));
        let mut arg = vec![0usize; b * channels];
        for bi in 0..b {
            for c in 0..channels {
                let mut best = row_readout[[bi * d, c]];
                for ch in 1..d {
                    let v = row_readout[[bi * d + ch, c]];
                    if v > best {
                        best = v;
                        arg[bi * channels + c] = ch;
                    }
                }
                pooled[[bi, c]] = best;
            }
        }
        (pooled, Some(arg))
    } else {
        (row_readout, None)
    };

    let readout_mask = rng
        .as_mut()
        .map(|r| dropout_mask(r, readout.len(), config.dropout_rate));
    if let Some(m) = &readout_mask {
        readout.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
    }
    let mut out = readout.dot(&params.proj_weight);
    out += &params.proj_bias;
    Ok((
        out,
        ForwardCache {
            batch: b,
            rows,
            channels,
            levels,
            pooled_len,
            time_argmax,
            channel_argmax,
            readout_mask,
            readout,
        },
    ))
}

/// Embeds without dropout.
pub fn embed(config: &EncoderConfig, params: &EncoderParams, batch: &Array3<f64>) -> Result<Array2<f64>> {
    forward(config, params, batch, Dropout::Off).map(|(out, _)| out)
}

/// Exact parameter gradients of the map recorded in `cache`, given
/// `upstream` = dLoss/dOutput `[B][D]`. Max-pools route the gradient to the
/// first maximal element.
pub fn backward(
    config: &EncoderConfig,
    params: &EncoderParams,
    cache: &ForwardCache,
    upstream: ArrayView2<f64>,
) -> Result<EncoderParams> {
    if upstream.dim() != (cache.batch, params.proj_bias.len()) {
        return Err(Error::shape(format!(
            "encoder backward: upstream gradient {:?}, expected ({}, {})",
            upstream.dim(),
            cache.batch,
            params.proj_bias.len()
        )));
    }
    let mut grads = params.zeros_like();
    grads.proj_weight = cache.readout.t().dot(&upstream);
    grads.proj_bias = upstream.sum_axis(Axis(0));
    let mut d_readout = upstream.dot(&params.proj_weight.t());
    if let Some(m) = &cache.readout_mask {
        d_readout.iter_mut().zip(m).for_each(|(g, s)| *g *= s);
    }

    let channels = cache.channels;
    let d_rows = match &cache.channel_argmax {
        Some(arg) => {
            let d = cache.rows / cache.batch;
            let mut dr = Array2::<f64>::zeros((cache.rows, channels));
            for bi in 0..cache.batch {
                for c in 0..channels {
                    dr[[bi * d + arg[bi * channels + c], c]] += d_readout[[bi, c]];
                }
            }
            dr
        }
        None => d_readout,
    };

    let mut dx = Array3::<f64>::zeros((cache.rows, cache.pooled_len, channels));
    for r in 0..cache.rows {
        for c in 0..channels {
            dx[[r, cache.time_argmax[r * channels + c], c]] += d_rows[[r, c]];
        }
    }

    let k = config.kernel_size;
    for (l, (level, conv)) in cache.levels.iter().zip(&params.convs).enumerate().rev() {
        let cout = conv.bias.len();
        let pooled = level.len_in / 2;
        let mut dpool = dx;
        if let Some(m) = &level.mask {
            dpool.iter_mut().zip(m).for_each(|(g, s)| *g *= s);
        }
        let dp = dpool.as_slice().unwrap();
        let mut dact = Array2::<f64>::zeros((cache.rows * level.len_in, cout));
        {
            let da = dact.as_slice_mut().unwrap();
            let a = level.act.as_slice().unwrap();
            for r in 0..cache.rows {
                for p in 0..pooled {
                    let src = (r * pooled + p) * cout;
                    for c in 0..cout {
                        let t = 2 * p + level.pool_offset[src + c] as usize;
                        let at = (r * level.len_in + t) * cout + c;
                        if a[at] > 0.0 {
                            da[at] = dp[src + c];
                        }
                    }
                }
            }
        }
        grads.convs[l].weight = level.cols.t().dot(&dact);
        grads.convs[l].bias = dact.sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        let dcols = dact.dot(&conv.weight.t());
        let cin = conv.weight.nrows() / k;
        dx = col2im(&dcols, cache.rows, level.len_in, cin, k);
    }
    Ok(grads)
}

/// Clean (dropout off) and augmented (dropout on) embeddings of one batch.
#[derive(Debug, Clone)]
pub struct AugmentedPair {
    pub clean: Array2<f64>,
    pub augmented: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct AugmentedPass {
    pub pair: AugmentedPair,
    pub clean_cache: ForwardCache,
    pub augmented_cache: ForwardCache,
}

pub fn forward_augmented(
    config: &EncoderConfig,
    params: &EncoderParams,
    batch: &Array3<f64>,
    seed: u64,
) -> Result<AugmentedPass> {
    let (clean, clean_cache) = forward(config, params, batch, Dropout::Off)?;
    let (augmented, augmented_cache) = forward(config, params, batch, Dropout::On(seed))?;
    Ok(AugmentedPass {
        pair: AugmentedPair { clean, augmented },
        clean_cache,
        augmented_cache,
    })
}

/// Gradients of a loss that depends on both halves of an augmented pass.
pub fn backward_augmented(
    config: &EncoderConfig,
    params: &EncoderParams,
    pass: &AugmentedPass,
    d_clean: ArrayView2<f64>,
    d_augmented: ArrayView2<f64>,
) -> Result<EncoderParams> {
    let mut g = backward(config, params, &pass.clean_cache, d_clean)?;
    g.add_assign(&backward(config, params, &pass.augmented_cache, d_augmented)?);
    Ok(g)
}

/// Row-wise `[h | g]`.
pub fn concat_views(h: &Array2<f64>, g: &Array2<f64>) -> Result<Array2<f64>> {
    if h.nrows() != g.nrows() {
        return Err(Error::shape(format!(
            "concat_views: {} rows vs {} rows",
            h.nrows(),
            g.nrows()
        )));
    }
    let mut out = Array2::zeros((h.nrows(), h.ncols() + g.ncols()));
    out.slice_mut(s![.., ..h.ncols()]).assign(h);
    out.slice_mut(s![.., h.ncols()..]).assign(g);
    Ok(out)
}
