//! `TSCKPT1` container: magic, little-endian `u32` manifest length, a JSON
//! manifest (configs, counters, array table), then raw little-endian array
//! payloads. Offsets in the table are relative to the payload start.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{ChannelStats, LabeledSubset};
use crate::encoder::{init_encoder, AdamHyper, EncoderConfig, EncoderParams, OptimizerState};
use crate::error::{Error, Result};
use crate::prototypes::{PrototypeBank, PrototypeWay};
use crate::training::{TrainConfig, TrainState, ViewModel};

pub const MAGIC: &[u8; 7] = b"TSCKPT1";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    U32,
    U8,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::U32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMeta {
    pub encoder: EncoderConfig,
    pub adam: AdamHyper,
    pub adam_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub epoch: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub ways: Vec<usize>,
    pub class_count: Option<usize>,
    pub time: Option<ViewMeta>,
    pub freq: Option<ViewMeta>,
    pub has_bank: bool,
    pub has_labeled: bool,
    pub has_stats: bool,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Default)]
struct Writer {
    entries: Vec<ArrayEntry>,
    payload: Vec<u8>,
}

impl Writer {
    fn push(&mut self, name: String, dtype: DType, shape: Vec<usize>, bytes: impl IntoIterator<Item = u8>) {
        let offset = self.payload.len();
        self.payload.extend(bytes);
        self.entries.push(ArrayEntry { name, dtype, shape, offset });
    }

    fn f64s(&mut self, name: String, shape: Vec<usize>, v: &[f64]) {
        self.push(name, DType::F64, shape, v.iter().flat_map(|x| x.to_le_bytes()));
    }

    fn u32s(&mut self, name: String, v: &[usize]) {
        self.push(name, DType::U32, vec![v.len()], v.iter().flat_map(|&x| (x as u32).to_le_bytes()));
    }

    fn flags(&mut self, name: String, v: &[bool]) {
        self.push(name, DType::U8, vec![v.len()], v.iter().map(|&b| b as u8));
    }

    fn matrix(&mut self, name: String, m: &Array2<f64>) {
        let v: Vec<f64> = m.iter().copied().collect();
        self.f64s(name, m.shape().to_vec(), &v);
    }
}

fn write_view(w: &mut Writer, prefix: &str, m: &ViewModel) {
    for (i, (name, shape, values)) in m.params.named_tensors().into_iter().enumerate() {
        w.f64s(format!("{prefix}.{name}"), shape.clone(), values);
        w.f64s(format!("{prefix}.adam.m.{name}"), shape.clone(), &m.optimizer.first_moment[i]);
        w.f64s(format!("{prefix}.adam.v.{name}"), shape, &m.optimizer.second_moment[i]);
    }
}

fn view_meta(m: &ViewModel) -> ViewMeta {
    ViewMeta {
        encoder: m.config.clone(),
        adam: m.optimizer.hyper,
        adam_step: m.optimizer.step,
    }
}

/// Serializes a training state.
pub fn to_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    if let Some(m) = &state.time {
        write_view(&mut w, "time", m);
    }
    if let Some(m) = &state.freq {
        write_view(&mut w, "freq", m);
    }
    if let Some(bank) = &state.bank {
        for (i, way) in bank.ways.iter().enumerate() {
            let p = format!("bank.way{i}");
            w.matrix(format!("{p}.intra_h"), &way.intra_h);
            w.matrix(format!("{p}.intra_g"), &way.intra_g);
            w.matrix(format!("{p}.cross_h"), &way.cross_h);
            w.matrix(format!("{p}.cross_g"), &way.cross_g);
            w.u32s(format!("{p}.assign_h"), &way.assign_h);
            w.u32s(format!("{p}.assign_g"), &way.assign_g);
            w.flags(format!("{p}.valid_h"), &way.valid_h);
            w.flags(format!("{p}.valid_g"), &way.valid_g);
        }
    }
    if let Some(sub) = &state.labeled {
        w.u32s("labeled.indices".into(), &sub.indices);
    }
    if let Some(stats) = &state.stats {
        w.f64s("stats.mean".into(), vec![stats.mean.len()], &stats.mean);
        w.f64s("stats.std".into(), vec![stats.std.len()], &stats.std);
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        epoch: state.epoch,
        seed: state.config.seed,
        config: state.config.clone(),
        ways: state.ways.clone(),
        class_count: state.class_count,
        time: state.time.as_ref().map(view_meta),
        freq: state.freq.as_ref().map(view_meta),
        has_bank: state.bank.is_some(),
        has_labeled: state.labeled.is_some(),
        has_stats: state.stats.is_some(),
        arrays: w.entries,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + w.payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.payload);
    Ok(out)
}

struct Reader<'a> {
    manifest: Manifest,
    payload: &'a [u8],
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::format(format!("corrupt manifest: {}", msg.into()))
}

impl<'a> Reader<'a> {
    fn entry(&self, name: &str, dtype: DType) -> Result<(&ArrayEntry, &'a [u8])> {
        let e = self
            .manifest
            .arrays
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| corrupt(format!("array {name} missing")))?;
        if e.dtype != dtype {
            return Err(corrupt(format!("array {name} has dtype {:?}, expected {dtype:?}", e.dtype)));
        }
        let len = e.shape.iter().product::<usize>() * dtype.width();
        let bytes = self
            .payload
            .get(e.offset..e.offset.checked_add(len).ok_or_else(|| corrupt("offset overflow"))?)
            .ok_or_else(|| corrupt(format!("array {name} runs past the payload")))?;
        Ok((e, bytes))
    }

    fn f64s(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let (e, b) = self.entry(name, DType::F64)?;
        if e.shape != shape {
            return Err(corrupt(format!("array {name} has shape {:?}, expected {shape:?}", e.shape)));
        }
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        let (e, _) = self.entry(name, DType::F64)?;
        if e.shape.len() != 2 {
            return Err(corrupt(format!("array {name} is not a matrix")));
        }
        let shape = (e.shape[0], e.shape[1]);
        let v = self.f64s(name, &[shape.0, shape.1])?;
        Ok(Array2::from_shape_vec(shape, v).expect("length checked"))
    }

    fn u32s(&self, name: &str) -> Result<Vec<usize>> {
        let (_, b) = self.entry(name, DType::U32)?;
        Ok(b.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect())
    }

    fn flags(&self, name: &str) -> Result<Vec<bool>> {
        let (_, b) = self.entry(name, DType::U8)?;
        b.iter()
            .map(|&x| match x {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(corrupt(format!("array {name} holds a non-boolean byte"))),
            })
            .collect()
    }

    fn view(&self, prefix: &str, meta: &ViewMeta) -> Result<ViewModel> {
        let mut params: EncoderParams = init_encoder(&meta.encoder, 0)?;
        let shapes: Vec<(String, Vec<usize>)> = params.named_tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for ((name, shape), dst) in shapes.iter().zip(params.tensors_mut()) {
            dst.copy_from_slice(&self.f64s(&format!("{prefix}.{name}"), shape)?);
            first.push(self.f64s(&format!("{prefix}.adam.m.{name}"), shape)?);
            second.push(self.f64s(&format!("{prefix}.adam.v.{name}"), shape)?);
        }
        let optimizer = OptimizerState {
            hyper: meta.adam,
            step: meta.adam_step,
            first_moment: first,
            second_moment: second,
        };
        Ok(ViewModel {
            config: meta.encoder.clone(),
            params,
            optimizer,
        })
    }
}

/// Parses a serialized state.
pub fn from_bytes(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format("magic: not a TSCKPT1 checkpoint"));
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(corrupt("truncated length prefix"));
    }
    let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let json = rest.get(4..4 + len).ok_or_else(|| corrupt("manifest runs past end of file"))?;
    let value: serde_json::Value = serde_json::from_slice(json).map_err(|e| corrupt(e.to_string()))?;
    let version = value.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(SCHEMA_VERSION as u64) {
        return Err(Error::format(format!(
            "checkpoint schema_version {version:?} unsupported (expected {SCHEMA_VERSION})"
        )));
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    let r = Reader {
        manifest,
        payload: &rest[4 + len..],
    };
    let m = &r.manifest;
    let time = m.time.as_ref().map(|meta| r.view("time", meta)).transpose()?;
    let freq = m.freq.as_ref().map(|meta| r.view("freq", meta)).transpose()?;
    let bank = if m.has_bank {
        let mut bank = PrototypeBank::new(&m.ways)?;
        for (i, way) in bank.ways.iter_mut().enumerate() {
            let p = format!("bank.way{i}");
            *way = PrototypeWay {
                c: way.c,
                intra_h: r.matrix(&format!("{p}.intra_h"))?,
                intra_g: r.matrix(&format!("{p}.intra_g"))?,
                cross_h: r.matrix(&format!("{p}.cross_h"))?,
                cross_g: r.matrix(&format!("{p}.cross_g"))?,
                assign_h: r.u32s(&format!("{p}.assign_h"))?,
                assign_g: r.u32s(&format!("{p}.assign_g"))?,
                valid_h: r.flags(&format!("{p}.valid_h"))?,
                valid_g: r.flags(&format!("{p}.valid_g"))?,
            };
            if way.intra_h.nrows() != way.c || way.valid_h.len() != way.c || way.assign_h.len() != way.assign_g.len() {
                return Err(corrupt(format!("bank way {i} has inconsistent sizes")));
            }
        }
        Some(bank)
    } else {
        None
    };
    let labeled = m
        .has_labeled
        .then(|| r.u32s("labeled.indices").map(|indices| LabeledSubset { indices }))
        .transpose()?;
    let stats = if m.has_stats {
        let d = r.entry("stats.mean", DType::F64)?.0.shape.clone();
        Some(ChannelStats {
            mean: r.f64s("stats.mean", &d)?,
            std: r.f64s("stats.std", &d)?,
        })
    } else {
        None
    };
    let m = r.manifest;
    Ok(TrainState {
        config: m.config,
        time,
        freq,
        bank,
        epoch: m.epoch,
        ways: m.ways,
        class_count: m.class_count,
        labeled,
        stats,
    })
}

/// Reads only the manifest.
pub fn read_manifest(bytes: &[u8]) -> Result<Manifest> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format("magic: not a TSCKPT1 checkpoint"));
    }
    let len = u32::from_le_bytes(bytes[MAGIC.len()..MAGIC.len() + 4].try_into().unwrap()) as usize;
    let json = bytes
        .get(MAGIC.len() + 4..MAGIC.len() + 4 + len)
        .ok_or_else(|| corrupt("manifest runs past end of file"))?;
    serde_json::from_slice(json).map_err(|e| corrupt(e.to_string()))
}

/// Writes via a temporary sibling and rename.
pub fn checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = to_bytes(state)?;
    let tmp = path.with_extension("tsckpt.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn restore(path: &Path) -> Result<TrainState> {
    from_bytes(&fs::read(path)?)
}
