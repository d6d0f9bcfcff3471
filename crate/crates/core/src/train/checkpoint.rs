//! Bit-exact binary checkpoints.
//!
//! Layout: magic `AVNET\x01`, little-endian u64 entry count, then per
//! entry `{u32 name length, name bytes, u8 dtype code, u8 rank,
//! u64 dims..., raw little-endian data}`, and a trailing CRC32 over all
//! preceding bytes. Save -> load -> save is byte-identical, and loading
//! restores bit-identical eval-mode predictions.
//!
//! Entry namespaces: `param/` trainable parameters, `state/` batch-norm
//! running statistics, `opt/` optimizer buffers, `meta/` configuration
//! and bookkeeping.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{AvError, Result};
use crate::model::{AvNet, ModelConfig};
use crate::tensor::{Dtype, Element};
use crate::train::optim::{Optimizer, OptimizerKind};

pub const MAGIC: &[u8; 6] = b"AVNET\x01";

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    U8(Vec<u8>),
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
    U64(Vec<u64>),
}

impl ArrayData {
    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::U8(_) => Dtype::U8,
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::F64(_) => Dtype::F64,
            ArrayData::I64(_) => Dtype::I64,
            ArrayData::U64(_) => Dtype::U64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::U8(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::I64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

/// Named parameter arrays plus optimizer/schedule state and the config
/// snapshot, in canonical entry order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn push(&mut self, name: String, dims: Vec<usize>, data: ArrayData) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.entries.push(Entry { name, dims, data });
    }

    /// Total elements across trainable parameter tensors.
    pub fn parameter_elements(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with("param/"))
            .map(|e| e.data.len())
            .sum()
    }

    pub fn iteration(&self) -> Option<u64> {
        match self.get("meta/iteration")?.data {
            ArrayData::U64(ref v) => v.first().copied(),
            _ => None,
        }
    }

    pub fn split_seed(&self) -> Option<u64> {
        match self.get("meta/split_seed")?.data {
            ArrayData::U64(ref v) => v.first().copied(),
            _ => None,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let entry = self
            .get("meta/model_config")
            .ok_or_else(|| AvError::Checkpoint("missing meta/model_config".into()))?;
        let ArrayData::U8(bytes) = &entry.data else {
            return Err(AvError::Checkpoint("meta/model_config must be bytes".into()));
        };
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn run_config_json(&self) -> Option<String> {
        match &self.get("meta/run_config")?.data {
            ArrayData::U8(bytes) => String::from_utf8(bytes.clone()).ok(),
            _ => None,
        }
    }

    pub fn optimizer_kind(&self) -> Result<Option<OptimizerKind>> {
        match self.get("meta/optimizer") {
            None => Ok(None),
            Some(entry) => {
                let ArrayData::U8(bytes) = &entry.data else {
                    return Err(AvError::Checkpoint("meta/optimizer must be bytes".into()));
                };
                Ok(Some(serde_json::from_slice(bytes)?))
            }
        }
    }
}

fn to_array<E: Element>(values: &[E]) -> ArrayData {
    match E::DTYPE {
        Dtype::F32 => ArrayData::F32(values.iter().map(|v| v.as_f64() as f32).collect()),
        Dtype::F64 => ArrayData::F64(values.iter().map(|v| v.as_f64()).collect()),
        _ => unreachable!("tensor elements are f32 or f64"),
    }
}

fn from_array<E: Element>(name: &str, data: &ArrayData) -> Result<Vec<E>> {
    match (E::DTYPE, data) {
        (Dtype::F32, ArrayData::F32(v)) => Ok(v.iter().map(|&x| E::of_f64(f64::from(x))).collect()),
        (Dtype::F64, ArrayData::F64(v)) => Ok(v.iter().map(|&x| E::of_f64(x)).collect()),
        _ => Err(AvError::Checkpoint(format!(
            "{name}: dtype {:?} does not match model precision {:?}",
            data.dtype(),
            E::DTYPE
        ))),
    }
}

/// Snapshot model parameters, BN running stats and (optionally)
/// optimizer state, embedding the model config, schedule position and
/// split seed.
pub fn capture<E: Element>(
    model: &AvNet<E>,
    optimizer: Option<&Optimizer<E>>,
    iteration: u64,
    run_config_json: Option<&str>,
    split_seed: u64,
) -> Checkpoint {
    let mut ckpt = Checkpoint::default();
    model.for_each_param(&mut |name, t| {
        ckpt.push(
            format!("param/{name}"),
            t.shape().to_vec(),
            to_array(t.data()),
        );
    });
    model.for_each_bn(&mut |name, bn| {
        let (mean, var) = bn.running_stats();
        ckpt.push(
            format!("state/{name}.running_mean"),
            vec![mean.len()],
            to_array(&mean),
        );
        ckpt.push(
            format!("state/{name}.running_var"),
            vec![var.len()],
            to_array(&var),
        );
    });
    if let Some(opt) = optimizer {
        ckpt.push(
            "opt/step_count".into(),
            vec![1],
            ArrayData::U64(vec![opt.step_count]),
        );
        for (name, st) in &opt.state {
            ckpt.push(format!("opt/m/{name}"), vec![st.m.len()], to_array(&st.m));
            if !st.v.is_empty() {
                ckpt.push(format!("opt/v/{name}"), vec![st.v.len()], to_array(&st.v));
            }
        }
        let kind_bytes = serde_json::to_vec(&opt.kind()).expect("optimizer kind serializes");
        ckpt.push(
            "meta/optimizer".into(),
            vec![kind_bytes.len()],
            ArrayData::U8(kind_bytes),
        );
    }
    ckpt.push("meta/iteration".into(), vec![1], ArrayData::U64(vec![iteration]));
    ckpt.push(
        "meta/split_seed".into(),
        vec![1],
        ArrayData::U64(vec![split_seed]),
    );
    let cfg_bytes = serde_json::to_vec(model.config()).expect("config serializes");
    ckpt.push(
        "meta/model_config".into(),
        vec![cfg_bytes.len()],
        ArrayData::U8(cfg_bytes),
    );
    if let Some(rc) = run_config_json {
        ckpt.push(
            "meta/run_config".into(),
            vec![rc.len()],
            ArrayData::U8(rc.as_bytes().to_vec()),
        );
    }
    ckpt
}

/// Rebuild a model from the embedded config and stored arrays. Every
/// model parameter must be present with matching shape and dtype; stray
/// `param/` or `state/` entries are rejected.
pub fn restore_model<E: Element>(ckpt: &Checkpoint) -> Result<AvNet<E>> {
    let cfg = ckpt.model_config()?;
    let mut model = AvNet::<E>::build(&cfg, 0)?;
    let mut used: BTreeSet<String> = BTreeSet::new();
    model.try_for_each_param_mut(&mut |name, t| {
        let key = format!("param/{name}");
        let entry = ckpt
            .get(&key)
            .ok_or_else(|| AvError::Checkpoint(format!("missing entry {key}")))?;
        if entry.dims != t.shape() {
            return Err(AvError::Checkpoint(format!(
                "{key}: stored dims {:?} do not match model shape {:?}",
                entry.dims,
                t.shape()
            )));
        }
        let values = from_array::<E>(&key, &entry.data)?;
        t.data_mut().copy_from_slice(&values);
        used.insert(key);
        Ok(())
    })?;
    let mut bn_result: Result<()> = Ok(());
    model.for_each_bn(&mut |name, bn| {
        if bn_result.is_err() {
            return;
        }
        let mean_key = format!("state/{name}.running_mean");
        let var_key = format!("state/{name}.running_var");
        let read = |key: &str| -> Result<Vec<E>> {
            let entry = ckpt
                .get(key)
                .ok_or_else(|| AvError::Checkpoint(format!("missing entry {key}")))?;
            from_array::<E>(key, &entry.data)
        };
        bn_result = (|| {
            let mean = read(&mean_key)?;
            let var = read(&var_key)?;
            bn.set_running_stats(mean, var)?;
            used.insert(mean_key);
            used.insert(var_key);
            Ok(())
        })();
    });
    bn_result?;
    for entry in &ckpt.entries {
        if (entry.name.starts_with("param/") || entry.name.starts_with("state/"))
            && !used.contains(&entry.name)
        {
            return Err(AvError::Checkpoint(format!(
                "checkpoint entry {} does not correspond to any model tensor",
                entry.name
            )));
        }
    }
    Ok(model)
}

/// Restore optimizer buffers, if the checkpoint carries them.
pub fn restore_optimizer<E: Element>(ckpt: &Checkpoint) -> Result<Option<Optimizer<E>>> {
    let Some(kind) = ckpt.optimizer_kind()? else {
        return Ok(None);
    };
    let mut opt = Optimizer::<E>::new(kind);
    if let Some(entry) = ckpt.get("opt/step_count") {
        if let ArrayData::U64(v) = &entry.data {
            opt.step_count = v.first().copied().unwrap_or(0);
        }
    }
    for entry in &ckpt.entries {
        if let Some(name) = entry.name.strip_prefix("opt/m/") {
            opt.state.entry(name.to_string()).or_default().m =
                from_array::<E>(&entry.name, &entry.data)?;
        } else if let Some(name) = entry.name.strip_prefix("opt/v/") {
            opt.state.entry(name.to_string()).or_default().v =
                from_array::<E>(&entry.name, &entry.data)?;
        }
    }
    Ok(Some(opt))
}

// ---- wire format ----

pub fn write_to_vec(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(ckpt.entries.len() as u64).to_le_bytes());
    for entry in &ckpt.entries {
        let name = entry.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.push(entry.data.dtype().code());
        out.push(entry.dims.len() as u8);
        for &d in &entry.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &entry.data {
            ArrayData::U8(v) => out.extend_from_slice(v),
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn read_from_slice(bytes: &[u8]) -> Result<Checkpoint> {
    let fail = |msg: &str| AvError::Checkpoint(msg.to_string());
    if bytes.len() < MAGIC.len() + 12 {
        return Err(fail("file too short"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(fail("bad magic (not a checkpoint file)"));
    }
    let body_len = bytes.len() - 4;
    let stored_crc = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let actual_crc = crc32fast::hash(&bytes[..body_len]);
    if stored_crc != actual_crc {
        return Err(AvError::Checkpoint(format!(
            "checksum mismatch: stored {stored_crc:08x}, computed {actual_crc:08x} \
             (file truncated or corrupt)"
        )));
    }
    let body = &bytes[..body_len];
    let mut pos = MAGIC.len();
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > body.len() {
            return Err(AvError::Checkpoint("unexpected end of file".into()));
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| fail("entry name is not utf-8"))?;
        let dtype = Dtype::from_code(take(&mut pos, 1)?[0])
            .ok_or_else(|| fail("unknown dtype code"))?;
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| fail("dimension overflow"))?;
            dims.push(d);
        }
        let raw = take(&mut pos, numel * dtype.byte_size())?;
        let data = match dtype {
            Dtype::U8 => ArrayData::U8(raw.to_vec()),
            Dtype::F32 => ArrayData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64 => ArrayData::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::I64 => ArrayData::I64(
                raw.chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::U64 => ArrayData::U64(
                raw.chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        entries.push(Entry { name, dims, data });
    }
    if pos != body.len() {
        return Err(fail("trailing bytes after last entry"));
    }
    Ok(Checkpoint { entries })
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, write_to_vec(ckpt))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(AvError::Checkpoint(format!(
            "missing checkpoint: {}",
            path.display()
        )));
    }
    read_from_slice(&std::fs::read(path)?)
}
