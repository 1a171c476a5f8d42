//! Binary checkpoints of a fit: every named tensor, the Adam moments and a
//! JSON metadata trailer. See `docs/formats.md` for the byte layout.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldConfig, RadianceField};
use crate::optim::adam::{AdamConfig, AdamState};
use crate::optim::fit::FitState;

pub const MAGIC: &[u8; 4] = b"SPHF";
pub const VERSION: u32 = 1;

/// One named `f32` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub field: FieldConfig,
    pub step: u64,
    pub adam: AdamConfig,
    pub adam_step: u64,
    pub adam_steps: Vec<u64>,
    pub lr_scale: Vec<f64>,
    /// Free-form run description (fit config, schedule, seeds).
    #[serde(default)]
    pub run: serde_json::Value,
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

pub fn encode(records: &[TensorRecord], meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        let expect: usize = r.dims.iter().map(|&d| d as usize).product();
        if expect != r.data.len() {
            return Err(Error::Shape(format!("{}: dims {:?} vs {} values", r.name, r.dims, r.data.len())));
        }
        let name = r.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| format_err("tensor name too long"))?;
        let rank = u8::try_from(r.dims.len()).map_err(|_| format_err("tensor rank too large"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for d in &r.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = serde_json::to_vec(meta).map_err(|e| format_err(e.to_string()))?;
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| format_err("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<TensorRecord>, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| format_err("tensor name is not UTF-8"))?;
        let rank = r.take(1)?[0] as usize;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| format_err("tensor too large"))?;
        let payload = r.take(n.checked_mul(4).ok_or_else(|| format_err("tensor too large"))?)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        records.push(TensorRecord { name, dims, data });
    }
    let json_len = r.u32()? as usize;
    let meta = serde_json::from_slice(r.take(json_len)?).map_err(|e| format_err(e.to_string()))?;
    if r.pos != bytes.len() {
        return Err(format_err("trailing bytes"));
    }
    Ok((records, meta))
}

/// Serializes the fit state; Adam moments go in as `adam.m.*` and `adam.v.*`.
pub fn to_bytes(state: &FitState, field: &FieldConfig, run: serde_json::Value) -> Result<Vec<u8>> {
    let params = state.field.params();
    let mut records = Vec::with_capacity(3 * params.len());
    for p in &params {
        records.push(TensorRecord {
            name: p.name.clone(),
            dims: p.shape.iter().map(|&d| d as u32).collect(),
            data: p.data.to_vec(),
        });
    }
    for (prefix, moments) in [("adam.m.", &state.adam.m), ("adam.v.", &state.adam.v)] {
        for (p, m) in params.iter().zip(moments) {
            records.push(TensorRecord {
                name: format!("{prefix}{}", p.name),
                dims: p.shape.iter().map(|&d| d as u32).collect(),
                data: m.clone(),
            });
        }
    }
    let meta = CheckpointMeta {
        field: field.clone(),
        step: state.step,
        adam: state.adam.config,
        adam_step: state.adam.step,
        adam_steps: state.adam.steps.clone(),
        lr_scale: state.adam.lr_scale.clone(),
        run,
    };
    encode(&records, &meta)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(FitState, CheckpointMeta)> {
    let (records, meta) = decode(bytes)?;
    let mut field = RadianceField::<f32>::new(&meta.field, 0)?;
    let names = field.param_names();
    let shapes: Vec<Vec<u32>> = field.params().iter().map(|p| p.shape.iter().map(|&d| d as u32).collect()).collect();
    if records.len() != 3 * names.len() {
        return Err(format_err(format!("{} tensors, expected {}", records.len(), 3 * names.len())));
    }
    let find = |name: &str, dims: &[u32]| -> Result<Vec<f32>> {
        let r = records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| format_err(format!("missing tensor {name}")))?;
        if r.dims != dims {
            return Err(Error::Shape(format!("{name}: stored {:?}, expected {:?}", r.dims, dims)));
        }
        Ok(r.data.clone())
    };
    let mut adam = AdamState::new(meta.adam, &field.param_sizes());
    for (i, (name, dims)) in names.iter().zip(&shapes).enumerate() {
        let data = find(name, dims)?;
        field.params_mut()[i].copy_from_slice(&data);
        adam.m[i] = find(&format!("adam.m.{name}"), dims)?;
        adam.v[i] = find(&format!("adam.v.{name}"), dims)?;
    }
    if meta.adam_steps.len() != names.len() || meta.lr_scale.len() != names.len() {
        return Err(format_err("optimizer metadata does not match the tensor count"));
    }
    adam.steps = meta.adam_steps.clone();
    adam.lr_scale = meta.lr_scale.clone();
    adam.step = meta.adam_step;
    Ok((
        FitState {
            field,
            adam,
            step: meta.step,
        },
        meta,
    ))
}

/// Writes through a temporary file so a crash never leaves a torn checkpoint.
pub fn save(path: &Path, state: &FitState, field: &FieldConfig, run: serde_json::Value) -> Result<()> {
    let bytes = to_bytes(state, field, run)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(FitState, CheckpointMeta)> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
