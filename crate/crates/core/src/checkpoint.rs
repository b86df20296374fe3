// Checkpoint layout (little-endian throughout):
//
//   magic          b"BPRG"
//   version        u32 = 1
//   param_count    u32
//   per parameter, in enumeration order:
//     name_len u16, name (UTF-8, e.g. "L0.weight"), ndim u8, dims u32×ndim,
//     values f32×n
//   per prunable slot: mask bits packed LSB-first, ceil(n/8) bytes
//   graveyard_flag u8 (1 iff any position is pruned)
//   if flag: per prunable slot, f32×n graveyard values (0 at active positions)
//
// The layer list is not stored. Loading rebuilds it from parameter names and
// shapes: dense/conv layers sit at their recorded indices, gaps between them
// are ReLUs, a conv→dense transition ends its gap with a flatten, and gaps
// before the first layer are flattens.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LayerSpec, Model, ParamId, Role};
use crate::sparsity::MaskSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BPRG";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &Model, ms: &MaskSet) -> Result<Vec<u8>> {
    ms.check_aligned(model)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (id, t) in model.params() {
        let name = id.to_string();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for mask in ms.masks().values() {
        let mut packed = vec![0u8; mask.len().div_ceil(8)];
        for (i, _) in mask.iter().enumerate().filter(|(_, &on)| on) {
            packed[i / 8] |= 1 << (i % 8);
        }
        out.extend_from_slice(&packed);
    }
    let any_pruned = ms.pruned_count() > 0;
    out.push(any_pruned as u8);
    if any_pruned {
        for (id, mask) in ms.masks() {
            for i in 0..mask.len() {
                let v = ms.graveyard_value(*id, i).unwrap_or(0.0) as f32;
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!("checkpoint truncated at byte {}", self.bytes.len()))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}

/// Rebuilds a layer list compatible with the stored parameters.
fn infer_layers(params: &BTreeMap<ParamId, Tensor>) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    let mut prev_conv: Option<bool> = None;
    for (id, t) in params.iter().filter(|(id, _)| id.role == Role::Weight) {
        let (layer, is_conv) = match *t.shape() {
            [i, o] => (
                LayerSpec::Dense {
                    inputs: i,
                    outputs: o,
                },
                false,
            ),
            [co, ci, 3, 3] => (
                LayerSpec::Conv3x3 {
                    c_in: ci,
                    c_out: co,
                },
                true,
            ),
            ref s => {
                return Err(Error::Format(format!(
                    "{id}: unsupported weight shape {s:?}"
                )))
            }
        };
        let gap = id.layer - layers.len();
        let needs_flatten = prev_conv == Some(true) && !is_conv;
        if needs_flatten && gap == 0 {
            return Err(Error::Format(format!(
                "{id}: dense layer directly after a conv layer"
            )));
        }
        for g in 0..gap {
            let last = g + 1 == gap;
            layers.push(match prev_conv {
                None => LayerSpec::Flatten,
                Some(_) if last && needs_flatten => LayerSpec::Flatten,
                Some(_) => LayerSpec::Relu,
            });
        }
        layers.push(layer);
        prev_conv = Some(is_conv);
    }
    Ok(layers)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, MaskSet)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    let count = c.u32()? as usize;
    let mut params = BTreeMap::new();
    let mut last: Option<ParamId> = None;
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let id: ParamId = name.parse()?;
        if last.is_some_and(|l| l >= id) {
            return Err(Error::Format(format!("{id} out of enumeration order")));
        }
        last = Some(id);
        let ndim = c.u8()? as usize;
        let dims = (0..ndim)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| Error::Format(format!("{id}: dims overflow")))?;
        let values = c.f32s(n)?;
        let t = Tensor::new(dims, values).map_err(|e| Error::Format(format!("{id}: {e}")))?;
        params.insert(id, t);
    }
    let layers = infer_layers(&params)?;
    let model = Model::from_params(layers, params)?;

    let slots = model.prunable_slots();
    let mut masks = BTreeMap::new();
    for (id, n) in &slots {
        let packed = c.take(n.div_ceil(8))?;
        let bits: Vec<bool> = (0..*n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
        if n % 8 != 0 && packed[n / 8] >> (n % 8) != 0 {
            return Err(Error::Format(format!("{id}: non-zero mask padding bits")));
        }
        masks.insert(*id, bits);
    }
    let any_pruned = masks.values().flatten().any(|&b| !b);
    let flag = c.u8()?;
    let mut graveyard = BTreeMap::new();
    match (flag, any_pruned) {
        (0, false) => {}
        (1, true) => {
            for (id, n) in &slots {
                let values = c.f32s(*n)?;
                let mask = &masks[id];
                let mut grave = BTreeMap::new();
                for (i, v) in values.into_iter().enumerate() {
                    if !mask[i] {
                        grave.insert(i, v as f64);
                    } else if v.to_bits() != 0 {
                        return Err(Error::Format(format!(
                            "{id}[{i}]: graveyard value at an active position"
                        )));
                    }
                }
                if !grave.is_empty() {
                    graveyard.insert(*id, grave);
                }
            }
        }
        (f, _) => {
            return Err(Error::Format(format!(
                "graveyard flag {f} inconsistent with {} pruned positions",
                if any_pruned { "some" } else { "no" }
            )))
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - c.pos
        )));
    }
    let ms = MaskSet::from_parts(masks, graveyard)?;
    Ok((model, ms))
}

pub fn save_checkpoint(path: &Path, model: &Model, ms: &MaskSet) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, ms)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, MaskSet)> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes)
}
