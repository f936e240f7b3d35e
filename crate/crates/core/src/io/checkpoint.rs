//! The `RTFW` checkpoint format. All integers are little-endian `u32`.
//!
//! ```text
//! "RTFW" | version | len, config document | count
//! count × ( len, name | rank | rank × dim | f32 data )
//! ```
//!
//! Model tensors use their parameter names. Optimizer state, when present, is
//! stored as `optim.m.<name>`, `optim.v.<name>` and `optim.step` (the `u64`
//! step split into two `f32` bit patterns, low word first).

use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::network::{Model, NetworkConfig};
use crate::params::dims_to_shape;
use crate::tensor::Tensor;
use crate::train::OptimState;

pub const MAGIC: &[u8; 4] = b"RTFW";
pub const FORMAT_VERSION: u32 = 1;

const OPTIM_M: &str = "optim.m.";
const OPTIM_V: &str = "optim.v.";
const OPTIM_STEP: &str = "optim.step";

/// Raw named tensor as stored: logical dims and values.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub optim: Option<OptimState>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid("save_checkpoint", format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f32]) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, dims.len())?;
    for &d in dims {
        put_u32(out, d)?;
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Serialize a model and optional optimizer state.
pub fn encode_checkpoint(model: &Model, optim: Option<&OptimState>) -> Result<Vec<u8>> {
    let p = &model.params;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let doc = model.config().to_document();
    put_u32(&mut out, doc.len())?;
    out.extend_from_slice(doc.as_bytes());

    let mut entries: Vec<(String, &[usize], &[f32])> = p
        .iter()
        .map(|(_, spec, t)| (spec.name.clone(), spec.dims.as_slice(), t.data()))
        .collect();
    let step_bits;
    if let Some(o) = optim {
        if o.m.len() != p.len() || o.v.len() != p.len() {
            return Err(Error::shape("save_checkpoint", "optimizer slots", o.m.len(), p.len()));
        }
        for (prefix, moments) in [(OPTIM_M, &o.m), (OPTIM_V, &o.v)] {
            for ((_, spec, _), m) in p.iter().zip(moments) {
                if let Some(m) = m {
                    entries.push((format!("{prefix}{}", spec.name), spec.dims.as_slice(), m.data()));
                }
            }
        }
        step_bits = [f32::from_bits(o.step as u32), f32::from_bits((o.step >> 32) as u32)];
        entries.push((OPTIM_STEP.to_string(), &[2], &step_bits));
    }
    put_u32(&mut out, entries.len())?;
    for (name, dims, data) in entries {
        put_tensor(&mut out, &name, dims, data)?;
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("unexpected end of file at byte {}", self.bytes.len())),
        }
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("four bytes")) as usize)
    }

    fn text(&mut self, what: &str) -> std::result::Result<String, String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format!("{what} is not valid text"))
    }
}

/// Parse the container: config document and raw tensor table, without interpreting names.
pub fn decode_raw(bytes: &[u8]) -> std::result::Result<(String, Vec<StoredTensor>), String> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()? as u32;
    if version > FORMAT_VERSION {
        return Err(format!(
            "unsupported version {version} (this reader handles up to {FORMAT_VERSION})"
        ));
    }
    if version == 0 {
        return Err("unsupported version 0".into());
    }
    let doc = r.text("config document")?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name = r.text("tensor name")?;
        if !seen.insert(name.clone()) {
            return Err(format!("duplicate tensor {name}"));
        }
        let rank = r.u32()?;
        if rank > 8 {
            return Err(format!("tensor {name} has implausible rank {rank}"));
        }
        let dims = (0..rank).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format!("tensor {name} is too large"))?;
        let raw = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| format!("tensor {name} is too large"))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        tensors.push(StoredTensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes after tensor table", bytes.len() - r.pos));
    }
    Ok((doc, tensors))
}

/// Rebuild a model (and optimizer state, if stored) without re-initializing anything.
pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let (doc, tensors) = decode_raw(bytes)?;
    let config = NetworkConfig::from_document(&doc).map_err(|e| e.to_string())?;
    let mut model_tensors = HashMap::new();
    let mut moments: [HashMap<String, StoredTensor>; 2] = Default::default();
    let mut step = None;
    for t in tensors {
        if let Some(rest) = t.name.strip_prefix(OPTIM_M) {
            moments[0].insert(rest.to_string(), t);
        } else if let Some(rest) = t.name.strip_prefix(OPTIM_V) {
            moments[1].insert(rest.to_string(), t);
        } else if t.name == OPTIM_STEP {
            if t.data.len() != 2 {
                return Err(format!("{OPTIM_STEP} must hold 2 values"));
            }
            step = Some(u64::from(t.data[0].to_bits()) | (u64::from(t.data[1].to_bits()) << 32));
        } else {
            let shape =
                dims_to_shape(&t.dims).ok_or_else(|| format!("tensor {} has unsupported dims {:?}", t.name, t.dims))?;
            let tensor = Tensor::try_from_vec(shape, t.data).map_err(|e| format!("tensor {}: {e}", t.name))?;
            model_tensors.insert(t.name, tensor);
        }
    }
    let model = Model::from_tensors(&config, model_tensors).map_err(|e| e.to_string())?;
    let has_moments = !moments[0].is_empty() || !moments[1].is_empty();
    let optim = match (step, has_moments) {
        (None, false) => None,
        (None, true) => return Err(format!("optimizer moments present but {OPTIM_STEP} is missing")),
        (Some(step), _) => {
            let mut state = OptimState::new(&model.params);
            let [m_table, v_table] = moments;
            for (prefix, mut table, slots) in [(OPTIM_M, m_table, &mut state.m), (OPTIM_V, v_table, &mut state.v)] {
                for ((_, spec, _), slot) in model.params.iter().zip(slots.iter_mut()) {
                    let Some(zero) = slot.as_mut() else { continue };
                    let t = table
                        .remove(&spec.name)
                        .ok_or_else(|| format!("missing tensor {prefix}{}", spec.name))?;
                    if t.dims != spec.dims {
                        return Err(format!(
                            "tensor {prefix}{} has dims {:?}, expected {:?}",
                            spec.name, t.dims, spec.dims
                        ));
                    }
                    zero.data_mut().copy_from_slice(&t.data);
                }
                if let Some(extra) = table.keys().min() {
                    return Err(format!("unexpected tensor {prefix}{extra}"));
                }
            }
            state.step = step;
            Some(state)
        }
    };
    Ok(Checkpoint { model, optim })
}

/// Write atomically: the target is either the old file or the complete new one.
pub fn save_checkpoint(path: &Path, model: &Model, optim: Option<&OptimState>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model, optim)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;

    fn model() -> Model {
        Model::build(&NetworkConfig::tiny(4), 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = model();
        // make buffers distinguishable from their defaults
        m.params
            .by_name_mut("encoder.stage1.block0.bn.running_var")
            .unwrap()
            .data_mut()[0] = 1.25;
        let bytes = encode_checkpoint(&m, None).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert!(back.optim.is_none());
        assert_eq!(back.model.config(), m.config());
        for ((_, sa, ta), (_, sb, tb)) in m.params.iter().zip(back.model.params.iter()) {
            assert_eq!(sa.name, sb.name);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(ta), bits(tb), "{}", sa.name);
        }
        assert_eq!(encode_checkpoint(&back.model, None).unwrap(), bytes);
    }

    #[test]
    fn optimizer_state_round_trips() {
        let m = model();
        let mut o = OptimState::new(&m.params);
        o.step = (7u64 << 32) | 0x7fc0_0001;
        for (k, t) in o.m.iter_mut().flatten().enumerate() {
            t.data_mut()[0] = k as f32 * 0.5;
        }
        let back = decode_checkpoint(&encode_checkpoint(&m, Some(&o)).unwrap()).unwrap();
        assert_eq!(back.optim.unwrap(), o);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&model(), None).unwrap();
        assert_eq!(&bytes[..4], b"RTFW");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let doc = std::str::from_utf8(&bytes[12..12 + len]).unwrap();
        assert!(doc.starts_with("base_width=4\n"));
    }

    #[test]
    fn corruption_is_diagnosed() {
        let bytes = encode_checkpoint(&model(), None).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).unwrap_err().contains("not a checkpoint"));
        let mut future = bytes.clone();
        future[4] = 2;
        assert!(decode_checkpoint(&future)
            .unwrap_err()
            .contains("unsupported version 2"));
        let cut = &bytes[..bytes.len() - 10];
        assert!(decode_checkpoint(cut).unwrap_err().contains("unexpected end of file"));
    }

    #[test]
    fn missing_and_duplicate_names() {
        let m = model();
        let (doc, mut tensors) = {
            let bytes = encode_checkpoint(&m, None).unwrap();
            decode_raw(&bytes).unwrap()
        };
        let rebuild = |doc: &str, tensors: &[StoredTensor]| {
            let mut out = MAGIC.to_vec();
            out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
            put_u32(&mut out, doc.len()).unwrap();
            out.extend_from_slice(doc.as_bytes());
            put_u32(&mut out, tensors.len()).unwrap();
            for t in tensors {
                put_tensor(&mut out, &t.name, &t.dims, &t.data).unwrap();
            }
            out
        };
        let removed = tensors.remove(1);
        let err = decode_checkpoint(&rebuild(&doc, &tensors)).unwrap_err();
        assert!(err.contains(&format!("missing tensor {}", removed.name)), "{err}");
        tensors.insert(1, removed.clone());
        tensors.push(removed.clone());
        let err = decode_checkpoint(&rebuild(&doc, &tensors)).unwrap_err();
        assert!(err.contains(&format!("duplicate tensor {}", removed.name)), "{err}");
    }

    #[test]
    fn invalid_config_never_builds() {
        let bytes = encode_checkpoint(&model(), None).unwrap();
        let mut bad = bytes.clone();
        // base_width=4 -> base_width=3
        let at = 12 + "base_width=".len();
        bad[at] = b'3';
        let err = decode_checkpoint(&bad).unwrap_err();
        assert!(err.contains("invalid network config"), "{err}");
    }
}
