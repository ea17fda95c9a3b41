//! `FAUW` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FAUW" | u32 version (=1) | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | rank x u64 dims | f32 payload (row-major)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Model, Stack};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FAUW";
pub const VERSION: u32 = 1;

pub fn encode(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let payload: usize = tensors
        .iter()
        .map(|(n, t)| 2 + n.len() + 1 + 8 * t.dims().len() + 4 * t.len())
        .sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Checkpoint("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.dims().len()).map_err(|_| Error::Checkpoint(format!("rank too large: {name}")))?;
        out.push(rank);
        for &d in t.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint(format!("{name}: dim overflow")))?;
            dims.push(d);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?;
        let data = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(tensors)
}

pub fn write_file(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode(tensors)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })?;
    decode(&bytes)
}

fn push_stack(out: &mut Vec<(String, Tensor)>, prefix: &str, stack: &Stack) {
    for (i, l) in stack.layers().iter().enumerate() {
        out.push((format!("{prefix}.{i}.weight"), l.weights().clone()));
        out.push((format!("{prefix}.{i}.bias"), l.bias().clone()));
    }
}

pub fn model_tensors(model: &Model) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    push_stack(&mut out, "extractor", model.extractor());
    push_stack(&mut out, "head", model.head());
    out
}

pub fn head_tensors(head: &Stack) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    push_stack(&mut out, "head", head);
    out
}

/// Rebuilds the stack stored under `prefix`. Hidden layers get ReLU; when
/// `linear_last` is set the final layer is linear.
fn pull_stack(tensors: &[(String, Tensor)], prefix: &str, linear_last: bool) -> Result<Stack> {
    let find = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t.clone());
    let mut layers = Vec::new();
    for i in 0.. {
        let (Some(w), Some(b)) = (
            find(&format!("{prefix}.{i}.weight")),
            find(&format!("{prefix}.{i}.bias")),
        ) else {
            break;
        };
        layers.push(DenseLayer::new(w, b, Activation::Relu)?);
    }
    if linear_last {
        if let Some(last) = layers.pop() {
            let (w, b) = (last.weights().clone(), last.bias().clone());
            layers.push(DenseLayer::new(w, b, Activation::Identity)?);
        }
    }
    Stack::new(layers)
}

pub fn model_from_tensors(tensors: &[(String, Tensor)]) -> Result<Model> {
    let extractor = pull_stack(tensors, "extractor", false)?;
    let head = pull_stack(tensors, "head", true)?;
    Model::new(extractor, head)
}

pub fn head_from_tensors(tensors: &[(String, Tensor)]) -> Result<Stack> {
    let head = pull_stack(tensors, "head", true)?;
    if head.is_empty() {
        return Err(Error::Checkpoint("no head tensors".into()));
    }
    Ok(head)
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    write_file(path, &model_tensors(model))
}

pub fn load_model(path: &Path) -> Result<Model> {
    model_from_tensors(&read_file(path)?)
}

pub fn save_head(path: &Path, head: &Stack) -> Result<()> {
    write_file(path, &head_tensors(head))
}

pub fn load_head(path: &Path) -> Result<Stack> {
    head_from_tensors(&read_file(path)?)
}

/// Serialized byte size of a head in this container format.
pub fn head_encoded_len(head: &Stack) -> usize {
    12 + head_tensors(head)
        .iter()
        .map(|(n, t)| 2 + n.len() + 1 + 8 * t.dims().len() + 4 * t.len())
        .sum::<usize>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let bytes = encode(&[("ab".to_string(), t)]).unwrap();
        let mut expected = b"FAUW".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.push(1);
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn model_roundtrip() {
        let m = ModelSpec::new(5, 3).init(4).unwrap();
        let back = model_from_tensors(&decode(&encode(&model_tensors(&m)).unwrap()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn encoded_len_matches() {
        let m = ModelSpec::new(5, 3).init(4).unwrap();
        assert_eq!(
            head_encoded_len(m.head()),
            encode(&head_tensors(m.head())).unwrap().len()
        );
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        assert!(decode(b"NOPE\x01\0\0\0\0\0\0\0").is_err());
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let bytes = encode(&[("x".to_string(), t)]).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut nan = bytes;
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode(&nan).is_err());
    }
}
