//! Encoder checkpoint container.
//!
//! ```text
//! magic   "SHIDCKPT"  8 bytes
//! version u16 = 1
//! config  u32 length + UTF-8 `key = value` lines (the EncoderConfig)
//! meta    u32 count, then per entry: u16 key length + key, u32 value length + value
//! tensors u32 count, then per tensor:
//!           u16 name length + UTF-8 name
//!           u8 dtype (0 = f32)
//!           u8 rank, rank * u32 dims
//!           product(dims) * f32 payload
//! ```
//!
//! All integers and floats little-endian. The classification head, when
//! present, is the tensor `arcface.W` (d × C) with metadata
//! `arcface.margin`, `arcface.scale` and `arcface.classes` (JSON array of
//! class labels, column order).

use std::collections::BTreeMap;
use std::path::Path;

use crate::arcface::ArcFaceHead;
use crate::encoder::{EncoderConfig, VitEncoder};
use crate::error::{Error, Result};
use crate::gallery::ByteReader;
use crate::kvconfig::KvConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SHIDCKPT";
pub const CHECKPOINT_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;
const HEAD_TENSOR: &str = "arcface.W";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: VitEncoder,
    pub head: Option<ArcFaceHead>,
    /// Class label for each head column.
    pub class_labels: Vec<String>,
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_str32(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_str16(out, name);
    out.push(DTYPE_F32);
    out.push(shape.len() as u8);
    for d in shape {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn read_str<'a>(r: &mut ByteReader<'a>, len: usize, what: &str) -> Result<&'a str> {
    let offset = r.pos as u64;
    std::str::from_utf8(r.take(len, what)?).map_err(|e| Error::format(offset, format!("{what} is not UTF-8: {e}")))
}

impl Checkpoint {
    pub fn new(encoder: VitEncoder) -> Self {
        Self { encoder, head: None, class_labels: Vec::new() }
    }

    pub fn with_head(encoder: VitEncoder, head: ArcFaceHead, class_labels: Vec<String>) -> Result<Self> {
        if head.num_classes() != class_labels.len() {
            return Err(Error::Shape(format!(
                "head has {} classes but {} labels were given",
                head.num_classes(),
                class_labels.len()
            )));
        }
        if head.dim() != encoder.config().embed_dim {
            return Err(Error::Shape(format!(
                "head dim {} does not match encoder dim {}",
                head.dim(),
                encoder.config().embed_dim
            )));
        }
        Ok(Self { encoder, head: Some(head), class_labels })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str32(&mut out, &self.encoder.config().to_kv().render());

        let mut meta = BTreeMap::new();
        if let Some(head) = &self.head {
            meta.insert("arcface.margin", head.margin().to_string());
            meta.insert("arcface.scale", head.scale().to_string());
            meta.insert("arcface.classes", serde_json::to_string(&self.class_labels).expect("string list"));
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        for (k, v) in &meta {
            put_str16(&mut out, k);
            put_str32(&mut out, v);
        }

        let store = self.encoder.store();
        let count = store.len() + usize::from(self.head.is_some());
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (_, p) in store.iter() {
            put_tensor(&mut out, &p.name, &p.shape, &p.data);
        }
        if let Some(head) = &self.head {
            put_tensor(&mut out, HEAD_TENSOR, &[head.dim(), head.num_classes()], head.weights());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "not an encoder checkpoint (bad magic)"));
        }
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(8, format!("unsupported checkpoint version {version}")));
        }
        let config_offset = r.pos as u64;
        let len = r.u32("config length")? as usize;
        let kv = KvConfig::parse(read_str(&mut r, len, "config")?)
            .map_err(|e| Error::format(config_offset, e.to_string()))?;
        let config = EncoderConfig::from_kv(&kv).map_err(|e| Error::format(config_offset, e.to_string()))?;

        let mut meta = BTreeMap::new();
        for _ in 0..r.u32("metadata count")? {
            let klen = r.u16("metadata key length")? as usize;
            let key = read_str(&mut r, klen, "metadata key")?.to_string();
            let vlen = r.u32("metadata value length")? as usize;
            let value = read_str(&mut r, vlen, "metadata value")?.to_string();
            meta.insert(key, value);
        }

        let mut tensors = Vec::new();
        let mut head_tensor = None;
        for _ in 0..r.u32("tensor count")? {
            let offset = r.pos as u64;
            let nlen = r.u16("tensor name length")? as usize;
            let name = read_str(&mut r, nlen, "tensor name")?.to_string();
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(Error::format(offset, format!("tensor `{name}` has unsupported dtype {dtype}")));
            }
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::format(offset, format!("tensor `{name}` is too large")))?;
            let data: Vec<f64> = r
                .take(n, "tensor payload")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            if name == HEAD_TENSOR {
                head_tensor = Some((shape, data));
            } else {
                tensors.push((name, shape, data));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after last tensor"));
        }

        let encoder = VitEncoder::from_tensors(config, tensors)?;
        let (head, class_labels) = match head_tensor {
            None => (None, Vec::new()),
            Some((shape, data)) => {
                let get = |k: &str| meta.get(k).ok_or_else(|| Error::Data(format!("checkpoint head lacks `{k}`")));
                let parse = |k: &str| -> Result<f64> {
                    get(k)?.parse().map_err(|e| Error::Data(format!("checkpoint `{k}`: {e}")))
                };
                let labels: Vec<String> = serde_json::from_str(get("arcface.classes")?)
                    .map_err(|e| Error::Data(format!("checkpoint `arcface.classes`: {e}")))?;
                if shape.len() != 2 {
                    return Err(Error::Shape(format!("`{HEAD_TENSOR}` must be a matrix, got {shape:?}")));
                }
                let head = ArcFaceHead::from_weights(shape[0], shape[1], data, parse("arcface.margin")?, parse("arcface.scale")?)?;
                (Some(head), labels)
            }
        };
        match head {
            Some(h) => Self::with_head(encoder, h, class_labels),
            None => Ok(Self::new(encoder)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let enc = VitEncoder::new(EncoderConfig { num_blocks: 2, embed_dim: 16, heads: 2, seed: 5, ..Default::default() }).unwrap();
        let head = ArcFaceHead::new(16, 3, 0.35, 30.0, 2).unwrap();
        Checkpoint::with_head(enc, head, vec!["a,b".into(), "c".into(), "ü".into()]).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn encoder_only_round_trip() {
        let ck = Checkpoint::new(sample().encoder);
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
    }

    #[test]
    fn config_is_echoed_verbatim() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let text = ck.encoder.config().to_kv().render();
        let len = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        assert_eq!(&bytes[14..14 + len], text.as_bytes());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[3] ^= 0xff;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
    }
}
