//! QVC1 checkpoint container.
//!
//! ```text
//! [0..4)        b"QVC1"
//! [4..12)       header length H, u64 little-endian
//! [12..12+H)    canonical JSON header (sorted keys, no whitespace):
//!               {"meta":{..},"tensors":{name:{"nbytes":n,"offset":o,"shape":[..]}}}
//! [12+H..)      raw little-endian f32 payloads, lexicographic name order,
//!               offsets relative to the end of the header, no padding
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Checkpoint, Tensor, TensorMap};

pub const MAGIC: &[u8; 4] = b"QVC1";
const PREFIX_LEN: usize = 12;

#[derive(Serialize)]
struct HeaderOut<'a> {
    meta: &'a BTreeMap<String, String>,
    tensors: BTreeMap<&'a str, EntryOut<'a>>,
}

#[derive(Serialize)]
struct EntryOut<'a> {
    nbytes: u64,
    offset: u64,
    shape: &'a [usize],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderIn {
    #[serde(default)]
    meta: BTreeMap<String, String>,
    tensors: OrderedEntries,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryIn {
    nbytes: u64,
    offset: u64,
    shape: Vec<usize>,
}

/// Tensor table kept in file order so duplicate keys survive parsing.
struct OrderedEntries(Vec<(String, EntryIn)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OrderedEntries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of tensor entries")
            }
            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, EntryIn>()? {
                    out.push((k, v));
                }
                Ok(OrderedEntries(out))
            }
        }
        d.deserialize_map(V)
    }
}

/// Serialized header JSON for `ckpt`.
pub fn header_json(ckpt: &Checkpoint) -> Vec<u8> {
    let mut offset = 0u64;
    let mut tensors = BTreeMap::new();
    for (name, t) in ckpt.iter() {
        let nbytes = 4 * t.len() as u64;
        tensors.insert(
            name,
            EntryOut {
                nbytes,
                offset,
                shape: t.shape(),
            },
        );
        offset += nbytes;
    }
    serde_json::to_vec(&HeaderOut {
        meta: ckpt.meta(),
        tensors,
    })
    .expect("header serialization cannot fail")
}

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let header = header_json(ckpt);
    let payload: usize = ckpt.iter().map(|(_, t)| 4 * t.len()).sum();
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in ckpt.iter() {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes, no magic", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            found: bytes[..4].to_vec(),
        });
    }
    if bytes.len() < PREFIX_LEN {
        return Err(Error::Truncated("missing header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let available = (bytes.len() - PREFIX_LEN) as u64;
    if header_len > available {
        return Err(Error::Truncated(format!(
            "header declares {header_len} bytes, {available} available"
        )));
    }
    let header_end = PREFIX_LEN + header_len as usize;
    let header: HeaderIn = serde_json::from_slice(&bytes[PREFIX_LEN..header_end])
        .map_err(|e| Error::BadHeader(e.to_string()))?;
    let payload = &bytes[header_end..];

    let mut entries = TensorMap::new();
    for (name, entry) in header.tensors.0 {
        if name.is_empty() {
            return Err(Error::InvalidName(name));
        }
        if entries.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        let count = entry
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .filter(|_| !entry.shape.is_empty() && !entry.shape.contains(&0))
            .ok_or_else(|| Error::InvalidShape {
                name: name.clone(),
                shape: entry.shape.clone(),
            })?;
        if count.checked_mul(4) != Some(entry.nbytes) {
            return Err(Error::SizeMismatch {
                name,
                detail: format!(
                    "shape {:?} needs {} bytes, header declares {}",
                    entry.shape,
                    count.saturating_mul(4),
                    entry.nbytes
                ),
            });
        }
        let end = entry.offset.checked_add(entry.nbytes);
        if end.is_none_or(|e| e > payload.len() as u64) {
            return Err(Error::SizeMismatch {
                name,
                detail: format!(
                    "needs bytes [{}, +{}) but payload has {} bytes",
                    entry.offset,
                    entry.nbytes,
                    payload.len()
                ),
            });
        }
        let raw = &payload[entry.offset as usize..(entry.offset + entry.nbytes) as usize];
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor = Tensor::named(&name, entry.shape, data)?;
        entries.insert(name, tensor);
    }
    Checkpoint::from_parts(entries, header.meta)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(ckpt)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}
