//! Self-describing binary checkpoints.
//!
//! Layout: the 8 magic bytes `DYNACONF`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the UTF-8 JSON header,
//! then every blob listed in the header as little-endian `f64` values in
//! header order.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Parameters, Tensor};

pub const MAGIC: &[u8; 8] = b"DYNACONF";
pub const FORMAT_VERSION: u32 = 1;

/// Position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex(&rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bytes = unhex(&self.seed).ok_or_else(|| Error::Checkpoint("bad rng seed".into()))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad rng word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}

/// SHA-256 of the canonical (key-sorted) JSON form of `value`.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    let text = serde_json::to_string(&v).expect("json value serializes");
    hex(&Sha256::digest(text.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub value: Tensor<f64>,
}

/// Named `f64` tensors plus a JSON header.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub header: serde_json::Value,
    pub blobs: Vec<Blob>,
}

impl Archive {
    pub fn new(header: serde_json::Value) -> Self {
        Archive {
            header,
            blobs: Vec::new(),
        }
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.blobs.push(Blob {
            name: name.into(),
            value: t.cast(),
        });
    }

    /// Stores every tensor of `params` under `prefix` + its name.
    pub fn push_params<T: Scalar, P: Parameters<T> + ?Sized>(&mut self, prefix: &str, params: &P) {
        params.visit(&mut |name, t| self.push(format!("{prefix}{name}"), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.blobs.iter().find(|b| b.name == name).map(|b| &b.value)
    }

    /// Overwrites every tensor of `params` from blobs named `prefix` + name.
    pub fn fill_params<T: Scalar, P: Parameters<T> + ?Sized>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let mut err = None;
        params.visit_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            let key = format!("{prefix}{name}");
            match self.get(&key) {
                Some(v) if v.shape() == t.shape() => *t = v.cast(),
                Some(v) => {
                    err = Some(Error::Checkpoint(format!(
                        "blob {key} has shape {:?}, expected {:?}",
                        v.shape(),
                        t.shape()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing blob {key}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let infos: Vec<BlobInfo> = self
            .blobs
            .iter()
            .map(|b| BlobInfo {
                name: b.name.clone(),
                rows: b.value.rows(),
                cols: b.value.cols(),
            })
            .collect();
        let header = serde_json::json!({ "meta": self.header, "blobs": infos });
        let text = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + text.len() + 8 * self.blobs.iter().map(|b| b.value.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(&text);
        for b in &self.blobs {
            for v in b.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: serde_json::Value =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let infos: Vec<BlobInfo> = serde_json::from_value(header["blobs"].clone())
            .map_err(|e| Error::Checkpoint(format!("blob list: {e}")))?;
        let mut pos = 20 + hlen;
        let mut blobs = Vec::with_capacity(infos.len());
        for info in infos {
            let n = info.rows * info.cols;
            let raw = bytes.get(pos..pos + 8 * n).ok_or_else(|| bad("truncated blob data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos += 8 * n;
            blobs.push(Blob {
                name: info.name,
                value: Tensor::new(info.rows, info.cols, data),
            });
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after blobs"));
        }
        Ok(Archive {
            header: header["meta"].clone(),
            blobs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    #[test]
    fn bytes_round_trip_bit_exact() {
        let mut a = Archive::new(serde_json::json!({"epoch": 3, "lr": 0.1}));
        a.push(
            "w",
            &Tensor::<f64>::from_f64(2, 2, &[0.1, -0.0, f64::MIN_POSITIVE, 1e300]),
        );
        a.push("b", &Tensor::<f32>::from_f64(1, 1, &[0.3]));
        let back = Archive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), a.to_bytes());
        assert_eq!(back.get("w").unwrap().get(0, 1).to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            Archive::from_bytes(b"hello world, not a checkpoint"),
            Err(Error::Checkpoint(_))
        ));
        let mut bytes = Archive::new(serde_json::json!({})).to_bytes();
        bytes.push(0);
        assert!(Archive::from_bytes(&bytes).is_err());
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        rng.next_u64();
        let state = RngState::capture(&rng);
        let expected = rng.next_u64();
        let mut back = state.restore().unwrap();
        assert_eq!(back.next_u64(), expected);
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = serde_json::json!({"a": 1, "b": [1, 2]});
        let b: serde_json::Value = serde_json::from_str(r#"{"b":[1,2],"a":1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
    }
}
