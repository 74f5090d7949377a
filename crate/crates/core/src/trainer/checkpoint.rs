//! On-disk checkpoint directories.
//!
//! Layout: a `manifest` text file of `key=value` lines, then one binary
//! file per array under `params/`, `adam_m/` and `adam_v/`. Each array file
//! holds the rank, the dimensions, then the values, all little-endian
//! 64-bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::tensor::Tensor;
use crate::model::{ModelConfig, Parameters};

use super::AdamState;

pub const CHECKPOINT_FORMAT: &str = "checkpoint-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: Parameters,
    pub optimizer: AdamState,
    pub step: u64,
    pub vocab_fingerprint: String,
}

impl Checkpoint {
    pub fn fresh(model: ModelConfig, seed: u64, vocab_fingerprint: &str) -> Result<Self> {
        let params = Parameters::init(&model, seed)?;
        Ok(Checkpoint {
            optimizer: AdamState::new(&params),
            params,
            model,
            step: 0,
            vocab_fingerprint: vocab_fingerprint.to_string(),
        })
    }

    fn manifest(&self) -> Result<String> {
        let mut out = format!("format={CHECKPOINT_FORMAT}\n");
        out.push_str(&format!("step={}\n", self.step));
        out.push_str(&format!("adam_t={}\n", self.optimizer.t));
        out.push_str(&format!("vocab_fingerprint={}\n", self.vocab_fingerprint));
        let value = serde_json::to_value(&self.model).map_err(|e| Error::Format(e.to_string()))?;
        let object = value.as_object().expect("config serializes as an object");
        for (k, v) in object {
            out.push_str(&format!("model.{k}={v}\n"));
        }
        out.push_str(&format!("arrays={}\n", self.params.arrays.len()));
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for sub in ["params", "adam_m", "adam_v"] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let manifest = dir.join("manifest");
        fs::write(&manifest, self.manifest()?).map_err(|e| Error::io(&manifest, e))?;
        for (sub, set) in [
            ("params", &self.params),
            ("adam_m", &self.optimizer.m),
            ("adam_v", &self.optimizer.v),
        ] {
            for (name, t) in &set.arrays {
                let path = dir.join(sub).join(format!("{name}.bin"));
                fs::write(&path, encode_array(t)).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }

    /// Loads a checkpoint; with `expected_fingerprint` set, a checkpoint
    /// trained against another vocabulary is rejected.
    pub fn load(dir: &Path, expected_fingerprint: Option<&str>) -> Result<Self> {
        let manifest_path = dir.join("manifest");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut fields = BTreeMap::new();
        let mut lines = text.lines();
        let first = lines.next().unwrap_or("");
        let found = first.strip_prefix("format=").unwrap_or(first);
        if found != CHECKPOINT_FORMAT {
            return Err(Error::VersionMismatch {
                found: found.to_string(),
                expected: CHECKPOINT_FORMAT.to_string(),
            });
        }
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("manifest line without `=`: {line}")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let field = |k: &str| -> Result<&String> {
            fields
                .get(k)
                .ok_or_else(|| Error::Format(format!("manifest lacks `{k}`")))
        };
        let fingerprint = field("vocab_fingerprint")?.clone();
        if let Some(expected) = expected_fingerprint {
            if expected != fingerprint {
                return Err(Error::VocabMismatch {
                    found: fingerprint,
                    expected: expected.to_string(),
                });
            }
        }
        let number = |k: &str| -> Result<u64> {
            field(k)?
                .parse()
                .map_err(|_| Error::Format(format!("manifest field `{k}` is not an integer")))
        };
        let step = number("step")?;
        let t = number("adam_t")?;
        let mut model_fields = serde_json::Map::new();
        for (k, v) in &fields {
            if let Some(name) = k.strip_prefix("model.") {
                let value: serde_json::Value =
                    serde_json::from_str(v).map_err(|e| Error::Format(format!("model.{name}: {e}")))?;
                model_fields.insert(name.to_string(), value);
            }
        }
        let model: ModelConfig = serde_json::from_value(serde_json::Value::Object(model_fields))
            .map_err(|e| Error::Format(format!("model config: {e}")))?;
        model.validate()?;
        let shapes = model.parameter_shapes();
        let read_set = |sub: &str| -> Result<Parameters> {
            let mut arrays = BTreeMap::new();
            for name in shapes.keys() {
                let path = dir.join(sub).join(format!("{name}.bin"));
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                arrays.insert(name.clone(), decode_array(&bytes, &path)?);
            }
            let p = Parameters { arrays };
            p.check_shapes(&model)?;
            Ok(p)
        };
        let params = read_set("params")?;
        let optimizer = AdamState {
            m: read_set("adam_m")?,
            v: read_set("adam_v")?,
            t,
        };
        Ok(Checkpoint {
            model,
            params,
            optimizer,
            step,
            vocab_fingerprint: fingerprint,
        })
    }
}

pub fn encode_array(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (1 + t.shape().len() + t.len()));
    out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_array(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    let words: Vec<[u8; 8]> = bytes
        .chunks(8)
        .map(|c| c.try_into().map_err(|_| bad("length is not a multiple of 8")))
        .collect::<Result<_>>()?;
    let rank = *words.first().ok_or_else(|| bad("empty file"))?;
    let rank = u64::from_le_bytes(rank) as usize;
    if words.len() < 1 + rank {
        return Err(bad("truncated header"));
    }
    let shape: Vec<usize> = words[1..1 + rank]
        .iter()
        .map(|w| u64::from_le_bytes(*w) as usize)
        .collect();
    let n: usize = shape.iter().product();
    if words.len() != 1 + rank + n {
        return Err(bad("value count disagrees with shape"));
    }
    let data = words[1 + rank..].iter().map(|w| f64::from_le_bytes(*w)).collect();
    Ok(Tensor::from_vec(&shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_encoding_round_trips() {
        let t = Tensor::from_vec(&[2, 3], vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, 0.1]);
        let bytes = encode_array(&t);
        assert_eq!(bytes.len(), 8 * (1 + 2 + 6));
        let back = decode_array(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.shape(), t.shape());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn truncated_array_is_rejected() {
        let t = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]);
        let bytes = encode_array(&t);
        assert!(decode_array(&bytes[..bytes.len() - 8], Path::new("x")).is_err());
        assert!(decode_array(&bytes[..bytes.len() - 3], Path::new("x")).is_err());
    }
}
