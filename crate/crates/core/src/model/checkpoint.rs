//! Binary checkpoints: the magic `SAMCNET1`, one line of JSON header, then
//! little-endian `f64` payloads in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::params::ModelParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SAMCNET1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    pub categories: Vec<String>,
    pub class_names: Vec<String>,
    pub manifest: Vec<ManifestEntry>,
}

/// A model with the vocabulary it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub train: Option<TrainConfig>,
    pub categories: Vec<String>,
    pub class_names: Vec<String>,
}

fn arrays(params: &ModelParams) -> Vec<(String, Vec<usize>, &[f64])> {
    let mut out: Vec<(String, Vec<usize>, &[f64])> = params
        .names
        .iter()
        .zip(&params.tensors)
        .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data()))
        .collect();
    for (i, s) in params.bn.iter().enumerate() {
        out.push((format!("bn{i}.running_mean"), vec![s.channels()], &s.running_mean));
        out.push((format!("bn{i}.running_var"), vec![s.channels()], &s.running_var));
    }
    out
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arrays = arrays(&self.params);
        let mut offset = 0;
        let manifest = arrays
            .iter()
            .map(|(name, shape, data)| {
                let e = ManifestEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                    offset,
                };
                offset += data.len() * 8;
                e
            })
            .collect();
        let header = Header {
            version: FORMAT_VERSION,
            model: self.params.config.clone(),
            train: self.train.clone(),
            categories: self.categories.clone(),
            class_names: self.class_names.clone(),
            manifest,
        };
        let mut out = MAGIC.to_vec();
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        out.reserve(offset);
        for (_, _, data) in &arrays {
            for v in *data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let rest = &bytes[MAGIC.len()..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header is not terminated".into()))?;
        let header: Header = serde_json::from_slice(&rest[..nl])
            .map_err(|e| bad(format!("malformed header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(bad(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                header.version
            )));
        }
        let payload = &rest[nl + 1..];
        let mut params = ModelParams::new(
            &header.model,
            header.categories.len(),
            header.class_names.len(),
            0,
        )
        .map_err(|e| bad(format!("header describes an invalid model: {e}")))?;
        let expected: Vec<(String, Vec<usize>)> = arrays(&params)
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        if expected.len() != header.manifest.len() {
            return Err(bad(format!(
                "manifest lists {} arrays, the configured model has {}",
                header.manifest.len(),
                expected.len()
            )));
        }
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(expected.len());
        for ((name, shape), entry) in expected.iter().zip(&header.manifest) {
            if *name != entry.name || *shape != entry.shape {
                return Err(bad(format!(
                    "shape mismatch: model expects {name} {shape:?}, file has {} {:?}",
                    entry.name, entry.shape
                )));
            }
            let len = shape.iter().product::<usize>() * 8;
            let chunk = payload
                .get(entry.offset..entry.offset + len)
                .ok_or_else(|| bad(format!("payload truncated at {name}")))?;
            values.push(
                chunk
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect(),
            );
        }
        let mut it = values.into_iter();
        for t in &mut params.tensors {
            t.data_mut().copy_from_slice(&it.next().expect("counted"));
        }
        for s in &mut params.bn {
            s.running_mean = it.next().expect("counted");
            s.running_var = it.next().expect("counted");
        }
        Ok(Self {
            params,
            train: header.train,
            categories: header.categories,
            class_names: header.class_names,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
