//! Single-file weight archive.
//!
//! Layout: the 8-byte magic `MISSCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` manifest length, the manifest as compact JSON, then
//! every tensor as little-endian `f32` values in manifest order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{hex_digest, ParamStore};

pub const MAGIC: &[u8; 8] = b"MISSCKPT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 8 + 4 + 8;

/// Shape and flat values of one tensor.
pub type TensorData = (Vec<usize>, Vec<f32>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the data section.
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub module: String,
    pub config_fingerprint: String,
    pub config: serde_json::Value,
    pub step: u64,
    pub metric_history: BTreeMap<String, Vec<f64>>,
    /// Variable-name prefixes that were frozen during training.
    pub frozen: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors
            .binary_search_by(|e| e.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.tensors[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|e| e.name.as_str())
    }

    /// Fails unless the archive holds `module`, and unless its config
    /// fingerprint equals `fingerprint` (skipped when `force`).
    pub fn verify(&self, module: &str, fingerprint: Option<&str>, force: bool) -> Result<()> {
        if self.module != module {
            return Err(Error::Checkpoint(format!(
                "archive holds a `{}` module, expected `{module}`",
                self.module
            )));
        }
        if let Some(fp) = fingerprint {
            if !force && fp != self.config_fingerprint {
                return Err(Error::Checkpoint(format!(
                    "config fingerprint {} does not match the archive's {}",
                    fp, self.config_fingerprint
                )));
            }
        }
        Ok(())
    }

    /// The stored config deserialized as `T`.
    pub fn config_as<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.config.clone())?)
    }
}

/// SHA-256 of the compact JSON serialization of `config`. Map keys are
/// emitted in sorted order, so equal configs share a fingerprint.
pub fn fingerprint<T: Serialize>(config: &T) -> Result<String> {
    let value = serde_json::to_value(config)?;
    let bytes = serde_json::to_vec(&value)?;
    Ok(hex_digest(Sha256::digest(&bytes).as_slice()))
}

/// An archive held fully in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: BTreeMap<String, TensorData>,
}

impl Checkpoint {
    /// Captures every variable of `params` whose name starts with one of
    /// `prefixes` (all variables when `prefixes` is empty).
    pub fn from_params<C: Serialize>(
        module: &str,
        config: &C,
        step: u64,
        metric_history: BTreeMap<String, Vec<f64>>,
        params: &ParamStore,
        prefixes: &[&str],
    ) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        if prefixes.is_empty() {
            tensors = params.snapshot("")?;
        } else {
            for p in prefixes {
                tensors.extend(params.snapshot(p)?);
            }
        }
        Self::new(module, config, step, metric_history, params.frozen_prefixes(), tensors)
    }

    pub fn new<C: Serialize>(
        module: &str,
        config: &C,
        step: u64,
        metric_history: BTreeMap<String, Vec<f64>>,
        frozen: Vec<String>,
        tensors: BTreeMap<String, TensorData>,
    ) -> Result<Self> {
        for (key, values) in &metric_history {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("metric `{key}` has non-finite entries")));
            }
        }
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(tensors.len());
        for (name, (shape, data)) in &tensors {
            if shape.iter().product::<usize>() != data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has {} values for shape {shape:?}",
                    data.len()
                )));
            }
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
                len: data.len() as u64,
            });
            offset += data.len() as u64;
        }
        Ok(Self {
            manifest: Manifest {
                module: module.to_string(),
                config_fingerprint: fingerprint(config)?,
                config: serde_json::to_value(config)?,
                step,
                metric_history,
                frozen,
                tensors: entries,
            },
            tensors,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let total: u64 = self.manifest.tensors.iter().map(|e| e.len).sum();
        let mut out = Vec::with_capacity(HEADER_LEN as usize + manifest.len() + 4 * total as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for entry in &self.manifest.tensors {
            for v in &self.tensors[&entry.name].1 {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| Error::load(path, e))?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, data_start) = parse_header(&mut std::io::Cursor::new(bytes))?;
        let data = &bytes[data_start as usize..];
        let mut tensors = BTreeMap::new();
        for e in &manifest.tensors {
            let start = 4 * e.offset as usize;
            let end = start + 4 * e.len as usize;
            let chunk = data
                .get(start..end)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` runs past the end of the archive", e.name)))?;
            tensors.insert(e.name.clone(), (e.shape.clone(), decode_f32(chunk)));
        }
        Ok(Self { manifest, tensors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::load(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::load(path, e))
    }

    /// Writes every stored tensor whose name starts with `prefix` into `params`.
    pub fn restore_into(&self, params: &ParamStore, prefix: &str) -> Result<Vec<String>> {
        restore(params, self.tensors.iter().filter(|(n, _)| n.starts_with(prefix)))
    }
}

fn restore<'a>(
    params: &ParamStore,
    tensors: impl Iterator<Item = (&'a String, &'a TensorData)>,
) -> Result<Vec<String>> {
    let mut done = Vec::new();
    for (name, (shape, data)) in tensors {
        let t = Tensor::from_slice(data, shape.as_slice(), params.device())?.to_dtype(params.dtype())?;
        params.set(name, &t)?;
        done.push(name.clone());
    }
    Ok(done)
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn parse_header<R: Read>(r: &mut R) -> Result<(Manifest, u64)> {
    let mut head = [0u8; HEADER_LEN as usize];
    r.read_exact(&mut head)
        .map_err(|_| Error::Checkpoint("archive is shorter than its header".into()))?;
    if &head[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint archive (bad magic)".into()));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported archive version {version}")));
    }
    let len = u64::from_le_bytes(head[12..20].try_into().expect("8 bytes"));
    let mut manifest = vec![0u8; len as usize];
    r.read_exact(&mut manifest)
        .map_err(|_| Error::Checkpoint("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(&manifest)?;
    if !manifest.tensors.windows(2).all(|w| w[0].name < w[1].name) {
        return Err(Error::Checkpoint("manifest tensors are not sorted by name".into()));
    }
    Ok((manifest, HEADER_LEN + len))
}

/// Reads the manifest eagerly and tensors on demand, recording every tensor
/// name it hands out.
#[derive(Debug)]
pub struct CheckpointReader {
    path: PathBuf,
    manifest: Manifest,
    data_start: u64,
    file: Mutex<BufReader<File>>,
    accessed: Mutex<Vec<String>>,
}

impl CheckpointReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::load(&path, e))?;
        let mut file = BufReader::new(file);
        let (manifest, data_start) = parse_header(&mut file).map_err(|e| Error::load(&path, e))?;
        Ok(Self {
            path,
            manifest,
            data_start,
            file: Mutex::new(file),
            accessed: Mutex::new(Vec::new()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn tensor(&self, name: &str) -> Result<TensorData> {
        let entry = self
            .manifest
            .entry(name)
            .ok_or_else(|| Error::Checkpoint(format!("`{name}` is not in {}", self.path.display())))?;
        let mut buf = vec![0u8; 4 * entry.len as usize];
        {
            let mut f = self.file.lock().expect("reader lock");
            f.seek(SeekFrom::Start(self.data_start + 4 * entry.offset))?;
            f.read_exact(&mut buf)
                .map_err(|e| Error::load(&self.path, format!("tensor `{name}`: {e}")))?;
        }
        self.accessed.lock().expect("log lock").push(name.to_string());
        Ok((entry.shape.clone(), decode_f32(&buf)))
    }

    /// Every tensor whose name starts with `prefix`.
    pub fn tensors_with_prefix(&self, prefix: &str) -> Result<BTreeMap<String, TensorData>> {
        let names: Vec<String> = self
            .manifest
            .names()
            .filter(|n| n.starts_with(prefix))
            .map(str::to_string)
            .collect();
        names.into_iter().map(|n| Ok((n.clone(), self.tensor(&n)?))).collect()
    }

    /// Loads the `prefix` tensors into `params`.
    pub fn restore_into(&self, params: &ParamStore, prefix: &str) -> Result<Vec<String>> {
        let tensors = self.tensors_with_prefix(prefix)?;
        restore(params, tensors.iter())
    }

    /// Names read so far, in access order.
    pub fn access_log(&self) -> Vec<String> {
        self.accessed.lock().expect("log lock").clone()
    }
}
