//! Seeded parameter storage.
//!
//! The CPU backend of the tensor library cannot be seeded, so every trainable
//! tensor is created here from a ChaCha stream instead. Construction order is
//! deterministic, which makes initial weights a pure function of the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Shape, Tensor, Var};
use candle_nn::init::{FanInOut, NormalOrUniform};
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{Init, VarBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Suffixes of non-trainable buffers that live alongside parameters.
const BUFFER_SUFFIXES: [&str; 2] = ["running_mean", "running_var"];

struct Inner {
    vars: Mutex<BTreeMap<String, Var>>,
    frozen: Mutex<BTreeSet<String>>,
    rng: Mutex<ChaCha8Rng>,
    dtype: DType,
    device: Device,
}

/// Named collection of model variables with seeded initialization.
///
/// Cloning is shallow: clones share the same variables.
#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("num_vars", &self.len())
            .field("dtype", &self.inner.dtype)
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self::with_dtype(seed, DType::F32)
    }

    pub fn with_dtype(seed: u64, dtype: DType) -> Self {
        Self {
            inner: Arc::new(Inner {
                vars: Mutex::new(BTreeMap::new()),
                frozen: Mutex::new(BTreeSet::new()),
                rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
                dtype,
                device: Device::Cpu,
            }),
        }
    }

    pub fn dtype(&self) -> DType {
        self.inner.dtype
    }

    pub fn device(&self) -> &Device {
        &self.inner.device
    }

    /// A builder whose lookups create (or reuse) variables in this store.
    pub fn var_builder(&self) -> VarBuilder<'static> {
        VarBuilder::from_backend(
            Box::new(self.clone()),
            self.inner.dtype,
            self.inner.device.clone(),
        )
    }

    pub fn len(&self) -> usize {
        self.inner.vars.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> Vec<String> {
        self.inner.vars.lock().unwrap().keys().cloned().collect()
    }

    pub fn names_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.names()
            .into_iter()
            .filter(|n| n.starts_with(prefix))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.inner.vars.lock().unwrap().get(name).cloned()
    }

    pub fn is_buffer(name: &str) -> bool {
        BUFFER_SUFFIXES.iter().any(|s| name.ends_with(s))
    }

    /// Marks every variable under `prefix` as excluded from optimization.
    pub fn freeze(&self, prefix: &str) {
        self.inner
            .frozen
            .lock()
            .unwrap()
            .insert(prefix.to_string());
    }

    pub fn frozen_prefixes(&self) -> Vec<String> {
        self.inner.frozen.lock().unwrap().iter().cloned().collect()
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.inner
            .frozen
            .lock()
            .unwrap()
            .iter()
            .any(|p| name.starts_with(p.as_str()))
    }

    /// Variables under `prefix` that an optimizer may update, in name order.
    pub fn trainable_vars(&self, prefix: &str) -> Vec<Var> {
        let vars = self.inner.vars.lock().unwrap();
        vars.iter()
            .filter(|(n, _)| n.starts_with(prefix) && !Self::is_buffer(n) && !self.is_frozen(n))
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Overwrites an existing variable, checking its shape.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown variable `{name}`")))?;
        if var.dims() != value.dims() {
            return Err(Error::KeyMismatch {
                keys: vec![format!(
                    "{name}: expected {:?}, got {:?}",
                    var.dims(),
                    value.dims()
                )],
            });
        }
        var.set(&value.to_dtype(self.inner.dtype)?)?;
        Ok(())
    }

    /// Flattened f32 copies of every variable under `prefix`.
    pub fn snapshot(&self, prefix: &str) -> Result<BTreeMap<String, (Vec<usize>, Vec<f32>)>> {
        let vars = self.inner.vars.lock().unwrap();
        let mut out = BTreeMap::new();
        for (name, var) in vars.iter().filter(|(n, _)| n.starts_with(prefix)) {
            let data = var
                .as_tensor()
                .to_dtype(DType::F32)?
                .flatten_all()?
                .to_vec1::<f32>()?;
            out.insert(name.clone(), (var.dims().to_vec(), data));
        }
        Ok(out)
    }

    /// SHA-256 over names, shapes and raw values of every variable under `prefix`.
    pub fn checksum(&self, prefix: &str) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, (shape, data)) in self.snapshot(prefix)? {
            hasher.update(name.as_bytes());
            for d in shape {
                hasher.update((d as u64).to_le_bytes());
            }
            for v in data {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(hex_digest(hasher.finalize().as_slice()))
    }

    fn init_tensor(&self, shape: &Shape, init: Init) -> Result<Tensor> {
        let n = shape.elem_count();
        let mut rng = self.inner.rng.lock().unwrap();
        let values: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::Uniform { lo, up } => (0..n).map(|_| rng.gen_range(lo..=up)).collect(),
            Init::Randn { mean, stdev } => sample_normal(&mut rng, n, mean, stdev),
            Init::Kaiming {
                dist,
                fan,
                non_linearity,
            } => {
                let fan = match fan {
                    FanInOut::FanIn => FanInOut::FanIn.for_shape(shape),
                    FanInOut::FanOut => FanInOut::FanOut.for_shape(shape),
                };
                let std = non_linearity.gain() / (fan as f64).sqrt();
                match dist {
                    NormalOrUniform::Uniform => {
                        let bound = 3f64.sqrt() * std;
                        (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
                    }
                    NormalOrUniform::Normal => sample_normal(&mut rng, n, 0.0, std),
                }
            }
        };
        Ok(Tensor::from_vec(values, shape.clone(), &self.inner.device)?.to_dtype(self.inner.dtype)?)
    }
}

fn sample_normal(rng: &mut ChaCha8Rng, n: usize, mean: f64, stdev: f64) -> Vec<f64> {
    if stdev <= 0.0 {
        return vec![mean; n];
    }
    let dist = Normal::new(mean, stdev).expect("positive stdev");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Deterministically mixes a base seed with a sequence of counters
/// (splitmix64 finalizer applied per part).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl SimpleBackend for ParamStore {
    fn get(
        &self,
        s: Shape,
        name: &str,
        h: Init,
        dtype: DType,
        dev: &Device,
    ) -> candle_core::Result<Tensor> {
        if let Some(var) = self.get(name) {
            if var.shape() != &s {
                candle_core::bail!(
                    "shape mismatch for {name}: stored {:?}, requested {:?}",
                    var.shape(),
                    s
                );
            }
            return Ok(var.as_tensor().clone());
        }
        let tensor = self
            .init_tensor(&s, h)
            .map_err(|e| candle_core::Error::Msg(e.to_string()))?
            .to_dtype(dtype)?
            .to_device(dev)?;
        let var = Var::from_tensor(&tensor)?;
        let out = var.as_tensor().clone();
        self.inner
            .vars
            .lock()
            .unwrap()
            .insert(name.to_string(), var);
        Ok(out)
    }

    fn get_unchecked(&self, name: &str, _dtype: DType, _dev: &Device) -> candle_core::Result<Tensor> {
        match self.get(name) {
            Some(v) => Ok(v.as_tensor().clone()),
            None => candle_core::bail!("no variable named {name}"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        self.inner.vars.lock().unwrap().contains_key(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let build = |seed| {
            let store = ParamStore::new(seed);
            let vb = store.var_builder();
            candle_nn::linear(8, 4, vb.pp("fc")).unwrap();
            candle_nn::conv2d(2, 3, 3, Default::default(), vb.pp("conv")).unwrap();
            store.checksum("").unwrap()
        };
        assert_eq!(build(3), build(3));
        assert_ne!(build(3), build(4));
    }

    #[test]
    fn frozen_vars_are_not_trainable() {
        let store = ParamStore::new(0);
        let vb = store.var_builder();
        candle_nn::linear(2, 2, vb.pp("a")).unwrap();
        candle_nn::linear(2, 2, vb.pp("b")).unwrap();
        candle_nn::batch_norm(2, 1e-5, vb.pp("bn")).unwrap();
        store.freeze("a.");
        assert_eq!(store.trainable_vars("").len(), 4);
        assert!(store.is_frozen("a.weight"));
        assert!(!store.is_frozen("b.weight"));
    }

    #[test]
    fn kaiming_uniform_respects_bound() {
        let store = ParamStore::new(1);
        let vb = store.var_builder();
        let t = vb
            .get_with_hints((16, 9), "w", candle_nn::init::DEFAULT_KAIMING_UNIFORM)
            .unwrap();
        let bound = 3f64.sqrt() * 2f64.sqrt() / 3.0;
        let max = t.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!((max as f64) <= bound + 1e-6);
    }
}
