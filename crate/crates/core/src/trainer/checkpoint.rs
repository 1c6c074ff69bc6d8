use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{build_model, Model, ModelConfig};
use crate::rng::{RngState, RNG_ALGORITHM};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::optim::OptimizerState;

pub const MAGIC: &[u8; 4] = b"DMPP";
pub const FORMAT_VERSION: u32 = 1;
pub const FLATTEN_ORDER: &str = "row-major (s, t)";
pub const INIT_SCHEME: &str = "linear: uniform ±1/sqrt(fan_in); batchnorm: scale 1, shift 0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// JSON metadata block of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub epoch: usize,
    pub scalar: String,
    pub rng_algorithm: String,
    pub rng_seed: u64,
    /// Stream position in 32-bit words, as a decimal string (exceeds u64).
    pub rng_word_pos: String,
    pub flatten_order: String,
    pub init_scheme: String,
    pub optimizer: Option<OptimizerMeta>,
}

/// Parameters (`param/…`), running statistics (`buffer/…`) and momentum
/// buffers (`momentum/…`) with their metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn capture<T: Scalar>(model: &Model<T>, optimizer: Option<&OptimizerState<T>>, epoch: usize, rng: &RngState) -> Self {
        let store = model.store();
        let mut tensors: Vec<(String, Tensor<f64>)> = store.params().map(|(n, t)| (format!("param/{n}"), t.cast())).collect();
        tensors.extend(store.buffers().map(|(n, t)| (format!("buffer/{n}"), t.cast())));
        if let Some(opt) = optimizer {
            tensors.extend(
                store
                    .params()
                    .zip(&opt.buffers)
                    .map(|((n, _), b)| (format!("momentum/{n}"), b.cast())),
            );
        }
        Self {
            version: FORMAT_VERSION,
            meta: CheckpointMeta {
                model: model.config().clone(),
                epoch,
                scalar: T::NAME.to_string(),
                rng_algorithm: RNG_ALGORITHM.to_string(),
                rng_seed: rng.seed(),
                rng_word_pos: rng.word_pos().to_string(),
                flatten_order: FLATTEN_ORDER.to_string(),
                init_scheme: INIT_SCHEME.to_string(),
                optimizer: optimizer.map(|o| OptimizerMeta {
                    lr: o.lr,
                    momentum: o.momentum,
                    weight_decay: o.weight_decay,
                }),
            },
            tensors,
        }
    }

    fn tensor(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn fetch<T: Scalar>(&self, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let t = self
            .tensor(name)
            .ok_or_else(|| Error::Consistency(format!("checkpoint lacks tensor `{name}`")))?;
        if t.shape() != shape {
            return Err(Error::Consistency(format!(
                "checkpoint tensor `{name}` has shape {:?}, model expects {shape:?}",
                t.shape()
            )));
        }
        Ok(t.cast())
    }

    /// Rebuilds the model and loads every parameter and running statistic.
    pub fn restore_model<T: Scalar>(&self) -> Result<Model<T>> {
        let mut model = build_model::<T>(&self.meta.model, &mut RngState::new(0))?;
        let store = model.store_mut();
        let names: Vec<(String, Vec<usize>)> = store.params().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
        for (k, (n, shape)) in names.iter().enumerate() {
            *store.param_mut(crate::nn::ParamId(k)) = self.fetch(&format!("param/{n}"), shape)?;
        }
        let names: Vec<(String, Vec<usize>)> = store.buffers().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
        for (k, (n, shape)) in names.iter().enumerate() {
            *store.buffer_mut(crate::nn::BufferId(k)) = self.fetch(&format!("buffer/{n}"), shape)?;
        }
        Ok(model)
    }

    pub fn restore_optimizer<T: Scalar>(&self, model: &Model<T>) -> Result<Option<OptimizerState<T>>> {
        let Some(meta) = &self.meta.optimizer else {
            return Ok(None);
        };
        let buffers = model
            .store()
            .params()
            .map(|(n, t)| self.fetch(&format!("momentum/{n}"), t.shape()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(OptimizerState {
            momentum: meta.momentum,
            weight_decay: meta.weight_decay,
            lr: meta.lr,
            buffers,
        }))
    }

    pub fn rng(&self) -> Result<RngState> {
        let pos = self
            .meta
            .rng_word_pos
            .parse::<u128>()
            .map_err(|e| Error::Format(format!("rng_word_pos: {e}")))?;
        Ok(RngState::restore(self.meta.rng_seed, pos))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_string_pretty(&self.meta).expect("metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("checkpoint: bad magic {magic:?}, expected \"DMPP\"")));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("checkpoint: unsupported format version {version}")));
        }
        let len = r.u64("metadata length")? as usize;
        let meta_bytes = r.take(len, "metadata")?;
        let meta: CheckpointMeta = serde_json::from_slice(meta_bytes).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let n = r.u32("tensor name length")? as usize;
            let name = String::from_utf8(r.take(n, "tensor name")?.to_vec())
                .map_err(|_| Error::Format("checkpoint: tensor name is not UTF-8".into()))?;
            let rank = r.u32("tensor rank")? as usize;
            let shape = (0..rank).map(|_| r.u64("extent").map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count * 8, &name)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { version, meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_bytes()).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!("checkpoint: {what} at byte {}", self.pos))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;

    #[test]
    fn round_trip_reproduces_outputs_bitwise() {
        let mut rng = RngState::new(3);
        let mut model: Model<f64> = build_model(&ModelConfig::tiny(), &mut rng).unwrap();
        model.store_mut().randomize_buffers(&mut rng).unwrap();
        let opt = OptimizerState::new(model.store(), 0.05);
        let ck = Checkpoint::capture(&model, Some(&opt), 4, &rng);
        let pos = rng.word_pos();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let restored: Model<f64> = back.restore_model().unwrap();
        let x = Tensor::uniform(&[30, 3], -1.0, 1.0, &mut rng);
        assert_eq!(model.logits(&x, 10, Mode::Eval).unwrap(), restored.logits(&x, 10, Mode::Eval).unwrap());
        assert_eq!(back.restore_optimizer(&restored).unwrap().unwrap(), opt);
        assert_eq!(back.rng().unwrap().word_pos(), pos);
    }

    #[test]
    fn header_layout() {
        let model: Model<f64> = build_model(&ModelConfig::tiny(), &mut RngState::new(0)).unwrap();
        let bytes = Checkpoint::capture(&model, None, 0, &RngState::new(0)).to_bytes();
        assert_eq!(&bytes[..4], b"DMPP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn corrupt_inputs() {
        let model: Model<f64> = build_model(&ModelConfig::tiny(), &mut RngState::new(0)).unwrap();
        let bytes = Checkpoint::capture(&model, None, 0, &RngState::new(0)).to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    }
}
