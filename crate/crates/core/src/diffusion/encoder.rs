use candle_core::{DType, Device, Tensor};

use super::unet::{Encoder, UNetConfig};
use crate::checkpoint::Checkpoint;
use crate::nn::ParamStore;
use crate::{Error, Result};

/// Frozen copy of a trained UNet's contracting path, evaluated at diffusion
/// time zero.
///
/// Its parameters live in a private store that no optimizer ever sees, and
/// every feature map it returns is detached from the autograd graph.
pub struct EncoderHandle {
    encoder: Encoder,
    store: ParamStore,
    hash: String,
}

impl EncoderHandle {
    /// Reads the `enc.` tensors of a prior or enhancer checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint, device: &Device) -> Result<Self> {
        let cfg = ck.meta.unet.clone();
        let mut store = ParamStore::new(0, DType::F32, device);
        let encoder = Encoder::new(&cfg, &mut store)?;
        let tensors = ck
            .tensors
            .iter()
            .filter(|(k, _)| k.starts_with("enc."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        store
            .load(&tensors)
            .map_err(|e| Error::Format(format!("checkpoint missing encoder parameters: {e}")))?;
        let hash = store.hash()?;
        Ok(Self { encoder, store, hash })
    }

    /// Randomly initialised encoder, for tests and parameter counting.
    pub fn random(cfg: &UNetConfig, seed: u64, device: &Device) -> Result<Self> {
        let mut store = ParamStore::new(seed, DType::F32, device);
        let encoder = Encoder::new(cfg, &mut store)?;
        let hash = store.hash()?;
        Ok(Self { encoder, store, hash })
    }

    pub fn config(&self) -> &UNetConfig {
        self.encoder.config()
    }

    /// Feature maps per stage for an image batch `(B, 3, h, w)` in `[0, 1]`,
    /// returned in `dtype`.
    pub fn features(&self, x: &Tensor, dtype: DType) -> Result<Vec<Tensor>> {
        let (b, _, _, _) = x.dims4()?;
        let x = ((x.detach().to_dtype(DType::F32)? * 2.0)? - 1.0)?;
        let temb = self.encoder.time_embedding(&vec![0; b], DType::F32, x.device())?;
        self.encoder
            .forward(&x, &temb)?
            .into_iter()
            .map(|f| Ok(f.detach().to_dtype(dtype)?))
            .collect()
    }

    /// Hash of the parameters as loaded; compare with [`Self::current_hash`]
    /// to verify nothing mutated them.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn current_hash(&self) -> Result<String> {
        self.store.hash()
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// `(name, shape, values)` of the encoder parameters.
    pub fn export(&self) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
        self.store.export()
    }
}
