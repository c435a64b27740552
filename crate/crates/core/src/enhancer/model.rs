use candle_core::{DType, Device, Tensor};

use super::config::EnhancerConfig;
use super::upsample::LearnableUpsample;
use crate::checkpoint::{Checkpoint, CheckpointMeta, EpochRecord, Stage};
use crate::diffusion::{EncoderHandle, ScheduleConfig, UNetConfig};
use crate::imgcore::{frame_to_tensor, tensor_to_frame, DepthMap, Frame};
use crate::nn::{Conv2d, ParamStore};
use crate::ops::softplus;
use crate::physics::{estimate_backscatter, remove_backscatter, BackscatterField};
use crate::{Error, Result};

/// `clip(i / (s + eps), 0, 1)` on tensors; `s` may have 1 or 3 channels.
pub fn enhance_divide(i: &Tensor, s: &Tensor, eps: f64) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be > 0, got {eps}")));
    }
    Ok(i.broadcast_div(&(s + eps)?)?.clamp(0.0, 1.0)?)
}

/// Frame form of [`enhance_divide`] with a 3-channel map given as a frame-shaped
/// array of positive values.
pub fn enhance_divide_frame(i: &Frame, s: &[f32], eps: f64) -> Result<Frame> {
    if s.len() != i.data().len() {
        return Err(Error::Shape(format!("illumination has {} values, image {}", s.len(), i.data().len())));
    }
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be > 0, got {eps}")));
    }
    let data = i
        .data()
        .iter()
        .zip(s)
        .map(|(v, s)| (*v as f64 / (*s as f64 + eps)) as f32)
        .collect();
    Frame::from_clamped(i.height(), i.width(), data)
}

/// Trainable part of the spatial enhancer. Parameter names are prefixed
/// `enh.`.
#[derive(Clone, Debug)]
pub struct Enhancer {
    cfg: EnhancerConfig,
    stages: Vec<usize>,
    guide: [Conv2d; 3],
    ups: Vec<LearnableUpsample>,
    fuse1: Conv2d,
    fuse2: Conv2d,
}

impl Enhancer {
    pub fn new(cfg: &EnhancerConfig, unet: &UNetConfig, ps: &mut ParamStore) -> Result<Self> {
        cfg.validate(unet.depth)?;
        let g = cfg.guide_channels;
        let guide = [
            Conv2d::new(ps, "enh.guide1", 3, g, 3, 1, true)?,
            Conv2d::new(ps, "enh.guide2", g, g, 3, 1, true)?,
            Conv2d::new(ps, "enh.guide3", g, g, 3, 1, true)?,
        ];
        let stages = cfg.stages(unet.depth);
        let mut ups = Vec::with_capacity(stages.len());
        let mut fused = g;
        for &k in &stages {
            // Stage k of the half-resolution input sits at 1/2^(k+1) of full
            // resolution.
            ups.push(LearnableUpsample::new(ps, &format!("enh.up{k}"), unet.channels(k), 1 << (k + 1))?);
            fused += unet.channels(k);
        }
        let fc = cfg.fusion_channels;
        let fuse1 = Conv2d::new(ps, "enh.fuse1", fused, fc, 1, 1, true)?;
        let fuse2 = Conv2d::with_bound(ps, "enh.fuse2", fc, cfg.illumination_channels, 1, 1, false, 0.01 / (fc as f64).sqrt())?;
        // Bias so that softplus(bias) = 1 and the initial map is neutral.
        let bias = ps.constant("enh.fuse2.bias", &[cfg.illumination_channels], (std::f64::consts::E - 1.0).ln())?;
        let fuse2 = Conv2d::from_parts(fuse2.weight().clone(), Some(bias), 1, 0);
        Ok(Self {
            cfg: cfg.clone(),
            stages,
            guide,
            ups,
            fuse1,
            fuse2,
        })
    }

    pub fn config(&self) -> &EnhancerConfig {
        &self.cfg
    }

    /// Full-resolution guide features `(B, guide_channels, H, W)`.
    pub fn guide_features(&self, d_hr: &Tensor) -> Result<Tensor> {
        let mut h = d_hr.clone();
        for conv in &self.guide {
            h = conv.forward(&h)?.silu()?;
        }
        Ok(h)
    }

    /// Illumination map `(B, 3, H, W)`, every value at least the floor.
    /// `feats` are the encoder features of `D` downsampled by two, all stages.
    pub fn illumination(&self, d_hr: &Tensor, feats: &[Tensor]) -> Result<Tensor> {
        let (_, _, h, w) = d_hr.dims4()?;
        let mut parts = vec![self.guide_features(d_hr)?];
        for (up, &k) in self.ups.iter().zip(&self.stages) {
            let f = feats
                .get(k)
                .ok_or_else(|| Error::Shape(format!("encoder stage {k} missing")))?;
            let u = up.forward(f)?;
            if u.dims()[2..] != [h, w] {
                return Err(Error::Shape(format!(
                    "stage {k} upsampled to {:?}, input is {h}x{w}",
                    &u.dims()[2..]
                )));
            }
            parts.push(u);
        }
        let x = Tensor::cat(&parts, 1)?;
        let z = self.fuse2.forward(&self.fuse1.forward(&x)?.silu()?)?;
        let s = softplus(&z)?.maximum(self.cfg.illumination_floor)?;
        Ok(if self.cfg.illumination_channels == 1 {
            s.repeat((1, 3, 1, 1))?
        } else {
            s
        })
    }

    /// `(enhanced, illumination)`.
    pub fn forward(&self, d_hr: &Tensor, feats: &[Tensor]) -> Result<(Tensor, Tensor)> {
        let s = self.illumination(d_hr, feats)?;
        Ok((enhance_divide(d_hr, &s, self.cfg.epsilon)?, s))
    }
}

/// Frozen encoder plus trainable enhancer: the complete spatial model.
pub struct SpatialModel {
    encoder: EncoderHandle,
    enhancer: Enhancer,
    params: ParamStore,
    schedule: ScheduleConfig,
    prior_hash: String,
}

impl SpatialModel {
    /// Fresh enhancer on top of the encoder of `prior`.
    pub fn from_prior(prior: &Checkpoint, cfg: &EnhancerConfig, seed: u64, device: &Device) -> Result<Self> {
        prior.require_stage(Stage::Prior)?;
        let encoder = EncoderHandle::from_checkpoint(prior, device)?;
        Self::new(encoder, prior.meta.schedule, prior.content_hash()?, cfg, seed, DType::F32)
    }

    pub fn new(
        encoder: EncoderHandle,
        schedule: ScheduleConfig,
        prior_hash: String,
        cfg: &EnhancerConfig,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        let device = Device::Cpu;
        let mut params = ParamStore::new(seed, dtype, &device);
        let enhancer = Enhancer::new(cfg, encoder.config(), &mut params)?;
        Ok(Self {
            encoder,
            enhancer,
            params,
            schedule,
            prior_hash,
        })
    }

    /// Loads a `spatial` or `temporal` checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint, device: &Device) -> Result<Self> {
        if !matches!(ck.stage(), Stage::Spatial | Stage::Temporal) {
            return Err(Error::Stage {
                expected: "spatial or temporal".into(),
                found: ck.stage().to_string(),
            });
        }
        let cfg = ck
            .meta
            .enhancer
            .clone()
            .ok_or_else(|| Error::Format("checkpoint has no enhancer config".into()))?;
        let encoder = EncoderHandle::from_checkpoint(ck, device)?;
        let mut params = ParamStore::new(0, DType::F32, device);
        let enhancer = Enhancer::new(&cfg, &ck.meta.unet, &mut params)?;
        let tensors = ck
            .tensors
            .iter()
            .filter(|(k, _)| k.starts_with("enh."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        params.load(&tensors)?;
        Ok(Self {
            encoder,
            enhancer,
            params,
            schedule: ck.meta.schedule,
            prior_hash: ck.meta.prior_hash.clone().unwrap_or_default(),
        })
    }

    pub fn to_checkpoint(&self, stage: Stage, seed: u64, log: Vec<EpochRecord>) -> Result<Checkpoint> {
        let meta = CheckpointMeta {
            stage,
            unet: self.encoder.config().clone(),
            schedule: self.schedule,
            enhancer: Some(self.enhancer.config().clone()),
            prior_hash: Some(self.prior_hash.clone()),
            seed,
            log,
            tensors: Vec::new(),
        };
        let mut tensors = self.encoder.export()?;
        tensors.extend(self.params.export()?);
        Checkpoint::new(meta, tensors)
    }

    pub fn encoder(&self) -> &EncoderHandle {
        &self.encoder
    }

    pub fn enhancer(&self) -> &Enhancer {
        &self.enhancer
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn prior_hash(&self) -> &str {
        &self.prior_hash
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// Encoder plus enhancer parameter count.
    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.params.num_params()
    }

    /// Side lengths must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.encoder.config().depth + 1)
    }

    /// Frozen features of `D` downsampled by two.
    pub fn encoder_features(&self, d_hr: &Tensor) -> Result<Vec<Tensor>> {
        let (_, _, h, w) = d_hr.dims4()?;
        let m = self.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!("input {h}x{w} must be a multiple of {m}")));
        }
        let lr = d_hr.detach().avg_pool2d(2)?;
        self.encoder.features(&lr, self.dtype())
    }

    /// `(enhanced, illumination)` for a batch of backscatter-free images.
    pub fn forward(&self, d_hr: &Tensor) -> Result<(Tensor, Tensor)> {
        let feats = self.encoder_features(d_hr)?;
        self.enhancer.forward(d_hr, &feats)
    }

    /// Enhances a backscatter-free frame of any size (edges are replicated up
    /// to the next multiple of [`Self::size_multiple`]).
    pub fn enhance_backscatter_free(&self, d: &Frame) -> Result<Frame> {
        let (h, w) = d.dims();
        let m = self.size_multiple();
        let (ph, pw) = (h.div_ceil(m) * m - h, w.div_ceil(m) * m - w);
        let mut x = frame_to_tensor(d, self.dtype(), self.params.device())?;
        if ph > 0 {
            x = x.pad_with_same(2, 0, ph)?;
        }
        if pw > 0 {
            x = x.pad_with_same(3, 0, pw)?;
        }
        let (out, _) = self.forward(&x)?;
        tensor_to_frame(&out.narrow(2, 0, h)?.narrow(3, 0, w)?)
    }

    /// Full pipeline: per-frame backscatter estimation and removal, then the
    /// illumination division. A failed backscatter fit falls back to no
    /// removal.
    pub fn enhance_frame(&self, frame: &Frame, depth: &DepthMap) -> Result<Frame> {
        let b = match estimate_backscatter(frame, depth) {
            Ok(est) => est.field,
            Err(Error::Fit(msg)) => {
                log::warn!("backscatter fit failed ({msg}); enhancing without removal");
                BackscatterField::zeros(frame.height(), frame.width())
            }
            Err(e) => return Err(e),
        };
        let d = remove_backscatter(frame, &b)?;
        self.enhance_backscatter_free(&d)
    }

    /// Rigs the projection so the illumination map is the constant `value`
    /// (used to check the surrounding plumbing).
    pub fn set_constant_illumination(&self, value: f64) -> Result<()> {
        if !(value > 0.0) {
            return Err(Error::Parameter(format!("illumination must be > 0, got {value}")));
        }
        let w = self.params.get("enh.fuse2.weight").expect("projection weight");
        let b = self.params.get("enh.fuse2.bias").expect("projection bias");
        w.set(&w.zeros_like()?)?;
        // inverse softplus
        let raw = value + (-(-value).exp_m1()).ln();
        b.set(&(b.ones_like()? * raw)?)?;
        Ok(())
    }
}
