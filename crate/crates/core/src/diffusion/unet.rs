use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::nn::{upsample_nearest2, Conv2d, GroupNorm, Linear, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub base_channels: usize,
    /// Number of stride-2 stages.
    pub depth: usize,
    pub time_embed_dim: usize,
    /// Channel multiplier per stage, `depth + 1` entries (stage 0 is full
    /// resolution).
    pub channel_mults: Vec<usize>,
}

impl UNetConfig {
    pub fn full() -> Self {
        Self {
            base_channels: 32,
            depth: 4,
            time_embed_dim: 128,
            channel_mults: vec![1, 2, 4, 8, 8],
        }
    }

    pub fn desk() -> Self {
        Self {
            base_channels: 8,
            depth: 3,
            time_embed_dim: 32,
            channel_mults: vec![1, 2, 2, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "base_channels must be > 0 and time_embed_dim even and > 0 ({self:?})"
            )));
        }
        if self.channel_mults.len() != self.depth + 1 || self.channel_mults.contains(&0) {
            return Err(Error::Config(format!(
                "channel_mults needs {} positive entries, got {:?}",
                self.depth + 1,
                self.channel_mults
            )));
        }
        Ok(())
    }

    /// Channels of encoder stage `k`.
    pub fn channels(&self, k: usize) -> usize {
        self.base_channels * self.channel_mults[k]
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        (0..=self.depth).map(|k| self.channels(k)).collect()
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let m = 1 << self.depth;
        if height % m != 0 || width % m != 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "input {height}x{width} not divisible by 2^{} = {m}",
                self.depth
            )));
        }
        Ok(())
    }
}

/// Sinusoidal embedding of integer diffusion times, `(B, dim)`.
pub fn timestep_embedding(t: &[usize], dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &ti in t {
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp());
        let args: Vec<f64> = freqs.map(|f| ti as f64 * f).collect();
        data.extend(args.iter().map(|a| a.sin()));
        data.extend(args.iter().map(|a| a.cos()));
    }
    Ok(Tensor::from_vec(data, (t.len(), dim), device)?.to_dtype(dtype)?)
}

#[derive(Clone, Debug)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn new(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, temb: usize) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(ps, &format!("{name}.norm1"), cin)?,
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), cin, cout, 3, 1, true)?,
            time: Linear::new(ps, &format!("{name}.time"), temb, cout)?,
            norm2: GroupNorm::new(ps, &format!("{name}.norm2"), cout)?,
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), cout, cout, 3, 1, true)?,
            skip: if cin != cout {
                Some(Conv2d::new(ps, &format!("{name}.skip"), cin, cout, 1, 1, true)?)
            } else {
                None
            },
        })
    }

    /// `temb` is the already-activated time embedding `(B, temb)`.
    fn forward(&self, x: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let t = self.time.forward(temb)?.unsqueeze(2)?.unsqueeze(3)?;
        let h = h.broadcast_add(&t)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let skip = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((h + skip)?)
    }
}

/// Time MLP plus the contracting path and bottleneck. Parameter names are
/// prefixed `enc.`.
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: UNetConfig,
    time1: Linear,
    time2: Linear,
    conv_in: Conv2d,
    blocks: Vec<ResBlock>,
    downs: Vec<Conv2d>,
    mid: ResBlock,
}

impl Encoder {
    pub fn new(cfg: &UNetConfig, ps: &mut ParamStore) -> Result<Self> {
        cfg.validate()?;
        let e = cfg.time_embed_dim;
        let mut blocks = vec![ResBlock::new(ps, "enc.block0", cfg.channels(0), cfg.channels(0), e)?];
        let mut downs = Vec::with_capacity(cfg.depth);
        for k in 1..=cfg.depth {
            downs.push(Conv2d::new(ps, &format!("enc.down{k}"), cfg.channels(k - 1), cfg.channels(k - 1), 3, 2, true)?);
            blocks.push(ResBlock::new(ps, &format!("enc.block{k}"), cfg.channels(k - 1), cfg.channels(k), e)?);
        }
        Ok(Self {
            cfg: cfg.clone(),
            time1: Linear::new(ps, "enc.time1", e, e)?,
            time2: Linear::new(ps, "enc.time2", e, e)?,
            conv_in: Conv2d::new(ps, "enc.conv_in", 3, cfg.channels(0), 3, 1, true)?,
            blocks,
            downs,
            mid: ResBlock::new(ps, "enc.mid", cfg.channels(cfg.depth), cfg.channels(cfg.depth), e)?,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    /// Activated time embedding for diffusion times `t`.
    pub fn time_embedding(&self, t: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
        let raw = timestep_embedding(t, self.cfg.time_embed_dim, dtype, device)?;
        Ok(self.time2.forward(&self.time1.forward(&raw)?.silu()?)?.silu()?)
    }

    /// Stage features for `x` in `[-1, 1]`: stage `k` has `channels(k)`
    /// planes at `1/2^k` resolution; the last stage has passed through the
    /// bottleneck block.
    pub fn forward(&self, x: &Tensor, temb: &Tensor) -> Result<Vec<Tensor>> {
        let (_, _, h, w) = x.dims4()?;
        self.cfg.check_input(h, w)?;
        let mut feats = Vec::with_capacity(self.cfg.depth + 1);
        let mut cur = self.blocks[0].forward(&self.conv_in.forward(x)?, temb)?;
        for k in 1..=self.cfg.depth {
            feats.push(cur.clone());
            cur = self.blocks[k].forward(&self.downs[k - 1].forward(&cur)?, temb)?;
        }
        feats.push(self.mid.forward(&cur, temb)?);
        Ok(feats)
    }
}

#[derive(Clone, Debug)]
pub struct UNet {
    encoder: Encoder,
    ups: Vec<Conv2d>,
    blocks: Vec<ResBlock>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl UNet {
    pub fn new(cfg: &UNetConfig, ps: &mut ParamStore) -> Result<Self> {
        let encoder = Encoder::new(cfg, ps)?;
        let e = cfg.time_embed_dim;
        let mut ups = Vec::with_capacity(cfg.depth);
        let mut blocks = Vec::with_capacity(cfg.depth);
        for k in (1..=cfg.depth).rev() {
            let (hi, lo) = (cfg.channels(k), cfg.channels(k - 1));
            ups.push(Conv2d::new(ps, &format!("dec.up{k}"), hi, lo, 3, 1, true)?);
            blocks.push(ResBlock::new(ps, &format!("dec.block{k}"), 2 * lo, lo, e)?);
        }
        Ok(Self {
            encoder,
            ups,
            blocks,
            norm_out: GroupNorm::new(ps, "dec.norm_out", cfg.channels(0))?,
            conv_out: Conv2d::zeroed(ps, "dec.conv_out", cfg.channels(0), 3, 3)?,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Predicted noise for `x_t` at per-sample times `t`.
    pub fn forward(&self, x: &Tensor, t: &[usize]) -> Result<Tensor> {
        let (b, _, _, _) = x.dims4()?;
        if t.len() != b {
            return Err(Error::Shape(format!("{} times for batch {b}", t.len())));
        }
        let temb = self.encoder.time_embedding(t, x.dtype(), x.device())?;
        let feats = self.encoder.forward(x, &temb)?;
        let depth = feats.len() - 1;
        let mut h = feats[depth].clone();
        for (i, k) in (1..=depth).rev().enumerate() {
            h = self.ups[i].forward(&upsample_nearest2(&h)?)?;
            h = Tensor::cat(&[&h, &feats[k - 1]], 1)?;
            h = self.blocks[i].forward(&h, &temb)?;
        }
        self.conv_out.forward(&self.norm_out.forward(&h)?.silu()?)
    }
}
