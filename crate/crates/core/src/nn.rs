//! Minimal layer toolkit on top of candle: a named parameter store seeded from
//! our own RNG (candle's CPU `randn` is not reproducible), and the handful of
//! layers the UNet and the enhancer need.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Named trainable parameters.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: device.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Parameter(format!("duplicate parameter {name}")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.insert(name, shape, values)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        self.insert(name, shape, vec![value; n])
    }

    pub fn from_values(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        self.insert(name, shape, values)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Parameters as `(name, shape, f32 values)` in name order.
    pub fn export(&self) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let t = v.as_tensor();
                let values = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
                Ok((k.clone(), t.dims().to_vec(), values))
            })
            .collect()
    }

    /// Overwrites every parameter from `source`; names and shapes must match
    /// exactly.
    pub fn load(&self, source: &BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<()> {
        for (name, var) in &self.vars {
            let (shape, values) = source
                .get(name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            if shape.as_slice() != var.dims() {
                return Err(Error::Format(format!(
                    "parameter {name}: shape {shape:?}, expected {:?}",
                    var.dims()
                )));
            }
            let t = Tensor::from_vec(values.clone(), shape.as_slice(), &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and f32 values.
    pub fn hash(&self) -> Result<String> {
        Ok(hash_params(&self.export()?))
    }
}

pub fn hash_params(params: &[(String, Vec<usize>, Vec<f32>)]) -> String {
    let mut h = Sha256::new();
    for (name, shape, values) in params {
        h.update(name.as_bytes());
        h.update([0u8]);
        for d in shape {
            h.update((*d as u64).to_le_bytes());
        }
        for v in values {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// Uniform `±1/sqrt(fan_in)` initialisation.
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let bound = 1.0 / ((cin * kernel * kernel) as f64).sqrt();
        Self::with_bound(ps, name, cin, cout, kernel, stride, bias, bound)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_bound(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        bound: f64,
    ) -> Result<Self> {
        let weight = ps.uniform(&format!("{name}.weight"), &[cout, cin, kernel, kernel], bound)?;
        let bias = if bias {
            Some(ps.uniform(&format!("{name}.bias"), &[cout], bound)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding: kernel / 2,
        })
    }

    pub fn zeroed(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            weight: ps.constant(&format!("{name}.weight"), &[cout, cin, kernel, kernel], 0.0)?,
            bias: Some(ps.constant(&format!("{name}.bias"), &[cout], 0.0)?),
            stride: 1,
            padding: kernel / 2,
        })
    }

    pub fn from_parts(weight: Tensor, bias: Option<Tensor>, stride: usize, padding: usize) -> Self {
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let bound = 1.0 / (cin as f64).sqrt();
        Ok(Self {
            weight: ps.uniform(&format!("{name}.weight"), &[cout, cin], bound)?,
            bias: ps.uniform(&format!("{name}.bias"), &[cout], bound)?,
        })
    }

    /// `(B, in) -> (B, out)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    weight: Tensor,
    bias: Tensor,
    groups: usize,
    eps: f64,
}

impl GroupNorm {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: ps.constant(&format!("{name}.weight"), &[channels], 1.0)?,
            bias: ps.constant(&format!("{name}.bias"), &[channels], 0.0)?,
            groups: group_count(channels),
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let g = x.reshape((b, self.groups, (c / self.groups) * h * w))?;
        let mean = g.mean_keepdim(D::Minus1)?;
        let centered = g.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?.reshape((b, c, h, w))?;
        Ok(normed
            .broadcast_mul(&self.weight.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Largest of 8, 4, 2, 1 dividing `channels`.
pub fn group_count(channels: usize) -> usize {
    [8, 4, 2, 1].into_iter().find(|g| channels % g == 0).unwrap_or(1)
}

/// 2x nearest-neighbour upsampling of `(B, C, H, W)`.
pub fn upsample_nearest2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.upsample_nearest2d(h * 2, w * 2)?)
}

/// Adam (no weight decay) with a cosine-decayed learning rate.
pub struct CosineAdam {
    opt: AdamW,
    base_lr: f64,
    total_steps: usize,
    step: usize,
}

impl CosineAdam {
    pub fn new(vars: Vec<Var>, base_lr: f64, total_steps: usize) -> Result<Self> {
        let params = ParamsAdamW {
            lr: base_lr,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        };
        Ok(Self {
            opt: AdamW::new(vars, params)?,
            base_lr,
            total_steps: total_steps.max(1),
            step: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        let progress = (self.step as f64 / self.total_steps as f64).min(1.0);
        0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    /// Backpropagates `loss` and applies one update.
    pub fn backward_step(&mut self, loss: &Tensor) -> Result<()> {
        self.opt.set_learning_rate(self.learning_rate());
        let grads = loss.backward()?;
        self.opt.step(&grads)?;
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_is_seeded_and_hash_tracks_values() {
        let mk = |seed| {
            let mut ps = ParamStore::new(seed, DType::F32, &Device::Cpu);
            Conv2d::new(&mut ps, "c", 3, 4, 3, 1, true).unwrap();
            ps
        };
        let (a, b, c) = (mk(1), mk(1), mk(2));
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.num_params(), 3 * 4 * 9 + 4);
        let exported: BTreeMap<_, _> = c.export().unwrap().into_iter().map(|(k, s, v)| (k, (s, v))).collect();
        a.load(&exported).unwrap();
        assert_eq!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let mut ps = ParamStore::new(0, DType::F64, &Device::Cpu);
        let w = ps.constant("w", &[1], 1.0).unwrap();
        let mut opt = CosineAdam::new(ps.vars(), 0.1, 4).unwrap();
        assert_eq!(opt.learning_rate(), 0.1);
        for _ in 0..2 {
            opt.backward_step(&w.sqr().unwrap().sum_all().unwrap()).unwrap();
        }
        assert!((opt.learning_rate() - 0.05).abs() < 1e-12);
        // two Adam steps of size ~lr move the weight down
        assert!(w.to_vec1::<f64>().unwrap()[0] < 0.9);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamStore::new(0, DType::F32, &Device::Cpu);
        ps.constant("x", &[2], 0.0).unwrap();
        assert!(ps.constant("x", &[2], 0.0).is_err());
    }

    #[test]
    fn group_norm_normalizes_each_group() {
        let mut ps = ParamStore::new(0, DType::F64, &Device::Cpu);
        let gn = GroupNorm::new(&mut ps, "gn", 4).unwrap();
        let x = Tensor::arange(0.0f64, 64.0, &Device::Cpu).unwrap().reshape((1, 4, 4, 4)).unwrap();
        let y = gn.forward(&x).unwrap();
        let per_group = y.reshape((4, 16)).unwrap();
        let means: Vec<f64> = per_group.mean(1).unwrap().to_vec1().unwrap();
        assert!(means.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn conv_keeps_size_with_same_padding() {
        let mut ps = ParamStore::new(0, DType::F32, &Device::Cpu);
        let c = Conv2d::new(&mut ps, "c", 3, 5, 3, 1, true).unwrap();
        let x = Tensor::zeros((2, 3, 7, 9), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(c.forward(&x).unwrap().dims(), &[2, 5, 7, 9]);
        let d = Conv2d::new(&mut ps, "d", 3, 5, 3, 2, false).unwrap();
        assert_eq!(d.forward(&Tensor::zeros((1, 3, 8, 8), DType::F32, &Device::Cpu).unwrap()).unwrap().dims(), &[1, 5, 4, 4]);
    }
}
