use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schedule::{NoiseSchedule, ScheduleConfig};
use super::unet::{UNet, UNetConfig};
use crate::checkpoint::{Checkpoint, CheckpointMeta, EpochRecord, Stage};
use crate::imgcore::{frames_to_tensor, Frame};
use crate::nn::{CosineAdam, ParamStore};
use crate::{Error, Result};

/// Anything that predicts the injected noise from `x_t` and per-sample `t`.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &Tensor, t: &[usize]) -> Result<Tensor>;
}

impl NoisePredictor for UNet {
    fn predict_noise(&self, x_t: &Tensor, t: &[usize]) -> Result<Tensor> {
        self.forward(x_t, t)
    }
}

/// Standard-normal tensor drawn from `rng`.
pub fn gaussian(shape: &[usize], rng: &mut impl Rng, dtype: DType, device: &Device) -> Result<Tensor> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}

/// Mean squared noise-prediction error with one uniformly drawn step per
/// sample. `x0` is `(B, C, H, W)` already rescaled to `[-1, 1]`.
pub fn ddpm_loss(x0: &Tensor, model: &impl NoisePredictor, s: &NoiseSchedule, rng: &mut impl Rng) -> Result<Tensor> {
    let (b, _, _, _) = x0.dims4()?;
    let t: Vec<usize> = (0..b).map(|_| rng.random_range(1..=s.steps())).collect();
    let noise = gaussian(x0.dims(), rng, x0.dtype(), x0.device())?;
    let signal: Vec<f64> = t.iter().map(|&ti| s.alpha_bar(ti).sqrt()).collect();
    let spread: Vec<f64> = t.iter().map(|&ti| (1.0 - s.alpha_bar(ti)).sqrt()).collect();
    let col = |v: Vec<f64>| -> Result<Tensor> {
        Ok(Tensor::from_vec(v, (b, 1, 1, 1), x0.device())?.to_dtype(x0.dtype())?)
    };
    let x_t = (x0.broadcast_mul(&col(signal)?)? + noise.broadcast_mul(&col(spread)?)?)?;
    let pred = model.predict_noise(&x_t, &t)?;
    if pred.dims() != x0.dims() {
        return Err(Error::Shape(format!("prediction {:?} vs input {:?}", pred.dims(), x0.dims())));
    }
    Ok((noise - pred)?.sqr()?.mean_all()?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorTraining {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

pub fn prior_checkpoint(
    unet: &UNetConfig,
    schedule: &ScheduleConfig,
    params: &ParamStore,
    seed: u64,
    log: Vec<EpochRecord>,
) -> Result<Checkpoint> {
    let meta = CheckpointMeta {
        stage: Stage::Prior,
        unet: unet.clone(),
        schedule: *schedule,
        enhancer: None,
        prior_hash: None,
        seed,
        log,
        tensors: Vec::new(),
    };
    Checkpoint::new(meta, params.export()?)
}

/// Trains the noise-prediction UNet on crops in `[0, 1]`; the checkpoint log
/// holds the mean loss of every epoch under `ddpm`.
pub fn train_prior(
    crops: &[Frame],
    unet: &UNetConfig,
    schedule: &ScheduleConfig,
    settings: &PriorTraining,
) -> Result<Checkpoint> {
    if crops.is_empty() {
        return Err(Error::Empty("no training crops".into()));
    }
    if settings.batch_size == 0 {
        return Err(Error::Config("prior batch size must be >= 1".into()));
    }
    let (h, w) = crops[0].dims();
    for c in crops {
        if c.dims() != (h, w) {
            return Err(Error::Shape("training crops differ in size".into()));
        }
    }
    unet.check_input(h, w)?;
    let s = schedule.build()?;

    let device = Device::Cpu;
    let mut ps = ParamStore::new(settings.seed, DType::F32, &device);
    let net = UNet::new(unet, &mut ps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x9e37_79b9_7f4a_7c15);

    let refs: Vec<&Frame> = crops.iter().collect();
    let data = ((frames_to_tensor(&refs, DType::F32, &device)? * 2.0)? - 1.0)?;
    let batches = crops.len().div_ceil(settings.batch_size);
    let mut opt = CosineAdam::new(ps.vars(), settings.lr, settings.epochs * batches)?;
    let mut order: Vec<u32> = (0..crops.len() as u32).collect();
    let mut log = Vec::with_capacity(settings.epochs);

    for epoch in 0..settings.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(settings.batch_size) {
            let idx = Tensor::from_vec(chunk.to_vec(), chunk.len(), &device)?;
            let x0 = data.index_select(&idx, 0)?;
            let loss = ddpm_loss(&x0, &net, &s, &mut rng)?;
            let value = loss.to_scalar::<f32>()? as f64;
            if !value.is_finite() {
                return Err(Error::Diverged(format!("non-finite diffusion loss in epoch {epoch}")));
            }
            total += value * chunk.len() as f64;
            opt.backward_step(&loss)?;
        }
        let mean = total / crops.len() as f64;
        log::info!("prior epoch {epoch}: ddpm {mean:.5}");
        log.push(EpochRecord {
            epoch,
            values: BTreeMap::from([("ddpm".to_string(), mean)]),
        });
    }
    prior_checkpoint(unet, schedule, &ps, settings.seed, log)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero;
    impl NoisePredictor for Zero {
        fn predict_noise(&self, x_t: &Tensor, _t: &[usize]) -> Result<Tensor> {
            Ok(x_t.zeros_like()?)
        }
    }

    /// Recovers the injected noise from `x_t` and `t` given a known `x0`.
    struct Oracle {
        x0: Tensor,
        s: NoiseSchedule,
    }
    impl NoisePredictor for Oracle {
        fn predict_noise(&self, x_t: &Tensor, t: &[usize]) -> Result<Tensor> {
            let mut out = Vec::new();
            for (i, &ti) in t.iter().enumerate() {
                let ab = self.s.alpha_bar(ti);
                let xi = x_t.get(i)?;
                let x0 = self.x0.get(i)?;
                out.push(((xi - (x0 * ab.sqrt())?)? / (1.0 - ab).sqrt())?);
            }
            Ok(Tensor::stack(&out, 0)?)
        }
    }

    #[test]
    fn zero_model_loss_is_noise_power() {
        let s = ScheduleConfig::desk().build().unwrap();
        let x0 = Tensor::zeros((16, 3, 25, 25), DType::F64, &Device::Cpu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l: f64 = ddpm_loss(&x0, &Zero, &s, &mut rng).unwrap().to_scalar().unwrap();
        assert!((l - 1.0).abs() < 0.05, "{l}");
    }

    #[test]
    fn oracle_model_loss_is_zero() {
        let s = ScheduleConfig::desk().build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = gaussian(&[4, 3, 8, 8], &mut rng, DType::F64, &Device::Cpu).unwrap();
        let l: f64 = ddpm_loss(&x0, &Oracle { x0: x0.clone(), s: s.clone() }, &s, &mut rng)
            .unwrap()
            .to_scalar()
            .unwrap();
        assert!(l.abs() < 1e-20, "{l}");
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let crops = vec![Frame::filled(16, 16, [0.5; 3]); 2];
        let settings = PriorTraining {
            epochs: 0,
            lr: 1e-4,
            batch_size: 2,
            seed: 5,
        };
        let ck = train_prior(&crops, &UNetConfig::desk(), &ScheduleConfig::desk(), &settings).unwrap();
        let mut ps = ParamStore::new(5, DType::F32, &Device::Cpu);
        UNet::new(&UNetConfig::desk(), &mut ps).unwrap();
        let fresh = prior_checkpoint(&UNetConfig::desk(), &ScheduleConfig::desk(), &ps, 5, vec![]).unwrap();
        assert_eq!(ck.tensors, fresh.tensors);
        assert!(train_prior(&[], &UNetConfig::desk(), &ScheduleConfig::desk(), &settings).is_err());
        let odd = vec![Frame::filled(12, 12, [0.5; 3])];
        assert!(matches!(
            train_prior(&odd, &UNetConfig::desk(), &ScheduleConfig::desk(), &settings),
            Err(Error::Shape(_))
        ));
    }
}
