use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Schedule settings as stored in configs and checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    pub fn full() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }

    pub fn desk() -> Self {
        Self {
            steps: 50,
            ..Self::full()
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Linear variance schedule; all accessors take 1-based `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Parameter(format!(
            "schedule needs T >= 1 and 0 < beta_start <= beta_end < 1 (T={steps}, {beta_start}..{beta_end})"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule { beta, alpha, alpha_bar })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Parameter(format!("diffusion step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

fn check_noise(x: &Tensor, noise: &Tensor) -> Result<()> {
    if x.dims() != noise.dims() {
        return Err(Error::Shape(format!("noise {:?} vs data {:?}", noise.dims(), x.dims())));
    }
    Ok(())
}

/// `x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) noise`.
pub fn forward_diffuse_step(x_prev: &Tensor, t: usize, s: &NoiseSchedule, noise: &Tensor) -> Result<Tensor> {
    s.check_step(t)?;
    check_noise(x_prev, noise)?;
    let b = s.beta(t);
    Ok(((x_prev * (1.0 - b).sqrt())? + (noise * b.sqrt())?)?)
}

/// `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) noise`.
pub fn forward_diffuse_closed(x0: &Tensor, t: usize, s: &NoiseSchedule, noise: &Tensor) -> Result<Tensor> {
    s.check_step(t)?;
    check_noise(x0, noise)?;
    let ab = s.alpha_bar(t);
    Ok(((x0 * ab.sqrt())? + (noise * (1.0 - ab).sqrt())?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn two_step_products() {
        let s = make_schedule(2, 0.1, 0.2).unwrap();
        assert_eq!(s.betas(), &[0.1, 0.2]);
        assert_eq!(s.alphas(), &[0.9, 0.8]);
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn single_step() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
    }

    #[test]
    fn default_schedule_nearly_destroys_signal() {
        let s = ScheduleConfig::full().build().unwrap();
        // Independent product in log space.
        let log_prod: f64 = (0..1000).map(|i| (1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)).ln()).sum();
        assert!((s.alpha_bar(1000).ln() - log_prod).abs() < 1e-9);
        assert!(s.alpha_bar(1000) < 1e-4);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn bounds_rejected() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(3, 0.0, 0.2).is_err());
        assert!(make_schedule(3, 0.3, 0.2).is_err());
        assert!(make_schedule(3, 0.1, 1.0).is_err());
    }

    #[test]
    fn step_identities() {
        let s = make_schedule(10, 0.01, 0.2).unwrap();
        let dev = Device::Cpu;
        let x = Tensor::new(&[0.5f64, -0.25, 1.0], &dev).unwrap();
        let zero = x.zeros_like().unwrap();
        let n = Tensor::new(&[1.0f64, -2.0, 0.5], &dev).unwrap();
        let a: Vec<f64> = forward_diffuse_step(&x, 3, &s, &zero).unwrap().to_vec1().unwrap();
        let b = s.beta(3);
        assert_eq!(a, vec![0.5 * (1.0 - b).sqrt(), -0.25 * (1.0 - b).sqrt(), (1.0 - b).sqrt()]);
        let c: Vec<f64> = forward_diffuse_step(&zero, 3, &s, &n).unwrap().to_vec1().unwrap();
        assert_eq!(c, vec![b.sqrt(), -2.0 * b.sqrt(), 0.5 * b.sqrt()]);
        let d: Vec<f64> = forward_diffuse_closed(&x, 5, &s, &zero).unwrap().to_vec1().unwrap();
        assert!((d[2] - s.alpha_bar(5).sqrt()).abs() < 1e-15);
        assert!(forward_diffuse_step(&x, 0, &s, &n).is_err());
        assert!(forward_diffuse_closed(&x, 11, &s, &n).is_err());
        assert!(forward_diffuse_closed(&x, 1, &s, &Tensor::zeros(2, candle_core::DType::F64, &dev).unwrap()).is_err());
    }
}
