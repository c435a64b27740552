//! Elementwise tensor ops missing from candle or with derivatives that are
//! singular at points the losses actually visit (`sqrt` at zero reports a zero
//! subgradient here).

use candle_core::cpu_backend::unary_map;
use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

fn map_float(
    name: &'static str,
    storage: &CpuStorage,
    layout: &Layout,
    f: fn(f64) -> f64,
) -> candle_core::Result<(CpuStorage, Shape)> {
    let out = match storage {
        CpuStorage::F32(vs) => CpuStorage::F32(unary_map(vs, layout, |v| f(v as f64) as f32)),
        CpuStorage::F64(vs) => CpuStorage::F64(unary_map(vs, layout, f)),
        _ => return Err(candle_core::Error::UnsupportedDTypeForOp(storage.dtype(), name)),
    };
    Ok((out, layout.shape().clone()))
}

struct Atan;

impl CustomOp1 for Atan {
    fn name(&self) -> &'static str {
        "atan"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        map_float(self.name(), storage, layout, f64::atan)
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let d = (arg.sqr()? + 1.0)?.recip()?;
        Ok(Some((grad_res * d)?))
    }
}

struct SafeSqrt;

impl CustomOp1 for SafeSqrt {
    fn name(&self) -> &'static str {
        "safe-sqrt"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        map_float(self.name(), storage, layout, |v| v.max(0.0).sqrt())
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let pos = res.gt(0.0)?;
        let safe = pos.where_cond(res, &res.ones_like()?)?;
        let d = (safe.recip()? * 0.5)?;
        let d = pos.where_cond(&d, &d.zeros_like()?)?;
        Ok(Some((grad_res * d)?))
    }
}

pub fn atan(x: &Tensor) -> candle_core::Result<Tensor> {
    x.apply_op1(Atan)
}

/// `sqrt(max(x, 0))` with a zero gradient at zero.
pub fn safe_sqrt(x: &Tensor) -> candle_core::Result<Tensor> {
    x.apply_op1(SafeSqrt)
}

/// `ln(1 + e^x)` computed without overflow.
pub fn softplus(x: &Tensor) -> candle_core::Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    x.relu()? + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn grad_of(f: impl Fn(&Tensor) -> candle_core::Result<Tensor>, xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let v = Var::from_vec(xs.to_vec(), xs.len(), &Device::Cpu).unwrap();
        let y = f(v.as_tensor()).unwrap();
        let g = y.sum_all().unwrap().backward().unwrap();
        (
            y.to_vec1().unwrap(),
            g.get(v.as_tensor()).unwrap().to_vec1().unwrap(),
        )
    }

    #[test]
    fn atan_values_and_gradient() {
        let (y, g) = grad_of(atan, &[0.0, 1.0, -2.0, f64::INFINITY]);
        assert_eq!(y[0], 0.0);
        assert!((y[1] - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert_eq!(y[3], std::f64::consts::FRAC_PI_2);
        assert_eq!(&g[..3], &[1.0, 0.5, 0.2]);
    }

    #[test]
    fn sqrt_values_and_gradient() {
        let (y, g) = grad_of(safe_sqrt, &[0.0, 4.0, 0.25]);
        assert_eq!(y, vec![0.0, 2.0, 0.5]);
        assert_eq!(g, vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn softplus_is_stable() {
        let x = Tensor::new(&[-800.0f64, -1.0, 0.0, 1.0, 800.0], &Device::Cpu).unwrap();
        let y: Vec<f64> = softplus(&x).unwrap().to_vec1().unwrap();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((y[2] - 2f64.ln()).abs() < 1e-12);
        assert!((y[3] - (1.0 + 1f64.exp()).ln()).abs() < 1e-12);
        assert_eq!(y[4], 800.0);
    }
}
