//! Training objectives on `(B, 3, H, W)` tensors, all mean-reduced.
//!
//! Spatial: structural reconstruction, edge-aware smoothness of the
//! illumination map, and per-pixel colour angle. Temporal: bidirectional
//! consistency between enhancing-then-warping and warping-then-enhancing.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::flow::{masks_to_tensor, warp_tensor, FlowField};
use crate::imgcore::{frame_to_tensor, Frame};
use crate::ops::{atan, safe_sqrt};
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Pixels whose colour vector is shorter than this have no defined hue.
pub const COLOR_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Reconstruction.
    pub lambda1: f64,
    /// Illumination smoothness.
    pub lambda2: f64,
    /// Colour angle.
    pub lambda3: f64,
    /// Temporal consistency (fine-tuning phase only).
    pub lambda_t: f64,
    /// Edge sensitivity of the smoothness weights.
    pub lambda_g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.2,
            lambda3: 0.1,
            lambda_t: 1.0,
            lambda_g: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda_t, self.lambda_g];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")))
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    a.dims4()?;
    Ok(())
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        *t = (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|v| v / sum)
}

/// `(n, n)` banded matrix applying the Gaussian window along one axis with
/// zero padding; symmetric.
fn band_matrix(n: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let taps = gaussian_taps();
    let r = SSIM_WINDOW / 2;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in i.saturating_sub(r)..(i + r + 1).min(n) {
            m[i * n + j] = taps[j + r - i];
        }
    }
    Ok(Tensor::from_vec(m, (n, n), device)?.to_dtype(dtype)?)
}

/// Separable Gaussian blur of `(N, H, W)` with zero padding, as two
/// matrix products (both matrices are symmetric).
fn blur(x: &Tensor, rows: &Tensor, cols: &Tensor) -> Result<Tensor> {
    let along_w = x.broadcast_matmul(cols)?;
    let along_h = along_w.transpose(1, 2)?.contiguous()?.broadcast_matmul(rows)?;
    Ok(along_h.transpose(1, 2)?.contiguous()?)
}

/// Mean SSIM over pixels and channels with an 11x11 Gaussian window
/// (sigma 1.5) and dynamic range 1. Near borders the window is truncated to
/// the image and renormalised.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b)?;
    let (n, c, h, w) = a.dims4()?;
    let rows = band_matrix(h, a.dtype(), a.device())?;
    let cols = band_matrix(w, a.dtype(), a.device())?;
    let a = a.reshape((n * c, h, w))?;
    let b = b.reshape((n * c, h, w))?;
    let k = n * c;
    let stacked = Tensor::cat(&[&a, &b, &a.sqr()?, &b.sqr()?, &(&a * &b)?], 0)?;
    let norm = blur(&Tensor::ones((1, h, w), a.dtype(), a.device())?, &rows, &cols)?;
    let m = blur(&stacked, &rows, &cols)?.broadcast_div(&norm)?;
    let (mu_a, mu_b) = (m.narrow(0, 0, k)?, m.narrow(0, k, k)?);
    let (aa, bb, ab) = (m.narrow(0, 2 * k, k)?, m.narrow(0, 3 * k, k)?, m.narrow(0, 4 * k, k)?);
    let var_a = (aa - mu_a.sqr()?)?;
    let var_b = (bb - mu_b.sqr()?)?;
    let cov = (ab - (&mu_a * &mu_b)?)?;
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let num = (((&mu_a * &mu_b)? * 2.0)? + c1)?.mul(&((cov * 2.0)? + c2)?)?;
    let den = ((mu_a.sqr()? + mu_b.sqr()?)? + c1)?.mul(&((var_a + var_b)? + c2)?)?;
    Ok((num / den)?.mean_all()?)
}

/// `0.85 (1 - SSIM) + 0.15 mean|a - b|`.
pub fn recon_loss(ihat: &Tensor, igt: &Tensor) -> Result<Tensor> {
    let s = ssim(ihat, igt)?;
    let l1 = (ihat - igt)?.abs()?.mean_all()?;
    Ok((((1.0 - s)? * 0.85)? + (l1 * 0.15)?)?)
}

/// Forward differences over the `(H-1) x (W-1)` grid where both exist.
fn forward_diffs(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, _, h, w) = x.dims4()?;
    let base = x.narrow(2, 0, h - 1)?.narrow(3, 0, w - 1)?;
    let dx = (x.narrow(2, 0, h - 1)?.narrow(3, 1, w - 1)? - &base)?;
    let dy = (x.narrow(2, 1, h - 1)?.narrow(3, 0, w - 1)? - &base)?;
    Ok((dx, dy))
}

/// Edge-aware smoothness of the illumination map:
/// `mean_j w_j ||grad S_j||_2` per channel, with
/// `w_j = exp(-lambda_g * ||grad guide_j||_1)` from the (non-differentiated)
/// guide image.
pub fn smooth_loss(s: &Tensor, guide: &Tensor, lambda_g: f64) -> Result<Tensor> {
    let (_, _, h, w) = s.dims4()?;
    let (gn, _, gh, gw) = guide.dims4()?;
    if (gh, gw) != (h, w) || gn != s.dim(0)? {
        return Err(Error::Shape(format!("map {:?} vs guide {:?}", s.dims(), guide.dims())));
    }
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("smoothness needs at least 2x2, got {h}x{w}")));
    }
    let (dx, dy) = forward_diffs(s)?;
    let mag = safe_sqrt(&(dx.sqr()? + dy.sqr()?)?)?;
    let (gx, gy) = forward_diffs(&guide.detach())?;
    let edge = (gx.abs()? + gy.abs()?)?.sum_keepdim(1)?;
    let weight = (edge * -lambda_g)?.exp()?;
    Ok(mag.broadcast_mul(&weight)?.mean_all()?)
}

/// Mean angle between per-pixel colour vectors. Pixels where either vector
/// is shorter than [`COLOR_NORM_EPS`] contribute zero.
///
/// The angle is evaluated as `2 atan(|a^ - b^| / |a^ + b^|)` on the unit
/// vectors, which equals `acos` of the clamped cosine but stays exact for
/// parallel vectors. The denominator floor only matters for masked pixels
/// where both colours are black, keeping the quotient at 0 in f32.
pub fn color_loss(ihat: &Tensor, igt: &Tensor) -> Result<Tensor> {
    same_shape(ihat, igt)?;
    let norm = |x: &Tensor| -> Result<Tensor> { Ok(safe_sqrt(&x.sqr()?.sum_keepdim(1)?)?) };
    let (na, nb) = (norm(ihat)?, norm(igt)?);
    let valid = na.ge(COLOR_NORM_EPS)?.mul(&nb.ge(COLOR_NORM_EPS)?)?;
    let valid_f = valid.to_dtype(ihat.dtype())?;
    let safe = |n: &Tensor| -> Result<Tensor> { Ok(valid.where_cond(n, &n.ones_like()?)?) };
    let ua = ihat.broadcast_div(&safe(&na)?)?;
    let ub = igt.broadcast_div(&safe(&nb)?)?;
    let diff = norm(&(&ua - &ub)?)?;
    let sum = norm(&(&ua + &ub)?)?.maximum(1e-12)?;
    let angle = (atan(&(diff / sum)?)? * 2.0)?;
    Ok(angle.mul(&valid_f)?.mean_all()?)
}

/// Spatial objective components and their weighted total.
#[derive(Clone, Debug)]
pub struct SpatialLoss {
    pub l_r: Tensor,
    pub l_sm: Tensor,
    pub l_c: Tensor,
    pub total: Tensor,
}

/// `lambda1 L_r + lambda2 L_sm + lambda3 L_c`; `guide` is the enhancer input.
pub fn spatial_loss(ihat: &Tensor, igt: &Tensor, s: &Tensor, guide: &Tensor, w: &LossWeights) -> Result<SpatialLoss> {
    let l_r = recon_loss(ihat, igt)?;
    let l_sm = smooth_loss(s, guide, w.lambda_g)?;
    let l_c = color_loss(ihat, igt)?;
    let total = (((&l_r * w.lambda1)? + (&l_sm * w.lambda2)?)? + (&l_c * w.lambda3)?)?;
    Ok(SpatialLoss { l_r, l_sm, l_c, total })
}

/// Masked mean squared difference between `W(f(x), u)` and the enhancer
/// output on the already-warped input, `f_of_warped = f(W(x, u))`.
pub fn flow_consistency_from_outputs(f_x: &Tensor, f_of_warped: &Tensor, flows: &[&FlowField]) -> Result<Tensor> {
    same_shape(f_x, f_of_warped)?;
    let (warped, masks) = warp_tensor(f_x, flows)?;
    let mask = masks_to_tensor(&masks, f_x.dtype(), f_x.device())?;
    let valid: usize = masks.iter().map(|m| m.count()).sum();
    if valid == 0 {
        return Ok(Tensor::zeros((), f_x.dtype(), f_x.device())?);
    }
    let sq = (warped - f_of_warped)?.sqr()?.broadcast_mul(&mask)?;
    let c = f_x.dim(1)?;
    Ok((sq.sum_all()? / (valid * c) as f64)?)
}

/// `|| W(f(x_t), u_back) - f(W(x_t, u_back)) ||^2`, mean over valid pixels
/// and channels. `u_back` is `U_{t+1,t}`, one field per batch element.
pub fn flow_consistency_loss(
    f: &dyn Fn(&Tensor) -> Result<Tensor>,
    x_t: &Tensor,
    u_back: &[&FlowField],
) -> Result<Tensor> {
    let (wx, _) = warp_tensor(x_t, u_back)?;
    flow_consistency_from_outputs(&f(x_t)?, &f(&wx)?, u_back)
}

/// Average of the two directional consistency losses: `x_t` moved by
/// `U_{t+1,t}` and `x_{t+1}` moved by `U_{t,t+1}`.
pub fn temporal_loss(
    f: &dyn Fn(&Tensor) -> Result<Tensor>,
    x_t: &Tensor,
    x_tp1: &Tensor,
    u_fwd: &[&FlowField],
    u_back: &[&FlowField],
) -> Result<Tensor> {
    let a = flow_consistency_loss(f, x_t, u_back)?;
    let b = flow_consistency_loss(f, x_tp1, u_fwd)?;
    Ok(((a + b)? * 0.5)?)
}

/// SSIM of two frames, as a plain number.
pub fn frame_ssim(a: &Frame, b: &Frame) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let ta = frame_to_tensor(a, DType::F64, &Device::Cpu)?;
    let tb = frame_to_tensor(b, DType::F64, &Device::Cpu)?;
    Ok(ssim(&ta, &tb)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> Tensor {
        let mut v = Vec::new();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    v.push(f(c, y, x));
                }
            }
        }
        Tensor::from_vec(v, (1, 3, h, w), &Device::Cpu).unwrap()
    }

    fn scalar(x: Tensor) -> f64 {
        x.to_scalar::<f64>().unwrap()
    }

    fn random(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..3 * h * w).map(|_| rng.random()).collect();
        Tensor::from_vec(v, (1, 3, h, w), &Device::Cpu).unwrap()
    }

    /// Direct windowed sums, no separability.
    fn naive_ssim(a: &[f64], b: &[f64], c: usize, h: usize, w: usize) -> f64 {
        let r = 5isize;
        let g = |d: isize| (-(d * d) as f64 / (2.0 * 1.5 * 1.5)).exp();
        let (c1, c2) = (1e-4, 9e-4);
        let mut total = 0.0;
        for ch in 0..c {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let (mut ws, mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (yy, xx) = (y + dy, x + dx);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let k = g(dy) * g(dx);
                            let i = (ch * h + yy as usize) * w + xx as usize;
                            ws += k;
                            ma += k * a[i];
                            mb += k * b[i];
                            aa += k * a[i] * a[i];
                            bb += k * b[i] * b[i];
                            ab += k * a[i] * b[i];
                        }
                    }
                    let (ma, mb) = (ma / ws, mb / ws);
                    let (va, vb, cov) = (aa / ws - ma * ma, bb / ws - mb * mb, ab / ws - ma * mb);
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                }
            }
        }
        total / (c * h * w) as f64
    }

    #[test]
    fn ssim_identities_and_oracle() {
        let a = random(13, 17, 1);
        let b = random(13, 17, 2);
        assert!((scalar(ssim(&a, &a).unwrap()) - 1.0).abs() < 1e-12);
        assert_eq!(scalar(ssim(&a, &b).unwrap()), scalar(ssim(&b, &a).unwrap()));
        let va: Vec<f64> = a.flatten_all().unwrap().to_vec1().unwrap();
        let vb: Vec<f64> = b.flatten_all().unwrap().to_vec1().unwrap();
        let want = naive_ssim(&va, &vb, 3, 13, 17);
        assert!((scalar(ssim(&a, &b).unwrap()) - want).abs() < 1e-10);
        assert!(ssim(&a, &random(13, 16, 3)).is_err());
    }

    #[test]
    fn recon_constant_images() {
        let z = t(8, 8, |_, _, _| 0.0);
        let o = t(8, 8, |_, _, _| 1.0);
        assert_eq!(scalar(recon_loss(&z, &z).unwrap()), 0.0);
        let s = 1e-4 / (1.0 + 1e-4);
        let l = scalar(recon_loss(&z, &o).unwrap());
        assert!((l - (0.85 * (1.0 - s) + 0.15)).abs() < 1e-12, "{l}");
    }

    #[test]
    fn smooth_examples() {
        let guide = random(8, 8, 4);
        let flat = t(8, 8, |_, _, _| 0.7);
        assert_eq!(scalar(smooth_loss(&flat, &guide, 10.0).unwrap()), 0.0);
        let ramp = t(8, 8, |_, _, x| 0.1 * x as f64);
        assert!((scalar(smooth_loss(&ramp, &guide, 0.0).unwrap()) - 0.1).abs() < 1e-12);
        // An S edge coinciding with a sharper guide edge costs less.
        let s_edge = t(8, 8, |_, _, x| if x < 4 { 0.2 } else { 0.8 });
        let soft = t(8, 8, |_, _, x| if x < 4 { 0.4 } else { 0.5 });
        let hard = t(8, 8, |_, _, x| if x < 4 { 0.1 } else { 0.9 });
        let l_soft = scalar(smooth_loss(&s_edge, &soft, 10.0).unwrap());
        let l_hard = scalar(smooth_loss(&s_edge, &hard, 10.0).unwrap());
        assert!(l_hard < l_soft);
    }

    #[test]
    fn color_examples() {
        let a = random(8, 8, 5);
        assert_eq!(scalar(color_loss(&a, &a).unwrap()), 0.0);
        let r = t(1, 1, |c, _, _| if c == 0 { 1.0 } else { 0.0 });
        let g = t(1, 1, |c, _, _| if c == 1 { 1.0 } else { 0.0 });
        assert!((scalar(color_loss(&r, &g).unwrap()) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let p = t(1, 1, |c, _, _| [0.2, 0.4, 0.2][c]);
        let q = t(1, 1, |c, _, _| [0.1, 0.2, 0.1][c]);
        assert_eq!(scalar(color_loss(&p, &q).unwrap()), 0.0);
        let black = t(1, 1, |_, _, _| 0.0);
        assert_eq!(scalar(color_loss(&black, &r).unwrap()), 0.0);
        // Black in both images, in f32, with a gradient.
        let both_black = candle_core::Var::from_tensor(&black.to_dtype(DType::F32).unwrap()).unwrap();
        let l = color_loss(both_black.as_tensor(), &black.to_dtype(DType::F32).unwrap()).unwrap();
        assert_eq!(l.to_scalar::<f32>().unwrap(), 0.0);
        let g = l.backward().unwrap();
        let g: Vec<f32> = g.get(&both_black).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
        let scaled = (&a * 3.7).unwrap();
        let b = random(8, 8, 6);
        let d = scalar(color_loss(&scaled, &b).unwrap()) - scalar(color_loss(&a, &b).unwrap());
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn spatial_weighting() {
        let a = random(8, 8, 7);
        let b = random(8, 8, 8);
        let s = random(8, 8, 9);
        let zero = LossWeights { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, ..LossWeights::default() };
        assert_eq!(scalar(spatial_loss(&a, &b, &s, &a, &zero).unwrap().total), 0.0);
        let flat = t(8, 8, |_, _, _| 1.0);
        assert_eq!(scalar(spatial_loss(&a, &a, &flat, &a, &LossWeights::default()).unwrap().total), 0.0);
        let w = LossWeights::default();
        let one = spatial_loss(&a, &b, &s, &a, &w).unwrap();
        let two = spatial_loss(&a, &b, &s, &a, &LossWeights { lambda1: 2.0, ..w }).unwrap();
        let diff = scalar(two.total) - scalar(one.total.clone());
        assert!((diff - scalar(one.l_r)).abs() < 1e-12);
    }

    #[test]
    fn flow_consistency_cases() {
        let x = random(8, 8, 10);
        let flow = FlowField::constant(8, 8, 1.0, -1.0).unwrap();
        let id = |t: &Tensor| -> Result<Tensor> { Ok(t.clone()) };
        assert_eq!(scalar(flow_consistency_loss(&id, &x, &[&flow]).unwrap()), 0.0);
        let gain = |t: &Tensor| -> Result<Tensor> { Ok((t * 1.7)?) };
        let frac = FlowField::constant(8, 8, 0.5, 0.25).unwrap();
        assert!(scalar(flow_consistency_loss(&gain, &x, &[&frac]).unwrap()) < 1e-24);
        let ramp = t(8, 8, |_, _, xx| 0.5 + 0.1 * xx as f64);
        let vary = move |t: &Tensor| -> Result<Tensor> { Ok(t.mul(&ramp)?) };
        assert!(scalar(flow_consistency_loss(&vary, &x, &[&flow]).unwrap()) > 0.0);
    }
}
