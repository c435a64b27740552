//! Horn–Schunck variational optical flow.
//!
//! Frames are converted to Rec. 601 luma scaled to `[0, 255]`, derivatives use
//! the 2x2x2 cube stencils, and the flow is refined with Jacobi sweeps. Frames
//! larger than [`SINGLE_SCALE_MAX`] on either side are solved coarse-to-fine.

use super::field::FlowField;
use crate::imgcore::Frame;
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 15.0;
pub const DEFAULT_ITERS: usize = 100;
pub const SINGLE_SCALE_MAX: usize = 128;
pub const PYRAMID_LEVELS: usize = 3;

#[derive(Clone, Debug)]
struct Gray {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Gray {
    fn from_frame(f: &Frame) -> Self {
        Self {
            h: f.height(),
            w: f.width(),
            v: f.luma().into_iter().map(|l| l * 255.0).collect(),
        }
    }

    #[inline]
    fn at(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.v[y * self.w + x]
    }

    fn half(&self) -> Gray {
        let h = self.h.div_ceil(2);
        let w = self.w.div_ceil(2);
        let mut v = Vec::with_capacity(h * w);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (y0, x0) = (2 * y, 2 * x);
                v.push(0.25 * (self.at(y0, x0) + self.at(y0, x0 + 1) + self.at(y0 + 1, x0) + self.at(y0 + 1, x0 + 1)));
            }
        }
        Gray { h, w, v }
    }

    /// Backward bilinear warp by `(u, v)`, border-clamped.
    fn warped(&self, u: &[f64], v: &[f64]) -> Gray {
        let mut out = Vec::with_capacity(self.v.len());
        for y in 0..self.h {
            for x in 0..self.w {
                let i = y * self.w + x;
                let sx = (x as f64 + u[i]).clamp(0.0, (self.w - 1) as f64);
                let sy = (y as f64 + v[i]).clamp(0.0, (self.h - 1) as f64);
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as isize, y0 as isize);
                let val = (1.0 - fx) * (1.0 - fy) * self.at(y0, x0)
                    + fx * (1.0 - fy) * self.at(y0, x0 + 1)
                    + (1.0 - fx) * fy * self.at(y0 + 1, x0)
                    + fx * fy * self.at(y0 + 1, x0 + 1);
                out.push(val);
            }
        }
        Gray {
            h: self.h,
            w: self.w,
            v: out,
        }
    }
}

/// Flow `U_{a,b}` such that `a(p) ≈ b(p + U(p))`.
///
/// Uses a single scale up to [`SINGLE_SCALE_MAX`] pixels and a
/// [`PYRAMID_LEVELS`]-level pyramid above that.
pub fn horn_schunck(a: &Frame, b: &Frame, alpha: f64, iters: usize) -> Result<FlowField> {
    let levels = if a.height().max(a.width()) <= SINGLE_SCALE_MAX {
        1
    } else {
        PYRAMID_LEVELS
    };
    horn_schunck_pyramid(a, b, alpha, iters, levels)
}

pub fn horn_schunck_pyramid(a: &Frame, b: &Frame, alpha: f64, iters: usize, levels: usize) -> Result<FlowField> {
    a.ensure_same_shape(b)?;
    if !(alpha > 0.0) || levels == 0 {
        return Err(Error::Parameter(format!("alpha must be > 0 and levels >= 1 (alpha={alpha}, levels={levels})")));
    }
    let mut pyr_a = vec![Gray::from_frame(a)];
    let mut pyr_b = vec![Gray::from_frame(b)];
    for _ in 1..levels {
        let (na, nb) = (pyr_a.last().unwrap().half(), pyr_b.last().unwrap().half());
        if na.h < 4 || na.w < 4 {
            break;
        }
        pyr_a.push(na);
        pyr_b.push(nb);
    }

    let coarsest = pyr_a.last().unwrap();
    let mut u = vec![0.0; coarsest.h * coarsest.w];
    let mut v = vec![0.0; coarsest.h * coarsest.w];
    for level in (0..pyr_a.len()).rev() {
        let (ga, gb) = (&pyr_a[level], &pyr_b[level]);
        if u.len() != ga.h * ga.w {
            (u, v) = upsample_flow(&u, &v, &pyr_a[level + 1], ga);
        }
        let gb = if level + 1 == pyr_a.len() { gb.clone() } else { gb.warped(&u, &v) };
        let (du, dv) = solve(ga, &gb, alpha, iters);
        for i in 0..u.len() {
            u[i] += du[i];
            v[i] += dv[i];
        }
    }

    let limit = a.height().max(a.width()) as f64;
    let mut data = Vec::with_capacity(u.len() * 2);
    for (uu, vv) in u.iter().zip(&v) {
        let mag = uu.hypot(*vv);
        let s = if mag > limit { limit / mag } else { 1.0 };
        data.push((uu * s) as f32);
        data.push((vv * s) as f32);
    }
    FlowField::new(a.height(), a.width(), data)
}

fn upsample_flow(u: &[f64], v: &[f64], coarse: &Gray, fine: &Gray) -> (Vec<f64>, Vec<f64>) {
    let mut nu = Vec::with_capacity(fine.h * fine.w);
    let mut nv = Vec::with_capacity(fine.h * fine.w);
    for y in 0..fine.h {
        for x in 0..fine.w {
            let i = (y / 2).min(coarse.h - 1) * coarse.w + (x / 2).min(coarse.w - 1);
            nu.push(2.0 * u[i]);
            nv.push(2.0 * v[i]);
        }
    }
    (nu, nv)
}

fn solve(a: &Gray, b: &Gray, alpha: f64, iters: usize) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (a.h, a.w);
    let n = h * w;
    let mut ex = vec![0.0; n];
    let mut ey = vec![0.0; n];
    let mut et = vec![0.0; n];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            ex[i] = 0.25
                * (a.at(y, x + 1) - a.at(y, x) + a.at(y + 1, x + 1) - a.at(y + 1, x) + b.at(y, x + 1) - b.at(y, x)
                    + b.at(y + 1, x + 1)
                    - b.at(y + 1, x));
            ey[i] = 0.25
                * (a.at(y + 1, x) - a.at(y, x) + a.at(y + 1, x + 1) - a.at(y, x + 1) + b.at(y + 1, x) - b.at(y, x)
                    + b.at(y + 1, x + 1)
                    - b.at(y, x + 1));
            et[i] = 0.25
                * (b.at(y, x) - a.at(y, x) + b.at(y + 1, x) - a.at(y + 1, x) + b.at(y, x + 1) - a.at(y, x + 1)
                    + b.at(y + 1, x + 1)
                    - a.at(y + 1, x + 1));
        }
    }

    let alpha2 = alpha * alpha;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut nu = vec![0.0; n];
    let mut nv = vec![0.0; n];
    let idx = |y: isize, x: isize| -> usize {
        y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize
    };
    for _ in 0..iters {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let avg = |f: &[f64]| {
                    (f[idx(y - 1, x)] + f[idx(y + 1, x)] + f[idx(y, x - 1)] + f[idx(y, x + 1)]) / 6.0
                        + (f[idx(y - 1, x - 1)] + f[idx(y - 1, x + 1)] + f[idx(y + 1, x - 1)] + f[idx(y + 1, x + 1)])
                            / 12.0
                };
                let i = y as usize * w + x as usize;
                let (ub, vb) = (avg(&u), avg(&v));
                let k = (ex[i] * ub + ey[i] * vb + et[i]) / (alpha2 + ex[i] * ex[i] + ey[i] * ey[i]);
                nu[i] = ub - ex[i] * k;
                nv[i] = vb - ey[i] * k;
            }
        }
        std::mem::swap(&mut u, &mut nu);
        std::mem::swap(&mut v, &mut nv);
    }
    (u, v)
}
