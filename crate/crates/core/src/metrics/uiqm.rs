//! UIQM and its colourfulness, sharpness and contrast components, on the
//! 0-255 intensity scale. Blocks are 8x8; partial blocks at the right and
//! bottom borders are dropped.

use crate::imgcore::Frame;
use crate::{Error, Result};

pub const UIQM_COEFFS: [f64; 3] = [0.0282, 0.2953, 3.5753];
pub const BLOCK: usize = 8;
const TRIM: f64 = 0.1;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn scaled_channel(frame: &Frame, c: usize) -> Vec<f64> {
    frame.channel(c).into_iter().map(|v| v * 255.0).collect()
}

fn check_blocks(frame: &Frame) -> Result<(usize, usize)> {
    let (h, w) = frame.dims();
    if h < BLOCK || w < BLOCK {
        return Err(Error::Parameter(format!("frame {h}x{w} is smaller than one {BLOCK}x{BLOCK} block")));
    }
    Ok((h / BLOCK, w / BLOCK))
}

/// Mean after discarding `ceil(0.1 K)` smallest and `floor(0.1 K)` largest.
fn trimmed_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let lo = (TRIM * k as f64).ceil() as usize;
    let hi = (TRIM * k as f64).floor() as usize;
    if lo + hi >= k {
        return v[k / 2];
    }
    v[lo..k - hi].iter().sum::<f64>() / (k - lo - hi) as f64
}

fn spread(v: &[f64], mu: f64) -> f64 {
    v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64
}

/// Colourfulness from trimmed statistics of the opponent channels
/// `R - G` and `(R + G) / 2 - B`.
pub fn uicm(frame: &Frame) -> f64 {
    let (r, g, b) = (scaled_channel(frame, 0), scaled_channel(frame, 1), scaled_channel(frame, 2));
    let rg: Vec<f64> = r.iter().zip(&g).map(|(r, g)| r - g).collect();
    let yb: Vec<f64> = r.iter().zip(&g).zip(&b).map(|((r, g), b)| (r + g) / 2.0 - b).collect();
    let (mu_rg, mu_yb) = (trimmed_mean(rg.clone()), trimmed_mean(yb.clone()));
    let s2 = spread(&rg, mu_rg) + spread(&yb, mu_yb);
    -0.0268 * mu_rg.hypot(mu_yb) + 0.1586 * s2.sqrt()
}

/// Index into a row or column with half-sample symmetric reflection.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Sobel gradient magnitude rescaled so its maximum is 255 (all zeros for a
/// flat channel).
fn sobel_magnitude(v: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| v[reflect(y, h) * w + reflect(x, w)];
    let mut mag = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            mag.push(gx.hypot(gy));
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        let s = 255.0 / max;
        mag.iter_mut().for_each(|m| *m *= s);
    }
    mag
}

/// Visits every whole block; `f` receives an iterator over its values.
fn for_blocks(h: usize, w: usize, mut f: impl FnMut(&mut dyn Iterator<Item = usize>)) {
    for by in 0..h / BLOCK {
        for bx in 0..w / BLOCK {
            let mut it = (0..BLOCK).flat_map(move |dy| (0..BLOCK).map(move |dx| (by * BLOCK + dy) * w + bx * BLOCK + dx));
            f(&mut it);
        }
    }
}

fn eme(v: &[f64], h: usize, w: usize) -> f64 {
    let (k2, k1) = (h / BLOCK, w / BLOCK);
    let mut sum = 0.0;
    for_blocks(h, w, |it| {
        let (mut mx, mut mn) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in it {
            mx = mx.max(v[i]);
            mn = mn.min(v[i]);
        }
        if mn > 0.0 && mx > 0.0 {
            sum += (mx / mn).ln();
        }
    });
    2.0 / (k1 * k2) as f64 * sum
}

/// Sharpness: luma-weighted block EME of each channel's Sobel edge map
/// multiplied by the channel itself.
pub fn uism(frame: &Frame) -> Result<f64> {
    check_blocks(frame)?;
    let (h, w) = frame.dims();
    let mut total = 0.0;
    for (c, wt) in LUMA.iter().enumerate() {
        let ch = scaled_channel(frame, c);
        let edges: Vec<f64> = sobel_magnitude(&ch, h, w).iter().zip(&ch).map(|(m, v)| m * v).collect();
        total += wt * eme(&edges, h, w);
    }
    Ok(total)
}

/// Contrast: negated mean over blocks of `r ln r` with the Michelson-style
/// ratio `r = (max - min) / (max + min)` taken over all three channels.
pub fn uiconm(frame: &Frame) -> Result<f64> {
    let (k2, k1) = check_blocks(frame)?;
    let (h, w) = frame.dims();
    let data = frame.data();
    let mut sum = 0.0;
    for_blocks(h, w, |it| {
        let (mut mx, mut mn) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in it {
            for c in 0..3 {
                let v = data[i * 3 + c] as f64 * 255.0;
                mx = mx.max(v);
                mn = mn.min(v);
            }
        }
        let (top, bot) = (mx - mn, mx + mn);
        if top > 0.0 && bot > 0.0 {
            let r = top / bot;
            sum += r * r.ln();
        }
    });
    Ok(-sum / (k1 * k2) as f64)
}

/// `c1 UICM + c2 UISM + c3 UIConM`.
pub fn uiqm_from_components(uicm: f64, uism: f64, uiconm: f64) -> f64 {
    let [c1, c2, c3] = UIQM_COEFFS;
    c1 * uicm + c2 * uism + c3 * uiconm
}

pub fn uiqm(frame: &Frame) -> Result<f64> {
    Ok(uiqm_from_components(uicm(frame), uism(frame)?, uiconm(frame)?))
}
