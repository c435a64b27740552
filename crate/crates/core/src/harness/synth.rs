//! Synthetic underwater data: procedural clean scenes, depth fields, water
//! parameter sampling, degraded pairs, and videos made by sliding a camera
//! window over a larger scene so the true flow is known exactly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{PairedSample, VideoData};
use crate::flow::FlowField;
use crate::imgcore::io::list_frames;
use crate::imgcore::{load_frame, DepthMap, Frame};
use crate::physics::{synth_degrade, WaterParams};
use crate::{Error, Result};

/// Per-channel `[lo, hi]` sampling ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterRanges {
    pub binf: [[f64; 2]; 3],
    pub beta_b: [[f64; 2]; 3],
    pub beta_d: [[f64; 2]; 3],
}

impl Default for WaterRanges {
    /// Blue-green water: red attenuates fastest, veiling light is bluish.
    fn default() -> Self {
        Self {
            binf: [[0.05, 0.2], [0.25, 0.45], [0.35, 0.6]],
            beta_b: [[0.2, 0.8], [0.2, 0.8], [0.2, 0.8]],
            beta_d: [[0.3, 0.6], [0.08, 0.2], [0.05, 0.15]],
        }
    }
}

impl WaterRanges {
    pub fn sample(&self, rng: &mut impl Rng) -> Result<WaterParams> {
        let pick = |r: &[[f64; 2]; 3], rng: &mut dyn rand::RngCore| -> [f64; 3] {
            std::array::from_fn(|c| {
                let [lo, hi] = r[c];
                if hi > lo { lo + (hi - lo) * rng.random::<f64>() } else { lo }
            })
        };
        let binf = pick(&self.binf, rng);
        let beta_b = pick(&self.beta_b, rng);
        let beta_d = pick(&self.beta_d, rng);
        WaterParams::new(binf, beta_b, beta_d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthMode {
    /// Smooth random field.
    Smooth,
    /// Linear ramp, far at the top row and near at the bottom.
    Ramp,
}

impl std::str::FromStr for DepthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(Self::Smooth),
            "ramp" => Ok(Self::Ramp),
            other => Err(Error::Parameter(format!("unknown depth mode {other:?} (smooth|ramp)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSettings {
    /// Output side length.
    pub size: usize,
    pub depth_mode: DepthMode,
    /// Depth range in meters.
    pub near: f64,
    pub far: f64,
    pub water: WaterRanges,
    pub seed: u64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            size: 64,
            depth_mode: DepthMode::Smooth,
            near: 0.5,
            far: 8.0,
            water: WaterRanges::default(),
            seed: 0,
        }
    }
}

/// Multi-octave value noise in `[0, 1]` with smoothstep interpolation.
/// `cell` is the coarsest lattice spacing in pixels.
pub fn value_noise(h: usize, w: usize, cell: f64, octaves: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let mut amp = 1.0;
    let mut total = 0.0;
    let mut spacing = cell.max(1.0);
    for _ in 0..octaves.max(1) {
        let gh = (h as f64 / spacing).ceil() as usize + 2;
        let gw = (w as f64 / spacing).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random()).collect();
        for y in 0..h {
            let fy = y as f64 / spacing;
            let (y0, ty) = (fy.floor() as usize, fy.fract());
            let sy = ty * ty * (3.0 - 2.0 * ty);
            for x in 0..w {
                let fx = x as f64 / spacing;
                let (x0, tx) = (fx.floor() as usize, fx.fract());
                let sx = tx * tx * (3.0 - 2.0 * tx);
                let at = |yy: usize, xx: usize| lattice[yy * gw + xx];
                let top = at(y0, x0) * (1.0 - sx) + at(y0, x0 + 1) * sx;
                let bot = at(y0 + 1, x0) * (1.0 - sx) + at(y0 + 1, x0 + 1) * sx;
                out[y * w + x] += amp * (top * (1.0 - sy) + bot * sy);
            }
        }
        total += amp;
        amp *= 0.5;
        spacing = (spacing / 2.0).max(1.0);
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// A clean scene: smooth coloured background, a few flat shapes, fine
/// texture and scattered near-black shadow specks.
pub fn procedural_scene(h: usize, w: usize, rng: &mut impl Rng) -> Frame {
    let cell = (h.min(w) as f64 / 3.0).max(2.0);
    let base: Vec<Vec<f64>> = (0..3).map(|_| value_noise(h, w, cell, 3, rng)).collect();
    let texture = value_noise(h, w, 3.0, 2, rng);
    let tint: [f64; 3] = std::array::from_fn(|_| 0.3 + 0.5 * rng.random::<f64>());
    let mut data = vec![0f32; h * w * 3];
    for p in 0..h * w {
        for c in 0..3 {
            let v = tint[c] * (0.4 + 0.9 * base[c][p]) + 0.15 * (texture[p] - 0.5);
            data[p * 3 + c] = v as f32;
        }
    }
    let shapes = 3 + rng.random_range(0..4);
    for _ in 0..shapes {
        let colour: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let r = rng.random_range(0.05..0.2) * h.min(w) as f64 + 1.0;
        let disk = rng.random::<bool>();
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let inside = if disk { dy * dy + dx * dx <= r * r } else { dy.abs() <= r && dx.abs() <= r * 0.6 };
                if inside {
                    data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&colour);
                }
            }
        }
    }
    let specks = (h * w) / 40 + 1;
    for _ in 0..specks {
        let p = rng.random_range(0..h * w);
        let v = rng.random_range(0.0..0.02f32);
        data[p * 3..p * 3 + 3].copy_from_slice(&[v; 3]);
    }
    Frame::from_clamped(h, w, data).expect("positive scene size")
}

/// Depth in `[near, far]` meters.
pub fn depth_field(h: usize, w: usize, mode: DepthMode, near: f64, far: f64, rng: &mut impl Rng) -> Result<DepthMap> {
    if !(near > 0.0 && far >= near) {
        return Err(Error::Parameter(format!("depth range must satisfy 0 < near <= far, got {near}..{far}")));
    }
    let data: Vec<f32> = match mode {
        DepthMode::Smooth => {
            let n = value_noise(h, w, (h.min(w) as f64 / 2.0).max(2.0), 2, rng);
            let (lo, hi) = n.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let span = (hi - lo).max(1e-12);
            n.iter().map(|v| (near + (far - near) * (v - lo) / span) as f32).collect()
        }
        DepthMode::Ramp => (0..h * w)
            .map(|i| {
                let t = if h > 1 { (i / w) as f64 / (h - 1) as f64 } else { 0.0 };
                (far + (near - far) * t) as f32
            })
            .collect(),
    };
    DepthMap::new(h, w, data)
}

fn clean_patch(pool: &[Frame], size: usize, rng: &mut impl Rng) -> Result<Frame> {
    if pool.is_empty() {
        return Ok(procedural_scene(size, size, rng));
    }
    let img = &pool[rng.random_range(0..pool.len())];
    let (h, w) = img.dims();
    if h < size || w < size {
        return Err(Error::Shape(format!("clean image {h}x{w} is smaller than {size}x{size}")));
    }
    img.crop(rng.random_range(0..=h - size), rng.random_range(0..=w - size), size, size)
}

/// `n` degraded/clean/depth triples, each with its own water parameters.
/// Clean content comes from `pool` (random crops) or, if empty, from the
/// procedural generator.
pub fn make_paired_samples(pool: &[Frame], n: usize, s: &SynthSettings) -> Result<(Vec<PairedSample>, Vec<WaterParams>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut samples = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let clean = clean_patch(pool, s.size, &mut rng)?;
        let depth = depth_field(s.size, s.size, s.depth_mode, s.near, s.far, &mut rng)?;
        let water = s.water.sample(&mut rng)?;
        let degraded = synth_degrade(&clean, &depth, &water)?;
        samples.push(PairedSample::new(degraded, clean, depth)?);
        params.push(water);
    }
    Ok((samples, params))
}

/// Paired dataset from clean images in `clean_dir` (procedural scenes when
/// `clean_dir` is `None`).
pub fn make_synthetic_dataset(clean_dir: Option<&Path>, n: usize, s: &SynthSettings) -> Result<(Vec<PairedSample>, Vec<WaterParams>)> {
    let pool = match clean_dir {
        Some(dir) => {
            let paths = list_frames(dir)?;
            if paths.is_empty() {
                return Err(Error::Empty(format!("no clean frames in {}", dir.display())));
            }
            paths.iter().map(load_frame).collect::<Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };
    make_paired_samples(&pool, n, s)
}

/// A video of `frames` steps whose camera moves by the integer `velocity`
/// `(dx, dy)` pixels per frame over one scene in one water body.
///
/// Both flow directions are exact: `flow_bwd[t] = U_{t+1,t} = velocity`
/// and `flow_fwd[t] = U_{t,t+1} = -velocity`. `gt` holds the clean frames.
pub fn make_synthetic_video(
    frames: usize,
    velocity: (i64, i64),
    s: &SynthSettings,
    scene: Option<&Frame>,
) -> Result<(VideoData, WaterParams)> {
    if frames == 0 {
        return Err(Error::Parameter("a video needs at least one frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let steps = (frames - 1) as i64;
    let (vx, vy) = velocity;
    let cw = s.size + (vx.unsigned_abs() * steps as u64) as usize;
    let ch = s.size + (vy.unsigned_abs() * steps as u64) as usize;
    let canvas = match scene {
        Some(f) => {
            if f.height() < ch || f.width() < cw {
                return Err(Error::Shape(format!("scene {}x{} smaller than the {ch}x{cw} canvas", f.height(), f.width())));
            }
            f.crop(0, 0, ch, cw)?
        }
        None => procedural_scene(ch, cw, &mut rng),
    };
    let depth = depth_field(ch, cw, s.depth_mode, s.near, s.far, &mut rng)?;
    let water = s.water.sample(&mut rng)?;
    let start_x = if vx < 0 { -vx * steps } else { 0 };
    let start_y = if vy < 0 { -vy * steps } else { 0 };
    let mut out = VideoData {
        frames: Vec::with_capacity(frames),
        depths: Vec::with_capacity(frames),
        gt: Some(Vec::with_capacity(frames)),
        flow_fwd: Some(Vec::new()),
        flow_bwd: Some(Vec::new()),
    };
    for t in 0..frames as i64 {
        let (top, left) = ((start_y + vy * t) as usize, (start_x + vx * t) as usize);
        let clean = canvas.crop(top, left, s.size, s.size)?;
        let d = depth.crop(top, left, s.size, s.size)?;
        out.frames.push(synth_degrade(&clean, &d, &water)?);
        out.depths.push(d);
        out.gt.as_mut().expect("set above").push(clean);
    }
    for _ in 1..frames {
        out.flow_bwd
            .as_mut()
            .expect("set above")
            .push(FlowField::constant(s.size, s.size, vx as f32, vy as f32)?);
        out.flow_fwd
            .as_mut()
            .expect("set above")
            .push(FlowField::constant(s.size, s.size, -vx as f32, -vy as f32)?);
    }
    Ok((out, water))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::warp;
    use crate::metrics::{psnr, PSNR_CAP};

    #[test]
    fn noise_and_depth_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = value_noise(20, 30, 6.0, 3, &mut rng);
        assert!(n.iter().all(|v| (0.0..=1.0).contains(v)));
        for mode in [DepthMode::Smooth, DepthMode::Ramp] {
            let d = depth_field(16, 16, mode, 1.0, 5.0, &mut rng).unwrap();
            let (lo, hi) = d.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            assert!((lo - 1.0).abs() < 1e-5 && (hi - 5.0).abs() < 1e-5);
        }
        assert!(depth_field(4, 4, DepthMode::Ramp, 0.0, 1.0, &mut rng).is_err());
        assert_eq!("ramp".parse::<DepthMode>().unwrap(), DepthMode::Ramp);
    }

    #[test]
    fn pairs_are_degraded() {
        let s = SynthSettings { size: 32, ..SynthSettings::default() };
        let (pairs, params) = make_paired_samples(&[], 4, &s).unwrap();
        assert_eq!(pairs.len(), 4);
        assert_ne!(params[0], params[1]);
        for p in &pairs {
            assert!(psnr(&p.degraded, &p.gt).unwrap() < PSNR_CAP);
        }
        let (again, _) = make_paired_samples(&[], 4, &s).unwrap();
        assert_eq!(again[3].degraded, pairs[3].degraded);
    }

    #[test]
    fn video_flow_is_exact() {
        let s = SynthSettings { size: 24, ..SynthSettings::default() };
        let (still, _) = make_synthetic_video(3, (0, 0), &s, None).unwrap();
        assert!(still.flow_bwd.as_ref().unwrap().iter().all(|f| f.data().iter().all(|&v| v == 0.0)));
        assert_eq!(still.frames[0], still.frames[2]);
        for v in [(3, 0), (-2, 1), (0, -3)] {
            let (vid, _) = make_synthetic_video(3, v, &s, None).unwrap();
            let bwd = &vid.flow_bwd.as_ref().unwrap()[0];
            assert_eq!(bwd.get(5, 5), (v.0 as f32, v.1 as f32));
            for t in 0..2 {
                let (w, mask) = warp(&vid.frames[t], &vid.flow_bwd.as_ref().unwrap()[t]).unwrap();
                let (w2, mask2) = warp(&vid.frames[t + 1], &vid.flow_fwd.as_ref().unwrap()[t]).unwrap();
                assert!(mask.count() > 0 && mask2.count() > 0);
                for y in 0..24 {
                    for x in 0..24 {
                        if mask.get(y, x) {
                            assert_eq!(w.pixel(y, x), vid.frames[t + 1].pixel(y, x));
                        }
                        if mask2.get(y, x) {
                            assert_eq!(w2.pixel(y, x), vid.frames[t].pixel(y, x));
                        }
                    }
                }
            }
        }
    }
}
