//! Underwater image formation `I_c = D_c + B_c`.
//!
//! The direct signal is the scene radiance attenuated along the line of sight,
//! `D_c = J_c * exp(-beta_d_c * z)`, and backscatter saturates towards the
//! veiling light, `B_c = binf_c * (1 - exp(-beta_b_c * z))`.
//!
//! Backscatter is estimated from an image and its depth map by collecting the
//! darkest pixels per depth bin (where the direct signal is close to zero) and
//! fitting
//!
//! ```text
//! B_c(z) = binf_c * (1 - exp(-beta_b_c * z)) + j_c * exp(-beta_j_c * z)
//! ```
//!
//! with a bounded Levenberg–Marquardt solver. The second term absorbs residual
//! direct signal from dark objects that are not perfectly black.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imgcore::{DepthMap, Frame};
use crate::{Error, Result};

pub const DEPTH_BINS: usize = 10;
pub const DARK_FRACTION: f64 = 0.01;
pub const RANDOM_RESTARTS: usize = 3;
const INITIAL_GUESS: [f64; 4] = [0.2, 0.5, 0.1, 0.5];
const LOWER: [f64; 4] = [0.0, 0.01, 0.0, 0.01];
const UPPER: [f64; 4] = [1.0, 5.0, 1.0, 5.0];
const MIN_SAMPLES: usize = 4;
const RESTART_SEED: u64 = 0x5ea_7412;

/// Per-channel wideband water coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterParams {
    /// Veiling light, in `[0, 1]`.
    pub binf: [f64; 3],
    /// Backscatter coefficient, 1/m.
    pub beta_b: [f64; 3],
    /// Direct-signal attenuation coefficient, 1/m.
    pub beta_d: [f64; 3],
}

/// Flat key-value form used in config files.
#[derive(Debug, Serialize, Deserialize)]
struct WaterParamsKv {
    binf_r: f64,
    binf_g: f64,
    binf_b: f64,
    betab_r: f64,
    betab_g: f64,
    betab_b: f64,
    betad_r: f64,
    betad_g: f64,
    betad_b: f64,
}

impl WaterParams {
    pub fn new(binf: [f64; 3], beta_b: [f64; 3], beta_d: [f64; 3]) -> Result<Self> {
        let p = Self { binf, beta_b, beta_d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.binf.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
            && self.beta_b.iter().chain(&self.beta_d).all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid water parameters {self:?}")))
        }
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let kv: WaterParamsKv = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::new(
            [kv.binf_r, kv.binf_g, kv.binf_b],
            [kv.betab_r, kv.betab_g, kv.betab_b],
            [kv.betad_r, kv.betad_g, kv.betad_b],
        )
    }

    pub fn to_kv_string(&self) -> String {
        let kv = WaterParamsKv {
            binf_r: self.binf[0],
            binf_g: self.binf[1],
            binf_b: self.binf[2],
            betab_r: self.beta_b[0],
            betab_g: self.beta_b[1],
            betab_b: self.beta_b[2],
            betad_r: self.beta_d[0],
            betad_g: self.beta_d[1],
            betad_b: self.beta_d[2],
        };
        toml::to_string(&kv).expect("flat struct serializes")
    }
}

/// Per-pixel backscatter estimate, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackscatterField(Frame);

impl BackscatterField {
    pub fn new(frame: Frame) -> Self {
        Self(frame)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Frame::zeros(height, width))
    }

    pub fn as_frame(&self) -> &Frame {
        &self.0
    }

    pub fn into_frame(self) -> Frame {
        self.0
    }
}

/// Fitted coefficients for one channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelFit {
    pub binf: f64,
    pub beta_b: f64,
    pub j_residual: f64,
    pub beta_j: f64,
    pub rmse: f64,
    pub samples: usize,
}

impl ChannelFit {
    pub fn eval(&self, z: f64) -> f64 {
        self.binf * (1.0 - (-self.beta_b * z).exp()) + self.j_residual * (-self.beta_j * z).exp()
    }
}

#[derive(Clone, Debug)]
pub struct BackscatterEstimate {
    pub field: BackscatterField,
    pub fits: [ChannelFit; 3],
    /// Depth was (numerically) constant; each channel's backscatter is the
    /// darkest-percentile intensity rather than a fitted curve.
    pub degenerate: bool,
}

pub fn direct_signal(clean: &Frame, depth: &DepthMap, w: &WaterParams) -> Result<Frame> {
    depth.ensure_matches(clean)?;
    Ok(Frame::from_fn(clean.height(), clean.width(), |y, x, c| {
        let z = depth.get(y, x) as f64;
        (clean.get(y, x, c) as f64 * (-w.beta_d[c] * z).exp()) as f32
    }))
}

pub fn true_backscatter(depth: &DepthMap, w: &WaterParams) -> BackscatterField {
    BackscatterField(Frame::from_fn(depth.height(), depth.width(), |y, x, c| {
        let z = depth.get(y, x) as f64;
        (w.binf[c] * (1.0 - (-w.beta_b[c] * z).exp())) as f32
    }))
}

/// Applies the formation model to a clean scene.
pub fn synth_degrade(clean: &Frame, depth: &DepthMap, w: &WaterParams) -> Result<Frame> {
    depth.ensure_matches(clean)?;
    w.validate()?;
    Ok(Frame::from_fn(clean.height(), clean.width(), |y, x, c| {
        let z = depth.get(y, x) as f64;
        let d = clean.get(y, x, c) as f64 * (-w.beta_d[c] * z).exp();
        let b = w.binf[c] * (1.0 - (-w.beta_b[c] * z).exp());
        (d + b) as f32
    }))
}

/// `D = clip(I - B, 0, 1)`.
pub fn remove_backscatter(frame: &Frame, b: &BackscatterField) -> Result<Frame> {
    frame.ensure_same_shape(b.as_frame())?;
    let data = frame
        .data()
        .iter()
        .zip(b.as_frame().data())
        .map(|(i, b)| i - b)
        .collect();
    Frame::from_clamped(frame.height(), frame.width(), data)
}

pub fn estimate_backscatter(frame: &Frame, depth: &DepthMap) -> Result<BackscatterEstimate> {
    depth.ensure_matches(frame)?;
    let samples = collect_dark_samples(&[(frame, depth)]);
    match samples {
        DarkSamples::Degenerate(levels) => Ok(degenerate_estimate(frame, levels)),
        DarkSamples::Binned(per_channel) => {
            let fits = fit_channels(&per_channel)?;
            Ok(BackscatterEstimate {
                field: evaluate_field(frame, depth, &fits),
                fits,
                degenerate: false,
            })
        }
    }
}

/// Fits one set of coefficients to the pooled dark samples of every frame of
/// a video and evaluates it per frame.
///
/// Experimental: per-frame estimation is the default everywhere else.
pub fn estimate_backscatter_shared(frames: &[(&Frame, &DepthMap)]) -> Result<Vec<BackscatterEstimate>> {
    if frames.is_empty() {
        return Err(Error::Empty("no frames".into()));
    }
    for (f, d) in frames {
        d.ensure_matches(f)?;
    }
    match collect_dark_samples(frames) {
        DarkSamples::Degenerate(levels) => Ok(frames.iter().map(|(f, _)| degenerate_estimate(f, levels)).collect()),
        DarkSamples::Binned(per_channel) => {
            let fits = fit_channels(&per_channel)?;
            Ok(frames
                .iter()
                .map(|(f, d)| BackscatterEstimate {
                    field: evaluate_field(f, d, &fits),
                    fits,
                    degenerate: false,
                })
                .collect())
        }
    }
}

enum DarkSamples {
    /// Darkest-percentile intensity per channel.
    Degenerate([f64; 3]),
    /// `(z, intensity)` pairs per channel.
    Binned([Vec<(f64, f64)>; 3]),
}

fn collect_dark_samples(frames: &[(&Frame, &DepthMap)]) -> DarkSamples {
    let (mut zmin, mut zmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, d) in frames {
        for &z in d.data() {
            zmin = zmin.min(z as f64);
            zmax = zmax.max(z as f64);
        }
    }

    if zmax - zmin <= 1e-6 * zmax.max(1.0) {
        let mut levels = [0.0; 3];
        for (c, level) in levels.iter_mut().enumerate() {
            let mut vals: Vec<f64> = frames.iter().flat_map(|(f, _)| f.channel(c)).collect();
            vals.sort_by(f64::total_cmp);
            let k = ((vals.len() as f64 * DARK_FRACTION).ceil() as usize).max(1);
            *level = vals[k - 1];
        }
        return DarkSamples::Degenerate(levels);
    }

    let width = (zmax - zmin) / DEPTH_BINS as f64;
    let mut bins: Vec<Vec<(f64, [f64; 3])>> = vec![Vec::new(); DEPTH_BINS];
    for (f, d) in frames {
        for (i, (&z, p)) in d.data().iter().zip(f.data().chunks_exact(3)).enumerate() {
            let _ = i;
            let z = z as f64;
            let b = (((z - zmin) / width) as usize).min(DEPTH_BINS - 1);
            bins[b].push((z, [p[0] as f64, p[1] as f64, p[2] as f64]));
        }
    }

    let mut per_channel: [Vec<(f64, f64)>; 3] = Default::default();
    for bin in bins.iter().filter(|b| !b.is_empty()) {
        let k = ((bin.len() as f64 * DARK_FRACTION).ceil() as usize).max(1);
        for (c, out) in per_channel.iter_mut().enumerate() {
            let mut vals: Vec<(f64, f64)> = bin.iter().map(|(z, p)| (*z, p[c])).collect();
            vals.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
            out.extend_from_slice(&vals[..k]);
        }
    }
    DarkSamples::Binned(per_channel)
}

fn degenerate_estimate(frame: &Frame, levels: [f64; 3]) -> BackscatterEstimate {
    let field = Frame::from_fn(frame.height(), frame.width(), |y, x, c| {
        (levels[c] as f32).min(frame.get(y, x, c))
    });
    let fit = |c: usize| ChannelFit {
        binf: levels[c],
        beta_b: 0.0,
        j_residual: 0.0,
        beta_j: 0.0,
        rmse: 0.0,
        samples: 1,
    };
    BackscatterEstimate {
        field: BackscatterField(field),
        fits: [fit(0), fit(1), fit(2)],
        degenerate: true,
    }
}

fn fit_channels(per_channel: &[Vec<(f64, f64)>; 3]) -> Result<[ChannelFit; 3]> {
    let mut fits = [None; 3];
    for (c, samples) in per_channel.iter().enumerate() {
        if samples.len() < MIN_SAMPLES {
            return Err(Error::Fit(format!(
                "channel {c}: {} usable samples, need {MIN_SAMPLES}",
                samples.len()
            )));
        }
        fits[c] = Some(fit_backscatter_curve(samples, RESTART_SEED + c as u64));
    }
    Ok(fits.map(|f| f.expect("all channels fitted")))
}

fn evaluate_field(frame: &Frame, depth: &DepthMap, fits: &[ChannelFit; 3]) -> BackscatterField {
    BackscatterField(Frame::from_fn(frame.height(), frame.width(), |y, x, c| {
        let b = fits[c].eval(depth.get(y, x) as f64) as f32;
        b.clamp(0.0, frame.get(y, x, c))
    }))
}

/// Bounded least-squares fit of the four-parameter backscatter curve to
/// `(z, intensity)` samples, best of the default start and the random
/// restarts.
pub fn fit_backscatter_curve(samples: &[(f64, f64)], seed: u64) -> ChannelFit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![INITIAL_GUESS];
    for _ in 0..RANDOM_RESTARTS {
        let mut s = [0.0; 4];
        for k in 0..4 {
            s[k] = rng.random_range(LOWER[k]..=UPPER[k]);
        }
        starts.push(s);
    }
    let mut best: Option<([f64; 4], f64)> = None;
    for start in starts {
        let (theta, sse) = levenberg_marquardt(samples, start);
        if best.is_none_or(|(_, b)| sse < b) {
            best = Some((theta, sse));
        }
    }
    let (t, sse) = best.expect("at least one start");
    ChannelFit {
        binf: t[0],
        beta_b: t[1],
        j_residual: t[2],
        beta_j: t[3],
        rmse: (sse / samples.len() as f64).sqrt(),
        samples: samples.len(),
    }
}

fn model(t: &[f64; 4], z: f64) -> f64 {
    t[0] * (1.0 - (-t[1] * z).exp()) + t[2] * (-t[3] * z).exp()
}

fn sse(samples: &[(f64, f64)], t: &[f64; 4]) -> f64 {
    samples.iter().map(|(z, y)| (model(t, *z) - y).powi(2)).sum()
}

/// Projected Levenberg–Marquardt; parameters pinned at a bound with the step
/// pointing outward are frozen for that iteration.
fn levenberg_marquardt(samples: &[(f64, f64)], start: [f64; 4]) -> ([f64; 4], f64) {
    let mut t = start;
    for k in 0..4 {
        t[k] = t[k].clamp(LOWER[k], UPPER[k]);
    }
    let mut cost = sse(samples, &t);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for &(z, y) in samples {
            let e1 = (-t[1] * z).exp();
            let e2 = (-t[3] * z).exp();
            let jac = [1.0 - e1, t[0] * z * e1, e2, -t[2] * z * e2];
            let r = model(&t, z) - y;
            for i in 0..4 {
                jtr[i] += jac[i] * r;
                for j in 0..4 {
                    jtj[i][j] += jac[i] * jac[j];
                }
            }
        }

        let mut improved = false;
        for _ in 0..30 {
            let mut free = [true; 4];
            let mut step = solve_damped(&jtj, &jtr, lambda, &free);
            for k in 0..4 {
                let at_lower = t[k] <= LOWER[k] && step[k] < 0.0;
                let at_upper = t[k] >= UPPER[k] && step[k] > 0.0;
                if at_lower || at_upper {
                    free[k] = false;
                }
            }
            if free.iter().any(|f| !f) {
                step = solve_damped(&jtj, &jtr, lambda, &free);
            }
            let mut cand = t;
            for k in 0..4 {
                cand[k] = (t[k] + step[k]).clamp(LOWER[k], UPPER[k]);
            }
            let c = sse(samples, &cand);
            if c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                t = cand;
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-12 {
                    return (t, cost);
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
        if !improved || cost < 1e-24 {
            break;
        }
    }
    (t, cost)
}

/// Solves `(JtJ + lambda * diag(JtJ)) step = -Jtr` over the free parameters.
fn solve_damped(jtj: &[[f64; 4]; 4], jtr: &[f64; 4], lambda: f64, free: &[bool; 4]) -> [f64; 4] {
    let mut a = [[0.0; 5]; 4];
    for i in 0..4 {
        for j in 0..4 {
            a[i][j] = if free[i] && free[j] { jtj[i][j] } else { 0.0 };
        }
        if free[i] {
            a[i][i] += lambda * jtj[i][i].max(1e-12);
            a[i][4] = -jtr[i];
        } else {
            a[i][i] = 1.0;
            a[i][4] = 0.0;
        }
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        if p.abs() < 1e-300 {
            return [0.0; 4];
        }
        for row in col + 1..4 {
            let f = a[row][col] / p;
            for k in col..5 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        let s: f64 = (i + 1..4).map(|j| a[i][j] * x[j]).sum();
        x[i] = (a[i][4] - s) / a[i][i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn water() -> WaterParams {
        WaterParams::new([0.3, 0.2, 0.1], [0.5, 0.6, 0.7], [0.2, 0.3, 0.4]).unwrap()
    }

    #[test]
    fn zero_depth_limit_is_identity() {
        let clean = Frame::from_fn(8, 8, |y, x, c| ((y + x + c) % 5) as f32 / 5.0);
        let depth = DepthMap::uniform(8, 8, 1e-9).unwrap();
        let out = synth_degrade(&clean, &depth, &water()).unwrap();
        for (a, b) in out.data().iter().zip(clean.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn infinite_depth_is_veiling_light() {
        let clean = Frame::filled(8, 8, [0.9, 0.5, 0.1]);
        let depth = DepthMap::uniform(8, 8, 1e6).unwrap();
        let out = synth_degrade(&clean, &depth, &water()).unwrap();
        for p in out.data().chunks(3) {
            assert!((p[0] - 0.3).abs() < 1e-6 && (p[1] - 0.2).abs() < 1e-6 && (p[2] - 0.1).abs() < 1e-6);
        }
    }

    #[test]
    fn hand_evaluated_gray_pixel() {
        let w = WaterParams::new([0.3; 3], [0.5; 3], [0.2; 3]).unwrap();
        let out = synth_degrade(&Frame::filled(8, 8, [0.8; 3]), &DepthMap::uniform(8, 8, 2.0).unwrap(), &w).unwrap();
        // D = 0.8 e^-0.4 = 0.536256, B = 0.3 (1 - e^-1) = 0.189636
        assert!((out.get(3, 3, 1) - 0.725_892).abs() < 1e-5);
    }

    #[test]
    fn backscatter_nondecreasing_in_depth_for_black_scene() {
        let black = Frame::zeros(8, 8);
        let mut prev = [0.0f32; 3];
        for i in 0..50 {
            let z = 0.1 + 0.3 * i as f32;
            let out = synth_degrade(&black, &DepthMap::uniform(8, 8, z).unwrap(), &water()).unwrap();
            let p = out.pixel(0, 0);
            for c in 0..3 {
                assert!(p[c] >= prev[c]);
            }
            prev = p;
        }
    }

    #[test]
    fn removal_identities() {
        let f = Frame::from_fn(8, 8, |y, x, c| ((y * 3 + x + c) % 9) as f32 / 9.0);
        assert_eq!(remove_backscatter(&f, &BackscatterField::zeros(8, 8)).unwrap(), f);
        let same = BackscatterField::new(f.clone());
        assert!(remove_backscatter(&f, &same).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(remove_backscatter(&f, &BackscatterField::zeros(4, 4)).is_err());
    }

    #[test]
    fn removal_recovers_direct_signal() {
        let clean = Frame::from_fn(16, 16, |y, x, c| ((y * 5 + x * 3 + c) % 11) as f32 / 11.0);
        let depth = DepthMap::from_fn(16, 16, |y, x| 0.5 + 0.4 * (y + x) as f32).unwrap();
        let w = water();
        let degraded = synth_degrade(&clean, &depth, &w).unwrap();
        let d = remove_backscatter(&degraded, &true_backscatter(&depth, &w)).unwrap();
        let direct = direct_signal(&clean, &depth, &w).unwrap();
        for (a, b) in d.data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn black_frame_has_zero_backscatter() {
        let f = Frame::zeros(16, 16);
        let depth = DepthMap::from_fn(16, 16, |y, _| 1.0 + y as f32 * 0.5).unwrap();
        let est = estimate_backscatter(&f, &depth).unwrap();
        assert!(est.field.as_frame().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_depth_is_degenerate() {
        let f = Frame::from_fn(20, 20, |y, x, c| (0.2 + 0.01 * ((y * 20 + x) % 50) as f32) * (c + 1) as f32 / 3.0);
        let est = estimate_backscatter(&f, &DepthMap::uniform(20, 20, 3.0).unwrap()).unwrap();
        assert!(est.degenerate);
        // 400 pixels -> darkest 4 -> level is the 4th smallest value
        let mut g = f.channel(1);
        g.sort_by(f64::total_cmp);
        assert!((est.fits[1].binf - g[3]).abs() < 1e-9);
        assert!(est.field.as_frame().data().iter().skip(1).step_by(3).all(|&v| (v as f64 - g[3]).abs() < 1e-6));
    }

    #[test]
    fn fit_recovers_clean_curve() {
        let truth = [0.3, 0.5, 0.0, 1.0];
        let samples: Vec<_> = (0..40).map(|i| {
            let z = 0.5 + 7.5 * i as f64 / 39.0;
            (z, model(&truth, z))
        }).collect();
        let fit = fit_backscatter_curve(&samples, 1);
        assert!((fit.binf - 0.3).abs() < 0.01, "{fit:?}");
        assert!((fit.beta_b - 0.5).abs() < 0.02, "{fit:?}");
    }

    #[test]
    fn too_few_samples_is_fit_error() {
        let f = Frame::filled(2, 1, [0.1; 3]);
        let depth = DepthMap::new(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(matches!(estimate_backscatter(&f, &depth), Err(Error::Fit(_))));
    }

    #[test]
    fn estimate_never_exceeds_source() {
        let clean = Frame::from_fn(32, 32, |y, x, c| if (x * 7 + y * 3) % 13 == 0 { 0.0 } else { ((x + y + c) % 7) as f32 / 7.0 });
        let depth = DepthMap::from_fn(32, 32, |y, x| 0.5 + 0.2 * y as f32 + 0.05 * x as f32).unwrap();
        let degraded = synth_degrade(&clean, &depth, &water()).unwrap();
        let est = estimate_backscatter(&degraded, &depth).unwrap();
        for (b, i) in est.field.as_frame().data().iter().zip(degraded.data()) {
            assert!(*b <= i + 0.05 && *b >= 0.0);
        }
        let d = remove_backscatter(&degraded, &est.field).unwrap();
        assert!(d.data().iter().zip(degraded.data()).all(|(a, b)| a <= b));
    }

    #[test]
    fn kv_round_trip() {
        let w = water();
        let text = w.to_kv_string();
        assert!(text.contains("binf_r") && text.contains("betad_b"));
        assert_eq!(WaterParams::from_kv_str(&text).unwrap(), w);
        assert!(WaterParams::from_kv_str("binf_r = 2.0").is_err());
    }
}
