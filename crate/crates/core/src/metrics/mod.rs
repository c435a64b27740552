//! No-reference underwater quality metrics, full-reference PSNR/SSIM, a
//! flow-based temporal consistency score, and per-video reports.

mod reference;
mod report;
mod uciqe;
mod uiqm;

use std::collections::BTreeMap;
use std::path::Path;

pub use reference::{mse, psnr, temporal_warp_error, PSNR_CAP};
pub use report::{FrameRecord, QualityReport, Summary};
pub use uciqe::{uciqe, UCIQE_COEFFS};
pub use uiqm::{uicm, uiconm, uiqm, uiqm_from_components, uism, BLOCK, UIQM_COEFFS};

use crate::flow::{horn_schunck, DEFAULT_ALPHA, DEFAULT_ITERS};
use crate::imgcore::io::{file_stem, list_frames};
use crate::imgcore::{load_frame, Frame};
use crate::losses::frame_ssim;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Compute the UIQM family (needs frames of at least one block).
    pub uiqm: bool,
    pub uciqe: bool,
    /// Score consecutive frames with flow estimated between them.
    pub temporal: bool,
    pub flow_alpha: f64,
    pub flow_iters: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            uiqm: true,
            uciqe: true,
            temporal: true,
            flow_alpha: DEFAULT_ALPHA,
            flow_iters: DEFAULT_ITERS,
        }
    }
}

/// Image metrics of one frame, keyed by metric name.
pub fn frame_metrics(frame: &Frame, opts: &EvalOptions) -> Result<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    if opts.uciqe {
        m.insert("uciqe".to_string(), uciqe(frame));
    }
    if opts.uiqm {
        let (a, b, c) = (uicm(frame), uism(frame)?, uiconm(frame)?);
        m.insert("uicm".to_string(), a);
        m.insert("uism".to_string(), b);
        m.insert("uiconm".to_string(), c);
        m.insert("uiqm".to_string(), uiqm_from_components(a, b, c));
    }
    Ok(m)
}

/// Temporal warp error with flow from each frame to its predecessor.
pub fn estimated_warp_error(frames: &[Frame], alpha: f64, iters: usize) -> Result<f64> {
    let flows = frames
        .windows(2)
        .map(|p| horn_schunck(&p[1], &p[0], alpha, iters))
        .collect::<Result<Vec<_>>>()?;
    temporal_warp_error(frames, &flows)
}

/// Scores in-memory frames. With `reference`, PSNR and SSIM against the
/// matching reference frame are added.
pub fn evaluate_frames(
    video: &str,
    ids: &[String],
    frames: &[Frame],
    reference: Option<&[Frame]>,
    opts: &EvalOptions,
) -> Result<QualityReport> {
    let first = frames.first().ok_or_else(|| Error::Empty(format!("video {video} has no frames")))?;
    if ids.len() != frames.len() || reference.is_some_and(|r| r.len() != frames.len()) {
        return Err(Error::Shape("frame, id and reference counts differ".into()));
    }
    let mut records = Vec::with_capacity(frames.len());
    for (i, (id, f)) in ids.iter().zip(frames).enumerate() {
        first.ensure_same_shape(f)?;
        let mut values = frame_metrics(f, opts)?;
        if let Some(r) = reference {
            values.insert("psnr".to_string(), psnr(f, &r[i])?);
            values.insert("ssim".to_string(), frame_ssim(f, &r[i])?);
        }
        records.push(FrameRecord { frame: id.clone(), values });
    }
    let temporal = if opts.temporal && frames.len() > 1 {
        Some(estimated_warp_error(frames, opts.flow_alpha, opts.flow_iters)?)
    } else {
        None
    };
    QualityReport::new(video, first.height(), first.width(), records, temporal)
}

/// Loads every frame of `dir` (and of `reference_dir`, matched by name) and
/// scores them.
pub fn evaluate_video(dir: &Path, reference_dir: Option<&Path>, opts: &EvalOptions) -> Result<QualityReport> {
    let paths = list_frames(dir)?;
    if paths.is_empty() {
        return Err(Error::Empty(format!("no frames in {}", dir.display())));
    }
    let frames = paths.iter().map(load_frame).collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = paths.iter().map(|p| file_stem(p)).collect();
    let reference = match reference_dir {
        Some(rd) => Some(
            paths
                .iter()
                .map(|p| load_frame(rd.join(p.file_name().expect("listed file"))))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let video = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".to_string());
    evaluate_frames(&video, &ids, &frames, reference.as_deref(), opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowField;
    use proptest::prelude::*;

    /// Hash-based pixels reproducible outside Rust.
    fn hashed_frame(seed: u64, h: usize, w: usize) -> Frame {
        let data = (0..(h * w * 3) as u64)
            .map(|i| {
                let v = (i * 2_654_435_761 + seed * 40_503 + 12_345) % (1 << 32);
                let v = (v * 1_103_515_245 + 12_345) % (1 << 32);
                (v as f64 / 4_294_967_296.0) as f32
            })
            .collect();
        Frame::new(h, w, data).unwrap()
    }

    /// (seed, UCIQE, UICM, UISM, UIConM) from an independent numpy/skimage
    /// implementation on 24x32 hashed frames.
    const REFERENCE: [(u64, f64, f64, f64, f64); 5] = [
        (0, 0.4271723222, 24.87794366, 8.991998443, 0.006373939915),
        (1, 0.4257458578, 24.97464383, 9.099632765, 0.005609239813),
        (2, 0.4267048475, 24.934405, 9.111765659, 0.007107881877),
        (3, 0.4259597932, 24.93438826, 9.117563018, 0.00759878917),
        (4, 0.4263149349, 24.99644039, 9.655114003, 0.00627880619),
    ];

    #[test]
    fn hashed_frame_matches_generator() {
        let f = hashed_frame(0, 24, 32);
        let want = [0.82757699, 0.1580327, 0.48848838, 0.8189441];
        for (a, b) in f.data().iter().zip(want) {
            assert!((*a as f64 - b).abs() < 1e-7);
        }
    }

    #[test]
    fn matches_reference_implementation() {
        for &(seed, q, cm, sm, con) in &REFERENCE {
            let f = hashed_frame(seed, 24, 32);
            assert!((uciqe(&f) - q).abs() < 1e-3, "uciqe seed {seed}: {}", uciqe(&f));
            assert!((uicm(&f) - cm).abs() < 1e-6 * cm.abs().max(1.0), "uicm {}", uicm(&f));
            assert!((uism(&f).unwrap() - sm).abs() < 1e-6 * sm, "uism {}", uism(&f).unwrap());
            assert!((uiconm(&f).unwrap() - con).abs() < 1e-8, "uiconm {}", uiconm(&f).unwrap());
        }
    }

    #[test]
    fn constant_frames_score_zero() {
        for v in [0.0, 0.5, 0.73, 1.0] {
            let f = Frame::filled(16, 24, [v; 3]);
            assert_eq!(uciqe(&f), 0.0);
            assert_eq!(uicm(&f), 0.0);
            assert_eq!(uism(&f).unwrap(), 0.0);
            assert_eq!(uiconm(&f).unwrap(), 0.0);
            assert_eq!(uiqm(&f).unwrap(), 0.0);
        }
        assert!(matches!(uiqm(&Frame::filled(7, 20, [0.5; 3])), Err(Error::Parameter(_))));
    }

    #[test]
    fn uicm_ignores_common_offset() {
        // Values on a 1/256 grid plus 0.25 stay exact in every step.
        let base = Frame::from_fn(16, 16, |y, x, c| ((y * 7 + x * 3 + c * 11) % 128) as f32 / 256.0);
        let shifted = base.map(|v| v + 0.25);
        assert_eq!(uicm(&base), uicm(&shifted));
    }

    #[test]
    fn contrast_stretch_raises_uiconm() {
        let base = Frame::from_fn(32, 32, |y, x, c| {
            0.45 + 0.1 * ((y as f32 * 0.4).sin() * (x as f32 * 0.3 + c as f32).cos())
        });
        let stretched = base.map(|v| (v - 0.5) * 1.5 + 0.5);
        assert!(uiconm(&stretched).unwrap() > uiconm(&base).unwrap());
    }

    #[test]
    fn saturation_raises_uciqe() {
        // Per-pixel hue rotates; every pixel shares chroma and lightness
        // statistics across the pair except saturation.
        let grey = Frame::filled(10, 10, [0.5; 3]);
        let tinted = Frame::filled(10, 10, [0.6, 0.5, 0.5]);
        let more = Frame::filled(10, 10, [0.7, 0.5, 0.5]);
        assert!(uciqe(&tinted) > uciqe(&grey));
        assert!(uciqe(&more) > uciqe(&tinted));
    }

    #[test]
    fn uiqm_is_linear_in_components() {
        assert_eq!(uiqm_from_components(1.0, 0.0, 0.0), 0.0282);
        assert_eq!(uiqm_from_components(0.0, 1.0, 0.0), 0.2953);
        assert_eq!(uiqm_from_components(0.0, 0.0, 1.0), 3.5753);
        let f = hashed_frame(3, 16, 16);
        let direct = uiqm(&f).unwrap();
        let parts = uiqm_from_components(uicm(&f), uism(&f).unwrap(), uiconm(&f).unwrap());
        assert_eq!(direct, parts);
        assert_eq!(uiqm(&f).unwrap().to_bits(), direct.to_bits());
    }

    #[test]
    fn psnr_cases() {
        let a = Frame::filled(4, 4, [0.0; 3]);
        let b = Frame::filled(4, 4, [0.1; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-6);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let x = hashed_frame(1, 5, 6);
        let y = hashed_frame(2, 5, 6);
        let mse: f64 = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| (*p as f64 - *q as f64) * (*p as f64 - *q as f64))
            .sum::<f64>()
            / 90.0;
        assert!((psnr(&x, &y).unwrap() + 10.0 * mse.log10()).abs() < 1e-9);
        assert!(psnr(&x, &hashed_frame(2, 6, 5)).is_err());
    }

    #[test]
    fn warp_error_cases() {
        let f = hashed_frame(1, 12, 12);
        let zero = FlowField::zeros(12, 12);
        assert_eq!(temporal_warp_error(&[f.clone(), f.clone(), f.clone()], &[zero.clone(), zero.clone()]).unwrap(), 0.0);
        // Content moves right by 2: frame1(x) = frame0(x - 2).
        let big = hashed_frame(2, 12, 16);
        let f0 = big.crop(0, 2, 12, 12).unwrap();
        let f1 = big.crop(0, 0, 12, 12).unwrap();
        let exact = FlowField::constant(12, 12, -2.0, 0.0).unwrap();
        assert_eq!(temporal_warp_error(&[f0.clone(), f1.clone()], &[exact]).unwrap(), 0.0);
        // Alternating gain.
        let bright = f.map(|v| v * 1.2);
        let seq = [f.clone(), bright.clone(), f.clone()];
        let want: f64 = f
            .data()
            .iter()
            .zip(bright.data())
            .map(|(a, b)| (*b as f64 - *a as f64).powi(2))
            .sum::<f64>()
            / f.data().len() as f64;
        let got = temporal_warp_error(&seq, &[zero.clone(), zero.clone()]).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(temporal_warp_error(&seq, &[zero]).is_err());
    }

    #[test]
    fn report_round_trip_and_summary() {
        let frames: Vec<Frame> = (0..3).map(|s| hashed_frame(s, 16, 16)).collect();
        let ids: Vec<String> = (0..3).map(|i| format!("frame_{i:06}")).collect();
        let r = evaluate_frames("clip", &ids, &frames, Some(&frames), &EvalOptions::default()).unwrap();
        assert!(r.temporal_warp_error.is_some());
        for (name, s) in &r.summary {
            let mean = r.frames.iter().map(|f| f.values[name]).sum::<f64>() / 3.0;
            assert!((s.mean - mean).abs() < 1e-9);
        }
        assert_eq!(r.frames[0].values["psnr"], PSNR_CAP);
        let back = QualityReport::from_text(&r.to_text().unwrap()).unwrap();
        assert_eq!(back, r);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 + 2);
        let single = evaluate_frames("one", &ids[..1], &frames[..1], None, &EvalOptions::default()).unwrap();
        assert!(single.temporal_warp_error.is_none());
        assert!(single.summary.contains_key("uciqe"));
    }

    #[test]
    fn empty_directory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(evaluate_video(dir.path(), None, &EvalOptions::default()), Err(Error::Empty(_))));
    }

    proptest! {
        #[test]
        fn metrics_are_pure(seed in 0u64..1000) {
            let f = hashed_frame(seed, 16, 16);
            prop_assert_eq!(uciqe(&f).to_bits(), uciqe(&f).to_bits());
            prop_assert_eq!(uiqm(&f).unwrap().to_bits(), uiqm(&f).unwrap().to_bits());
            prop_assert!(uism(&f).unwrap() >= 0.0 && uiconm(&f).unwrap() >= 0.0 && uciqe(&f) >= 0.0);
        }
    }
}
