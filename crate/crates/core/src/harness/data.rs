//! Training samples and their on-disk layouts.
//!
//! Paired images: `<root>/degraded`, `<root>/gt` and `<root>/depth`, matched
//! by file stem. Videos: `<root>/frames` and `<root>/depth`, optionally
//! `<root>/gt`, `<root>/flow_fwd` and `<root>/flow_bwd` (flow `i` belongs to
//! the pair starting at frame `i`).

use std::path::{Path, PathBuf};

use crate::flow::{load_flow, save_flow, FlowField, FLOW_EXT};
use crate::imgcore::io::{depth_for_frame, ensure_dir, file_stem, frame_file_name, list_frames, DEPTH_EXT};
use crate::imgcore::{load_depth, load_frame, save_depth, save_frame, DepthMap, Frame};
use crate::{Error, Result};

/// A degraded image with its ground truth and depth.
#[derive(Clone, Debug)]
pub struct PairedSample {
    pub degraded: Frame,
    pub gt: Frame,
    pub depth: DepthMap,
}

impl PairedSample {
    pub fn new(degraded: Frame, gt: Frame, depth: DepthMap) -> Result<Self> {
        degraded.ensure_same_shape(&gt)?;
        depth.ensure_matches(&degraded)?;
        Ok(Self { degraded, gt, depth })
    }
}

/// Two consecutive frames. `flow_fwd` is `U_{t,t+1}` (frame `t` sampled
/// from `t + 1`), `flow_bwd` is `U_{t+1,t}`.
#[derive(Clone, Debug)]
pub struct FramePairSample {
    pub frames: [Frame; 2],
    pub depths: [DepthMap; 2],
    pub flow_fwd: Option<FlowField>,
    pub flow_bwd: Option<FlowField>,
    pub gt: Option<[Frame; 2]>,
}

impl FramePairSample {
    pub fn new(
        frames: [Frame; 2],
        depths: [DepthMap; 2],
        flows: Option<(FlowField, FlowField)>,
        gt: Option<[Frame; 2]>,
    ) -> Result<Self> {
        frames[0].ensure_same_shape(&frames[1])?;
        for d in &depths {
            d.ensure_matches(&frames[0])?;
        }
        if let Some(g) = &gt {
            g[0].ensure_same_shape(&frames[0])?;
            g[1].ensure_same_shape(&frames[0])?;
        }
        if let Some((f, b)) = &flows {
            if f.dims() != frames[0].dims() || b.dims() != frames[0].dims() {
                return Err(Error::Shape("flow size differs from frame size".into()));
            }
        }
        let (flow_fwd, flow_bwd) = match flows {
            Some((f, b)) => (Some(f), Some(b)),
            None => (None, None),
        };
        Ok(Self {
            frames,
            depths,
            flow_fwd,
            flow_bwd,
            gt,
        })
    }
}

fn subdir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}

pub fn load_paired_dataset(root: &Path) -> Result<Vec<PairedSample>> {
    let deg = subdir(root, "degraded");
    let gt = subdir(root, "gt");
    let depth = subdir(root, "depth");
    let paths = list_frames(&deg)?;
    if paths.is_empty() {
        return Err(Error::Empty(format!("no frames in {}", deg.display())));
    }
    paths
        .iter()
        .map(|p| {
            let g = gt.join(p.file_name().expect("listed file"));
            PairedSample::new(load_frame(p)?, load_frame(&g)?, load_depth(depth_for_frame(&depth, p)?)?)
        })
        .collect()
}

pub fn save_paired_dataset(root: &Path, samples: &[PairedSample]) -> Result<()> {
    let dirs = ["degraded", "gt", "depth"].map(|d| subdir(root, d));
    for d in &dirs {
        ensure_dir(d)?;
    }
    for (i, s) in samples.iter().enumerate() {
        let name = frame_file_name(i + 1);
        save_frame(&s.degraded, dirs[0].join(&name))?;
        save_frame(&s.gt, dirs[1].join(&name))?;
        save_depth(&s.depth, dirs[2].join(format!("{}.{DEPTH_EXT}", file_stem(Path::new(&name)))))?;
    }
    Ok(())
}

/// A whole video with optional per-step ground truth.
#[derive(Clone, Debug)]
pub struct VideoData {
    pub frames: Vec<Frame>,
    pub depths: Vec<DepthMap>,
    pub gt: Option<Vec<Frame>>,
    /// `flow_fwd[i]` is `U_{i,i+1}`.
    pub flow_fwd: Option<Vec<FlowField>>,
    /// `flow_bwd[i]` is `U_{i+1,i}`.
    pub flow_bwd: Option<Vec<FlowField>>,
}

impl VideoData {
    /// Consecutive non-overlapping pairs `(0, 1), (2, 3), ...`.
    pub fn pairs(&self) -> Result<Vec<FramePairSample>> {
        let mut out = Vec::new();
        let mut t = 0;
        while t + 1 < self.frames.len() {
            let flows = match (&self.flow_fwd, &self.flow_bwd) {
                (Some(f), Some(b)) => Some((f[t].clone(), b[t].clone())),
                _ => None,
            };
            out.push(FramePairSample::new(
                [self.frames[t].clone(), self.frames[t + 1].clone()],
                [self.depths[t].clone(), self.depths[t + 1].clone()],
                flows,
                self.gt.as_ref().map(|g| [g[t].clone(), g[t + 1].clone()]),
            )?);
            t += 2;
        }
        Ok(out)
    }
}

fn load_flows(dir: &Path, n: usize) -> Result<Option<Vec<FlowField>>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let flows = crate::imgcore::io::list_files_with_ext(dir, FLOW_EXT)?
        .iter()
        .map(load_flow)
        .collect::<Result<Vec<_>>>()?;
    if flows.len() + 1 != n {
        return Err(Error::Shape(format!("{} flows in {} for {n} frames", flows.len(), dir.display())));
    }
    Ok(Some(flows))
}

pub fn load_video(root: &Path) -> Result<VideoData> {
    let fdir = subdir(root, "frames");
    let ddir = subdir(root, "depth");
    let paths = list_frames(&fdir)?;
    if paths.is_empty() {
        return Err(Error::Empty(format!("no frames in {}", fdir.display())));
    }
    let frames = paths.iter().map(load_frame).collect::<Result<Vec<_>>>()?;
    let depths = paths
        .iter()
        .map(|p| load_depth(depth_for_frame(&ddir, p)?))
        .collect::<Result<Vec<_>>>()?;
    let gdir = subdir(root, "gt");
    let gt = if gdir.is_dir() {
        Some(
            paths
                .iter()
                .map(|p| load_frame(gdir.join(p.file_name().expect("listed file"))))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let flow_fwd = load_flows(&subdir(root, "flow_fwd"), frames.len())?;
    let flow_bwd = load_flows(&subdir(root, "flow_bwd"), frames.len())?;
    Ok(VideoData {
        frames,
        depths,
        gt,
        flow_fwd,
        flow_bwd,
    })
}

pub fn save_video(root: &Path, v: &VideoData) -> Result<()> {
    let fdir = subdir(root, "frames");
    let ddir = subdir(root, "depth");
    ensure_dir(&fdir)?;
    ensure_dir(&ddir)?;
    for (i, (f, d)) in v.frames.iter().zip(&v.depths).enumerate() {
        let name = frame_file_name(i + 1);
        save_frame(f, fdir.join(&name))?;
        save_depth(d, ddir.join(format!("{}.{DEPTH_EXT}", file_stem(Path::new(&name)))))?;
    }
    if let Some(gt) = &v.gt {
        let gdir = subdir(root, "gt");
        ensure_dir(&gdir)?;
        for (i, g) in gt.iter().enumerate() {
            save_frame(g, gdir.join(frame_file_name(i + 1)))?;
        }
    }
    for (name, flows) in [("flow_fwd", &v.flow_fwd), ("flow_bwd", &v.flow_bwd)] {
        if let Some(flows) = flows {
            let dir = subdir(root, name);
            ensure_dir(&dir)?;
            for (i, f) in flows.iter().enumerate() {
                save_flow(f, dir.join(format!("flow_{:06}.{FLOW_EXT}", i + 1)))?;
            }
        }
    }
    Ok(())
}
