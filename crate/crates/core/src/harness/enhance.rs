use std::path::Path;
use std::time::Instant;

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::enhancer::SpatialModel;
use crate::imgcore::io::{depth_for_frame, ensure_dir, list_frames};
use crate::imgcore::{load_depth, load_frame, save_frame};
use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhanceOptions {
    /// Estimate and subtract backscatter before the illumination division.
    pub remove_backscatter: bool,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        Self { remove_backscatter: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhanceManifest {
    pub frames: usize,
    pub checkpoint_hash: String,
    pub stage: String,
    pub outputs: Vec<String>,
    pub seconds_total: f64,
    pub seconds_per_frame: f64,
}

/// Enhances every frame of `in_dir` into `out_dir` under the same file name
/// and writes [`MANIFEST_NAME`] next to them. All depth maps are located
/// before any frame is processed.
pub fn enhance_video(in_dir: &Path, out_dir: &Path, ckpt: &Checkpoint, depth_dir: &Path, opts: &EnhanceOptions) -> Result<EnhanceManifest> {
    let model = SpatialModel::from_checkpoint(ckpt, &Device::Cpu)?;
    enhance_video_with(&model, &ckpt.content_hash()?, &ckpt.stage().to_string(), in_dir, out_dir, depth_dir, opts)
}

pub fn enhance_video_with(
    model: &SpatialModel,
    checkpoint_hash: &str,
    stage: &str,
    in_dir: &Path,
    out_dir: &Path,
    depth_dir: &Path,
    opts: &EnhanceOptions,
) -> Result<EnhanceManifest> {
    let paths = list_frames(in_dir)?;
    if paths.is_empty() {
        return Err(Error::Empty(format!("no frames in {}", in_dir.display())));
    }
    let depths = paths
        .iter()
        .map(|p| depth_for_frame(depth_dir, p))
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(out_dir)?;
    let start = Instant::now();
    let mut outputs = Vec::with_capacity(paths.len());
    for (p, d) in paths.iter().zip(&depths) {
        let frame = load_frame(p)?;
        let out = if opts.remove_backscatter {
            let depth = load_depth(d)?;
            depth.ensure_matches(&frame)?;
            model.enhance_frame(&frame, &depth)?
        } else {
            model.enhance_backscatter_free(&frame)?
        };
        let name = p.file_name().expect("listed file").to_string_lossy().into_owned();
        save_frame(&out, out_dir.join(&name))?;
        log::debug!("enhanced {name}");
        outputs.push(name);
    }
    let secs = start.elapsed().as_secs_f64();
    let manifest = EnhanceManifest {
        frames: outputs.len(),
        checkpoint_hash: checkpoint_hash.to_string(),
        stage: stage.to_string(),
        outputs,
        seconds_total: secs,
        seconds_per_frame: secs / paths.len() as f64,
    };
    let path = out_dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
