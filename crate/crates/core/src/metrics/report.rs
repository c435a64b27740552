use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::uciqe::mean_std;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

/// Per-frame metric values, per-video summaries and the optional temporal
/// score of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub video: String,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<FrameRecord>,
    pub summary: BTreeMap<String, Summary>,
    pub temporal_warp_error: Option<f64>,
}

const HEADER: &str = "# quality report v1";

fn check_token(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c == '\t' || c == '\n' || c == '\r' || c == '=') {
        return Err(Error::Format(format!("{what} {s:?} cannot be serialized")));
    }
    Ok(())
}

impl QualityReport {
    /// Builds the summaries from the per-frame records. Every frame must
    /// carry the same metric names.
    pub fn new(video: &str, height: usize, width: usize, frames: Vec<FrameRecord>, temporal: Option<f64>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::Empty("report without frames".into()))?;
        let names: Vec<String> = first.values.keys().cloned().collect();
        let mut summary = BTreeMap::new();
        for name in &names {
            let mut v = Vec::with_capacity(frames.len());
            for f in &frames {
                let x = f.values.get(name).ok_or_else(|| {
                    Error::Format(format!("frame {} lacks metric {name}", f.frame))
                })?;
                v.push(*x);
            }
            let (mean, std) = mean_std(&v);
            summary.insert(name.clone(), Summary { mean, std });
        }
        if frames.iter().any(|f| f.values.len() != names.len()) {
            return Err(Error::Format("frames carry different metric sets".into()));
        }
        Ok(Self {
            video: video.to_string(),
            height,
            width,
            frames,
            summary,
            temporal_warp_error: temporal,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn metric_names(&self) -> Vec<String> {
        self.summary.keys().cloned().collect()
    }

    /// Tab-separated text: a header block, one `frame` line per frame with
    /// `name=value` pairs, then the summary footer.
    pub fn to_text(&self) -> Result<String> {
        check_token(&self.video, "video id")?;
        let mut s = String::new();
        writeln!(s, "{HEADER}").unwrap();
        writeln!(s, "video\t{}", self.video).unwrap();
        writeln!(s, "frames\t{}", self.frames.len()).unwrap();
        writeln!(s, "resolution\t{}x{}", self.height, self.width).unwrap();
        for f in &self.frames {
            check_token(&f.frame, "frame id")?;
            s.push_str("frame\t");
            s.push_str(&f.frame);
            for (k, v) in &f.values {
                write!(s, "\t{k}={v:?}").unwrap();
            }
            s.push('\n');
        }
        for (k, v) in &self.summary {
            writeln!(s, "summary\t{k}\tmean={:?}\tstd={:?}", v.mean, v.std).unwrap();
        }
        if let Some(t) = self.temporal_warp_error {
            writeln!(s, "temporal_warp_error\t{t:?}").unwrap();
        }
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Format(format!("malformed report line: {line:?}"));
        let num = |s: &str, line: &str| s.parse::<f64>().map_err(|_| bad(line));
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::Format("missing quality report header".into()));
        }
        let (mut video, mut dims, mut count) = (None, None, None);
        let mut frames = Vec::new();
        let mut summary = BTreeMap::new();
        let mut temporal = None;
        for line in lines.filter(|l| !l.is_empty()) {
            let parts: Vec<&str> = line.split('\t').collect();
            match parts[0] {
                "video" if parts.len() == 2 => video = Some(parts[1].to_string()),
                "frames" if parts.len() == 2 => count = Some(parts[1].parse::<usize>().map_err(|_| bad(line))?),
                "resolution" if parts.len() == 2 => {
                    let (h, w) = parts[1].split_once('x').ok_or_else(|| bad(line))?;
                    dims = Some((h.parse::<usize>().map_err(|_| bad(line))?, w.parse::<usize>().map_err(|_| bad(line))?));
                }
                "frame" if parts.len() >= 2 => {
                    let mut values = BTreeMap::new();
                    for kv in &parts[2..] {
                        let (k, v) = kv.split_once('=').ok_or_else(|| bad(line))?;
                        values.insert(k.to_string(), num(v, line)?);
                    }
                    frames.push(FrameRecord { frame: parts[1].to_string(), values });
                }
                "summary" if parts.len() == 4 => {
                    let mean = num(parts[2].strip_prefix("mean=").ok_or_else(|| bad(line))?, line)?;
                    let std = num(parts[3].strip_prefix("std=").ok_or_else(|| bad(line))?, line)?;
                    summary.insert(parts[1].to_string(), Summary { mean, std });
                }
                "temporal_warp_error" if parts.len() == 2 => temporal = Some(num(parts[1], line)?),
                _ => return Err(bad(line)),
            }
        }
        let video = video.ok_or_else(|| Error::Format("report lacks a video id".into()))?;
        let (height, width) = dims.ok_or_else(|| Error::Format("report lacks a resolution".into()))?;
        if count != Some(frames.len()) {
            return Err(Error::Format("frame count does not match frame records".into()));
        }
        Ok(Self {
            video,
            height,
            width,
            frames,
            summary,
            temporal_warp_error: temporal,
        })
    }

    /// One row per frame, then `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let names = self.metric_names();
        let mut s = String::from("frame");
        for n in &names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for f in &self.frames {
            s.push_str(&f.frame.replace(',', "_"));
            for n in &names {
                write!(s, ",{:?}", f.values[n]).unwrap();
            }
            s.push('\n');
        }
        for (label, pick) in [("mean", 0), ("std", 1)] {
            s.push_str(label);
            for n in &names {
                let v = self.summary[n];
                write!(s, ",{:?}", if pick == 0 { v.mean } else { v.std }).unwrap();
            }
            s.push('\n');
        }
        s
    }
}
