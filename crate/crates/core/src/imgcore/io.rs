//! Raster, depth and frame-directory IO.
//!
//! Raw depth files (`.udpm`) are an 8-byte header (`b"UDPM"`, `u16` height,
//! `u16` width, little-endian) followed by `height * width` little-endian
//! `f32` meters. 16-bit grayscale PNG depth is also accepted when a JSON
//! sidecar `<file>.json` carries `{"meters_per_unit": <scale>}`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::frame::{DepthMap, Frame};
use crate::{Error, Result};

pub const DEPTH_MAGIC: &[u8; 4] = b"UDPM";
pub const DEPTH_EXT: &str = "udpm";

const FRAME_EXTS: [&str; 3] = ["png", "ppm", "pnm"];

pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    match img {
        DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            let data = buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            Frame::new(h as usize, w as usize, data)
        }
        DynamicImage::ImageRgb16(buf) => {
            let (w, h) = buf.dimensions();
            let data = buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
            Frame::new(h as usize, w as usize, data)
        }
        other => Err(Error::Format(format!(
            "{}: expected 8- or 16-bit RGB, found {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Writes an 8-bit raster; the encoder is chosen from the file extension.
pub fn save_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = frame
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(frame.width() as u32, frame.height() as u32, raw)
            .ok_or_else(|| Error::Shape("frame buffer size".into()))?;
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DepthSidecar {
    meters_per_unit: f64,
}

pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    if has_ext(path, DEPTH_EXT) {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_depth(&bytes)
    } else {
        load_depth_png(path)
    }
}

pub fn save_depth(map: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if !has_ext(path, DEPTH_EXT) {
        return Err(Error::Parameter(format!(
            "depth maps are written as .{DEPTH_EXT}, got {}",
            path.display()
        )));
    }
    fs::write(path, encode_depth(map)?).map_err(|e| Error::io(path, e))
}

pub fn encode_depth(map: &DepthMap) -> Result<Vec<u8>> {
    let (h, w) = header_dims(map.height(), map.width())?;
    let mut out = Vec::with_capacity(8 + map.data().len() * 4);
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap> {
    if bytes.len() < 8 || &bytes[..4] != DEPTH_MAGIC {
        return Err(Error::Format("missing UDPM header".into()));
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let body = &bytes[8..];
    if body.len() != h * w * 4 {
        return Err(Error::Format(format!(
            "UDPM header declares {h}x{w} ({} floats) but body holds {} bytes",
            h * w,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    DepthMap::new(h, w, data).map_err(|e| Error::Format(e.to_string()))
}

fn load_depth_png(path: &Path) -> Result<DepthMap> {
    let sidecar_path = sidecar_path(path);
    let text = fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: DepthSidecar = serde_json::from_str(&text)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = match img {
        DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(Error::Format(format!(
                "{}: expected 16-bit grayscale depth, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = buf.dimensions();
    let data = buf
        .into_raw()
        .into_iter()
        .map(|v| (v as f64 * sidecar.meters_per_unit) as f32)
        .collect();
    DepthMap::new(h as usize, w as usize, data).map_err(|e| Error::Format(e.to_string()))
}

/// Writes depth as a 16-bit PNG plus its JSON sidecar.
pub fn save_depth_png(map: &DepthMap, path: impl AsRef<Path>, meters_per_unit: f64) -> Result<()> {
    let path = path.as_ref();
    if meters_per_unit <= 0.0 {
        return Err(Error::Parameter("meters_per_unit must be positive".into()));
    }
    let raw: Vec<u16> = map
        .data()
        .iter()
        .map(|&v| (v as f64 / meters_per_unit).round().clamp(1.0, 65535.0) as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, _> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, raw)
            .ok_or_else(|| Error::Shape("depth buffer size".into()))?;
    buf.save(path)?;
    let sidecar = serde_json::to_string(&DepthSidecar { meters_per_unit })?;
    let sp = sidecar_path(path);
    fs::write(&sp, sidecar).map_err(|e| Error::io(&sp, e))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn header_dims(h: usize, w: usize) -> Result<(u16, u16)> {
    match (u16::try_from(h), u16::try_from(w)) {
        (Ok(h), Ok(w)) => Ok((h, w)),
        _ => Err(Error::Parameter(format!("{h}x{w} exceeds the u16 header range"))),
    }
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Canonical name of the `index`-th (1-based) frame of a video directory.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Raster files in `dir`, sorted lexicographically by file name.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    list_with_exts(dir.as_ref(), &FRAME_EXTS)
}

/// Files in `dir` with extension `ext`, sorted lexicographically.
pub fn list_files_with_ext(dir: impl AsRef<Path>, ext: &str) -> Result<Vec<PathBuf>> {
    list_with_exts(dir.as_ref(), &[ext])
}

fn list_with_exts(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && exts.iter().any(|e| has_ext(&path, e)) {
            out.push(path);
        }
    }
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Finds the depth map for a frame: `<stem>.udpm`, else `<stem>.png` with a
/// sidecar.
pub fn depth_for_frame(depth_dir: &Path, frame_path: &Path) -> Result<PathBuf> {
    let stem = file_stem(frame_path);
    let raw = depth_dir.join(format!("{stem}.{DEPTH_EXT}"));
    if raw.is_file() {
        return Ok(raw);
    }
    let png = depth_dir.join(format!("{stem}.png"));
    if png.is_file() && sidecar_path(&png).is_file() {
        return Ok(png);
    }
    Err(Error::Empty(format!(
        "no depth map for {} in {}",
        frame_path.display(),
        depth_dir.display()
    )))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eight_bit_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let buf: ImageBuffer<Rgb<u8>, _> =
            ImageBuffer::from_raw(2, 1, vec![255u8, 0, 128, 0, 255, 0]).unwrap();
        buf.save(&p).unwrap();
        let f = load_frame(&p).unwrap();
        assert_eq!(f.pixel(0, 0), [1.0, 0.0, 128.0 / 255.0]);
        assert_eq!(f.pixel(0, 1), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn sixteen_bit_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let buf: ImageBuffer<Rgb<u16>, _> =
            ImageBuffer::from_raw(1, 1, vec![32768u16, 65535, 0]).unwrap();
        buf.save(&p).unwrap();
        let f = load_frame(&p).unwrap();
        assert!((f.get(0, 0, 0) - 0.500_007_6).abs() < 1e-6);
        assert_eq!(f.get(0, 0, 1), 1.0);
        assert_eq!(f.get(0, 0, 2), 0.0);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_frame(dir.path().join("missing.png")), Err(Error::Io { .. })));
        let bad = dir.path().join("bad.png");
        fs::write(&bad, b"not an image").unwrap();
        assert!(matches!(load_frame(&bad), Err(Error::Format(_))));
        let gray = dir.path().join("gray.png");
        ImageBuffer::<Luma<u8>, _>::from_raw(2, 2, vec![0u8; 4]).unwrap().save(&gray).unwrap();
        assert!(matches!(load_frame(&gray), Err(Error::Format(_))));
    }

    #[test]
    fn extreme_frames_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for v in [0.0, 1.0] {
            let f = Frame::filled(8, 8, [v; 3]);
            let p = dir.path().join("f.png");
            save_frame(&f, &p).unwrap();
            assert_eq!(load_frame(&p).unwrap(), f);
        }
    }

    #[test]
    fn save_to_unwritable_path_is_io_error() {
        let f = Frame::zeros(8, 8);
        let err = save_frame(&f, "/nonexistent-dir/x/y.png").unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err:?}");
    }

    #[test]
    fn depth_header_length_mismatch() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(DEPTH_MAGIC);
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        for _ in 0..15 {
            bytes.extend_from_slice(&1.0f32.to_le_bytes());
        }
        assert!(matches!(decode_depth(&bytes), Err(Error::Format(_))));
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        let map = decode_depth(&bytes).unwrap();
        assert!(map.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn depth_png_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let map = DepthMap::from_fn(5, 6, |y, x| 0.5 + 0.25 * (y + x) as f32).unwrap();
        save_depth_png(&map, &p, 0.001).unwrap();
        let back = load_depth(&p).unwrap();
        for (a, b) in map.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.0005 + 1e-6);
        }
    }

    #[test]
    fn frame_listing_is_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for i in [3, 1, 2] {
            save_frame(&Frame::zeros(8, 8), dir.path().join(frame_file_name(i))).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let names: Vec<_> = list_frames(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["frame_000001.png", "frame_000002.png", "frame_000003.png"]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn random_frame_round_trip(data in proptest::collection::vec(0.0f32..=1.0, 8 * 9 * 3)) {
            let dir = tempfile::tempdir().unwrap();
            let f = Frame::new(8, 9, data).unwrap();
            let p = dir.path().join("r.png");
            save_frame(&f, &p).unwrap();
            let back = load_frame(&p).unwrap();
            for (a, b) in f.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }

        #[test]
        fn raw_depth_round_trip_is_bit_exact(data in proptest::collection::vec(0.001f32..100.0, 7 * 5)) {
            let map = DepthMap::new(7, 5, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("d.udpm");
            save_depth(&map, &p).unwrap();
            let back = load_depth(&p).unwrap();
            prop_assert_eq!(
                map.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
