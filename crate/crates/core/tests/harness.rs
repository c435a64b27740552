use candle_core::{DType, Device};
use tempfile::tempdir;
use undive::checkpoint::{Checkpoint, Stage};
use undive::diffusion::{EncoderHandle, ScheduleConfig, UNetConfig};
use undive::enhancer::{EnhancerConfig, SpatialModel};
use undive::harness::*;
use undive::imgcore::io::frame_file_name;
use undive::imgcore::{load_frame, save_depth, save_frame};
use undive::losses::LossWeights;
use undive::Error;

fn tiny_unet() -> UNetConfig {
    UNetConfig {
        base_channels: 4,
        depth: 1,
        time_embed_dim: 8,
        channel_mults: vec![1, 1],
    }
}

fn tiny_enhancer() -> EnhancerConfig {
    EnhancerConfig {
        guide_channels: 4,
        fusion_channels: 4,
        ..EnhancerConfig::desk()
    }
}

fn model(seed: u64) -> SpatialModel {
    let enc = EncoderHandle::random(&tiny_unet(), 3, &Device::Cpu).unwrap();
    SpatialModel::new(enc, ScheduleConfig::desk(), "prior".into(), &tiny_enhancer(), seed, DType::F32).unwrap()
}

fn settings(epochs: usize) -> StageTraining {
    StageTraining {
        epochs,
        batch_size: 2,
        lr: 1e-3,
        seed: 7,
        flow_alpha: 15.0,
        flow_iters: 20,
    }
}

fn synth(size: usize) -> SynthSettings {
    SynthSettings {
        size,
        seed: 11,
        ..SynthSettings::default()
    }
}

fn spatial_checkpoint() -> Checkpoint {
    let (pairs, _) = make_paired_samples(&[], 4, &synth(16)).unwrap();
    train_spatial(model(1), &pairs, &settings(1), &LossWeights::default())
        .unwrap()
        .checkpoint
}

fn frame_pairs() -> Vec<FramePairSample> {
    let (video, _) = make_synthetic_video(6, (1, 0), &synth(16), None).unwrap();
    video.pairs().unwrap()
}

#[test]
fn spatial_steps_sum_components() {
    let (pairs, _) = make_paired_samples(&[], 5, &synth(16)).unwrap();
    let w = LossWeights::default();
    let out = train_spatial(model(1), &pairs, &settings(2), &w).unwrap();
    assert_eq!(out.steps.len(), 2 * 3);
    for s in &out.steps {
        let weighted = w.lambda1 * s.l_r + w.lambda2 * s.l_sm + w.lambda3 * s.l_c;
        assert!((s.l_s - weighted).abs() < 1e-6, "{s:?}");
        assert!((s.total - s.l_s).abs() < 1e-6);
        assert!(s.l_t.is_none());
    }
    assert_eq!(out.checkpoint.stage(), Stage::Spatial);
    assert_eq!(out.checkpoint.meta.log.len(), 2);
    assert!(out.checkpoint.meta.log[0].values.contains_key("l_c"));
}

#[test]
fn encoder_is_frozen_through_training() {
    let m = model(1);
    let before = m.encoder().export().unwrap();
    let (pairs, _) = make_paired_samples(&[], 4, &synth(16)).unwrap();
    let ck = train_spatial(m, &pairs, &settings(2), &LossWeights::default()).unwrap().checkpoint;
    for (name, _, data) in before {
        assert_eq!(ck.tensors[&name].1, data, "{name}");
    }
}

#[test]
fn spatial_training_is_deterministic() {
    let (pairs, _) = make_paired_samples(&[], 4, &synth(16)).unwrap();
    let run = || {
        train_spatial(model(1), &pairs, &settings(2), &LossWeights::default())
            .unwrap()
            .checkpoint
            .to_bytes()
            .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn temporal_steps_sum_components() {
    let ck = spatial_checkpoint();
    let w = LossWeights {
        lambda_t: 0.7,
        ..LossWeights::default()
    };
    let out = train_temporal(&ck, &frame_pairs(), &settings(2), &w).unwrap();
    assert_eq!(out.checkpoint.stage(), Stage::Temporal);
    assert!(!out.steps.is_empty());
    for s in &out.steps {
        let l_t = s.l_t.expect("temporal term logged");
        assert!(l_t >= 0.0);
        let weighted = w.lambda1 * s.l_r + w.lambda2 * s.l_sm + w.lambda3 * s.l_c;
        assert!((s.l_s - weighted).abs() < 1e-6);
        assert!((s.total - (s.l_s + w.lambda_t * l_t)).abs() < 1e-6, "{s:?}");
    }
    assert!(out.checkpoint.meta.log[0].values.contains_key("l_t"));
    assert_eq!(out.checkpoint.meta.prior_hash, ck.meta.prior_hash);
}

#[test]
fn zero_temporal_weight_matches_spatial_fine_tuning() {
    let ck = spatial_checkpoint();
    let pairs = frame_pairs();
    let w = LossWeights {
        lambda_t: 0.0,
        ..LossWeights::default()
    };
    let a = train_temporal(&ck, &pairs, &settings(2), &w).unwrap();
    let b = fine_tune_spatial(&ck, &pairs, &settings(2), &w).unwrap();
    assert_eq!(a.steps.len(), b.steps.len());
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert_eq!(x.l_s, y.l_s);
        assert_eq!(x.total, y.total);
    }
    assert_eq!(a.final_loss, b.final_loss);
}

#[test]
fn temporal_training_requires_spatial_checkpoint() {
    let ck = spatial_checkpoint();
    let pairs = frame_pairs();
    let temporal = train_temporal(&ck, &pairs, &settings(1), &LossWeights::default())
        .unwrap()
        .checkpoint;
    let err = train_temporal(&temporal, &pairs, &settings(1), &LossWeights::default()).unwrap_err();
    assert!(matches!(err, Error::Stage { .. }), "{err}");

    let m = model(1);
    let mut prior = m.to_checkpoint(Stage::Spatial, 0, Vec::new()).unwrap();
    prior.meta.stage = Stage::Prior;
    let err = train_temporal(&prior, &pairs, &settings(1), &LossWeights::default()).unwrap_err();
    assert!(matches!(err, Error::Stage { .. }), "{err}");
}

#[test]
fn mixed_ground_truth_is_rejected() {
    let ck = spatial_checkpoint();
    let mut pairs = frame_pairs();
    pairs[0].gt = None;
    assert!(train_temporal(&ck, &pairs, &settings(1), &LossWeights::default()).is_err());
}

#[test]
fn pairs_without_ground_truth_train_temporal_term_only() {
    let ck = spatial_checkpoint();
    let mut pairs = frame_pairs();
    for p in &mut pairs {
        p.gt = None;
    }
    let out = train_temporal(&ck, &pairs, &settings(1), &LossWeights::default()).unwrap();
    for s in &out.steps {
        assert_eq!(s.l_s, 0.0);
        assert_eq!(s.total, s.l_t.unwrap());
    }
}

#[test]
fn empty_training_sets_are_rejected() {
    assert!(matches!(
        train_spatial(model(1), &[], &settings(1), &LossWeights::default()),
        Err(Error::Empty(_))
    ));
    let ck = spatial_checkpoint();
    assert!(matches!(
        train_temporal(&ck, &[], &settings(1), &LossWeights::default()),
        Err(Error::Empty(_))
    ));
}

#[test]
fn misaligned_sizes_are_rejected() {
    let (pairs, _) = make_paired_samples(&[], 1, &synth(18)).unwrap();
    assert!(matches!(
        train_spatial(model(1), &pairs, &settings(1), &LossWeights::default()),
        Err(Error::Shape(_))
    ));
}

/// Writes `frames/` and `depth/`; returns the frames as read back.
fn write_video(dir: &std::path::Path, n: usize) -> Vec<undive::imgcore::Frame> {
    let (video, _) = make_synthetic_video(n, (1, 1), &synth(20), None).unwrap();
    std::fs::create_dir_all(dir.join("frames")).unwrap();
    std::fs::create_dir_all(dir.join("depth")).unwrap();
    for (i, (f, d)) in video.frames.iter().zip(&video.depths).enumerate() {
        save_frame(f, dir.join("frames").join(frame_file_name(i + 1))).unwrap();
        save_depth(d, dir.join("depth").join(format!("frame_{:06}.udpm", i + 1))).unwrap();
    }
    (0..n)
        .map(|i| load_frame(dir.join("frames").join(frame_file_name(i + 1))).unwrap())
        .collect()
}

#[test]
fn rigged_identity_model_reproduces_inputs() {
    let dir = tempdir().unwrap();
    let frames = write_video(dir.path(), 3);
    let m = model(1);
    m.set_constant_illumination(1.0).unwrap();
    let opts = EnhanceOptions {
        remove_backscatter: false,
    };
    let out = dir.path().join("out");
    let manifest = enhance_video_with(
        &m,
        "hash",
        "spatial",
        &dir.path().join("frames"),
        &out,
        &dir.path().join("depth"),
        &opts,
    )
    .unwrap();
    assert_eq!(manifest.frames, 3);
    assert_eq!(manifest.outputs.len(), 3);
    for (i, f) in frames.iter().enumerate() {
        let name = frame_file_name(i + 1);
        assert_eq!(manifest.outputs[i], name);
        let got = load_frame(out.join(&name)).unwrap();
        let max = got.data().iter().zip(f.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(max <= 0.5 / 255.0 + 1e-3, "frame {i}: {max}");
    }
    let text = std::fs::read_to_string(out.join(MANIFEST_NAME)).unwrap();
    let parsed: EnhanceManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed.checkpoint_hash, "hash");
}

#[test]
fn enhance_from_checkpoint_writes_every_frame() {
    let dir = tempdir().unwrap();
    write_video(dir.path(), 2);
    let ck = spatial_checkpoint();
    let out = dir.path().join("out");
    let manifest = enhance_video(
        &dir.path().join("frames"),
        &out,
        &ck,
        &dir.path().join("depth"),
        &EnhanceOptions::default(),
    )
    .unwrap();
    assert_eq!(manifest.frames, 2);
    assert_eq!(manifest.checkpoint_hash, ck.content_hash().unwrap());
    assert_eq!(manifest.stage, "spatial");
    assert!(out.join(frame_file_name(2)).exists());
}

#[test]
fn enhance_rejects_empty_and_missing_depth() {
    let dir = tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let m = model(1);
    let opts = EnhanceOptions::default();
    let err = enhance_video_with(&m, "h", "spatial", &empty, &dir.path().join("o"), &empty, &opts).unwrap_err();
    assert!(err.is_validation(), "{err}");

    write_video(dir.path(), 2);
    std::fs::remove_file(dir.path().join("depth").join("frame_000002.udpm")).unwrap();
    let out = dir.path().join("out");
    let err = enhance_video_with(&m, "h", "spatial", &dir.path().join("frames"), &out, &dir.path().join("depth"), &opts)
        .unwrap_err();
    assert!(err.is_validation(), "{err}");
    // nothing is written before every depth map is located
    assert!(!out.join(frame_file_name(1)).exists());
}

#[test]
fn shipped_configs_parse() {
    let full = Config::from_toml_str(include_str!("../config/default.toml")).unwrap();
    assert_eq!(full, Config::default());
    let desk = Config::from_toml_str(include_str!("../config/desk.toml")).unwrap();
    assert_eq!(desk, Config::desk());
}
