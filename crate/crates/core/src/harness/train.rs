//! Enhancer training: the spatial phase on paired images, then fine-tuning
//! on frame pairs with the temporal consistency term.
//!
//! The encoder is frozen and the flow is fixed, so backscatter removal,
//! warped inputs and encoder features are computed once per sample before
//! the first epoch.

use std::collections::BTreeMap;

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{FramePairSample, PairedSample};
use crate::checkpoint::{Checkpoint, EpochRecord, Stage};
use crate::enhancer::SpatialModel;
use crate::flow::{horn_schunck, warp_tensor, FlowField};
use crate::imgcore::{frame_to_tensor, DepthMap, Frame};
use crate::losses::{flow_consistency_from_outputs, spatial_loss, LossWeights};
use crate::nn::CosineAdam;
use crate::physics::{estimate_backscatter, remove_backscatter, BackscatterField};
use crate::{Error, Result};

const SHUFFLE_SALT: u64 = 0x51a7_1a1e;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Horn–Schunck settings for pairs without precomputed flow.
    pub flow_alpha: f64,
    pub flow_iters: usize,
}

/// Loss values of one optimizer step. `l_s` is the weighted spatial sum and
/// `total = l_s + lambda_t * l_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub l_r: f64,
    pub l_sm: f64,
    pub l_c: f64,
    pub l_s: f64,
    pub l_t: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepLog>,
    /// Dataset-mean objective before the first and after the last update.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Backscatter-free input: the estimated backscatter is subtracted, or
/// nothing if the fit fails.
pub fn backscatter_free(frame: &Frame, depth: &DepthMap) -> Result<Frame> {
    let b = match estimate_backscatter(frame, depth) {
        Ok(est) => est.field,
        Err(Error::Fit(msg)) => {
            log::warn!("backscatter fit failed ({msg}); training on the raw frame");
            BackscatterField::zeros(frame.height(), frame.width())
        }
        Err(e) => return Err(e),
    };
    remove_backscatter(frame, &b)
}

/// One enhancer input with its frozen features.
struct Input {
    d: Tensor,
    feats: Vec<Tensor>,
}

impl Input {
    fn new(model: &SpatialModel, d: Tensor) -> Result<Self> {
        let feats = model.encoder_features(&d)?;
        Ok(Self { d, feats })
    }
}

/// Precomputed training unit: one image for the spatial phase, or a frame
/// pair with both warped inputs for fine-tuning.
struct Unit {
    inputs: Vec<Input>,
    gts: Vec<Tensor>,
    /// `(U_{t+1,t}, U_{t,t+1})`.
    flows: Option<(FlowField, FlowField)>,
}

fn check_size(model: &SpatialModel, dims: (usize, usize), first: &mut Option<(usize, usize)>) -> Result<()> {
    let m = model.size_multiple();
    if dims.0 % m != 0 || dims.1 % m != 0 {
        return Err(Error::Shape(format!("training images must be multiples of {m}, got {}x{}", dims.0, dims.1)));
    }
    match first {
        Some(f) if *f != dims => Err(Error::Shape(format!("training images differ in size: {f:?} vs {dims:?}"))),
        _ => {
            *first = Some(dims);
            Ok(())
        }
    }
}

fn prepare_pairs(model: &SpatialModel, samples: &[PairedSample]) -> Result<Vec<Unit>> {
    let dev = model.params().device().clone();
    let dt = model.dtype();
    let mut size = None;
    samples
        .iter()
        .map(|s| {
            check_size(model, s.degraded.dims(), &mut size)?;
            let d = frame_to_tensor(&backscatter_free(&s.degraded, &s.depth)?, dt, &dev)?;
            Ok(Unit {
                inputs: vec![Input::new(model, d)?],
                gts: vec![frame_to_tensor(&s.gt, dt, &dev)?],
                flows: None,
            })
        })
        .collect()
}

fn prepare_frame_pairs(model: &SpatialModel, samples: &[FramePairSample], s: &StageTraining) -> Result<Vec<Unit>> {
    let dev = model.params().device().clone();
    let dt = model.dtype();
    let with_gt = samples.iter().filter(|p| p.gt.is_some()).count();
    if with_gt != 0 && with_gt != samples.len() {
        return Err(Error::Parameter("either every frame pair has ground truth or none does".into()));
    }
    if with_gt == 0 {
        log::warn!("frame pairs carry no ground truth; only the temporal term is optimised");
    }
    let mut size = None;
    samples
        .iter()
        .map(|p| {
            check_size(model, p.frames[0].dims(), &mut size)?;
            let (bwd, fwd) = match (&p.flow_bwd, &p.flow_fwd) {
                (Some(b), Some(f)) => (b.clone(), f.clone()),
                _ => (
                    horn_schunck(&p.frames[1], &p.frames[0], s.flow_alpha, s.flow_iters)?,
                    horn_schunck(&p.frames[0], &p.frames[1], s.flow_alpha, s.flow_iters)?,
                ),
            };
            let d0 = frame_to_tensor(&backscatter_free(&p.frames[0], &p.depths[0])?, dt, &dev)?;
            let d1 = frame_to_tensor(&backscatter_free(&p.frames[1], &p.depths[1])?, dt, &dev)?;
            let (w0, _) = warp_tensor(&d0, &[&bwd])?;
            let (w1, _) = warp_tensor(&d1, &[&fwd])?;
            let gts = match &p.gt {
                Some(g) => vec![frame_to_tensor(&g[0], dt, &dev)?, frame_to_tensor(&g[1], dt, &dev)?],
                None => Vec::new(),
            };
            Ok(Unit {
                inputs: vec![
                    Input::new(model, d0)?,
                    Input::new(model, d1)?,
                    Input::new(model, w0)?,
                    Input::new(model, w1)?,
                ],
                gts,
                flows: Some((bwd, fwd)),
            })
        })
        .collect()
}

fn cat_inputs(units: &[&Unit], slot: usize) -> Result<(Tensor, Vec<Tensor>)> {
    let d: Vec<&Tensor> = units.iter().map(|u| &u.inputs[slot].d).collect();
    let stages = units[0].inputs[slot].feats.len();
    let feats = (0..stages)
        .map(|k| {
            let f: Vec<&Tensor> = units.iter().map(|u| &u.inputs[slot].feats[k]).collect();
            Ok(Tensor::cat(&f, 0)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Tensor::cat(&d, 0)?, feats))
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// Objective of one batch and its logged components (everything but the
/// epoch/step bookkeeping).
fn batch_objective(model: &SpatialModel, units: &[&Unit], w: &LossWeights, temporal: bool) -> Result<(Tensor, StepLog)> {
    let enh = model.enhancer();
    let pair = units[0].flows.is_some();
    let n_frames = if pair { 2 } else { 1 };
    let mut outs = Vec::with_capacity(n_frames);
    let mut maps = Vec::with_capacity(n_frames);
    let mut guides = Vec::with_capacity(n_frames);
    for slot in 0..n_frames {
        let (d, feats) = cat_inputs(units, slot)?;
        let (o, s) = enh.forward(&d, &feats)?;
        outs.push(o);
        maps.push(s);
        guides.push(d);
    }
    let dev = guides[0].device().clone();
    let zero = Tensor::zeros((), guides[0].dtype(), &dev)?;
    let (l_r, l_sm, l_c, l_s) = if units[0].gts.is_empty() {
        (zero.clone(), zero.clone(), zero.clone(), zero.clone())
    } else {
        let gts = (0..n_frames)
            .map(|slot| {
                let g: Vec<&Tensor> = units.iter().map(|u| &u.gts[slot]).collect();
                Ok(Tensor::cat(&g, 0)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let sl = spatial_loss(
            &Tensor::cat(&outs, 0)?,
            &Tensor::cat(&gts, 0)?,
            &Tensor::cat(&maps, 0)?,
            &Tensor::cat(&guides, 0)?,
            w,
        )?;
        (sl.l_r, sl.l_sm, sl.l_c, sl.total)
    };
    let (total, l_t) = if temporal && pair {
        let bwd: Vec<&FlowField> = units.iter().map(|u| &u.flows.as_ref().expect("pair").0).collect();
        let fwd: Vec<&FlowField> = units.iter().map(|u| &u.flows.as_ref().expect("pair").1).collect();
        let (wd0, wf0) = cat_inputs(units, 2)?;
        let (wd1, wf1) = cat_inputs(units, 3)?;
        let (f_w0, _) = enh.forward(&wd0, &wf0)?;
        let (f_w1, _) = enh.forward(&wd1, &wf1)?;
        let a = flow_consistency_from_outputs(&outs[0], &f_w0, &bwd)?;
        let b = flow_consistency_from_outputs(&outs[1], &f_w1, &fwd)?;
        let l_t = ((a + b)? * 0.5)?;
        (((&l_s + (&l_t * w.lambda_t)?)?), Some(l_t))
    } else {
        (l_s.clone(), None)
    };
    let log = StepLog {
        epoch: 0,
        step: 0,
        lr: 0.0,
        l_r: scalar(&l_r)?,
        l_sm: scalar(&l_sm)?,
        l_c: scalar(&l_c)?,
        l_s: scalar(&l_s)?,
        l_t: l_t.as_ref().map(scalar).transpose()?,
        total: scalar(&total)?,
    };
    Ok((total, log))
}

fn dataset_loss(model: &SpatialModel, units: &[Unit], batch: usize, w: &LossWeights, temporal: bool) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in units.chunks(batch) {
        let refs: Vec<&Unit> = chunk.iter().collect();
        let (_, log) = batch_objective(model, &refs, w, temporal)?;
        sum += log.total * chunk.len() as f64;
    }
    Ok(sum / units.len() as f64)
}

fn epoch_record(epoch: usize, steps: &[StepLog]) -> EpochRecord {
    let n = steps.len().max(1) as f64;
    let mean = |f: &dyn Fn(&StepLog) -> f64| steps.iter().map(f).sum::<f64>() / n;
    let mut values = BTreeMap::from([
        ("l_r".to_string(), mean(&|s| s.l_r)),
        ("l_sm".to_string(), mean(&|s| s.l_sm)),
        ("l_c".to_string(), mean(&|s| s.l_c)),
        ("l_s".to_string(), mean(&|s| s.l_s)),
        ("total".to_string(), mean(&|s| s.total)),
    ]);
    if steps.iter().all(|s| s.l_t.is_some()) && !steps.is_empty() {
        values.insert("l_t".to_string(), mean(&|s| s.l_t.unwrap_or(0.0)));
    }
    EpochRecord { epoch, values }
}

fn run(
    model: &SpatialModel,
    units: &[Unit],
    s: &StageTraining,
    w: &LossWeights,
    temporal: bool,
) -> Result<(Vec<StepLog>, Vec<EpochRecord>, f64, f64)> {
    if units.is_empty() {
        return Err(Error::Empty("no training samples".into()));
    }
    if s.batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    w.validate()?;
    let batches = units.len().div_ceil(s.batch_size);
    let mut opt = CosineAdam::new(model.params().vars(), s.lr, s.epochs * batches)?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..units.len()).collect();
    let initial = dataset_loss(model, units, s.batch_size, w, temporal)?;
    let mut steps = Vec::with_capacity(s.epochs * batches);
    let mut epochs = Vec::with_capacity(s.epochs);
    for epoch in 0..s.epochs {
        order.shuffle(&mut rng);
        let first = steps.len();
        for chunk in order.chunks(s.batch_size) {
            let refs: Vec<&Unit> = chunk.iter().map(|&i| &units[i]).collect();
            let (loss, mut log) = batch_objective(model, &refs, w, temporal)?;
            if !log.total.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}, step {}: {log:?}", steps.len())));
            }
            log.epoch = epoch;
            log.step = steps.len();
            log.lr = opt.learning_rate();
            opt.backward_step(&loss)?;
            steps.push(log);
        }
        let rec = epoch_record(epoch, &steps[first..]);
        log::info!("epoch {epoch}: {:?}", rec.values);
        epochs.push(rec);
    }
    let final_loss = dataset_loss(model, units, s.batch_size, w, temporal)?;
    Ok((steps, epochs, initial, final_loss))
}

fn ensure_encoder_frozen(model: &SpatialModel) -> Result<()> {
    if model.encoder().current_hash()? != model.encoder().hash() {
        return Err(Error::Parameter("encoder parameters changed during training".into()));
    }
    Ok(())
}

/// Spatial phase: trains the enhancer of `model` on paired images with the
/// reconstruction, smoothness and colour losses.
pub fn train_spatial(model: SpatialModel, pairs: &[PairedSample], s: &StageTraining, w: &LossWeights) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::Empty("no paired samples".into()));
    }
    let units = prepare_pairs(&model, pairs)?;
    let (steps, log, initial_loss, final_loss) = run(&model, &units, s, w, false)?;
    ensure_encoder_frozen(&model)?;
    Ok(TrainOutcome {
        checkpoint: model.to_checkpoint(Stage::Spatial, s.seed, log)?,
        steps,
        initial_loss,
        final_loss,
    })
}

fn resume(ckpt: &Checkpoint, pairs: &[FramePairSample]) -> Result<SpatialModel> {
    ckpt.require_stage(Stage::Spatial)?;
    if pairs.is_empty() {
        return Err(Error::Empty("no frame pairs".into()));
    }
    SpatialModel::from_checkpoint(ckpt, &Device::Cpu)
}

/// Fine-tuning phase: continues a `spatial` checkpoint on frame pairs with
/// `L_s + lambda_t L_t` and returns a `temporal` checkpoint.
pub fn train_temporal(ckpt: &Checkpoint, pairs: &[FramePairSample], s: &StageTraining, w: &LossWeights) -> Result<TrainOutcome> {
    let model = resume(ckpt, pairs)?;
    let units = prepare_frame_pairs(&model, pairs, s)?;
    let (steps, log, initial_loss, final_loss) = run(&model, &units, s, w, true)?;
    ensure_encoder_frozen(&model)?;
    Ok(TrainOutcome {
        checkpoint: model.to_checkpoint(Stage::Temporal, s.seed, log)?,
        steps,
        initial_loss,
        final_loss,
    })
}

/// Continues a `spatial` checkpoint on the same frame pairs with the
/// spatial objective only; the reference run for fine-tuning.
pub fn fine_tune_spatial(ckpt: &Checkpoint, pairs: &[FramePairSample], s: &StageTraining, w: &LossWeights) -> Result<TrainOutcome> {
    let model = resume(ckpt, pairs)?;
    let units = prepare_frame_pairs(&model, pairs, s)?;
    let (steps, log, initial_loss, final_loss) = run(&model, &units, s, w, false)?;
    ensure_encoder_frozen(&model)?;
    Ok(TrainOutcome {
        checkpoint: model.to_checkpoint(Stage::Spatial, s.seed, log)?,
        steps,
        initial_loss,
        final_loss,
    })
}
