//! Forward pass and joint loss.
//!
//! Per frame: a stride-4 encoder produces `F_rgb`; the prior generator maps
//! it to `F_m`; a 1×1 head turns `F_m` into the prior logits `p_m`; the
//! fusion block merges `F_rgb` and `F_m` into `F_s`; the decoder upsamples
//! `F_s` to full-resolution segmentation logits. Without the prior branch the
//! decoder reads `F_rgb` directly.

use std::collections::BTreeMap;

use super::config::{Fusion, ModelConfig};
use super::params::{names::*, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{lit, ops, Scalar, Tape, Tensor, Var};

/// Parameters registered on a tape.
pub struct ParamVars(BTreeMap<String, Var>);

impl ParamVars {
    /// Registers every tensor as trainable.
    pub fn tracked<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>) -> Self {
        ParamVars(
            params
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), tape.param(k.clone(), t.clone())))
                .collect(),
        )
    }

    /// Registers every tensor as a constant (inference).
    pub fn frozen<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>) -> Self {
        ParamVars(
            params
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), tape.constant(t.clone())))
                .collect(),
        )
    }

    fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("model has no parameter '{name}'")))
    }
}

pub fn encode_var<T: Scalar>(tape: &mut Tape<T>, p: &ParamVars, frame: Var) -> Result<Var> {
    let x = tape.conv3x3(frame, p.get(ENC1_W)?, p.get(ENC1_B)?, 2)?;
    let x = tape.relu(x);
    let x = tape.conv3x3(x, p.get(ENC2_W)?, p.get(ENC2_B)?, 2)?;
    Ok(tape.relu(x))
}

/// `Conv1×1 → ReLU → DSConv3×3 → ReLU → Conv1×1`.
pub fn prior_generate_var<T: Scalar>(tape: &mut Tape<T>, p: &ParamVars, f_rgb: Var) -> Result<Var> {
    let x = tape.conv1x1(f_rgb, p.get(PRIOR_EXPAND_W)?, p.get(PRIOR_EXPAND_B)?)?;
    let x = tape.relu(x);
    let x = tape.depthwise_conv3x3(x, p.get(PRIOR_DW_W)?)?;
    let x = tape.relu(x);
    tape.conv1x1(x, p.get(PRIOR_PROJECT_W)?, p.get(PRIOR_PROJECT_B)?)
}

pub fn prior_predict_var<T: Scalar>(tape: &mut Tape<T>, p: &ParamVars, f_m: Var) -> Result<Var> {
    tape.conv1x1(f_m, p.get(PREDICT_W)?, p.get(PREDICT_B)?)
}

pub fn prior_fuse_var<T: Scalar>(
    tape: &mut Tape<T>,
    p: &ParamVars,
    fusion: Fusion,
    f_rgb: Var,
    f_m: Var,
) -> Result<Var> {
    match fusion {
        Fusion::Add => tape.add(f_rgb, f_m),
        Fusion::Mul => tape.hadamard(f_rgb, f_m),
        Fusion::Attention => {
            let low_rgb = tape.conv1x1(f_rgb, p.get(FUSE_RGB_W)?, p.get(FUSE_RGB_B)?)?;
            let low_m = tape.conv1x1(f_m, p.get(FUSE_MOTION_W)?, p.get(FUSE_MOTION_B)?)?;
            let joint = tape.concat_channels(low_rgb, low_m)?;
            let corr = tape.conv1x1(joint, p.get(FUSE_CORR_W)?, p.get(FUSE_CORR_B)?)?;
            let att = tape.softmax_spatial(corr)?;
            let weighted = tape.hadamard(low_rgb, att)?;
            let merged = tape.concat_channels(weighted, low_m)?;
            tape.conv1x1(merged, p.get(FUSE_OUT_W)?, p.get(FUSE_OUT_B)?)
        }
    }
}

pub fn decode_var<T: Scalar>(tape: &mut Tape<T>, p: &ParamVars, f_s: Var) -> Result<Var> {
    let (_, h, w) = tape.value(f_s).dims3()?;
    let x = tape.conv3x3(f_s, p.get(DEC1_W)?, p.get(DEC1_B)?, 1)?;
    let x = tape.relu(x);
    let x = tape.bilinear_resize(x, 2 * h, 2 * w)?;
    let x = tape.conv3x3(x, p.get(DEC2_W)?, p.get(DEC2_B)?, 1)?;
    let x = tape.relu(x);
    let x = tape.bilinear_resize(x, 4 * h, 4 * w)?;
    tape.conv1x1(x, p.get(HEAD_W)?, p.get(HEAD_B)?)
}

/// Tape handles for one frame's forward pass.
pub struct FrameVars {
    pub logits: Var,
    pub prior_logits: Option<Var>,
    pub f_rgb: Var,
    pub f_m: Option<Var>,
    pub f_s: Var,
}

pub fn frame_forward<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    p: &ParamVars,
    frame: Var,
    with_prior: bool,
) -> Result<FrameVars> {
    let (c, h, w) = tape.value(frame).dims3()?;
    if c != 3 || h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(Error::dim(
            "forward",
            format!("frame must be [3,H,W] with H,W multiples of 4, got [{c},{h},{w}]"),
        ));
    }
    if with_prior && !cfg.prior {
        return Err(Error::InvalidArgument("model was built without the prior branch".into()));
    }
    let f_rgb = encode_var(tape, p, frame)?;
    if !with_prior {
        let logits = decode_var(tape, p, f_rgb)?;
        return Ok(FrameVars {
            logits,
            prior_logits: None,
            f_rgb,
            f_m: None,
            f_s: f_rgb,
        });
    }
    let f_m = prior_generate_var(tape, p, f_rgb)?;
    let prior_logits = prior_predict_var(tape, p, f_m)?;
    let f_s = prior_fuse_var(tape, p, cfg.fusion, f_rgb, f_m)?;
    let logits = decode_var(tape, p, f_s)?;
    Ok(FrameVars {
        logits,
        prior_logits: Some(prior_logits),
        f_rgb,
        f_m: Some(f_m),
        f_s,
    })
}

fn check_clip<T>(cfg: &ModelConfig, clip: &Tensor<T>) -> Result<usize> {
    match clip.shape()[..] {
        [t, 3, h, w] if t >= 1 && h == cfg.height && w == cfg.width => Ok(t),
        _ => Err(Error::dim(
            "clip",
            format!(
                "expected [T,3,{},{}], got {:?}",
                cfg.height,
                cfg.width,
                clip.shape()
            ),
        )),
    }
}

/// Values of a full forward pass over a clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    /// `[T,1,H,W]` segmentation logits.
    pub logits: Tensor<T>,
    /// `[T,1,h,w]` prior logits; absent without the prior branch.
    pub prior_logits: Option<Tensor<T>>,
    pub f_rgb: Tensor<T>,
    pub f_m: Option<Tensor<T>>,
    pub f_s: Tensor<T>,
}

fn stack_opt<T: Scalar>(items: Vec<Option<Tensor<T>>>) -> Result<Option<Tensor<T>>> {
    items
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .map(|v| Tensor::stack(&v))
        .transpose()
}

pub fn forward<T: Scalar>(clip: &Tensor<T>, params: &ModelParams<T>, with_prior: bool) -> Result<ForwardOutput<T>> {
    let cfg = &params.config;
    let frames = check_clip(cfg, clip)?;
    let (mut logits, mut prior, mut f_rgb, mut f_m, mut f_s) = (vec![], vec![], vec![], vec![], vec![]);
    for t in 0..frames {
        let mut tape = Tape::new();
        let p = ParamVars::frozen(&mut tape, params);
        let x = tape.constant(clip.index_axis0(t)?);
        let v = frame_forward(&mut tape, cfg, &p, x, with_prior)?;
        logits.push(tape.value(v.logits).clone());
        prior.push(v.prior_logits.map(|pl| tape.value(pl).clone()));
        f_rgb.push(tape.value(v.f_rgb).clone());
        f_m.push(v.f_m.map(|m| tape.value(m).clone()));
        f_s.push(tape.value(v.f_s).clone());
    }
    Ok(ForwardOutput {
        logits: Tensor::stack(&logits)?,
        prior_logits: stack_opt(prior)?,
        f_rgb: Tensor::stack(&f_rgb)?,
        f_m: stack_opt(f_m)?,
        f_s: Tensor::stack(&f_s)?,
    })
}

/// Runs a single-frame sub-network without gradients.
fn eval_frames<T: Scalar>(
    x: &Tensor<T>,
    params: &ModelParams<T>,
    f: impl Fn(&mut Tape<T>, &ParamVars, Var) -> Result<Var>,
) -> Result<Tensor<T>> {
    let mut outs = Vec::with_capacity(x.shape()[0]);
    for t in 0..x.shape()[0] {
        let mut tape = Tape::new();
        let p = ParamVars::frozen(&mut tape, params);
        let xv = tape.constant(x.index_axis0(t)?);
        let y = f(&mut tape, &p, xv)?;
        outs.push(tape.value(y).clone());
    }
    Tensor::stack(&outs)
}

/// `[T,3,H,W]` clip → `[T,C,H/4,W/4]` features.
pub fn encode<T: Scalar>(clip: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    check_clip(&params.config, clip)?;
    eval_frames(clip, params, |tape, p, x| encode_var(tape, p, x))
}

/// `[C,h,w]` → `[C,h,w]`.
pub fn prior_generate<T: Scalar>(f_rgb: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    let x = Tensor::stack(std::slice::from_ref(f_rgb))?;
    eval_frames(&x, params, |tape, p, x| prior_generate_var(tape, p, x))?.index_axis0(0)
}

/// `[C,h,w]` → `[1,h,w]`.
pub fn prior_predict<T: Scalar>(f_m: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    let x = Tensor::stack(std::slice::from_ref(f_m))?;
    eval_frames(&x, params, |tape, p, x| prior_predict_var(tape, p, x))?.index_axis0(0)
}

pub fn prior_fuse<T: Scalar>(f_rgb: &Tensor<T>, f_m: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let p = ParamVars::frozen(&mut tape, params);
    let a = tape.constant(f_rgb.clone());
    let b = tape.constant(f_m.clone());
    let y = prior_fuse_var(&mut tape, &p, params.config.fusion, a, b)?;
    Ok(tape.value(y).clone())
}

/// `[T,C,h,w]` → `[T,1,4h,4w]`.
pub fn decode<T: Scalar>(f_s: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    eval_frames(f_s, params, |tape, p, x| decode_var(tape, p, x))
}

/// Loss components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub sem: f64,
    pub st: f64,
    pub total: f64,
}

/// Per-clip supervision. Masks are `[1,H,W]` in {0,1}; targets are
/// `[1,h,w]` in [0,1], already pooled to feature resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipTargets<T> {
    pub masks: Vec<Tensor<T>>,
    pub st_targets: Vec<Tensor<T>>,
}

/// Tape handles of a clip's loss.
pub struct LossVars {
    pub total: Var,
    pub sem: Var,
    pub st: Option<Var>,
}

/// Records `L_sem + λ·L_ST` for one clip, each term averaged over frames.
pub fn clip_loss_var<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    p: &ParamVars,
    clip: &Tensor<T>,
    targets: &ClipTargets<T>,
    with_prior: bool,
) -> Result<LossVars> {
    let frames = check_clip(cfg, clip)?;
    if targets.masks.len() != frames || (with_prior && targets.st_targets.len() != frames) {
        return Err(Error::dim(
            "joint_loss",
            format!(
                "{frames} frames but {} masks / {} targets",
                targets.masks.len(),
                targets.st_targets.len()
            ),
        ));
    }
    let mut sem_terms = Vec::with_capacity(frames);
    let mut st_terms = Vec::with_capacity(frames);
    for t in 0..frames {
        let x = tape.constant(clip.index_axis0(t)?);
        let v = frame_forward(tape, cfg, p, x, with_prior)?;
        let m = tape.constant(targets.masks[t].clone());
        sem_terms.push(tape.bce_with_logits(v.logits, m)?);
        if let Some(pl) = v.prior_logits {
            let prob = tape.sigmoid(pl);
            let st = tape.constant(targets.st_targets[t].clone());
            st_terms.push(tape.mse(prob, st)?);
        }
    }
    let inv = 1.0 / frames as f64;
    let sem = crate::tensor::tape_weighted_sum(tape, &sem_terms, inv)?;
    if st_terms.is_empty() {
        return Ok(LossVars {
            total: sem,
            sem,
            st: None,
        });
    }
    let st = crate::tensor::tape_weighted_sum(tape, &st_terms, inv)?;
    let scaled = tape.scale(st, lit(cfg.lambda_st));
    let total = tape.add(sem, scaled)?;
    Ok(LossVars {
        total,
        sem,
        st: Some(st),
    })
}

/// Loss of precomputed outputs: BCE-with-logits on the segmentation logits
/// plus `λ_ST` times the MSE between `sigmoid(p_m)` and the pooled targets.
pub fn joint_loss<T: Scalar>(out: &ForwardOutput<T>, targets: &ClipTargets<T>, lambda_st: f64) -> Result<LossBreakdown> {
    let frames = out.logits.shape()[0];
    if targets.masks.len() != frames {
        return Err(Error::dim("joint_loss", "mask count differs from frame count"));
    }
    let mut sem = 0.0;
    let mut st = 0.0;
    for t in 0..frames {
        sem += ops::bce_with_logits(&out.logits.index_axis0(t)?, &targets.masks[t])?
            .to_f64()
            .unwrap_or(f64::NAN);
        if let Some(pl) = &out.prior_logits {
            let target = targets
                .st_targets
                .get(t)
                .ok_or_else(|| Error::dim("joint_loss", "missing supervision target"))?;
            st += ops::mse(&ops::sigmoid(&pl.index_axis0(t)?), target)?
                .to_f64()
                .unwrap_or(f64::NAN);
        }
    }
    let sem = sem / frames as f64;
    let st = st / frames as f64;
    Ok(LossBreakdown {
        sem,
        st,
        total: sem + lambda_st * st,
    })
}
