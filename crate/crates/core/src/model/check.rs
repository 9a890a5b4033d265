//! Finite-difference check of the full joint loss in double precision.

use rand::Rng as _;

use super::config::ModelConfig;
use super::net::ClipTargets;
use super::params::ModelParams;
use super::train::{batch_gradients, TrainSample};
use crate::error::Result;
use crate::rng::{streams, substream};
use crate::tensor::{finite_diff_check, GradCheck, Tensor, DEFAULT_FD_EPS};

/// Toy configuration used by the gradient check: `C=4, r=2, T=1`, 8×8 input.
pub fn gradcheck_config(seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::new(8, 8, 4);
    cfg.rank = 2;
    cfg.frames = 1;
    cfg.seed = seed;
    cfg
}

/// Random clip, binary masks and [0,1] prior targets for `cfg`.
pub fn random_sample(cfg: &ModelConfig, seed: u64) -> Result<TrainSample<f64>> {
    let mut rng = substream(seed, streams::GRADCHECK);
    let (h, w) = (cfg.height, cfg.width);
    let (fh, fw) = cfg.feature_size();
    let n = cfg.frames * 3 * h * w;
    let clip = Tensor::new(vec![cfg.frames, 3, h, w], (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())?;
    let mut masks = Vec::new();
    let mut st_targets = Vec::new();
    for _ in 0..cfg.frames {
        masks.push(Tensor::new(
            vec![1, h, w],
            (0..h * w).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect(),
        )?);
        st_targets.push(Tensor::new(vec![1, fh, fw], (0..fh * fw).map(|_| rng.gen_range(0.0..1.0)).collect())?);
    }
    Ok(TrainSample {
        clip,
        targets: ClipTargets { masks, st_targets },
    })
}

/// Runs the central-difference check over every parameter of the toy model
/// with randomised (non-zero) biases.
pub fn gradcheck_joint_loss(seed: u64) -> Result<GradCheck> {
    gradcheck_joint_loss_with(seed, DEFAULT_FD_EPS)
}

/// [`gradcheck_joint_loss`] with an explicit finite-difference step.
pub fn gradcheck_joint_loss_with(seed: u64, eps: f64) -> Result<GradCheck> {
    let cfg = gradcheck_config(seed);
    let mut params = ModelParams::<f64>::init(&cfg)?;
    let mut rng = substream(seed, streams::GRADCHECK + 1);
    for t in params.tensors.values_mut() {
        if t.rank() == 1 {
            t.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
    }
    let sample = random_sample(&cfg, seed)?;
    let batch = [sample];
    let base = params.clone();
    finite_diff_check(
        |tensors| {
            let mut p = base.clone();
            p.tensors = tensors.clone();
            let (loss, grads) = batch_gradients(&p, &batch)?;
            Ok((loss.total, grads))
        },
        &params.tensors,
        eps,
    )
}
