//! AdamW and the training step.

use super::net::{clip_loss_var, ClipTargets, LossBreakdown, ParamVars};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::{lit, Gradients, Scalar, Tape, Tensor};

/// Optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One training clip.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<T> {
    /// `[T,3,H,W]` frames in [0,1].
    pub clip: Tensor<T>,
    pub targets: ClipTargets<T>,
}

struct ClipResult<T> {
    sem: f64,
    st: f64,
    total: f64,
    grads: Gradients<T>,
}

fn clip_gradients<T: Scalar>(params: &ModelParams<T>, sample: &TrainSample<T>, inv: f64) -> Result<ClipResult<T>> {
    let cfg = &params.config;
    let mut tape = Tape::new();
    let p = ParamVars::tracked(&mut tape, params);
    let lv = clip_loss_var(&mut tape, cfg, &p, &sample.clip, &sample.targets, cfg.prior)?;
    let scalar = |v| tape.value(v).item().to_f64().unwrap_or(f64::NAN);
    let (total, sem) = (scalar(lv.total), scalar(lv.sem));
    let st = lv.st.map_or(0.0, scalar);
    if !total.is_finite() {
        return Err(Error::NonFinite { op: "training loss" });
    }
    let root = tape.scale(lv.total, lit(inv));
    let grads = tape.backward(root)?;
    Ok(ClipResult { sem, st, total, grads })
}

/// Loss and gradients of the batch mean. Each clip gets its own tape and the
/// per-clip gradients are summed in batch order.
pub fn batch_gradients<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[TrainSample<T>],
) -> Result<(LossBreakdown, Gradients<T>)> {
    batch_gradients_threaded(params, batch, 1)
}

/// [`batch_gradients`] with clips spread over up to `threads` workers. The
/// reduction order is fixed, so the result does not depend on `threads`.
pub fn batch_gradients_threaded<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[TrainSample<T>],
    threads: usize,
) -> Result<(LossBreakdown, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let inv = 1.0 / batch.len() as f64;
    let threads = threads.clamp(1, batch.len());
    let results: Vec<Result<ClipResult<T>>> = if threads == 1 {
        batch.iter().map(|s| clip_gradients(params, s, inv)).collect()
    } else {
        let per = batch.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(per)
                .map(|chunk| {
                    scope.spawn(move || chunk.iter().map(|s| clip_gradients(params, s, inv)).collect::<Vec<_>>())
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    };

    let mut loss = LossBreakdown {
        sem: 0.0,
        st: 0.0,
        total: 0.0,
    };
    let mut total_grads: Option<Gradients<T>> = None;
    for r in results {
        let r = r?;
        loss.sem += inv * r.sem;
        loss.st += inv * r.st;
        loss.total += inv * r.total;
        match &mut total_grads {
            None => total_grads = Some(r.grads),
            Some(acc) => {
                for (k, t) in r.grads {
                    let dst = acc.get_mut(&k).expect("same parameter set");
                    for (d, s) in dst.data_mut().iter_mut().zip(t.data()) {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
    Ok((loss, total_grads.expect("non-empty batch")))
}

/// One decoupled-weight-decay Adam update.
pub fn adamw_update<T: Scalar>(params: &mut ModelParams<T>, grads: &Gradients<T>, hyper: &TrainHyper) -> Result<()> {
    let state = &mut params.optim;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let (b1, b2): (T, T) = (lit(hyper.beta1), lit(hyper.beta2));
    let (one_b1, one_b2): (T, T) = (lit(1.0 - hyper.beta1), lit(1.0 - hyper.beta2));
    let decay: T = lit(1.0 - hyper.lr * hyper.weight_decay);
    let step: T = lit(hyper.lr / bc1);
    let inv_bc2_sqrt: T = lit(1.0 / bc2.sqrt());
    let eps: T = lit(hyper.eps);
    for (name, p) in params.tensors.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no gradient for '{name}'")))?;
        let m = state.m.get_mut(name).expect("moment per parameter");
        let v = state.v.get_mut(name).expect("moment per parameter");
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            *pi = *pi * decay - step * *mi / ((*vi).sqrt() * inv_bc2_sqrt + eps);
        }
        if !p.all_finite() {
            return Err(Error::NonFinite { op: "adamw_update" });
        }
    }
    Ok(())
}

/// Forward, backward and one AdamW step on a batch of clips.
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    batch: &[TrainSample<T>],
    hyper: &TrainHyper,
) -> Result<LossBreakdown> {
    train_step_threaded(params, batch, hyper, 1)
}

pub fn train_step_threaded<T: Scalar>(
    params: &mut ModelParams<T>,
    batch: &[TrainSample<T>],
    hyper: &TrainHyper,
    threads: usize,
) -> Result<LossBreakdown> {
    let (loss, grads) = batch_gradients_threaded(params, batch, threads)?;
    adamw_update(params, &grads, hyper)?;
    Ok(loss)
}
