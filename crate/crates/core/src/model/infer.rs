//! Event-free inference: frames in, masks out.

use super::net::forward;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::supervision::BinaryMask;
use crate::tensor::{ops, Scalar, Tensor};

/// Input height/width for scale factor `s`, rounded to a multiple of 4.
pub fn scaled_size(n: usize, s: f64) -> usize {
    (((n as f64 * s) / 4.0).round() as usize * 4).max(4)
}

/// Full-resolution `[T,1,H,W]` logits. With `multi_scale`, the clip is run
/// at every configured scale and the resized logits are averaged.
pub fn infer_logits<T: Scalar>(clip: &Tensor<T>, params: &ModelParams<T>, multi_scale: bool) -> Result<Tensor<T>> {
    let cfg = &params.config;
    let [frames, 3, h, w] = clip.shape()[..] else {
        return Err(Error::dim("infer", format!("expected [T,3,H,W], got {:?}", clip.shape())));
    };
    let scales: &[f64] = if multi_scale { &cfg.scales } else { &[1.0] };
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let frame = clip.index_axis0(t)?;
        let mut acc: Option<Tensor<T>> = None;
        for &s in scales {
            let (hs, ws) = (scaled_size(h, s), scaled_size(w, s));
            let input = ops::bilinear_resize(&frame, hs, ws)?;
            let logits = forward_any_size(&input, params)?;
            let back = ops::bilinear_resize(&logits, h, w)?;
            acc = Some(match acc {
                None => back,
                Some(a) => ops::add(&a, &back)?,
            });
        }
        let inv = T::one() / T::from_f64_lossy(scales.len() as f64);
        out.push(acc.expect("at least one scale").map(|v| v * inv));
    }
    Tensor::stack(&out)
}

fn forward_any_size<T: Scalar>(frame: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    let (_, h, w) = frame.dims3()?;
    let mut sized = params.clone();
    sized.config.height = h;
    sized.config.width = w;
    let clip = Tensor::stack(std::slice::from_ref(frame))?;
    forward(&clip, &sized, sized.config.prior)?.logits.index_axis0(0)
}

/// Threshold `sigmoid(logits) >= 0.5`.
pub fn logits_to_mask<T: Scalar>(logits: &Tensor<T>) -> Result<BinaryMask> {
    let (_, h, w) = logits.dims3()?;
    let half = T::from_f64_lossy(0.5);
    BinaryMask::from_vec(
        h,
        w,
        logits
            .data()
            .iter()
            .map(|&z| u8::from(ops::sigmoid_scalar(z) >= half))
            .collect(),
    )
}

/// One mask per frame. Only frames are consumed; events play no part.
pub fn infer<T: Scalar>(clip: &Tensor<T>, params: &ModelParams<T>, multi_scale: bool) -> Result<Vec<BinaryMask>> {
    let logits = infer_logits(clip, params, multi_scale)?;
    (0..logits.shape()[0])
        .map(|t| logits_to_mask(&logits.index_axis0(t)?))
        .collect()
}
