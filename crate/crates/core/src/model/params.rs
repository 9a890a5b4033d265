use std::collections::BTreeMap;

use rand::Rng as _;

use super::config::{Fusion, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::{streams, substream};
use crate::tensor::{Scalar, Tensor};

/// Parameter names.
pub mod names {
    pub const ENC1_W: &str = "enc.conv1.w";
    pub const ENC1_B: &str = "enc.conv1.b";
    pub const ENC2_W: &str = "enc.conv2.w";
    pub const ENC2_B: &str = "enc.conv2.b";
    pub const PRIOR_EXPAND_W: &str = "prior.expand.w";
    pub const PRIOR_EXPAND_B: &str = "prior.expand.b";
    pub const PRIOR_DW_W: &str = "prior.dw.w";
    pub const PRIOR_PROJECT_W: &str = "prior.project.w";
    pub const PRIOR_PROJECT_B: &str = "prior.project.b";
    pub const PREDICT_W: &str = "predict.w";
    pub const PREDICT_B: &str = "predict.b";
    pub const FUSE_RGB_W: &str = "fuse.rgb.w";
    pub const FUSE_RGB_B: &str = "fuse.rgb.b";
    pub const FUSE_MOTION_W: &str = "fuse.motion.w";
    pub const FUSE_MOTION_B: &str = "fuse.motion.b";
    pub const FUSE_CORR_W: &str = "fuse.corr.w";
    pub const FUSE_CORR_B: &str = "fuse.corr.b";
    pub const FUSE_OUT_W: &str = "fuse.out.w";
    pub const FUSE_OUT_B: &str = "fuse.out.b";
    pub const DEC1_W: &str = "dec.conv1.w";
    pub const DEC1_B: &str = "dec.conv1.b";
    pub const DEC2_W: &str = "dec.conv2.w";
    pub const DEC2_B: &str = "dec.conv2.b";
    pub const HEAD_W: &str = "dec.head.w";
    pub const HEAD_B: &str = "dec.head.b";
}

/// Shape and fan-in (0 for biases) of one learnable tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

fn weight(name: &'static str, shape: Vec<usize>) -> ParamSpec {
    let fan_in = shape[1..].iter().product::<usize>().max(1);
    ParamSpec { name, shape, fan_in }
}

fn bias(name: &'static str, n: usize) -> ParamSpec {
    ParamSpec {
        name,
        shape: vec![n],
        fan_in: 0,
    }
}

/// Every parameter the configuration needs, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    use names::*;
    let c = cfg.channels;
    let half = c / 2;
    let ce = cfg.expand_channels;
    let r = cfg.rank;
    let mut specs = vec![
        weight(ENC1_W, vec![half, 3, 3, 3]),
        bias(ENC1_B, half),
        weight(ENC2_W, vec![c, half, 3, 3]),
        bias(ENC2_B, c),
    ];
    if cfg.prior {
        specs.extend([
            weight(PRIOR_EXPAND_W, vec![ce, c]),
            bias(PRIOR_EXPAND_B, ce),
            ParamSpec {
                name: PRIOR_DW_W,
                shape: vec![ce, 3, 3],
                fan_in: 9,
            },
            weight(PRIOR_PROJECT_W, vec![c, ce]),
            bias(PRIOR_PROJECT_B, c),
            weight(PREDICT_W, vec![1, c]),
            bias(PREDICT_B, 1),
        ]);
        if cfg.fusion == Fusion::Attention {
            specs.extend([
                weight(FUSE_RGB_W, vec![r, c]),
                bias(FUSE_RGB_B, r),
                weight(FUSE_MOTION_W, vec![r, c]),
                bias(FUSE_MOTION_B, r),
                weight(FUSE_CORR_W, vec![r, 2 * r]),
                bias(FUSE_CORR_B, r),
                weight(FUSE_OUT_W, vec![c, 2 * r]),
                bias(FUSE_OUT_B, c),
            ]);
        }
    }
    specs.extend([
        weight(DEC1_W, vec![half, c, 3, 3]),
        bias(DEC1_B, half),
        weight(DEC2_W, vec![half, half, 3, 3]),
        bias(DEC2_B, half),
        weight(HEAD_W, vec![1, half]),
        bias(HEAD_B, 1),
    ]);
    specs
}

/// AdamW moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    fn zeros_like(tensors: &BTreeMap<String, Tensor<T>>) -> Self {
        let z: BTreeMap<_, _> = tensors
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape().to_vec())))
            .collect();
        AdamState {
            step: 0,
            m: z.clone(),
            v: z,
        }
    }
}

/// Learnable tensors plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor<T>>,
    pub optim: AdamState<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// He-uniform weights (`U(±√(6/fan_in))`) and zero biases, drawn from the
    /// config seed in [`param_specs`] order.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(config.seed, streams::MODEL_INIT);
        let mut tensors = BTreeMap::new();
        for spec in param_specs(config) {
            let n: usize = spec.shape.iter().product();
            let data = if spec.fan_in == 0 {
                vec![T::zero(); n]
            } else {
                let bound = (6.0 / spec.fan_in as f64).sqrt();
                (0..n)
                    .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
                    .collect()
            };
            tensors.insert(spec.name.to_string(), Tensor::new(spec.shape, data)?);
        }
        let optim = AdamState::zeros_like(&tensors);
        Ok(ModelParams {
            config: config.clone(),
            tensors,
            optim,
        })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("model has no parameter '{name}'")))
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("model has no parameter '{name}'")))?;
        if slot.shape() != value.shape() {
            return Err(Error::dim("ModelParams::set", format!("{name}: {:?} vs {:?}", slot.shape(), value.shape())));
        }
        *slot = value;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Checks names and shapes against what the config requires.
    pub fn validate(&self) -> Result<()> {
        let specs = param_specs(&self.config);
        if specs.len() != self.tensors.len() {
            return Err(Error::ConfigMismatch(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for spec in specs {
            let t = self.tensors.get(spec.name).ok_or_else(|| {
                Error::ConfigMismatch(format!("missing parameter '{}'", spec.name))
            })?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter '{}' has shape {:?}, config implies {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            for (store, label) in [(&self.optim.m, "first moment"), (&self.optim.v, "second moment")] {
                match store.get(spec.name) {
                    Some(s) if s.shape() == t.shape() => {}
                    _ => {
                        return Err(Error::ConfigMismatch(format!(
                            "{label} for '{}' missing or misshapen",
                            spec.name
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |m: &BTreeMap<String, Tensor<T>>| m.iter().map(|(k, t)| (k.clone(), t.cast())).collect();
        ModelParams {
            config: self.config.clone(),
            tensors: conv(&self.tensors),
            optim: AdamState {
                step: self.optim.step,
                m: conv(&self.optim.m),
                v: conv(&self.optim.v),
            },
        }
    }
}
