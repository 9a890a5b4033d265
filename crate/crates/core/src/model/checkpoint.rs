//! EMOC checkpoint files.
//!
//! Layout: `"EMOC"`, version byte (1), little-endian `u32` length of the
//! config text, the config text (`key=value` lines), then records of
//! little-endian `u32` name length, name bytes and one EMOT tensor, until the
//! end of the file. Parameters are stored under `param/<name>`, Adam moments
//! under `adam_m/<name>` and `adam_v/<name>`, the step count as `adam/step`.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::ModelConfig;
use super::params::{AdamState, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{read_emot_from, AnyTensor, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"EMOC";
const VERSION: u8 = 1;
const STEP_KEY: &str = "adam/step";

fn push_record(out: &mut Vec<u8>, name: &str, t: AnyTensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&t.encode());
}

pub fn encode_checkpoint<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let cfg = params.config.to_text();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    for (name, t) in &params.tensors {
        push_record(&mut out, &format!("param/{name}"), t.clone().into());
    }
    for (name, t) in &params.optim.m {
        push_record(&mut out, &format!("adam_m/{name}"), t.clone().into());
    }
    for (name, t) in &params.optim.v {
        push_record(&mut out, &format!("adam_v/{name}"), t.clone().into());
    }
    let step = Tensor::new(vec![1], vec![params.optim.step as f64]).expect("shape");
    push_record(&mut out, STEP_KEY, step.into());
    out
}

/// Writes via a temporary file and rename so readers never see a partial file.
pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("emoc.tmp");
    std::fs::write(&tmp, encode_checkpoint(params)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<ModelParams<T>> {
    let bad = |m: &str| Error::format(origin, m.to_string());
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(bad("bad checkpoint magic"));
    }
    if bytes[4] != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {}", bytes[4])));
    }
    let cfg_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let cfg_bytes = bytes.get(9..9 + cfg_len).ok_or_else(|| bad("truncated config block"))?;
    let cfg_text = std::str::from_utf8(cfg_bytes).map_err(|_| bad("config block is not UTF-8"))?;
    let config = ModelConfig::from_text(cfg_text)?;

    let mut rest = &bytes[9 + cfg_len..];
    let mut tensors = BTreeMap::new();
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    let mut step = None;
    while !rest.is_empty() {
        if rest.len() < 4 {
            return Err(bad("truncated record header"));
        }
        let n = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        let name = rest
            .get(4..4 + n)
            .and_then(|b| std::str::from_utf8(b).ok())
            .ok_or_else(|| bad("bad record name"))?
            .to_string();
        rest = &rest[4 + n..];
        let t = read_emot_from(&mut rest, origin)?;
        if name == STEP_KEY {
            let s = t.into_scalar::<f64>().ok_or_else(|| bad("step record must be float64"))?;
            step = Some(s.data().first().copied().ok_or_else(|| bad("empty step record"))? as u64);
            continue;
        }
        let dtype = t.dtype();
        let t = t.into_scalar::<T>().ok_or_else(|| {
            bad(&format!("record '{name}' has dtype {dtype:?}, expected {:?}", T::DTYPE))
        })?;
        let (store, key) = if let Some(k) = name.strip_prefix("param/") {
            (&mut tensors, k)
        } else if let Some(k) = name.strip_prefix("adam_m/") {
            (&mut m, k)
        } else if let Some(k) = name.strip_prefix("adam_v/") {
            (&mut v, k)
        } else {
            return Err(bad(&format!("unknown record '{name}'")));
        };
        if store.insert(key.to_string(), t).is_some() {
            return Err(bad(&format!("duplicate record '{name}'")));
        }
    }
    let params = ModelParams {
        config,
        tensors,
        optim: AdamState {
            step: step.ok_or_else(|| bad("missing optimizer step"))?,
            m,
            v,
        },
    };
    params.validate()?;
    Ok(params)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelParams<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Loads a checkpoint and checks it matches the expected architecture.
pub fn load_checkpoint_for<T: Scalar>(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<ModelParams<T>> {
    let params = load_checkpoint(path)?;
    params.config.ensure_compatible(expected)?;
    Ok(params)
}
