//! On-disk layout of a sequence:
//! `frames/%06d.ppm`, `events/%06d.pgm`, `masks/%06d.pgm`, `flow/%06d.emot`.

use std::fs;
use std::path::{Path, PathBuf};

use super::SceneSample;
use crate::error::{Error, Result};
use crate::imageio::{read_pnm, write_pnm, Image8};
use crate::supervision::{BinaryMask, EventMap, FlowField};
use crate::tensor::{read_emot, write_emot, Tensor};

pub fn sequence_name(index: usize) -> String {
    format!("seq_{index:06}")
}

fn frame_file(dir: &Path, sub: &str, t: usize, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("{t:06}.{ext}"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_sample(dir: impl AsRef<Path>, sample: &SceneSample) -> Result<()> {
    let dir = dir.as_ref();
    let (t_len, h, w) = (sample.len(), sample.height(), sample.width());
    for sub in ["frames", "events", "masks", "flow"] {
        create_dir(&dir.join(sub))?;
    }
    for t in 0..t_len {
        let frame = sample.frames.index_axis0(t)?;
        let plane = h * w;
        let mut rgb = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                rgb.push(quantize(frame.data()[c * plane + p]));
            }
        }
        let img = Image8 {
            width: w,
            height: h,
            channels: 3,
            data: rgb,
        };
        write_pnm(frame_file(dir, "frames", t, "ppm"), &img)?;
        write_pnm(frame_file(dir, "events", t, "pgm"), &sample.events[t].to_image())?;
        write_pnm(frame_file(dir, "masks", t, "pgm"), &sample.masks[t].to_image())?;
        write_emot(frame_file(dir, "flow", t, "emot"), &sample.flow[t].tensor().clone().into())?;
    }
    Ok(())
}

/// Number of `%06d.ppm` files in a frames directory. Files must be numbered
/// contiguously from zero.
pub fn count_frames(frames_dir: impl AsRef<Path>) -> Result<usize> {
    let frames = frames_dir.as_ref();
    let entries = fs::read_dir(frames).map_err(|e| Error::io(frames, e))?;
    let mut n = 0;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(frames, e))?;
        if entry.path().extension().is_some_and(|x| x == "ppm") {
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Integrity(format!("{}: no frames", frames.display())));
    }
    for t in 0..n {
        if !frames.join(format!("{t:06}.ppm")).is_file() {
            return Err(Error::Integrity(format!(
                "{}: frame files are not numbered 000000..{:06}",
                frames.display(),
                n - 1
            )));
        }
    }
    Ok(n)
}

fn require(path: PathBuf, what: &str, t: usize) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Integrity(format!("missing {what} file for frame {t:06}: {}", path.display())))
    }
}

fn check_size(path: &Path, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::Integrity(format!(
            "{}: size {}x{} differs from frame size {}x{}",
            path.display(),
            got.1,
            got.0,
            want.1,
            want.0
        )));
    }
    Ok(())
}

/// Reads a sequence's `frames/` as a `[T, 3, H, W]` clip in `[0, 1]`.
pub fn read_frames(dir: impl AsRef<Path>) -> Result<Tensor<f32>> {
    read_frame_dir(dir.as_ref().join("frames"))
}

/// Reads `000000.ppm, 000001.ppm, ...` from a directory of frames.
pub fn read_frame_dir(frames_dir: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let dir = frames_dir.as_ref();
    let n = count_frames(dir)?;
    let mut size = None;
    let mut data = Vec::new();
    for t in 0..n {
        let path = dir.join(format!("{t:06}.ppm"));
        let img = read_pnm(&path, 3)?;
        let hw = (img.height, img.width);
        check_size(&path, hw, *size.get_or_insert(hw))?;
        let plane = img.height * img.width;
        for c in 0..3 {
            data.extend((0..plane).map(|p| img.data[p * 3 + c] as f32 / 255.0));
        }
    }
    let (h, w) = size.expect("at least one frame");
    Tensor::new(vec![n, 3, h, w], data)
}

fn read_masks_in(dir: &Path, sub: &str, what: &str, n: usize, hw: (usize, usize)) -> Result<Vec<BinaryMask>> {
    (0..n)
        .map(|t| {
            let path = require(frame_file(dir, sub, t, "pgm"), what, t)?;
            let m = BinaryMask::from_image(&read_pnm(&path, 1)?)
                .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
            check_size(&path, (m.height(), m.width()), hw)?;
            Ok(m)
        })
        .collect()
}

/// Reads `masks/` for `n` frames of size `hw = (H, W)`.
pub fn read_masks(dir: impl AsRef<Path>, n: usize, hw: (usize, usize)) -> Result<Vec<BinaryMask>> {
    read_masks_in(dir.as_ref(), "masks", "mask", n, hw)
}

pub fn read_events(dir: impl AsRef<Path>, n: usize, hw: (usize, usize)) -> Result<Vec<EventMap>> {
    read_masks_in(dir.as_ref(), "events", "event", n, hw)
}

pub fn read_flow(dir: impl AsRef<Path>, n: usize, hw: (usize, usize)) -> Result<Vec<FlowField>> {
    let dir = dir.as_ref();
    (0..n)
        .map(|t| {
            let path = require(frame_file(dir, "flow", t, "emot"), "flow", t)?;
            let tensor = read_emot(&path)?
                .into_scalar::<f32>()
                .ok_or_else(|| Error::Integrity(format!("{}: flow must be f32", path.display())))?;
            let field = FlowField::new(tensor).map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
            check_size(&path, (field.height(), field.width()), hw)?;
            Ok(field)
        })
        .collect()
}

/// Reads a full sequence, checking that every stream has one entry per frame
/// and matching sizes.
pub fn read_sample(dir: impl AsRef<Path>) -> Result<SceneSample> {
    let dir = dir.as_ref();
    let frames = read_frames(dir)?;
    let (n, hw) = (frames.shape()[0], (frames.shape()[2], frames.shape()[3]));
    Ok(SceneSample {
        masks: read_masks(dir, n, hw)?,
        events: read_events(dir, n, hw)?,
        flow: read_flow(dir, n, hw)?,
        frames,
    })
}

/// Writes a split manifest `<root>/<name>.txt`, one sequence per line.
pub fn write_split(root: impl AsRef<Path>, name: &str, sequences: &[String]) -> Result<()> {
    let path = root.as_ref().join(format!("{name}.txt"));
    let text: String = sequences.iter().map(|s| format!("{s}\n")).collect();
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_split(root: impl AsRef<Path>, name: &str) -> Result<Vec<String>> {
    let path = root.as_ref().join(format!("{name}.txt"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}
