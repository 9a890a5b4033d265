//! Synthetic ego-motion clips with frames, events, flow and moving-object
//! masks.
//!
//! The camera translates over a smoothed random texture. Static distractor
//! objects are glued to the scene and therefore move in the image exactly like
//! the background; movers add their own velocity on top. Each frame interval
//! is rendered at `S` substeps: the frame is the exposure average of those
//! renders, events come from a log-intensity contrast model evaluated at every
//! substep, and masks and flow are taken at the end of the exposure.

mod io;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::{format_f64, parse};
use crate::rng::{streams, substream, Rng};
use crate::supervision::{binarize_events, BinaryMask, Event, EventMap, EventStream, FlowField, Polarity};
use crate::tensor::Tensor;

pub use io::{
    count_frames, read_events, read_flow, read_frame_dir, read_frames, read_masks, read_sample, read_split, sequence_name, write_sample,
    write_split,
};

/// Duration of one frame interval in microseconds.
pub const FRAME_INTERVAL_US: u64 = 50_000;

/// Guard added to intensities before taking the log.
pub const LOG_EPS: f64 = 1.0 / 255.0;

/// End of frame `t`'s exposure, in microseconds.
pub fn frame_time_us(t: usize) -> u64 {
    (t as u64 + 1) * FRAME_INTERVAL_US
}

/// Seed of sequence `index` in a dataset generated from `seed`.
pub fn sequence_seed(seed: u64, index: u64) -> u64 {
    substream(seed, streams::SCENE_BASE + index).gen()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub n_moving: usize,
    pub n_static: usize,
    /// Per-axis range of the camera-induced image velocity, px/frame.
    pub ego_min: f64,
    pub ego_max: f64,
    /// Range of a mover's speed relative to the scene, px/frame.
    pub mover_speed_min: f64,
    pub mover_speed_max: f64,
    /// Range of object extents (full width/height), px.
    pub object_min: usize,
    pub object_max: usize,
    /// Log-intensity contrast threshold for events.
    pub theta: f64,
    pub substeps: usize,
    /// Box-blur passes applied to the background noise.
    pub texture_smoothness: usize,
    /// Half-range of background intensities around 0.5. Zero gives a flat
    /// background.
    pub texture_contrast: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            frames: 2,
            n_moving: 1,
            n_static: 2,
            ego_min: -1.0,
            ego_max: 1.0,
            mover_speed_min: 3.0,
            mover_speed_max: 5.0,
            object_min: 14,
            object_max: 28,
            theta: 0.15,
            substeps: 8,
            texture_smoothness: 2,
            texture_contrast: 0.3,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.height < 4 || self.width < 4 {
            return fail(format!("scene size {}x{} too small", self.height, self.width));
        }
        if self.frames == 0 {
            return fail("frames must be at least 1".into());
        }
        if self.object_min == 0 || self.object_min > self.object_max {
            return fail(format!("bad object size range {}..{}", self.object_min, self.object_max));
        }
        if self.object_max > self.height.min(self.width) {
            return fail(format!(
                "objects up to {} px do not fit a {}x{} viewport",
                self.object_max, self.height, self.width
            ));
        }
        if self.n_moving > 0 && !(self.mover_speed_min >= 0.5) {
            return fail(format!(
                "mover speed must be at least 0.5 px/frame, got {}",
                self.mover_speed_min
            ));
        }
        if !(self.mover_speed_min <= self.mover_speed_max && self.mover_speed_max.is_finite()) {
            return fail("mover speed range is empty".into());
        }
        if !(self.ego_min <= self.ego_max && self.ego_min.is_finite() && self.ego_max.is_finite()) {
            return fail("ego velocity range is empty".into());
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return fail(format!("theta must be positive, got {}", self.theta));
        }
        if self.substeps == 0 || FRAME_INTERVAL_US % self.substeps as u64 != 0 {
            return fail(format!("substeps must divide {FRAME_INTERVAL_US}, got {}", self.substeps));
        }
        if !(0.0..=0.5).contains(&self.texture_contrast) {
            return fail(format!("texture_contrast must be in [0, 0.5], got {}", self.texture_contrast));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("frames", self.frames.to_string()),
            ("n_moving", self.n_moving.to_string()),
            ("n_static", self.n_static.to_string()),
            ("ego_min", format_f64(self.ego_min)),
            ("ego_max", format_f64(self.ego_max)),
            ("mover_speed_min", format_f64(self.mover_speed_min)),
            ("mover_speed_max", format_f64(self.mover_speed_max)),
            ("object_min", self.object_min.to_string()),
            ("object_max", self.object_max.to_string()),
            ("theta", format_f64(self.theta)),
            ("substeps", self.substeps.to_string()),
            ("texture_smoothness", self.texture_smoothness.to_string()),
            ("texture_contrast", format_f64(self.texture_contrast)),
        ]
    }

    /// Sets one field from its text form. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "height" => self.height = parse(value, key)?,
            "width" => self.width = parse(value, key)?,
            "frames" => self.frames = parse(value, key)?,
            "n_moving" => self.n_moving = parse(value, key)?,
            "n_static" => self.n_static = parse(value, key)?,
            "ego_min" => self.ego_min = parse(value, key)?,
            "ego_max" => self.ego_max = parse(value, key)?,
            "mover_speed_min" => self.mover_speed_min = parse(value, key)?,
            "mover_speed_max" => self.mover_speed_max = parse(value, key)?,
            "object_min" => self.object_min = parse(value, key)?,
            "object_max" => self.object_max = parse(value, key)?,
            "theta" => self.theta = parse(value, key)?,
            "substeps" => self.substeps = parse(value, key)?,
            "texture_smoothness" => self.texture_smoothness = parse(value, key)?,
            "texture_contrast" => self.texture_contrast = parse(value, key)?,
            _ => return Err(Error::Config(format!("unknown scene key '{key}'"))),
        }
        Ok(())
    }
}

/// One synthetic clip.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    /// `[T, 3, H, W]`, values in `[0, 1]`.
    pub frames: Tensor<f32>,
    pub events: Vec<EventMap>,
    pub flow: Vec<FlowField>,
    pub masks: Vec<BinaryMask>,
}

impl SceneSample {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Rect,
    Ellipse,
}

/// Ground truth about one placed object.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub moving: bool,
    /// Centre `(x, y)` at the end of frame 0's exposure.
    pub origin: [f64; 2],
    pub half_size: [f64; 2],
    /// Image-plane velocity in px/frame.
    pub velocity: [f64; 2],
    pub intensity: f64,
}

impl SceneObject {
    fn center(&self, tau: f64) -> [f64; 2] {
        [self.origin[0] + self.velocity[0] * tau, self.origin[1] + self.velocity[1] * tau]
    }

    fn covers(&self, tau: f64, i: usize, j: usize) -> bool {
        let c = self.center(tau);
        let dx = (j as f64 + 0.5 - c[0]) / self.half_size[0];
        let dy = (i as f64 + 0.5 - c[1]) / self.half_size[1];
        match self.shape {
            Shape::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            Shape::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }
}

/// A generated clip together with the quantities that produced it.
#[derive(Clone, Debug)]
pub struct GeneratedScene {
    pub sample: SceneSample,
    pub stream: EventStream,
    /// Image velocity of the background, `(dx, dy)` px/frame.
    pub ego: [f64; 2],
    /// In depth order: later entries occlude earlier ones.
    pub objects: Vec<SceneObject>,
}

impl GeneratedScene {
    /// Visible footprint of static distractors at the end of frame `t`.
    pub fn distractor_masks(&self) -> Vec<BinaryMask> {
        let (h, w) = (self.sample.height(), self.sample.width());
        (0..self.sample.len())
            .map(|t| {
                BinaryMask::from_fn(h, w, |i, j| {
                    top_object(&self.objects, t as f64, i, j).is_some_and(|k| !self.objects[k].moving)
                })
            })
            .collect()
    }

    /// Union of mover footprints over every render that feeds frame `t`'s
    /// events, including the reference render before the interval.
    pub fn mover_trace(&self, t: usize, substeps: usize) -> BinaryMask {
        let (h, w) = (self.sample.height(), self.sample.width());
        BinaryMask::from_fn(h, w, |i, j| {
            (t * substeps..=(t + 1) * substeps).any(|k| {
                let tau = render_time(k, substeps);
                self.objects.iter().any(|o| o.moving && o.covers(tau, i, j))
            })
        })
    }
}

/// Generates one clip. Identical `(cfg, seed)` give identical samples.
pub fn generate(cfg: &SceneConfig, seed: u64) -> Result<SceneSample> {
    Ok(generate_detailed(cfg, seed)?.sample)
}

/// Scene time of render `k`: render `(t+1)·S` closes frame `t`'s exposure.
fn render_time(k: usize, substeps: usize) -> f64 {
    k as f64 / substeps as f64 - 1.0
}

fn top_object(objects: &[SceneObject], tau: f64, i: usize, j: usize) -> Option<usize> {
    objects.iter().rposition(|o| o.covers(tau, i, j))
}

struct Background {
    canvas: Vec<f64>,
    cw: usize,
    ch: usize,
    margin: f64,
}

impl Background {
    fn new(cfg: &SceneConfig, rng: &mut Rng) -> Self {
        let reach = cfg.ego_min.abs().max(cfg.ego_max.abs()) * (cfg.frames + 1) as f64;
        let margin = reach.ceil() as usize + 2;
        let (ch, cw) = (cfg.height + 2 * margin, cfg.width + 2 * margin);
        let mut canvas: Vec<f64> = (0..ch * cw).map(|_| rng.gen_range(0.0..1.0)).collect();
        for _ in 0..cfg.texture_smoothness {
            canvas = box_blur(&canvas, ch, cw);
        }
        let lo = canvas.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = canvas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        for v in &mut canvas {
            *v = 0.5 + cfg.texture_contrast * (2.0 * (*v - lo) / span - 1.0);
        }
        Background {
            canvas,
            cw,
            ch,
            margin: margin as f64,
        }
    }

    /// Bilinear lookup of the background seen at image pixel `(i, j)` when
    /// the camera has moved by `shift`.
    fn sample(&self, i: usize, j: usize, shift: [f64; 2]) -> f64 {
        let y = (i as f64 + self.margin - shift[1]).clamp(0.0, (self.ch - 1) as f64);
        let x = (j as f64 + self.margin - shift[0]).clamp(0.0, (self.cw - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.ch - 1), (x0 + 1).min(self.cw - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let at = |a: usize, b: usize| self.canvas[a * self.cw + b];
        (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
    }
}

fn box_blur(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            let mut n = 0.0;
            for a in i.saturating_sub(1)..=(i + 1).min(h - 1) {
                for b in j.saturating_sub(1)..=(j + 1).min(w - 1) {
                    acc += src[a * w + b];
                    n += 1.0;
                }
            }
            out[i * w + j] = acc / n;
        }
    }
    out
}

fn object_intensity(rng: &mut Rng) -> f64 {
    if rng.gen_bool(0.5) {
        rng.gen_range(0.05..0.3)
    } else {
        rng.gen_range(0.7..0.95)
    }
}

fn place_objects(cfg: &SceneConfig, ego: [f64; 2], rng: &mut Rng) -> Vec<SceneObject> {
    let mut kinds: Vec<bool> = std::iter::repeat(true)
        .take(cfg.n_moving)
        .chain(std::iter::repeat(false).take(cfg.n_static))
        .collect();
    kinds.shuffle(rng);
    kinds
        .into_iter()
        .map(|moving| {
            let shape = if rng.gen_bool(0.5) { Shape::Rect } else { Shape::Ellipse };
            let size = [
                rng.gen_range(cfg.object_min..=cfg.object_max) as f64,
                rng.gen_range(cfg.object_min..=cfg.object_max) as f64,
            ];
            let origin = [
                rng.gen_range(0.0..cfg.width as f64),
                rng.gen_range(0.0..cfg.height as f64),
            ];
            let velocity = if moving {
                let speed = rng.gen_range(cfg.mover_speed_min..=cfg.mover_speed_max);
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                [ego[0] + speed * angle.cos(), ego[1] + speed * angle.sin()]
            } else {
                ego
            };
            SceneObject {
                shape,
                moving,
                origin,
                half_size: [size[0] / 2.0, size[1] / 2.0],
                velocity,
                intensity: object_intensity(rng),
            }
        })
        .collect()
}

fn render(bg: &Background, objects: &[SceneObject], ego: [f64; 2], tau: f64, h: usize, w: usize) -> Vec<f64> {
    let shift = [ego[0] * tau, ego[1] * tau];
    let mut img = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            img.push(match top_object(objects, tau, i, j) {
                Some(k) => objects[k].intensity,
                None => bg.sample(i, j, shift),
            });
        }
    }
    img
}

/// Generates a clip and keeps the raw event stream and scene layout.
pub fn generate_detailed(cfg: &SceneConfig, seed: u64) -> Result<GeneratedScene> {
    cfg.validate()?;
    let (h, w, frames, s) = (cfg.height, cfg.width, cfg.frames, cfg.substeps);
    let mut rng = substream(seed, streams::SCENE_BASE);
    let ego = [rng.gen_range(cfg.ego_min..=cfg.ego_max), rng.gen_range(cfg.ego_min..=cfg.ego_max)];
    let bg = Background::new(cfg, &mut rng);
    let objects = place_objects(cfg, ego, &mut rng);

    let renders: Vec<Vec<f64>> = (0..=frames * s)
        .map(|k| render(&bg, &objects, ego, render_time(k, s), h, w))
        .collect();

    let dt = FRAME_INTERVAL_US / s as u64;
    let mut stream = EventStream::new(h, w);
    let mut frame_data = Vec::with_capacity(frames * 3 * h * w);
    let mut flow = Vec::with_capacity(frames);
    let mut masks = Vec::with_capacity(frames);
    for t in 0..frames {
        // the contrast reference is re-anchored at the start of every interval
        let mut reference: Vec<f64> = renders[t * s].iter().map(|&v| (v + LOG_EPS).ln()).collect();
        for k in t * s + 1..=(t + 1) * s {
            let t_us = t as u64 * FRAME_INTERVAL_US + (k - t * s - 1) as u64 * dt + dt / 2;
            for (p, &v) in renders[k].iter().enumerate() {
                let l = (v + LOG_EPS).ln();
                let delta = l - reference[p];
                if delta.abs() > cfg.theta {
                    stream.push(Event {
                        t_us,
                        x: (p % w) as u16,
                        y: (p / w) as u16,
                        polarity: if delta > 0.0 { Polarity::Positive } else { Polarity::Negative },
                    })?;
                    reference[p] = l;
                }
            }
        }

        let exposure = &renders[t * s + 1..=(t + 1) * s];
        let gray: Vec<f32> = (0..h * w)
            .map(|p| (exposure.iter().map(|r| r[p]).sum::<f64>() / s as f64) as f32)
            .collect();
        for _ in 0..3 {
            frame_data.extend_from_slice(&gray);
        }

        let tau = t as f64;
        let mut fx = vec![ego[0] as f32; h * w];
        let mut fy = vec![ego[1] as f32; h * w];
        let mut mask = BinaryMask::zeros(h, w);
        for i in 0..h {
            for j in 0..w {
                if let Some(k) = top_object(&objects, tau, i, j) {
                    let o = &objects[k];
                    fx[i * w + j] = o.velocity[0] as f32;
                    fy[i * w + j] = o.velocity[1] as f32;
                    mask.set(i, j, o.moving);
                }
            }
        }
        fx.extend(fy);
        flow.push(FlowField::new(Tensor::new(vec![2, h, w], fx)?)?);
        masks.push(mask);
    }

    let events = (0..frames)
        .map(|t| binarize_events(&stream, frame_time_us(t), FRAME_INTERVAL_US))
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedScene {
        sample: SceneSample {
            frames: Tensor::new(vec![frames, 3, h, w], frame_data)?,
            events,
            flow,
            masks,
        },
        stream,
        ego,
        objects,
    })
}

#[cfg(test)]
mod tests;
