//! Dense supervision targets for the motion-prior branch.
//!
//! The main target is the spatio-temporal map: the ground-truth mask dilated
//! by a 3×3 structuring element, multiplied pixelwise with the binary event
//! map. Background events (static scenery seen by a moving camera) fall
//! outside the dilated mask and are suppressed; motion-blurred event strokes
//! just outside the object survive thanks to the dilation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imageio::Image8;
use crate::tensor::{ops, Tensor};

/// Default accumulation window for binarizing events, in microseconds.
pub const DEFAULT_EVENT_WINDOW_US: u64 = 50_000;

/// H×W map with values exactly 0 or 1, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

/// Binary event map aligned with a frame: 1 where at least one event fired.
pub type EventMap = BinaryMask;

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim("BinaryMask", format!("{} values for {height}x{width}", data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(BinaryMask { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(u8::from(f(i, j)));
            }
        }
        BinaryMask { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.width + j] != 0
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        self.data[i * self.width + j] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    fn check_same_size(&self, other: &BinaryMask, op: &'static str) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::dim(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.height, self.width, other.height, other.width
                ),
            ));
        }
        Ok(())
    }

    /// Pixelwise AND.
    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same_size(other, "BinaryMask::and")?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a & b).collect(),
        })
    }

    /// Grayscale image with 0 = background and 255 = active.
    pub fn to_image(&self) -> Image8 {
        Image8 {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|&v| v * 255).collect(),
        }
    }

    /// Inverse of [`to_image`](Self::to_image); only 0 and 255 are accepted.
    pub fn from_image(img: &Image8) -> Result<Self> {
        if img.channels != 1 {
            return Err(Error::InvalidArgument("mask images must be single-channel".into()));
        }
        let data = img
            .data
            .iter()
            .map(|&v| match v {
                0 => Ok(0),
                255 => Ok(1),
                other => Err(Error::Integrity(format!("mask pixel value {other} is neither 0 nor 255"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        BinaryMask::from_vec(img.height, img.width, data)
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(
            vec![1, self.height, self.width],
            self.data.iter().map(|&v| f32::from(v)).collect(),
        )
        .expect("shape")
    }
}

/// 3×3 binary structuring element, centered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StructuringElement(pub [[bool; 3]; 3]);

impl Default for StructuringElement {
    fn default() -> Self {
        StructuringElement([[true; 3]; 3])
    }
}

/// Morphological dilation; pixels outside the image count as 0.
pub fn dilate(m: &BinaryMask, d: &StructuringElement) -> BinaryMask {
    let (h, w) = (m.height, m.width);
    let mut out = BinaryMask::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            if !m.get(i, j) {
                continue;
            }
            // A set source pixel lights up every position from which the
            // element reaches it.
            for (di, row) in d.0.iter().enumerate() {
                for (dj, &on) in row.iter().enumerate() {
                    if !on {
                        continue;
                    }
                    let oi = i as isize - (di as isize - 1);
                    let oj = j as isize - (dj as isize - 1);
                    if oi >= 0 && oj >= 0 && (oi as usize) < h && (oj as usize) < w {
                        out.data[oi as usize * w + oj as usize] = 1;
                    }
                }
            }
        }
    }
    out
}

/// H×W map with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct STMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl STMap {
    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim("STMap", format!("{} values for {height}x{width}", data.len())));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("STMap value {bad} outside [0,1]")));
        }
        Ok(STMap { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![1, self.height, self.width], self.data.clone()).expect("shape")
    }

    /// Quantizes to 8 bits (0 ↔ 0.0, 255 ↔ 1.0).
    pub fn to_image(&self) -> Image8 {
        Image8 {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|&v| (v * 255.0).round() as u8).collect(),
        }
    }

    pub fn from_image(img: &Image8) -> Result<Self> {
        if img.channels != 1 {
            return Err(Error::InvalidArgument("supervision images must be single-channel".into()));
        }
        STMap::from_vec(
            img.height,
            img.width,
            img.data.iter().map(|&v| f32::from(v) / 255.0).collect(),
        )
    }
}

impl From<&BinaryMask> for STMap {
    fn from(m: &BinaryMask) -> Self {
        STMap {
            height: m.height,
            width: m.width,
            data: m.data.iter().map(|&v| f32::from(v)).collect(),
        }
    }
}

/// `(M ⊕ D) ∘ E`.
pub fn build_st_map(m: &BinaryMask, e: &EventMap, d: &StructuringElement) -> Result<STMap> {
    m.check_same_size(e, "build_st_map")?;
    Ok(STMap::from(&dilate(m, d).and(e)?))
}

/// Event polarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// One event-camera record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

/// Time-ordered events from an H×W sensor.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventStream {
    pub height: usize,
    pub width: usize,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(height: usize, width: usize) -> Self {
        EventStream {
            height,
            width,
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, ev: Event) -> Result<()> {
        if let Some(last) = self.events.last() {
            if ev.t_us < last.t_us {
                return Err(Error::InvalidArgument(format!(
                    "event timestamps must be non-decreasing ({} after {})",
                    ev.t_us, last.t_us
                )));
            }
        }
        self.events.push(ev);
        Ok(())
    }
}

/// Pixels with at least one event of either polarity in
/// `[frame_time - window, frame_time)`.
pub fn binarize_events(stream: &EventStream, frame_time_us: u64, window_us: u64) -> Result<EventMap> {
    if window_us == 0 {
        return Err(Error::InvalidArgument("event window must be positive".into()));
    }
    let start = frame_time_us.saturating_sub(window_us);
    let mut map = BinaryMask::zeros(stream.height, stream.width);
    for ev in &stream.events {
        let (x, y) = (ev.x as usize, ev.y as usize);
        if x >= stream.width || y >= stream.height {
            return Err(Error::InvalidArgument(format!(
                "event at ({x},{y}) outside {}x{} sensor",
                stream.width, stream.height
            )));
        }
        if ev.t_us >= start && ev.t_us < frame_time_us {
            map.set(y, x, true);
        }
    }
    Ok(map)
}

/// Per-frame displacement field `[2, H, W]` with channels `(dx, dy)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField(Tensor<f32>);

impl FlowField {
    pub fn new(t: Tensor<f32>) -> Result<Self> {
        let (c, _, _) = t.dims3()?;
        if c != 2 {
            return Err(Error::dim("FlowField", format!("expected 2 channels, got {c}")));
        }
        if !t.all_finite() {
            return Err(Error::NonFinite { op: "FlowField" });
        }
        Ok(FlowField(t))
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn magnitude(&self) -> Vec<f32> {
        let n = self.height() * self.width();
        let (dx, dy) = self.0.data().split_at(n);
        dx.iter().zip(dy).map(|(&a, &b)| a.hypot(b)).collect()
    }

    pub fn max_magnitude(&self) -> f32 {
        self.magnitude().into_iter().fold(0.0, f32::max)
    }
}

/// Which signal supervises the prior prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SupervisionSource {
    /// Flow magnitude normalised by the clip maximum.
    Flow,
    /// The ground-truth mask.
    Semantic,
    /// The dilated ground-truth mask.
    SemanticDilated,
    /// Raw binary events.
    EventRaw,
    /// Events inside the ground-truth mask.
    EventGt,
    /// Events inside the dilated ground-truth mask.
    EventGtDilated,
}

impl SupervisionSource {
    pub const ALL: [SupervisionSource; 6] = [
        SupervisionSource::Flow,
        SupervisionSource::Semantic,
        SupervisionSource::SemanticDilated,
        SupervisionSource::EventRaw,
        SupervisionSource::EventGt,
        SupervisionSource::EventGtDilated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SupervisionSource::Flow => "flow",
            SupervisionSource::Semantic => "semantic",
            SupervisionSource::SemanticDilated => "semantic_dilated",
            SupervisionSource::EventRaw => "event_raw",
            SupervisionSource::EventGt => "event_gt",
            SupervisionSource::EventGtDilated => "event_gt_dilated",
        }
    }

    /// The same source with dilation removed.
    pub fn without_dilation(self) -> Self {
        match self {
            SupervisionSource::SemanticDilated => SupervisionSource::Semantic,
            SupervisionSource::EventGtDilated => SupervisionSource::EventGt,
            other => other,
        }
    }
}

impl fmt::Display for SupervisionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SupervisionSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SupervisionSource::ALL
            .into_iter()
            .find(|src| src.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown supervision source '{s}'")))
    }
}

/// Flow input for [`build_supervision`]: the frame's field plus the largest
/// magnitude over the whole clip.
#[derive(Clone, Copy, Debug)]
pub struct FlowInput<'a> {
    pub field: &'a FlowField,
    pub clip_max: f32,
}

/// Builds one frame's target for the chosen supervision source.
pub fn build_supervision(
    source: SupervisionSource,
    m: &BinaryMask,
    e: &EventMap,
    flow: Option<FlowInput<'_>>,
) -> Result<STMap> {
    m.check_same_size(e, "build_supervision")?;
    let d = StructuringElement::default();
    match source {
        SupervisionSource::Flow => {
            let flow = flow.ok_or_else(|| {
                Error::InvalidArgument("supervision source 'flow' requires a flow field".into())
            })?;
            if (flow.field.height(), flow.field.width()) != (m.height, m.width) {
                return Err(Error::dim("build_supervision", "flow size differs from mask size"));
            }
            let mag = flow.field.magnitude();
            let data = if flow.clip_max > 0.0 {
                mag.iter().map(|&v| (v / flow.clip_max).clamp(0.0, 1.0)).collect()
            } else {
                vec![0.0; mag.len()]
            };
            STMap::from_vec(m.height, m.width, data)
        }
        SupervisionSource::Semantic => Ok(STMap::from(m)),
        SupervisionSource::SemanticDilated => Ok(STMap::from(&dilate(m, &d))),
        SupervisionSource::EventRaw => Ok(STMap::from(e)),
        SupervisionSource::EventGt => Ok(STMap::from(&m.and(e)?)),
        SupervisionSource::EventGtDilated => build_st_map(m, e, &d),
    }
}

/// Builds targets for every frame of a clip, normalising flow by the clip
/// maximum.
pub fn build_clip_supervision(
    source: SupervisionSource,
    masks: &[BinaryMask],
    events: &[EventMap],
    flows: Option<&[FlowField]>,
) -> Result<Vec<STMap>> {
    if masks.len() != events.len() || flows.is_some_and(|f| f.len() != masks.len()) {
        return Err(Error::dim("build_clip_supervision", "per-frame streams differ in length"));
    }
    let clip_max = flows.map_or(0.0, |f| f.iter().map(FlowField::max_magnitude).fold(0.0, f32::max));
    masks
        .iter()
        .zip(events)
        .enumerate()
        .map(|(t, (m, e))| {
            let flow = flows.map(|f| FlowInput {
                field: &f[t],
                clip_max,
            });
            build_supervision(source, m, e, flow)
        })
        .collect()
}

/// Max-pools a target to the feature resolution `h × w`.
pub fn downsample_target(t: &STMap, h: usize, w: usize) -> Result<Tensor<f32>> {
    ops::maxpool_to(&t.to_tensor(), h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point(h: usize, w: usize, i: usize, j: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |a, b| (a, b) == (i, j))
    }

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> BinaryMask {
        BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(p))
    }

    /// Independent dilation: out[i,j] = OR over the neighbourhood of m.
    fn oracle_dilate(m: &BinaryMask) -> BinaryMask {
        let (h, w) = (m.height(), m.width());
        BinaryMask::from_fn(h, w, |i, j| {
            let mut any = false;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a >= 0 && b >= 0 && a < h as i64 && b < w as i64 && m.get(a as usize, b as usize) {
                        any = true;
                    }
                }
            }
            any
        })
    }

    fn ev(t: u64, x: u16, y: u16, p: Polarity) -> Event {
        Event { t_us: t, x, y, polarity: p }
    }

    #[test]
    fn binarize_cases() {
        let empty = EventStream::new(4, 5);
        assert!(binarize_events(&empty, 100_000, DEFAULT_EVENT_WINDOW_US).unwrap().is_empty());

        let mut s = EventStream::new(4, 5);
        s.push(ev(60_000, 2, 1, Polarity::Positive)).unwrap();
        s.push(ev(70_000, 2, 1, Polarity::Negative)).unwrap();
        s.push(ev(100_000, 4, 3, Polarity::Positive)).unwrap();
        let m = binarize_events(&s, 100_000, DEFAULT_EVENT_WINDOW_US).unwrap();
        assert!(m.get(1, 2));
        assert!(!m.get(3, 4), "event at the window end is excluded");
        assert_eq!(m.count(), 1);

        let mut bad = EventStream::new(2, 2);
        bad.push(ev(1, 5, 0, Polarity::Positive)).unwrap();
        assert!(binarize_events(&bad, 10, 50).is_err());
        assert!(binarize_events(&s, 10, 0).is_err());
    }

    #[test]
    fn window_start_is_inclusive() {
        let mut s = EventStream::new(1, 2);
        s.push(ev(50_000, 0, 0, Polarity::Positive)).unwrap();
        s.push(ev(49_999, 1, 0, Polarity::Positive)).unwrap_err();
        let m = binarize_events(&s, 100_000, 50_000).unwrap();
        assert!(m.get(0, 0));
    }

    #[test]
    fn dilate_cases() {
        let d = StructuringElement::default();
        assert!(dilate(&BinaryMask::zeros(5, 5), &d).is_empty());
        assert_eq!(dilate(&BinaryMask::ones(5, 5), &d), BinaryMask::ones(5, 5));
        let out = dilate(&point(5, 5, 2, 2), &d);
        assert_eq!(out, BinaryMask::from_fn(5, 5, |i, j| (1..=3).contains(&i) && (1..=3).contains(&j)));
    }

    #[test]
    fn dilate_respects_asymmetric_element() {
        // Element with only the (row 0, col 1) tap: out[i,j] = m[i-1, j].
        let mut e = [[false; 3]; 3];
        e[0][1] = true;
        let out = dilate(&point(4, 4, 1, 2), &StructuringElement(e));
        assert_eq!(out, point(4, 4, 2, 2));
    }

    #[test]
    fn st_map_cases() {
        let d = StructuringElement::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = random_mask(&mut rng, 5, 5, 0.5);
        let z = build_st_map(&BinaryMask::zeros(5, 5), &e, &d).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));

        let out = build_st_map(&point(5, 5, 2, 2), &BinaryMask::ones(5, 5), &d).unwrap();
        assert_eq!(out, STMap::from(&dilate(&point(5, 5, 2, 2), &d)));

        assert!(build_st_map(&BinaryMask::zeros(5, 5), &BinaryMask::zeros(4, 5), &d).is_err());
    }

    #[test]
    fn st_map_matches_nested_loop_oracle() {
        let d = StructuringElement::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let m = random_mask(&mut rng, 16, 16, 0.15);
            let e = random_mask(&mut rng, 16, 16, 0.4);
            let got = build_st_map(&m, &e, &d).unwrap();
            let dm = oracle_dilate(&m);
            for i in 0..16 {
                for j in 0..16 {
                    let want = if dm.get(i, j) && e.get(i, j) { 1.0 } else { 0.0 };
                    assert_eq!(got.data()[i * 16 + j], want);
                }
            }
        }
    }

    #[test]
    fn supervision_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_mask(&mut rng, 6, 6, 0.3);
        let e = random_mask(&mut rng, 6, 6, 0.5);
        let sem = build_supervision(SupervisionSource::Semantic, &m, &e, None).unwrap();
        assert_eq!(sem, STMap::from(&m));
        let egt = build_supervision(SupervisionSource::EventGt, &BinaryMask::ones(6, 6), &e, None).unwrap();
        assert_eq!(egt, STMap::from(&e));
        assert!(build_supervision(SupervisionSource::Flow, &m, &e, None).is_err());

        let mut data = vec![3.0f32; 36];
        data.extend(vec![-4.0f32; 36]);
        let flow = FlowField::new(Tensor::new(vec![2, 6, 6], data).unwrap()).unwrap();
        let f = build_supervision(
            SupervisionSource::Flow,
            &m,
            &e,
            Some(FlowInput { field: &flow, clip_max: flow.max_magnitude() }),
        )
        .unwrap();
        assert!(f.data().iter().all(|&v| v == 1.0));

        let raw = build_supervision(SupervisionSource::EventRaw, &m, &e, None).unwrap();
        assert_eq!(raw, STMap::from(&e));
        let full = build_supervision(SupervisionSource::EventGtDilated, &m, &e, None).unwrap();
        assert_eq!(full, build_st_map(&m, &e, &StructuringElement::default()).unwrap());
    }

    #[test]
    fn clip_flow_normalisation_uses_clip_max() {
        let m = BinaryMask::zeros(1, 2);
        let f1 = FlowField::new(Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        let f2 = FlowField::new(Tensor::new(vec![2, 1, 2], vec![2.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        let maps = build_clip_supervision(
            SupervisionSource::Flow,
            &[m.clone(), m.clone()],
            &[m.clone(), m],
            Some(&[f1, f2]),
        )
        .unwrap();
        assert_eq!(maps[0].data(), &[0.5, 0.0]);
        assert_eq!(maps[1].data(), &[1.0, 0.0]);
    }

    #[test]
    fn downsample_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = STMap::from(&random_mask(&mut rng, 16, 16, 0.1));
        assert_eq!(downsample_target(&m, 16, 16).unwrap().data(), m.data());

        let blk = STMap::from(&point(2, 2, 1, 0));
        assert_eq!(downsample_target(&blk, 1, 1).unwrap().data(), &[1.0]);

        let p = downsample_target(&m, 4, 4).unwrap();
        for oy in 0..4 {
            for ox in 0..4 {
                let mut mx = 0.0f32;
                for dy in 0..4 {
                    for dx in 0..4 {
                        mx = mx.max(m.data()[(oy * 4 + dy) * 16 + ox * 4 + dx]);
                    }
                }
                assert_eq!(p.data()[oy * 4 + ox], mx);
            }
        }
        assert!(downsample_target(&m, 5, 4).is_err());
    }

    #[test]
    fn mask_image_roundtrip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_mask(&mut rng, 3, 7, 0.5);
        assert_eq!(BinaryMask::from_image(&m.to_image()).unwrap(), m);
        let mut img = m.to_image();
        img.data[0] = 128;
        assert!(matches!(BinaryMask::from_image(&img), Err(Error::Integrity(_))));
    }

    proptest! {
        #[test]
        fn properties(seed in any::<u64>(), h in 1usize..12, w in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = StructuringElement::default();
            let m2 = random_mask(&mut rng, h, w, 0.3);
            let m1 = m2.and(&random_mask(&mut rng, h, w, 0.5)).unwrap();
            let e = random_mask(&mut rng, h, w, 0.5);

            // monotonicity
            prop_assert!(dilate(&m1, &d).is_subset_of(&dilate(&m2, &d)));
            let s1 = build_st_map(&m1, &e, &d).unwrap();
            let s2 = build_st_map(&m2, &e, &d).unwrap();
            prop_assert!(s1.data().iter().zip(s2.data()).all(|(a, b)| a <= b));

            // identities
            prop_assert_eq!(build_st_map(&m2, &BinaryMask::ones(h, w), &d).unwrap(), STMap::from(&dilate(&m2, &d)));
            prop_assert_eq!(build_st_map(&BinaryMask::ones(h, w), &e, &d).unwrap(), STMap::from(&e));

            // pointwise bounds
            let dm = dilate(&m2, &d);
            for (k, &v) in s2.data().iter().enumerate() {
                prop_assert!(v <= f32::from(e.data()[k]));
                prop_assert!(v <= f32::from(dm.data()[k]));
            }
        }

        #[test]
        fn binarize_ignores_polarity(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = EventStream::new(6, 6);
            let mut t = 0;
            for _ in 0..40 {
                t += rng.gen_range(0..5_000);
                let p = if rng.gen_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
                s.push(ev(t, rng.gen_range(0..6), rng.gen_range(0..6), p)).unwrap();
            }
            let mut flipped = s.clone();
            flipped.events.iter_mut().for_each(|e| e.polarity = e.polarity.flipped());
            prop_assert_eq!(
                binarize_events(&s, 120_000, 50_000).unwrap(),
                binarize_events(&flipped, 120_000, 50_000).unwrap()
            );
        }
    }
}
