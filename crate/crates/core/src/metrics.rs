//! Region similarity (J), contour accuracy (F) and their aggregates.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::supervision::BinaryMask;

fn check_sizes(op: &'static str, a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::dim(
            op,
            format!("{}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width()),
        ));
    }
    Ok(())
}

/// Intersection over union; 1 when both masks are empty.
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_sizes("jaccard", pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += (p & g) as usize;
        union += (p | g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Foreground pixels with a 4-neighbour in the background or on the image edge.
pub fn boundary(m: &BinaryMask) -> BinaryMask {
    let (h, w) = (m.height(), m.width());
    BinaryMask::from_fn(h, w, |i, j| {
        m.get(i, j)
            && (i == 0
                || j == 0
                || i + 1 == h
                || j + 1 == w
                || !m.get(i - 1, j)
                || !m.get(i + 1, j)
                || !m.get(i, j - 1)
                || !m.get(i, j + 1))
    })
}

/// Matching tolerance in pixels: `ceil(0.008 · diagonal)`.
pub fn boundary_tolerance(height: usize, width: usize) -> usize {
    (0.008 * ((height * height + width * width) as f64).sqrt()).ceil() as usize
}

fn dilate_disc(m: &BinaryMask, radius: usize) -> BinaryMask {
    let (h, w) = (m.height(), m.width());
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let mut out = BinaryMask::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            if !m.get(i, j) {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (a, b) = (i as isize + dy, j as isize + dx);
                if a >= 0 && b >= 0 && (a as usize) < h && (b as usize) < w {
                    out.set(a as usize, b as usize, true);
                }
            }
        }
    }
    out
}

/// Boundary F-measure with a disc tolerance.
pub fn boundary_f(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_sizes("boundary_f", pred, gt)?;
    let pb = boundary(pred);
    let gb = boundary(gt);
    let (np, ng) = (pb.count(), gb.count());
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    let r = boundary_tolerance(pred.height(), pred.width());
    let precision = if np == 0 {
        1.0
    } else {
        pb.and(&dilate_disc(&gb, r))?.count() as f64 / np as f64
    };
    let recall = if ng == 0 {
        1.0
    } else {
        gb.and(&dilate_disc(&pb, r))?.count() as f64 / ng as f64
    };
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

/// J and F of one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameScore {
    pub j: f64,
    pub f: f64,
}

pub fn score_frame(pred: &BinaryMask, gt: &BinaryMask) -> Result<FrameScore> {
    Ok(FrameScore {
        j: jaccard(pred, gt)?,
        f: boundary_f(pred, gt)?,
    })
}

/// Aggregate statistics, in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Report {
    pub j_mean: f64,
    pub j_recall: f64,
    pub f_mean: f64,
    pub f_recall: f64,
    pub j_and_f: f64,
}

/// Frames count toward recall when their score is strictly above this.
pub const RECALL_THRESHOLD: f64 = 0.5;

pub fn aggregate(scores: &[FrameScore]) -> Result<Report> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate zero frames".into()));
    }
    let n = scores.len() as f64;
    let mean = |f: fn(&FrameScore) -> f64| 100.0 * scores.iter().map(f).sum::<f64>() / n;
    let recall = |f: fn(&FrameScore) -> f64| {
        100.0 * scores.iter().filter(|s| f(s) > RECALL_THRESHOLD).count() as f64 / n
    };
    let j_mean = mean(|s| s.j);
    let f_mean = mean(|s| s.f);
    Ok(Report {
        j_mean,
        j_recall: recall(|s| s.j),
        f_mean,
        f_recall: recall(|s| s.f),
        j_and_f: (j_mean + f_mean) / 2.0,
    })
}

impl Report {
    /// `key value` lines with one decimal.
    pub fn to_text(&self) -> String {
        format!(
            "J_mean {:.1}\nJ_recall {:.1}\nF_mean {:.1}\nF_recall {:.1}\nJandF {:.1}\n",
            self.j_mean, self.j_recall, self.f_mean, self.f_recall, self.j_and_f
        )
    }

    pub fn from_text(text: &str) -> Result<Report> {
        let mut vals = [None; 5];
        const KEYS: [&str; 5] = ["J_mean", "J_recall", "F_mean", "F_recall", "JandF"];
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| Error::InvalidArgument(format!("bad report line '{line}'")))?;
            let idx = KEYS
                .iter()
                .position(|&key| key == k)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown report key '{k}'")))?;
            vals[idx] = Some(
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("report value '{v}': {e}")))?,
            );
        }
        let get = |i: usize| vals[i].ok_or_else(|| Error::InvalidArgument(format!("missing {}", KEYS[i])));
        Ok(Report {
            j_mean: get(0)?,
            j_recall: get(1)?,
            f_mean: get(2)?,
            f_recall: get(3)?,
            j_and_f: get(4)?,
        })
    }
}

/// Per-frame CSV with header `frame_id,J,F`.
pub fn per_frame_csv(rows: &[(String, FrameScore)]) -> String {
    let mut out = String::from("frame_id,J,F\n");
    for (id, s) in rows {
        let _ = writeln!(out, "{id},{:.6},{:.6}", s.j, s.f);
    }
    out
}
