//! Region IoU (J), boundary F-measure, detection mAP at IoU 0.5 and the
//! mask threshold line search.

use serde::{Deserialize, Serialize};

use crate::bbox::PixelBBox;
use crate::error::{Error, Result};
use crate::image::Image;

/// Relative boundary tolerance: fraction of the image diagonal.
pub const F_TOLERANCE_FRACTION: f64 = 0.008;

/// Number of thresholds tried by [`threshold_search`].
pub const THRESHOLD_STEPS: usize = 21;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} mask",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |_, _| false)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    /// `prob >= threshold` on the first channel.
    pub fn from_probs(probs: &Image, threshold: f64) -> Self {
        let nc = probs.channels();
        let pixels = probs
            .data()
            .iter()
            .step_by(nc)
            .map(|&p| p >= threshold)
            .collect();
        Self {
            width: probs.width(),
            height: probs.height(),
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    /// Tight box around the set pixels, `None` when empty.
    pub fn bounding_box(&self) -> Option<PixelBBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX)
            .then(|| PixelBBox::from_edges(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64))
    }

    /// Mask pixels with at least one 4-neighbor outside the mask (pixels
    /// beyond the image count as outside).
    pub fn boundary(&self) -> BinaryMask {
        let (w, h) = (self.width, self.height);
        BinaryMask::from_fn(w, h, |x, y| {
            if !self.get(x, y) {
                return false;
            }
            let inside = |dx: isize, dy: isize| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                nx >= 0
                    && ny >= 0
                    && nx < w as isize
                    && ny < h as isize
                    && self.get(nx as usize, ny as usize)
            };
            !(inside(-1, 0) && inside(1, 0) && inside(0, -1) && inside(0, 1))
        })
    }

    pub fn to_image(&self) -> Image {
        Image::from_vec(
            self.width,
            self.height,
            1,
            self.pixels
                .iter()
                .map(|&p| if p { 1.0 } else { 0.0 })
                .collect(),
        )
        .expect("shape preserved")
    }

    fn check(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Region similarity `|P ∩ G| / |P ∪ G|`; 1 when both are empty.
pub fn j_score(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.check(gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.pixels.iter().zip(&gt.pixels) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Default boundary tolerance in pixels for an image of this size.
pub fn default_f_tolerance(width: usize, height: usize) -> f64 {
    F_TOLERANCE_FRACTION * ((width * width + height * height) as f64).sqrt()
}

/// Boundary F-measure: precision and recall of boundary pixels lying within
/// `tol` pixels (Euclidean) of the other mask's boundary.
pub fn f_score(pred: &BinaryMask, gt: &BinaryMask, tol: f64) -> Result<f64> {
    pred.check(gt)?;
    let bp = pred.boundary();
    let bg = gt.boundary();
    let (np, ng) = (bp.count(), bg.count());
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let tol2 = tol * tol;
    let hits = |from: &BinaryMask, to: &BinaryMask| {
        let d = squared_distance_transform(to);
        from.pixels
            .iter()
            .zip(&d)
            .filter(|(&b, &d)| b && d <= tol2)
            .count()
    };
    let precision = hits(&bp, &bg) as f64 / np as f64;
    let recall = hits(&bg, &bp) as f64 / ng as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

/// Exact squared Euclidean distance to the nearest set pixel (separable
/// lower-envelope algorithm). Infinite when the mask is empty.
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = (mask.width, mask.height);
    let mut grid: Vec<f64> = mask
        .pixels
        .iter()
        .map(|&p| if p { 0.0 } else { f64::INFINITY })
        .collect();
    let mut f = Vec::new();
    let mut out = Vec::new();
    for x in 0..w {
        f.clear();
        f.extend((0..h).map(|y| grid[y * w + x]));
        envelope_1d(&f, &mut out);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f.clear();
        f.extend_from_slice(&grid[y * w..(y + 1) * w]);
        envelope_1d(&f, &mut out);
        grid[y * w..(y + 1) * w].copy_from_slice(&out);
    }
    grid
}

fn envelope_1d(f: &[f64], out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let Some(first) = f.iter().position(|v| v.is_finite()) else {
        return;
    };
    let cross = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    let mut v = vec![first; n];
    let mut z = vec![f64::INFINITY; n + 1];
    z[0] = f64::NEG_INFINITY;
    let mut k = 0;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let mut s = cross(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = cross(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Fraction of frames whose predicted box overlaps the ground truth with
/// IoU strictly above 0.5.
pub fn map50(pred: &[PixelBBox], gt: &[PixelBBox]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = pred.iter().zip(gt).filter(|(p, g)| p.iou(g) > 0.5).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Outcome of [`threshold_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSearch {
    pub threshold: f64,
    pub j: f64,
    /// Mean J at every candidate, in increasing threshold order.
    pub candidates: Vec<(f64, f64)>,
}

/// The candidate thresholds `0.00, 0.05, …, 1.00`.
pub fn threshold_candidates() -> [f64; THRESHOLD_STEPS] {
    std::array::from_fn(|i| i as f64 / (THRESHOLD_STEPS - 1) as f64)
}

/// Mean J over frames at each candidate threshold; returns the best (the
/// smallest threshold on ties).
pub fn threshold_search(prob_masks: &[Image], gts: &[BinaryMask]) -> Result<ThresholdSearch> {
    if prob_masks.len() != gts.len() {
        return Err(Error::LengthMismatch {
            left: prob_masks.len(),
            right: gts.len(),
        });
    }
    if prob_masks.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut candidates = Vec::with_capacity(THRESHOLD_STEPS);
    for t in threshold_candidates() {
        let mut total = 0.0;
        for (p, g) in prob_masks.iter().zip(gts) {
            total += j_score(&BinaryMask::from_probs(p, t), g)?;
        }
        candidates.push((t, total / prob_masks.len() as f64));
    }
    let (threshold, j) =
        candidates
            .iter()
            .copied()
            .fold((f64::NAN, f64::NEG_INFINITY), |best, c| {
                if c.1 > best.1 {
                    c
                } else {
                    best
                }
            });
    Ok(ThresholdSearch {
        threshold,
        j,
        candidates,
    })
}

/// Aggregate evaluation scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub j: f64,
    pub f: f64,
    pub map50: f64,
    pub threshold: f64,
}

/// Thresholds every probability mask at the searched optimum and averages
/// J and F; boxes give mAP.
pub fn evaluate(
    prob_masks: &[Image],
    gt_masks: &[BinaryMask],
    pred_boxes: &[PixelBBox],
    gt_boxes: &[PixelBBox],
    f_tol: Option<f64>,
) -> Result<EvalReport> {
    let search = threshold_search(prob_masks, gt_masks)?;
    let mut f_total = 0.0;
    for (p, g) in prob_masks.iter().zip(gt_masks) {
        let tol = f_tol.unwrap_or_else(|| default_f_tolerance(g.width(), g.height()));
        f_total += f_score(&BinaryMask::from_probs(p, search.threshold), g, tol)?;
    }
    Ok(EvalReport {
        j: search.j,
        f: f_total / prob_masks.len() as f64,
        map50: map50(pred_boxes, gt_boxes)?,
        threshold: search.threshold,
    })
}
