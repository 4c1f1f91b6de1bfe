//! Training-free inpainter: hides the expanded box and fills it by
//! neighbor-mean diffusion from its surroundings.

use crate::bbox::{PixelBBox, INPAINT_EXPANSION};
use crate::error::Result;
use crate::image::Image;

pub const INPAINT_TOLERANCE: f64 = 1e-4;
pub const INPAINT_MAX_SWEEPS: usize = 500;

/// Pixel range `[x0, x1) × [y0, y1)` whose centers lie in the expanded box,
/// clipped to the image.
pub fn hidden_region(
    bbox: &PixelBBox,
    width: usize,
    height: usize,
) -> (usize, usize, usize, usize) {
    let e = bbox.expanded(INPAINT_EXPANSION);
    let span = |lo: f64, hi: f64, n: usize| {
        let a = (lo - 0.5).ceil().clamp(0.0, n as f64) as usize;
        let b = (hi - 0.5).ceil().clamp(0.0, n as f64) as usize;
        (a, b.max(a))
    };
    let (x0, x1) = span(e.left(), e.right(), width);
    let (y0, y1) = span(e.top(), e.bottom(), height);
    (x0, x1, y0, y1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InpaintStats {
    pub sweeps: usize,
    pub max_update: f64,
}

pub fn inpaint(image: &Image, bbox: &PixelBBox) -> Result<Image> {
    Ok(inpaint_with_stats(image, bbox)?.0)
}

pub fn inpaint_with_stats(image: &Image, bbox: &PixelBBox) -> Result<(Image, InpaintStats)> {
    bbox.validate()?;
    let (w, h, nc) = (image.width(), image.height(), image.channels());
    let (x0, x1, y0, y1) = hidden_region(bbox, w, h);
    let mut out = image.clone();
    if x0 == x1 || y0 == y1 {
        return Ok((
            out,
            InpaintStats {
                sweeps: 0,
                max_update: 0.0,
            },
        ));
    }
    let (rw, rh) = (x1 - x0, y1 - y0);

    // Start from the mean of row-wise and column-wise linear interpolation
    // between the known pixels bracketing the region.
    for y in y0..y1 {
        for x in x0..x1 {
            for k in 0..nc {
                let mut acc = 0.0;
                let mut n = 0.0;
                let (l, r) = (x0.checked_sub(1), (x1 < w).then_some(x1));
                if let Some(v) = interp(
                    l.map(|l| image.get(l, y, k)),
                    r.map(|r| image.get(r, y, k)),
                    x - x0,
                    rw,
                ) {
                    acc += v;
                    n += 1.0;
                }
                let (t, b) = (y0.checked_sub(1), (y1 < h).then_some(y1));
                if let Some(v) = interp(
                    t.map(|t| image.get(x, t, k)),
                    b.map(|b| image.get(x, b, k)),
                    y - y0,
                    rh,
                ) {
                    acc += v;
                    n += 1.0;
                }
                out.set(x, y, k, if n > 0.0 { acc / n } else { 0.5 });
            }
        }
    }

    let mut next = out.clone();
    let mut stats = InpaintStats {
        sweeps: 0,
        max_update: 0.0,
    };
    while stats.sweeps < INPAINT_MAX_SWEEPS {
        let mut max_update: f64 = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                for k in 0..nc {
                    // Neighbors outside the image are dropped (zero-flux border).
                    let mut s = 0.0;
                    let mut n = 0.0;
                    if x > 0 {
                        s += out.get(x - 1, y, k);
                        n += 1.0;
                    }
                    if x + 1 < w {
                        s += out.get(x + 1, y, k);
                        n += 1.0;
                    }
                    if y > 0 {
                        s += out.get(x, y - 1, k);
                        n += 1.0;
                    }
                    if y + 1 < h {
                        s += out.get(x, y + 1, k);
                        n += 1.0;
                    }
                    let v = s / n;
                    max_update = max_update.max((v - out.get(x, y, k)).abs());
                    next.set(x, y, k, v);
                }
            }
        }
        std::mem::swap(&mut out, &mut next);
        stats.sweeps += 1;
        stats.max_update = max_update;
        if max_update < INPAINT_TOLERANCE {
            break;
        }
    }
    Ok((out, stats))
}

fn interp(a: Option<f64>, b: Option<f64>, i: usize, n: usize) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) => {
            let t = (i + 1) as f64 / (n + 1) as f64;
            Some(a + (b - a) * t)
        }
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    }
}
