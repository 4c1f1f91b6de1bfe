//! Box parameterization, multi-view box consistency and the bilinear
//! crop / splat / paste operators behind the image recomposition.
//!
//! Continuous pixel coordinates put the center of pixel `x` at `x + 0.5`.
//! Bilinear reads at a grid line take the left/top cell's linear piece, so
//! the derivative at an exact integer position is that of the lower cell.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::camera::{CameraRig, Line3};
use crate::error::{Error, Result};
use crate::grid::GridSpec2D;
use crate::image::Image;
use crate::mvgeom::nearest_point_to_lines;

/// Side of the square crop window.
pub const CROP_RES: usize = 128;

/// Per-dimension growth of the region hidden from the inpainter.
pub const INPAINT_EXPANSION: f64 = 0.15;

/// Raw per-cell box prediction, all fields in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBoxParams {
    pub cell: usize,
    pub dx: f64,
    pub dy: f64,
    pub sx: f64,
    pub sy: f64,
}

/// Axis-aligned box in pixels: center and full extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBBox<T = f64> {
    pub cu: T,
    pub cv: T,
    pub w: T,
    pub h: T,
}

impl<T: Real> PixelBBox<T> {
    pub fn from_array([cu, cv, w, h]: [T; 4]) -> Self {
        Self { cu, cv, w, h }
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.cu, self.cv, self.w, self.h]
    }

    pub fn values(&self) -> PixelBBox {
        PixelBBox {
            cu: self.cu.value(),
            cv: self.cv.value(),
            w: self.w.value(),
            h: self.h.value(),
        }
    }
}

impl PixelBBox {
    pub fn new(cu: f64, cv: f64, w: f64, h: f64) -> Self {
        Self { cu, cv, w, h }
    }

    /// Box spanning `[left, right) × [top, bottom)`.
    pub fn from_edges(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self::new(
            0.5 * (left + right),
            0.5 * (top + bottom),
            right - left,
            bottom - top,
        )
    }

    pub fn left(&self) -> f64 {
        self.cu - 0.5 * self.w
    }

    pub fn right(&self) -> f64 {
        self.cu + 0.5 * self.w
    }

    pub fn top(&self) -> f64 {
        self.cv - 0.5 * self.h
    }

    pub fn bottom(&self) -> f64 {
        self.cv + 0.5 * self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Same center, both extents scaled by `1 + frac`.
    pub fn expanded(&self, frac: f64) -> Self {
        Self::new(
            self.cu,
            self.cv,
            self.w * (1.0 + frac),
            self.h * (1.0 + frac),
        )
    }

    pub fn iou(&self, other: &PixelBBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.left().max(other.left())).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.top().max(other.top())).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn translated(&self, du: f64, dv: f64) -> Self {
        Self::new(self.cu + du, self.cv + dv, self.w, self.h)
    }

    /// Rejects boxes narrower or shorter than one pixel.
    pub fn validate(&self) -> Result<()> {
        if !(self.w >= 1.0 && self.h >= 1.0) || !self.cu.is_finite() || !self.cv.is_finite() {
            return Err(Error::DegenerateBox {
                w: self.w,
                h: self.h,
            });
        }
        Ok(())
    }
}

/// Decodes offsets and sizes relative to `cell`: the center stays inside
/// the cell, `dx = dy = 0.5` being the cell center.
pub fn decode_bbox_generic<T: Real>(
    spec: &GridSpec2D,
    cell: usize,
    [dx, dy, sx, sy]: [T; 4],
) -> Result<PixelBBox<T>> {
    let (gx, gy) = spec.cell_center(cell);
    let (cw, ch) = spec.cell_size();
    let b = PixelBBox {
        cu: (dx - 0.5) * cw + gx,
        cv: (dy - 0.5) * ch + gy,
        w: sx * spec.width as f64,
        h: sy * spec.height as f64,
    };
    b.values().validate()?;
    Ok(b)
}

pub fn decode_bbox(spec: &GridSpec2D, params: &BBoxParams) -> Result<PixelBBox> {
    decode_bbox_generic(
        spec,
        params.cell,
        [params.dx, params.dy, params.sx, params.sy],
    )
}

fn check_count<T>(rig: &CameraRig, boxes: &[T]) -> Result<()> {
    if rig.len() != boxes.len() {
        return Err(Error::LengthMismatch {
            left: boxes.len(),
            right: rig.len(),
        });
    }
    Ok(())
}

/// Triangulates one image point per view and reprojects it into every view.
pub fn consensus_points<T: Real>(rig: &CameraRig, pixels: &[[T; 2]]) -> Result<Vec<[T; 2]>> {
    check_count(rig, pixels)?;
    let lines: Vec<Line3<T>> = rig
        .cameras()
        .iter()
        .zip(pixels)
        .map(|(cam, &[u, v])| cam.ray_through_pixel(u, v))
        .collect();
    let x = nearest_point_to_lines(&lines)?.point;
    rig.cameras().iter().map(|cam| cam.project(&x)).collect()
}

/// Replaces every center with the reprojection of the point nearest to all
/// center rays. Extents pass through untouched.
pub fn adjust_centers<T: Real>(
    rig: &CameraRig,
    boxes: &[PixelBBox<T>],
) -> Result<Vec<PixelBBox<T>>> {
    let centers: Vec<[T; 2]> = boxes.iter().map(|b| [b.cu, b.cv]).collect();
    let moved = consensus_points(rig, &centers)?;
    Ok(boxes
        .iter()
        .zip(moved)
        .map(|(b, [cu, cv])| PixelBBox {
            cu,
            cv,
            w: b.w,
            h: b.h,
        })
        .collect())
}

/// Makes heights consistent by triangulating the top and bottom edge
/// midpoints separately. Centers and widths are kept.
pub fn adjust_heights<T: Real>(
    rig: &CameraRig,
    boxes: &[PixelBBox<T>],
) -> Result<Vec<PixelBBox<T>>> {
    let tops: Vec<[T; 2]> = boxes.iter().map(|b| [b.cu, b.cv - b.h * 0.5]).collect();
    let bottoms: Vec<[T; 2]> = boxes.iter().map(|b| [b.cu, b.cv + b.h * 0.5]).collect();
    let tops = consensus_points(rig, &tops)?;
    let bottoms = consensus_points(rig, &bottoms)?;
    boxes
        .iter()
        .zip(tops.iter().zip(&bottoms))
        .map(|(b, (t, bt))| {
            let h = bt[1] - t[1];
            if h.value() <= 0.0 {
                return Err(Error::InvertedBox {
                    top: t[1].value(),
                    bottom: bt[1].value(),
                });
            }
            Ok(PixelBBox {
                cu: b.cu,
                cv: b.cv,
                w: b.w,
                h,
            })
        })
        .collect()
}

/// Width counterpart of [`adjust_heights`] using left/right edge midpoints.
pub fn adjust_widths<T: Real>(
    rig: &CameraRig,
    boxes: &[PixelBBox<T>],
) -> Result<Vec<PixelBBox<T>>> {
    let lefts: Vec<[T; 2]> = boxes.iter().map(|b| [b.cu - b.w * 0.5, b.cv]).collect();
    let rights: Vec<[T; 2]> = boxes.iter().map(|b| [b.cu + b.w * 0.5, b.cv]).collect();
    let lefts = consensus_points(rig, &lefts)?;
    let rights = consensus_points(rig, &rights)?;
    boxes
        .iter()
        .zip(lefts.iter().zip(&rights))
        .map(|(b, (l, r))| {
            let w = r[0] - l[0];
            if w.value() <= 0.0 {
                return Err(Error::InvertedBox {
                    top: l[0].value(),
                    bottom: r[0].value(),
                });
            }
            Ok(PixelBBox {
                cu: b.cu,
                cv: b.cv,
                w,
                h: b.h,
            })
        })
        .collect()
}

/// Lower tap and the weight of the upper tap for a bilinear read at grid
/// coordinate `x`. The weight lies in `(0, 1]`.
#[inline]
pub fn taps(x: f64) -> (isize, f64) {
    let c = x.ceil();
    (c as isize - 1, x - (c - 1.0))
}

/// Sample positions of the crop window along one axis, in source grid
/// coordinates, with their derivatives wrt box center and extent.
#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: isize,
    f: f64,
    d_size: f64,
}

fn crop_axis(center: f64, size: f64, n: usize) -> Vec<Axis> {
    let start = center - 0.5 * size;
    (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) / n as f64;
            let (lo, f) = taps(start + t * size - 0.5);
            Axis {
                lo,
                f,
                d_size: t - 0.5,
            }
        })
        .collect()
}

/// Bilinear resampling of the box onto a `CROP_RES × CROP_RES` window.
/// Reads outside the image are zero.
pub fn crop(image: &Image, bbox: &PixelBBox) -> Result<Image> {
    crop_to(image, bbox, CROP_RES)
}

pub fn crop_to(image: &Image, bbox: &PixelBBox, res: usize) -> Result<Image> {
    bbox.validate()?;
    let nc = image.channels();
    let xs = crop_axis(bbox.cu, bbox.w, res);
    let ys = crop_axis(bbox.cv, bbox.h, res);
    let mut out = Image::zeros(res, res, nc);
    let data = out.data_mut();
    let mut o = 0;
    for ay in &ys {
        for ax in &xs {
            let (x0, y0) = (ax.lo, ay.lo);
            let w00 = (1.0 - ax.f) * (1.0 - ay.f);
            let w10 = ax.f * (1.0 - ay.f);
            let w01 = (1.0 - ax.f) * ay.f;
            let w11 = ax.f * ay.f;
            for k in 0..nc {
                data[o + k] = w00 * image.get_padded(x0, y0, k)
                    + w10 * image.get_padded(x0 + 1, y0, k)
                    + w01 * image.get_padded(x0, y0 + 1, k)
                    + w11 * image.get_padded(x0 + 1, y0 + 1, k);
            }
            o += nc;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of [`crop`]: gradient wrt the image (if asked)
/// and wrt `(cu, cv, w, h)`.
pub fn crop_backward(
    image: &Image,
    bbox: &PixelBBox,
    grad: &Image,
    want_image: bool,
) -> (Option<Image>, [f64; 4]) {
    let res = grad.width();
    let nc = image.channels();
    let xs = crop_axis(bbox.cu, bbox.w, res);
    let ys = crop_axis(bbox.cv, bbox.h, res);
    let mut gimg = want_image.then(|| Image::zeros(image.width(), image.height(), nc));
    let mut gb = [0.0; 4];
    let gd = grad.data();
    let mut o = 0;
    for ay in &ys {
        for ax in &xs {
            let (x0, y0) = (ax.lo, ay.lo);
            let (fx, fy) = (ax.f, ay.f);
            let mut dx = 0.0;
            let mut dy = 0.0;
            for k in 0..nc {
                let g = gd[o + k];
                if g == 0.0 {
                    continue;
                }
                let i00 = image.get_padded(x0, y0, k);
                let i10 = image.get_padded(x0 + 1, y0, k);
                let i01 = image.get_padded(x0, y0 + 1, k);
                let i11 = image.get_padded(x0 + 1, y0 + 1, k);
                dx += g * ((1.0 - fy) * (i10 - i00) + fy * (i11 - i01));
                dy += g * ((1.0 - fx) * (i01 - i00) + fx * (i11 - i10));
                if let Some(gi) = gimg.as_mut() {
                    splat(gi, x0, y0, fx, fy, k, g);
                }
            }
            gb[0] += dx;
            gb[1] += dy;
            gb[2] += dx * ax.d_size;
            gb[3] += dy * ay.d_size;
            o += nc;
        }
    }
    (gimg, gb)
}

#[inline]
fn splat(canvas: &mut Image, x0: isize, y0: isize, fx: f64, fy: f64, k: usize, v: f64) {
    let (w, h) = (canvas.width() as isize, canvas.height() as isize);
    let nc = canvas.channels();
    let data = canvas.data_mut();
    let mut add = |x: isize, y: isize, wgt: f64| {
        if x >= 0 && y >= 0 && x < w && y < h && wgt != 0.0 {
            data[(y as usize * w as usize + x as usize) * nc + k] += wgt * v;
        }
    };
    add(x0, y0, (1.0 - fx) * (1.0 - fy));
    add(x0 + 1, y0, fx * (1.0 - fy));
    add(x0, y0 + 1, (1.0 - fx) * fy);
    add(x0 + 1, y0 + 1, fx * fy);
}

/// Exact adjoint of [`crop`]: every window sample is splatted back onto a
/// zero `width × height` canvas with its bilinear weights.
pub fn uncrop(patch: &Image, bbox: &PixelBBox, width: usize, height: usize) -> Result<Image> {
    bbox.validate()?;
    let res = patch.width();
    let nc = patch.channels();
    let xs = crop_axis(bbox.cu, bbox.w, res);
    let ys = crop_axis(bbox.cv, bbox.h, res);
    let mut canvas = Image::zeros(width, height, nc);
    let pd = patch.data();
    let mut o = 0;
    for ay in &ys {
        for ax in &xs {
            for k in 0..nc {
                splat(&mut canvas, ax.lo, ay.lo, ax.f, ay.f, k, pd[o + k]);
            }
            o += nc;
        }
    }
    Ok(canvas)
}

/// Image pixels whose paste read touches the window, with the window-grid
/// coordinate of the pixel center and its derivatives.
#[derive(Debug, Clone, Copy)]
struct PasteAxis {
    pixel: usize,
    lo: isize,
    f: f64,
    d_center: f64,
    d_size: f64,
}

fn paste_axis(center: f64, size: f64, n: usize, extent: usize) -> Vec<PasteAxis> {
    let scale = n as f64 / size;
    let start = center - 0.5 * size;
    let margin = size / n as f64 + 1.0;
    let first = (start - margin).floor().max(0.0) as usize;
    let last = ((start + size + margin).ceil().max(0.0) as usize).min(extent);
    (first..last)
        .filter_map(|p| {
            let a = p as f64 + 0.5 - start;
            let g = a * scale - 0.5;
            if g <= -1.0 || g >= n as f64 {
                return None;
            }
            let (lo, f) = taps(g);
            Some(PasteAxis {
                pixel: p,
                lo,
                f,
                d_center: -scale,
                d_size: scale * (0.5 - a / size),
            })
        })
        .collect()
}

#[inline]
fn patch_read(patch: &Image, x: isize, y: isize, k: usize) -> f64 {
    patch.get_padded(x, y, k)
}

/// Inverse warp of the window onto the image: each image pixel near the box
/// reads the patch bilinearly at its window coordinate, zero outside the
/// window. Unlike [`uncrop`] this reproduces constant patches exactly for any
/// box size.
pub fn paste(patch: &Image, bbox: &PixelBBox, width: usize, height: usize) -> Result<Image> {
    bbox.validate()?;
    let nc = patch.channels();
    let xs = paste_axis(bbox.cu, bbox.w, patch.width(), width);
    let ys = paste_axis(bbox.cv, bbox.h, patch.height(), height);
    let mut out = Image::zeros(width, height, nc);
    for ay in &ys {
        for ax in &xs {
            let o = out.offset(ax.pixel, ay.pixel);
            let (x0, y0, fx, fy) = (ax.lo, ay.lo, ax.f, ay.f);
            for k in 0..nc {
                let v = (1.0 - fx) * (1.0 - fy) * patch_read(patch, x0, y0, k)
                    + fx * (1.0 - fy) * patch_read(patch, x0 + 1, y0, k)
                    + (1.0 - fx) * fy * patch_read(patch, x0, y0 + 1, k)
                    + fx * fy * patch_read(patch, x0 + 1, y0 + 1, k);
                out.data_mut()[o + k] = v;
            }
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of [`paste`]: gradients wrt the patch and
/// `(cu, cv, w, h)`.
pub fn paste_backward(patch: &Image, bbox: &PixelBBox, grad: &Image) -> (Image, [f64; 4]) {
    let nc = patch.channels();
    let xs = paste_axis(bbox.cu, bbox.w, patch.width(), grad.width());
    let ys = paste_axis(bbox.cv, bbox.h, patch.height(), grad.height());
    let mut gp = Image::zeros(patch.width(), patch.height(), nc);
    let mut gb = [0.0; 4];
    for ay in &ys {
        for ax in &xs {
            let o = grad.offset(ax.pixel, ay.pixel);
            let (x0, y0, fx, fy) = (ax.lo, ay.lo, ax.f, ay.f);
            let mut dgx = 0.0;
            let mut dgy = 0.0;
            for k in 0..nc {
                let g = grad.data()[o + k];
                if g == 0.0 {
                    continue;
                }
                let p00 = patch_read(patch, x0, y0, k);
                let p10 = patch_read(patch, x0 + 1, y0, k);
                let p01 = patch_read(patch, x0, y0 + 1, k);
                let p11 = patch_read(patch, x0 + 1, y0 + 1, k);
                dgx += g * ((1.0 - fy) * (p10 - p00) + fy * (p11 - p01));
                dgy += g * ((1.0 - fx) * (p01 - p00) + fx * (p11 - p10));
                splat(&mut gp, x0, y0, fx, fy, k, g);
            }
            gb[0] += dgx * ax.d_center;
            gb[1] += dgy * ay.d_center;
            gb[2] += dgx * ax.d_size;
            gb[3] += dgy * ay.d_size;
        }
    }
    (gp, gb)
}

/// Intermediate results of [`composite`] kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Composite {
    pub image: Image,
    /// The mask warped back to the image frame.
    pub mask: Image,
}

/// `paste(fg ∘ S) + bg ∘ (1 − paste(S))`.
pub fn composite(fg: &Image, mask: &Image, bg: &Image, bbox: &PixelBBox) -> Result<Composite> {
    if mask.channels() != 1 || fg.width() != mask.width() || fg.height() != mask.height() {
        return Err(Error::DimensionMismatch(
            "foreground and mask windows differ".into(),
        ));
    }
    let (w, h) = (bg.width(), bg.height());
    let nc = fg.channels();
    if bg.channels() != nc {
        return Err(Error::DimensionMismatch(
            "foreground and background channels differ".into(),
        ));
    }
    let masked = masked_foreground(fg, mask);
    let a = paste(&masked, bbox, w, h)?;
    let m = paste(mask, bbox, w, h)?;
    let mut out = bg.clone();
    {
        let od = out.data_mut();
        let (ad, md) = (a.data(), m.data());
        for p in 0..w * h {
            let keep = 1.0 - md[p];
            for k in 0..nc {
                let i = p * nc + k;
                od[i] = ad[i] + od[i] * keep;
            }
        }
    }
    Ok(Composite {
        image: out,
        mask: m,
    })
}

fn masked_foreground(fg: &Image, mask: &Image) -> Image {
    let nc = fg.channels();
    let md = mask.data();
    let data = fg
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * md[i / nc])
        .collect();
    Image::from_vec(fg.width(), fg.height(), nc, data).expect("shape preserved")
}

/// Gradients of a scalar through [`composite`].
#[derive(Debug, Clone)]
pub struct CompositeGrad {
    pub fg: Image,
    pub mask: Image,
    pub bg: Image,
    pub bbox: [f64; 4],
}

/// Backward pass of [`composite`]. `grad_mask_frame` optionally adds a
/// gradient wrt the pasted mask itself (losses defined on `paste(S)`).
pub fn composite_backward(
    fg: &Image,
    mask: &Image,
    bg: &Image,
    bbox: &PixelBBox,
    pasted_mask: &Image,
    grad: &Image,
    grad_mask_frame: Option<&Image>,
) -> CompositeGrad {
    let (w, h) = (bg.width(), bg.height());
    let nc = fg.channels();
    let mut gm = Image::zeros(w, h, 1);
    let mut gbg = Image::zeros(w, h, nc);
    {
        let (gd, bd, md) = (grad.data(), bg.data(), pasted_mask.data());
        let gmd = gm.data_mut();
        for p in 0..w * h {
            let mut acc = 0.0;
            for k in 0..nc {
                acc -= gd[p * nc + k] * bd[p * nc + k];
            }
            gmd[p] = acc;
        }
        if let Some(extra) = grad_mask_frame {
            for (a, b) in gmd.iter_mut().zip(extra.data()) {
                *a += b;
            }
        }
        let gbd = gbg.data_mut();
        for p in 0..w * h {
            for k in 0..nc {
                gbd[p * nc + k] = gd[p * nc + k] * (1.0 - md[p]);
            }
        }
    }
    let masked = masked_foreground(fg, mask);
    let (g_masked, b1) = paste_backward(&masked, bbox, grad);
    let (g_mask2, b2) = paste_backward(mask, bbox, &gm);
    let md = mask.data();
    let mut gfg = Image::zeros(fg.width(), fg.height(), nc);
    let mut gmask = g_mask2;
    {
        let gmd = gmask.data_mut();
        let (gfd, fd, gmsk) = (gfg.data_mut(), fg.data(), g_masked.data());
        for p in 0..md.len() {
            for k in 0..nc {
                let i = p * nc + k;
                gfd[i] = gmsk[i] * md[p];
                gmd[p] += gmsk[i] * fd[i];
            }
        }
    }
    let mut gb = [0.0; 4];
    for i in 0..4 {
        gb[i] = b1[i] + b2[i];
    }
    CompositeGrad {
        fg: gfg,
        mask: gmask,
        bg: gbg,
        bbox: gb,
    }
}

/// Area of pixel `[p, p + 1)` covered by `[lo, hi)`, with derivatives wrt
/// `lo` and `hi`.
#[inline]
pub fn coverage(p: usize, lo: f64, hi: f64) -> (f64, f64, f64) {
    let a = p as f64;
    let left = lo.max(a);
    let right = hi.min(a + 1.0);
    if right <= left {
        return (0.0, 0.0, 0.0);
    }
    let d_lo = if lo > a { -1.0 } else { 0.0 };
    let d_hi = if hi < a + 1.0 { 1.0 } else { 0.0 };
    (right - left, d_lo, d_hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_grad, external, scalar_fn, Var};
    use crate::camera::CameraModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
        Image::from_fn(w, h, c, |_, _, _| rng.random_range(0.0..1.0))
    }

    fn ring_rig(n: usize) -> CameraRig {
        let cams = (0..n)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / n as f64 + 0.3;
                CameraModel::look_at(
                    [10.0 * a.cos(), 10.0 * a.sin(), 1.5],
                    [0.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0],
                    250.0,
                    128,
                    128,
                )
                .unwrap()
            })
            .collect();
        CameraRig::new(cams).unwrap()
    }

    #[test]
    fn decode_example() {
        let spec = GridSpec2D::new(8, 8, 128, 128).unwrap();
        let cell = 4 + 8 * 2;
        let b = decode_bbox(
            &spec,
            &BBoxParams {
                cell,
                dx: 0.5,
                dy: 0.5,
                sx: 0.25,
                sy: 0.5,
            },
        )
        .unwrap();
        assert_eq!(b, PixelBBox::new(72.0, 40.0, 32.0, 64.0));
        let zero = decode_bbox(
            &spec,
            &BBoxParams {
                cell,
                dx: 0.5,
                dy: 0.5,
                sx: 0.0,
                sy: 0.5,
            },
        );
        assert!(matches!(zero, Err(Error::DegenerateBox { .. })));
    }

    #[test]
    fn centered_offsets_hit_cell_centers() {
        let spec = GridSpec2D::new(8, 6, 640, 360).unwrap();
        for cell in 0..spec.n_cells() {
            let b = decode_bbox(
                &spec,
                &BBoxParams {
                    cell,
                    dx: 0.5,
                    dy: 0.5,
                    sx: 0.1,
                    sy: 0.1,
                },
            )
            .unwrap();
            assert_eq!((b.cu, b.cv), spec.cell_center(cell));
        }
    }

    #[test]
    fn offsets_stay_inside_cell() {
        let spec = GridSpec2D::new(8, 8, 128, 128).unwrap();
        for &(dx, dy) in &[(0.0, 0.0), (1.0, 1.0), (0.3, 0.9)] {
            let b = decode_bbox(
                &spec,
                &BBoxParams {
                    cell: 27,
                    dx,
                    dy,
                    sx: 0.2,
                    sy: 0.2,
                },
            )
            .unwrap();
            let inside = spec.cell_index(b.cu.min(127.999), b.cv.min(127.999));
            if dx < 1.0 && dy < 1.0 {
                assert_eq!(inside, Some(27));
            }
            assert!((48.0..=64.0).contains(&b.cu) && (48.0..=64.0).contains(&b.cv));
        }
    }

    /// Cameras at the subject's height looking level, so vertical segments
    /// centered on that height project to vertical, centered image segments.
    fn level_rig(n: usize) -> CameraRig {
        let cams = (0..n)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / n as f64 + 0.3;
                CameraModel::look_at(
                    [10.0 * a.cos(), 10.0 * a.sin(), 0.0],
                    [0.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0],
                    250.0,
                    128,
                    128,
                )
                .unwrap()
            })
            .collect();
        CameraRig::new(cams).unwrap()
    }

    fn segment_boxes(rig: &CameraRig, foot: [f64; 2], half: f64) -> Vec<PixelBBox> {
        rig.cameras()
            .iter()
            .map(|c| {
                let t = c.project(&[foot[0], foot[1], half]).unwrap();
                let b = c.project(&[foot[0], foot[1], -half]).unwrap();
                let m = c.project(&[foot[0], foot[1], 0.0]).unwrap();
                PixelBBox::new(m[0], m[1], 20.0, b[1] - t[1])
            })
            .collect()
    }

    #[test]
    fn consistent_boxes_are_fixed_points() {
        let rig = level_rig(4);
        let boxes = segment_boxes(&rig, [0.2, -0.1], 0.8);
        let again = adjust_centers(&rig, &boxes).unwrap();
        for (a, b) in again.iter().zip(&boxes) {
            assert!((a.cu - b.cu).abs() < 1e-6 && (a.cv - b.cv).abs() < 1e-6);
        }
        let hs = adjust_heights(&rig, &boxes).unwrap();
        for (a, b) in hs.iter().zip(&boxes) {
            assert!((a.h - b.h).abs() < 1e-6, "{} vs {}", a.h, b.h);
            assert_eq!(a.w.to_bits(), b.w.to_bits());
        }
    }

    #[test]
    fn parallel_center_rays_are_degenerate() {
        let a = CameraModel::from_rows(
            [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
            128,
            128,
        )
        .unwrap();
        let b = CameraModel::from_rows(
            [
                [1.0, 0.0, 0.0, -1.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
            128,
            128,
        )
        .unwrap();
        let rig = CameraRig::new(vec![a, b]).unwrap();
        let boxes = [PixelBBox::new(0.0, 0.0, 10.0, 10.0); 2];
        assert!(matches!(
            adjust_centers(&rig, &boxes),
            Err(Error::DegenerateConfiguration { .. })
        ));
    }

    #[test]
    fn widths_pass_through_bitwise() {
        let rig = ring_rig(3);
        let boxes = vec![
            PixelBBox::new(60.3, 61.0, 17.123, 40.0),
            PixelBBox::new(66.0, 63.5, 9.5, 38.0),
            PixelBBox::new(62.0, 65.0, 21.75, 44.0),
        ];
        for out in [
            adjust_centers(&rig, &boxes).unwrap(),
            adjust_heights(&rig, &boxes).unwrap(),
        ] {
            for (a, b) in out.iter().zip(&boxes) {
                assert_eq!(a.w.to_bits(), b.w.to_bits());
            }
        }
    }

    #[test]
    fn crop_constant_and_outside() {
        let img = Image::filled(128, 128, 3, 0.7);
        let c = crop(&img, &PixelBBox::new(64.0, 64.0, 128.0, 128.0)).unwrap();
        assert!(c.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let c = crop(&img, &PixelBBox::new(400.0, -300.0, 50.0, 50.0)).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
        assert!(crop(&img, &PixelBBox::new(64.0, 64.0, 0.5, 10.0)).is_err());
    }

    #[test]
    fn crop_matches_direct_resampler_on_linear_image() {
        let img = Image::from_fn(200, 150, 1, |x, y, _| {
            0.01 * x as f64 - 0.02 * y as f64 + 0.3
        });
        // A 64×64 integer-aligned box: samples fall at quarter-pixel offsets.
        let bbox = PixelBBox::from_edges(40.0, 30.0, 104.0, 94.0);
        let c = crop(&img, &bbox).unwrap();
        for j in 0..CROP_RES {
            for i in 0..CROP_RES {
                let x = 40.0 + (i as f64 + 0.5) * 0.5 - 0.5;
                let y = 30.0 + (j as f64 + 0.5) * 0.5 - 0.5;
                let want = 0.01 * x - 0.02 * y + 0.3;
                assert!((c.get(i, j, 0) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn crop_uncrop_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let img = random_image(&mut rng, 90, 70, 3);
            let p = random_image(&mut rng, CROP_RES, CROP_RES, 3);
            let bbox = PixelBBox::new(
                rng.random_range(-10.0..100.0),
                rng.random_range(-10.0..80.0),
                rng.random_range(5.0..150.0),
                rng.random_range(5.0..150.0),
            );
            let lhs = crop(&img, &bbox).unwrap().dot(&p);
            let rhs = img.dot(&uncrop(&p, &bbox, 90, 70).unwrap());
            assert!(
                (lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn aligned_uncrop_round_trip() {
        let p = Image::filled(CROP_RES, CROP_RES, 1, 0.4);
        let bbox = PixelBBox::from_edges(20.0, 30.0, 148.0, 158.0);
        let canvas = uncrop(&p, &bbox, 200, 200).unwrap();
        for y in 0..200 {
            for x in 0..200 {
                let inside = (20..148).contains(&x) && (30..158).contains(&y);
                let want = if inside { 0.4 } else { 0.0 };
                assert!((canvas.get(x, y, 0) - want).abs() < 1e-12);
            }
        }
        assert!(uncrop(&Image::zeros(CROP_RES, CROP_RES, 2), &bbox, 50, 50)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn paste_reproduces_constants_for_any_box() {
        let p = Image::filled(CROP_RES, CROP_RES, 1, 1.0);
        let bbox = PixelBBox::from_edges(10.0, 20.0, 42.0, 84.0);
        let out = paste(&p, &bbox, 64, 100).unwrap();
        for y in 0..100 {
            for x in 0..64 {
                let inside = (10..42).contains(&x) && (20..84).contains(&y);
                let v = out.get(x, y, 0);
                if inside {
                    assert!((v - 1.0).abs() < 1e-12, "({x},{y}) = {v}");
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn composite_examples() {
        let bbox = PixelBBox::from_edges(16.0, 8.0, 48.0, 72.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bg = random_image(&mut rng, 64, 80, 3);
        let fg = random_image(&mut rng, CROP_RES, CROP_RES, 3);
        let off = composite(&fg, &Image::zeros(CROP_RES, CROP_RES, 1), &bg, &bbox).unwrap();
        assert_eq!(off.image, bg);

        let ones = Image::filled(CROP_RES, CROP_RES, 3, 1.0);
        let on = composite(
            &ones,
            &Image::filled(CROP_RES, CROP_RES, 1, 1.0),
            &bg,
            &bbox,
        )
        .unwrap();
        let half = composite(
            &ones,
            &Image::filled(CROP_RES, CROP_RES, 1, 0.5),
            &Image::zeros(64, 80, 3),
            &bbox,
        )
        .unwrap();
        for y in 0..80 {
            for x in 0..64 {
                let inside = (16..48).contains(&x) && (8..72).contains(&y);
                for k in 0..3 {
                    let v = on.image.get(x, y, k);
                    if inside {
                        assert!((v - 1.0).abs() < 1e-12);
                        assert!((half.image.get(x, y, k) - 0.5).abs() < 1e-12);
                    } else {
                        assert_eq!(v, bg.get(x, y, k));
                    }
                }
            }
        }
    }

    /// Scalar probe `⟨W, op(box)⟩` spliced into a tape through a VJP.
    fn probe_crop<'t>(img: &Image, weights: &Image, x: &[Var<'t>]) -> Var<'t> {
        let b = PixelBBox::new(x[0].val(), x[1].val(), x[2].val(), x[3].val());
        let c = crop(img, &b).unwrap();
        let (_, g) = crop_backward(img, &b, weights, false);
        external(x, c.dot(weights), &g, "crop_probe")
    }

    #[test]
    fn crop_box_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = random_image(&mut rng, 60, 50, 3);
        let wts = random_image(&mut rng, CROP_RES, CROP_RES, 3);
        let f = scalar_fn(|x| probe_crop(&img, &wts, x));
        // Non-integer box so no sample sits on a grid line.
        let r = check_grad(f, &[30.37, 22.81, 20.13, 17.29], 1e-4, 1e-3).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn crop_image_gradient_is_uncrop() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let img = random_image(&mut rng, 40, 30, 2);
        let wts = random_image(&mut rng, CROP_RES, CROP_RES, 2);
        let b = PixelBBox::new(20.3, 14.6, 25.0, 19.0);
        let (gi, _) = crop_backward(&img, &b, &wts, true);
        let gi = gi.unwrap();
        let un = uncrop(&wts, &b, 40, 30).unwrap();
        for (a, b) in gi.data().iter().zip(un.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Directional finite difference in image space.
        let dir = random_image(&mut rng, 40, 30, 2);
        let h = 1e-6;
        let plus = crop(
            &Image::from_vec(
                40,
                30,
                2,
                img.data()
                    .iter()
                    .zip(dir.data())
                    .map(|(a, d)| a + h * d)
                    .collect(),
            )
            .unwrap(),
            &b,
        )
        .unwrap();
        let minus = crop(
            &Image::from_vec(
                40,
                30,
                2,
                img.data()
                    .iter()
                    .zip(dir.data())
                    .map(|(a, d)| a - h * d)
                    .collect(),
            )
            .unwrap(),
            &b,
        )
        .unwrap();
        let fd = (plus.dot(&wts) - minus.dot(&wts)) / (2.0 * h);
        assert!((fd - gi.dot(&dir)).abs() < 1e-6 * fd.abs().max(1.0));
    }

    fn probe_paste<'t>(patch: &Image, weights: &Image, x: &[Var<'t>]) -> Var<'t> {
        let b = PixelBBox::new(x[0].val(), x[1].val(), x[2].val(), x[3].val());
        let out = paste(patch, &b, weights.width(), weights.height()).unwrap();
        let (_, g) = paste_backward(patch, &b, weights);
        external(x, out.dot(weights), &g, "paste_probe")
    }

    #[test]
    fn paste_box_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let patch = random_image(&mut rng, CROP_RES, CROP_RES, 1);
        let wts = random_image(&mut rng, 70, 60, 1);
        let f = scalar_fn(|x| probe_paste(&patch, &wts, x));
        let r = check_grad(f, &[33.41, 27.93, 31.17, 22.59], 1e-4, 1e-3).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn paste_patch_gradient_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let patch = random_image(&mut rng, CROP_RES, CROP_RES, 2);
        let other = random_image(&mut rng, CROP_RES, CROP_RES, 2);
        let wts = random_image(&mut rng, 50, 40, 2);
        let b = PixelBBox::new(24.2, 19.7, 30.3, 26.1);
        let (gp, _) = paste_backward(&patch, &b, &wts);
        // paste is linear in the patch: ⟨paste(P'), W⟩ = ⟨P', gradient⟩.
        let lhs = paste(&other, &b, 50, 40).unwrap().dot(&wts);
        assert!((lhs - other.dot(&gp)).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn composite_pixel_gradient_wrt_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let fg = random_image(&mut rng, CROP_RES, CROP_RES, 3);
        let mask = random_image(&mut rng, CROP_RES, CROP_RES, 1);
        let bg = random_image(&mut rng, 48, 40, 3);
        let f = scalar_fn(|x: &[Var]| {
            let b = PixelBBox::new(x[0].val(), x[1].val(), x[2].val(), x[3].val());
            let c = composite(&fg, &mask, &bg, &b).unwrap();
            let mut sel = Image::zeros(48, 40, 3);
            sel.set(20, 18, 1, 1.0);
            let g = composite_backward(&fg, &mask, &bg, &b, &c.mask, &sel, None);
            external(x, c.image.get(20, 18, 1), &g.bbox, "composite_probe")
        });
        let r = check_grad(f, &[22.37, 19.61, 18.43, 15.29], 1e-4, 1e-3).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn composite_input_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let fg = random_image(&mut rng, CROP_RES, CROP_RES, 3);
        let mask = random_image(&mut rng, CROP_RES, CROP_RES, 1);
        let bg = random_image(&mut rng, 40, 36, 3);
        let wts = random_image(&mut rng, 40, 36, 3);
        let b = PixelBBox::new(19.3, 17.8, 22.6, 27.1);
        let c = composite(&fg, &mask, &bg, &b).unwrap();
        let g = composite_backward(&fg, &mask, &bg, &b, &c.mask, &wts, None);
        let value = |fg: &Image, mask: &Image, bg: &Image| {
            composite(fg, mask, bg, &b).unwrap().image.dot(&wts)
        };
        let h = 1e-6;
        let bump = |img: &Image, dir: &Image, s: f64| {
            Image::from_vec(
                img.width(),
                img.height(),
                img.channels(),
                img.data()
                    .iter()
                    .zip(dir.data())
                    .map(|(a, d)| a + s * d)
                    .collect(),
            )
            .unwrap()
        };
        let dfg = random_image(&mut rng, CROP_RES, CROP_RES, 3);
        let fd = (value(&bump(&fg, &dfg, h), &mask, &bg) - value(&bump(&fg, &dfg, -h), &mask, &bg))
            / (2.0 * h);
        assert!((fd - g.fg.dot(&dfg)).abs() < 1e-6 * fd.abs().max(1.0));
        let dm = random_image(&mut rng, CROP_RES, CROP_RES, 1);
        let fd = (value(&fg, &bump(&mask, &dm, h), &bg) - value(&fg, &bump(&mask, &dm, -h), &bg))
            / (2.0 * h);
        assert!((fd - g.mask.dot(&dm)).abs() < 1e-6 * fd.abs().max(1.0));
        let dbg = random_image(&mut rng, 40, 36, 3);
        let fd = (value(&fg, &mask, &bump(&bg, &dbg, h)) - value(&fg, &mask, &bump(&bg, &dbg, -h)))
            / (2.0 * h);
        assert!((fd - g.bg.dot(&dbg)).abs() < 1e-6 * fd.abs().max(1.0));
    }

    #[test]
    fn coverage_of_pixel() {
        assert_eq!(coverage(3, 0.0, 10.0), (1.0, 0.0, 0.0));
        assert_eq!(coverage(3, 3.25, 10.0), (0.75, -1.0, 0.0));
        assert_eq!(coverage(3, 0.0, 3.5), (0.5, 0.0, 1.0));
        assert_eq!(coverage(3, 5.0, 10.0).0, 0.0);
    }

    #[test]
    fn iou_basics() {
        let a = PixelBBox::from_edges(0.0, 0.0, 10.0, 10.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&a.translated(20.0, 0.0)), 0.0);
        let b = PixelBBox::from_edges(5.0, 0.0, 15.0, 10.0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
    }
}
