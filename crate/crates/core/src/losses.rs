//! Self-supervised objectives: inpainting error `G`, recomposition error `O`,
//! its feature-space counterpart, the segmentation-mass prior and the voxel
//! prior, combined with fixed weights.
//!
//! Every per-camera term comes with its gradient wrt the quantities the
//! trainer differentiates through (box parameters and recomposed image), so
//! image-sized work stays out of the scalar tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bbox::{coverage, PixelBBox, INPAINT_EXPANSION};
use crate::error::{Error, Result};
use crate::grid::VoxelDistribution;
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub zeta: f64,
    /// Target mean of each pasted mask.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 1.0,
            gamma: 2.0,
            eta: 0.25,
            zeta: 0.1,
            lambda: 0.005,
        }
    }
}

impl LossWeights {
    /// `−α·g_raw + β·o + γ·o_perc + η·Σ l_seg + ζ·l_q`.
    pub fn combine(&self, g_raw: f64, o: f64, o_perc: f64, l_seg_sum: f64, l_q: f64) -> f64 {
        -self.alpha * g_raw
            + self.beta * o
            + self.gamma * o_perc
            + self.eta * l_seg_sum
            + self.zeta * l_q
    }
}

/// How squared reconstruction errors are accumulated per image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    /// Plain sum over every pixel and channel.
    Sum,
    /// Sum over channels, mean over pixel positions.
    PixelMean,
}

impl Reduction {
    fn scale(self, positions: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::PixelMean => 1.0 / positions as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub reduction: Reduction,
    pub prior_q: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            reduction: Reduction::Sum,
            prior_q: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `G`, non-positive.
    pub g: f64,
    pub o: f64,
    pub o_perc: f64,
    /// Summed over cameras.
    pub l_seg: f64,
    pub l_q: f64,
    pub total: f64,
}

/// Inpainting error over the expanded box, normalized by the box area,
/// with its gradient wrt `(cu, cv, w, h)`. The region weight of each pixel
/// is its covered fraction, so the value is piecewise smooth in the box.
pub fn inpaint_error(
    original: &Image,
    inpainted: &Image,
    bbox: &PixelBBox,
) -> Result<(f64, [f64; 4])> {
    original.check_shape(inpainted)?;
    bbox.validate()?;
    let s = 1.0 + INPAINT_EXPANSION;
    let (w, h) = (original.width(), original.height());
    let (l, r) = (bbox.cu - 0.5 * s * bbox.w, bbox.cu + 0.5 * s * bbox.w);
    let (t, b) = (bbox.cv - 0.5 * s * bbox.h, bbox.cv + 0.5 * s * bbox.h);
    let x0 = l.floor().max(0.0) as usize;
    let x1 = (r.ceil().max(0.0) as usize).min(w);
    let y0 = t.floor().max(0.0) as usize;
    let y1 = (b.ceil().max(0.0) as usize).min(h);
    let cols: Vec<(f64, f64, f64)> = (x0..x1).map(|x| coverage(x, l, r)).collect();
    let rows: Vec<(f64, f64, f64)> = (y0..y1).map(|y| coverage(y, t, b)).collect();
    let nc = original.channels();
    let (od, id) = (original.data(), inpainted.data());
    let mut total = 0.0;
    let (mut d_l, mut d_r, mut d_t, mut d_b) = (0.0, 0.0, 0.0, 0.0);
    for (yi, &(cy, dyt, dyb)) in rows.iter().enumerate() {
        let y = y0 + yi;
        let mut row_sum = 0.0;
        for (xi, &(cx, dxl, dxr)) in cols.iter().enumerate() {
            let o = (y * w + x0 + xi) * nc;
            let mut e = 0.0;
            for k in 0..nc {
                let d = id[o + k] - od[o + k];
                e += d * d;
            }
            row_sum += cx * e;
            d_l += cy * dxl * e;
            d_r += cy * dxr * e;
        }
        total += cy * row_sum;
        d_t += dyt * row_sum;
        d_b += dyb * row_sum;
    }
    let area = bbox.area();
    let value = total / area;
    let g = [
        (d_l + d_r) / area,
        (d_t + d_b) / area,
        0.5 * s * (d_r - d_l) / area - value / bbox.w,
        0.5 * s * (d_b - d_t) / area - value / bbox.h,
    ];
    Ok((value, g))
}

/// `G = −Σ_c r · ‖Ī_c − I_c‖²_region / area(b_c)`.
pub fn loss_g(
    originals: &[Image],
    inpainted: &[Image],
    boxes: &[PixelBBox],
    ratio: f64,
) -> Result<f64> {
    same_len(originals.len(), inpainted.len())?;
    same_len(originals.len(), boxes.len())?;
    let mut g = 0.0;
    for ((o, i), b) in originals.iter().zip(inpainted).zip(boxes) {
        g -= ratio * inpaint_error(o, i, b)?.0;
    }
    Ok(g)
}

/// `‖F − I‖²` under `reduction`.
pub fn reconstruction_error(original: &Image, recon: &Image, reduction: Reduction) -> Result<f64> {
    original.check_shape(recon)?;
    Ok(recon.sq_dist(original) * reduction.scale(original.width() * original.height()))
}

/// Gradient of [`reconstruction_error`] wrt the reconstruction.
pub fn reconstruction_grad(original: &Image, recon: &Image, reduction: Reduction) -> Image {
    let s = 2.0 * reduction.scale(original.width() * original.height());
    let data = recon
        .data()
        .iter()
        .zip(original.data())
        .map(|(f, i)| s * (f - i))
        .collect();
    Image::from_vec(recon.width(), recon.height(), recon.channels(), data).expect("shape preserved")
}

/// `O = Σ_c r · ‖F(I_c) − I_c‖²`.
pub fn loss_o(
    originals: &[Image],
    recons: &[Image],
    ratio: f64,
    reduction: Reduction,
) -> Result<f64> {
    same_len(originals.len(), recons.len())?;
    let mut o = 0.0;
    for (i, f) in originals.iter().zip(recons) {
        o += ratio * reconstruction_error(i, f, reduction)?;
    }
    Ok(o)
}

/// Fixed feature map: 4×4 average pooling followed by a seeded random
/// per-location projection of the pooled colors to 32 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Phi {
    pub pool: usize,
    /// 32 × 3 projection, rows are output channels.
    pub projection: Vec<[f64; 3]>,
    // PᵀP, which is all the squared distance needs
    gram: [[f64; 3]; 3],
}

pub const PHI_CHANNELS: usize = 32;
pub const PHI_SEED: u64 = 0x5eed_f00d;

impl Phi {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (PHI_CHANNELS as f64).sqrt();
        let projection: Vec<[f64; 3]> = (0..PHI_CHANNELS)
            .map(|_| {
                std::array::from_fn(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
            })
            .collect();
        let mut gram = [[0.0; 3]; 3];
        for row in &projection {
            for a in 0..3 {
                for b in 0..3 {
                    gram[a][b] += row[a] * row[b];
                }
            }
        }
        Self {
            pool: 4,
            projection,
            gram,
        }
    }

    /// Pooled colors, `⌊W/4⌋ × ⌊H/4⌋ × 3`; trailing partial blocks are dropped.
    pub fn pooled(&self, img: &Image) -> Image {
        let p = self.pool;
        let (pw, ph) = (img.width() / p, img.height() / p);
        let nc = img.channels();
        let inv = 1.0 / (p * p) as f64;
        Image::from_fn(pw, ph, nc, |x, y, k| {
            let mut s = 0.0;
            for dy in 0..p {
                for dx in 0..p {
                    s += img.get(x * p + dx, y * p + dy, k);
                }
            }
            s * inv
        })
    }

    /// Full feature map, `⌊W/4⌋ × ⌊H/4⌋ × 32`.
    pub fn apply(&self, img: &Image) -> Image {
        let pooled = self.pooled(img);
        Image::from_fn(pooled.width(), pooled.height(), PHI_CHANNELS, |x, y, c| {
            let px = pooled.pixel(x, y);
            let r = &self.projection[c];
            r[0] * px[0] + r[1] * px[1] + r[2] * px[2]
        })
    }

    /// `‖φ(a) − φ(b)‖²` under `reduction` (positions are pooled cells).
    pub fn distance(&self, a: &Image, b: &Image, reduction: Reduction) -> Result<f64> {
        a.check_shape(b)?;
        if a.channels() != 3 {
            return Err(Error::DimensionMismatch("feature map expects RGB".into()));
        }
        let diff = self.pooled_diff(a, b);
        let mut total = 0.0;
        for px in diff.data().chunks_exact(3) {
            total += self.quad(px);
        }
        Ok(total * reduction.scale(diff.width() * diff.height()))
    }

    /// Gradient of [`Phi::distance`] wrt `a`.
    pub fn distance_grad(&self, a: &Image, b: &Image, reduction: Reduction) -> Image {
        let diff = self.pooled_diff(a, b);
        let p = self.pool;
        let s = 2.0 * reduction.scale(diff.width() * diff.height()) / (p * p) as f64;
        let mut g = Image::zeros(a.width(), a.height(), 3);
        for y in 0..diff.height() {
            for x in 0..diff.width() {
                let d = diff.pixel(x, y);
                let gd: [f64; 3] = std::array::from_fn(|i| {
                    s * (0..3).map(|j| self.gram[i][j] * d[j]).sum::<f64>()
                });
                for dy in 0..p {
                    for dx in 0..p {
                        for (k, v) in gd.iter().enumerate() {
                            g.set(x * p + dx, y * p + dy, k, *v);
                        }
                    }
                }
            }
        }
        g
    }

    fn pooled_diff(&self, a: &Image, b: &Image) -> Image {
        let pa = self.pooled(a);
        let pb = self.pooled(b);
        let data = pa
            .data()
            .iter()
            .zip(pb.data())
            .map(|(x, y)| x - y)
            .collect();
        Image::from_vec(pa.width(), pa.height(), 3, data).expect("shape preserved")
    }

    #[inline]
    fn quad(&self, d: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += d[i] * self.gram[i][j] * d[j];
            }
        }
        s
    }
}

impl Default for Phi {
    fn default() -> Self {
        Self::new(PHI_SEED)
    }
}

/// `Σ_c r · ‖φ(F(I_c)) − φ(I_c)‖²`.
pub fn loss_perceptual(
    originals: &[Image],
    recons: &[Image],
    ratio: f64,
    phi: &Phi,
    reduction: Reduction,
) -> Result<f64> {
    same_len(originals.len(), recons.len())?;
    let mut total = 0.0;
    for (i, f) in originals.iter().zip(recons) {
        total += ratio * phi.distance(f, i, reduction)?;
    }
    Ok(total)
}

/// `|mean(m) − λ| + λ` for one pasted mask, with the per-pixel gradient.
pub fn seg_prior_term(mask: &Image, lambda: f64) -> (f64, f64) {
    let n = mask.data().len() as f64;
    let mean = mask.mean();
    let sign = if mean >= lambda { 1.0 } else { -1.0 };
    ((mean - lambda).abs() + lambda, sign / n)
}

/// Segmentation prior summed over cameras.
pub fn prior_seg(masks: &[Image], lambda: f64) -> f64 {
    masks.iter().map(|m| seg_prior_term(m, lambda).0).sum()
}

/// `Σ_j |q_j|` when enabled, else 0.
pub fn prior_q(q: &VoxelDistribution, enabled: bool) -> f64 {
    if enabled {
        q.q.iter().map(|v| v.abs()).sum()
    } else {
        0.0
    }
}

/// Everything [`loss_total`] needs for one multi-view frame.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub originals: &'a [Image],
    pub inpainted: &'a [Image],
    pub reconstructions: &'a [Image],
    pub boxes: &'a [PixelBBox],
    /// Masks warped back to the image frame.
    pub masks: &'a [Image],
    pub ratio: f64,
    pub q: Option<&'a VoxelDistribution>,
}

pub fn loss_total(inputs: &LossInputs<'_>, cfg: &LossConfig, phi: &Phi) -> Result<LossBreakdown> {
    same_len(inputs.originals.len(), inputs.masks.len())?;
    let g = loss_g(
        inputs.originals,
        inputs.inpainted,
        inputs.boxes,
        inputs.ratio,
    )?;
    let o = loss_o(
        inputs.originals,
        inputs.reconstructions,
        inputs.ratio,
        cfg.reduction,
    )?;
    let o_perc = loss_perceptual(
        inputs.originals,
        inputs.reconstructions,
        inputs.ratio,
        phi,
        cfg.reduction,
    )?;
    let l_seg = prior_seg(inputs.masks, cfg.weights.lambda);
    let l_q = match inputs.q {
        Some(q) => prior_q(q, cfg.prior_q),
        None => 0.0,
    };
    let total = cfg.weights.combine(-g, o, o_perc, l_seg, l_q);
    if !total.is_finite() {
        return Err(Error::NonFiniteValue { op: "loss_total" });
    }
    Ok(LossBreakdown {
        g,
        o,
        o_perc,
        l_seg,
        l_q,
        total,
    })
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left: a, right: b })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_grad, external, scalar_fn, Var};
    use rand::Rng;

    fn noise(seed: u64, w: usize, h: usize, c: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, c, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn weight_combination_examples() {
        let w = LossWeights::default();
        assert!((w.combine(0.5, 1.0, 0.2, 0.01, 0.0) - 1.3525).abs() < 1e-12);
        assert!((w.combine(0.0, 0.0, 0.0, 2.0 * 0.005, 0.0) - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn g_examples() {
        let img = Image::filled(30, 30, 3, 0.2);
        let b = PixelBBox::new(15.0, 15.0, 10.0, 10.0);
        assert_eq!(
            loss_g(&[img.clone()], &[img.clone()], &[b], 1.0).unwrap(),
            0.0
        );
        let mut other = img.clone();
        other.set(15, 15, 0, 2.2);
        let g = loss_g(&[img.clone()], &[other.clone()], &[b], 1.0).unwrap();
        assert!((g + 0.04).abs() < 1e-12);
        let mut worse = img.clone();
        worse.set(15, 15, 0, 4.2);
        assert!(loss_g(&[img.clone()], &[worse], &[b], 1.0).unwrap() < g);
        assert!((loss_g(&[img.clone()], &[other], &[b], 2.5).unwrap() - 2.5 * g).abs() < 1e-12);
    }

    #[test]
    fn g_region_is_the_expanded_box() {
        let img = Image::zeros(60, 60, 1);
        let b = PixelBBox::from_edges(20.0, 20.0, 40.0, 40.0);
        // Expanded by 15%: [18.5, 41.5). Pixel 19 is fully inside, 18 half.
        let mut e = img.clone();
        e.set(19, 30, 0, 1.0);
        e.set(18, 30, 0, 1.0);
        e.set(42, 30, 0, 1.0);
        let (v, _) = inpaint_error(&img, &e, &b).unwrap();
        assert!((v - 1.5 / 400.0).abs() < 1e-15);
    }

    #[test]
    fn g_box_gradient() {
        let a = noise(1, 50, 40, 3);
        let b = noise(2, 50, 40, 3);
        let f = scalar_fn(|x: &[Var]| {
            let bb = PixelBBox::new(x[0].val(), x[1].val(), x[2].val(), x[3].val());
            let (v, g) = inpaint_error(&a, &b, &bb).unwrap();
            external(x, v, &g, "g")
        });
        let r = check_grad(f, &[24.31, 19.77, 17.13, 14.59], 1e-4, 1e-3).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn o_examples() {
        let a = noise(3, 8, 8, 3);
        assert_eq!(
            loss_o(&[a.clone()], &[a.clone()], 1.0, Reduction::Sum).unwrap(),
            0.0
        );
        let mut b = a.clone();
        b.data_mut()[0] += 1.5;
        b.data_mut()[7] -= 1.0;
        b.data_mut()[40] += 0.5;
        // 2.25 + 1 + 0.25 = 3.5 per camera.
        let o = loss_o(
            &[a.clone(), a.clone()],
            &[b.clone(), b.clone()],
            1.0,
            Reduction::Sum,
        )
        .unwrap();
        assert!((o - 7.0).abs() < 1e-12);
        let o2 = loss_o(
            &[a.clone(), a.clone()],
            &[b.clone(), b.clone()],
            2.0,
            Reduction::Sum,
        )
        .unwrap();
        assert!((o2 - 2.0 * o).abs() < 1e-12);
        let om = loss_o(&[a.clone()], &[b], 1.0, Reduction::PixelMean).unwrap();
        assert!((om - 3.5 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn o_gradient_matches_finite_differences() {
        let a = noise(4, 6, 5, 3);
        let b = noise(5, 6, 5, 3);
        for red in [Reduction::Sum, Reduction::PixelMean] {
            let g = reconstruction_grad(&a, &b, red);
            let dir = noise(6, 6, 5, 3);
            let h = 1e-6;
            let shift = |s: f64| {
                Image::from_vec(
                    6,
                    5,
                    3,
                    b.data()
                        .iter()
                        .zip(dir.data())
                        .map(|(x, d)| x + s * d)
                        .collect(),
                )
                .unwrap()
            };
            let fd = (reconstruction_error(&a, &shift(h), red).unwrap()
                - reconstruction_error(&a, &shift(-h), red).unwrap())
                / (2.0 * h);
            assert!((fd - g.dot(&dir)).abs() < 1e-6 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn perceptual_examples() {
        let phi = Phi::default();
        let a = noise(7, 16, 16, 3);
        assert_eq!(
            loss_perceptual(&[a.clone()], &[a.clone()], 1.0, &phi, Reduction::Sum).unwrap(),
            0.0
        );

        // Constant images differing by c: every pooled cell differs by c, so
        // the value is cells · Σ_rows (row · c)².
        let c = [0.3, -0.2, 0.1];
        let x = Image::filled(16, 16, 3, 0.5);
        let y = Image::from_fn(16, 16, 3, |_, _, k| 0.5 + c[k]);
        let per_cell: f64 = phi
            .projection
            .iter()
            .map(|r| (r[0] * c[0] + r[1] * c[1] + r[2] * c[2]).powi(2))
            .sum();
        let got = phi.distance(&y, &x, Reduction::Sum).unwrap();
        assert!((got - 16.0 * per_cell).abs() < 1e-12);
        let feats = phi.apply(&y);
        assert_eq!(
            (feats.width(), feats.height(), feats.channels()),
            (4, 4, 32)
        );

        // Zero-mean perturbation inside every 4×4 block is invisible.
        let z = Image::from_fn(
            16,
            16,
            3,
            |x, y, _| if (x + y) % 2 == 0 { 0.05 } else { -0.05 },
        );
        let moved = Image::from_vec(
            16,
            16,
            3,
            a.data().iter().zip(z.data()).map(|(p, q)| p + q).collect(),
        )
        .unwrap();
        assert!(phi.distance(&moved, &a, Reduction::Sum).unwrap() < 1e-24);
    }

    #[test]
    fn perceptual_gradient() {
        let phi = Phi::default();
        let a = noise(8, 12, 8, 3);
        let b = noise(9, 12, 8, 3);
        let g = phi.distance_grad(&a, &b, Reduction::PixelMean);
        let dir = noise(10, 12, 8, 3);
        let h = 1e-6;
        let shift = |s: f64| {
            Image::from_vec(
                12,
                8,
                3,
                a.data()
                    .iter()
                    .zip(dir.data())
                    .map(|(x, d)| x + s * d)
                    .collect(),
            )
            .unwrap()
        };
        let fd = (phi.distance(&shift(h), &b, Reduction::PixelMean).unwrap()
            - phi.distance(&shift(-h), &b, Reduction::PixelMean).unwrap())
            / (2.0 * h);
        assert!((fd - g.dot(&dir)).abs() < 1e-6 * fd.abs().max(1e-3));
    }

    #[test]
    fn seg_prior_examples() {
        let lam = 0.005;
        let at = Image::filled(10, 10, 1, lam);
        assert!((prior_seg(&[at], lam) - 0.005).abs() < 1e-15);
        assert!((prior_seg(&[Image::zeros(10, 10, 1)], lam) - 0.01).abs() < 1e-15);
        assert!((prior_seg(&[Image::filled(10, 10, 1, 1.0)], lam) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn q_prior_examples() {
        let d = VoxelDistribution {
            q: vec![0.2, 0.0, 0.5, 0.3],
            support: vec![0, 2, 3],
        };
        assert!((prior_q(&d, true) - 1.0).abs() < 1e-15);
        assert_eq!(prior_q(&d, false), 0.0);
        let w = LossWeights::default();
        let base = w.combine(0.3, 0.4, 0.1, 0.02, 0.0);
        assert!((w.combine(0.3, 0.4, 0.1, 0.02, prior_q(&d, true)) - base - 0.1).abs() < 1e-15);
    }

    #[test]
    fn total_on_perfect_reconstruction() {
        let img = noise(11, 20, 20, 3);
        let masks = vec![Image::filled(20, 20, 1, 0.005); 2];
        let originals = vec![img.clone(), img.clone()];
        let boxes = vec![PixelBBox::new(10.0, 10.0, 6.0, 8.0); 2];
        let d = VoxelDistribution {
            q: vec![1.0],
            support: vec![0],
        };
        let inputs = LossInputs {
            originals: &originals,
            inpainted: &originals,
            reconstructions: &originals,
            boxes: &boxes,
            masks: &masks,
            ratio: 1.3,
            q: Some(&d),
        };
        let out = loss_total(&inputs, &LossConfig::default(), &Phi::default()).unwrap();
        assert!((out.total - 0.0025).abs() < 1e-15);
        assert_eq!(out.l_q, 0.0);
        let on = LossConfig {
            prior_q: true,
            ..LossConfig::default()
        };
        let out = loss_total(&inputs, &on, &Phi::default()).unwrap();
        assert!((out.total - 0.1025).abs() < 1e-15);
    }
}
