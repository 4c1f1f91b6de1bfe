//! Mask and foreground head: a two-layer map applied independently at each
//! crop pixel, fed with the pixel color and its normalized crop position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::image::Image;

pub const MASK_HIDDEN: usize = 8;
const INPUTS: usize = 5;
const OUTPUTS: usize = 4;

const W1: usize = 0;
const B1: usize = W1 + MASK_HIDDEN * INPUTS;
const W2: usize = B1 + MASK_HIDDEN;
const B2: usize = W2 + OUTPUTS * MASK_HIDDEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskHeadParams {
    /// `W1 (8×5) | b1 (8) | W2 (4×8) | b2 (4)`; output rows are the three
    /// foreground deltas and the mask logit.
    pub theta: Vec<f64>,
}

/// Forward results kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MaskOutput {
    pub fg: Image,
    pub mask: Image,
    hidden: Vec<f64>,
    raw_fg: Vec<f64>,
}

#[inline]
fn inputs(crop: &Image, x: usize, y: usize) -> [f64; INPUTS] {
    let (w, h) = (crop.width() as f64, crop.height() as f64);
    let px = crop.pixel(x, y);
    [
        px[0] - 0.5,
        px[1] - 0.5,
        px[2] - 0.5,
        2.0 * (x as f64 + 0.5) / w - 1.0,
        2.0 * (y as f64 + 0.5) / h - 1.0,
    ]
}

impl MaskHeadParams {
    pub const LEN: usize = B2 + OUTPUTS;

    /// Random first layer, zero second layer: the untrained head passes the
    /// crop through as foreground with a flat 0.5 mask.
    pub fn initial(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Normal::new(0.0, 1.0).expect("valid normal");
        let b = Normal::new(0.0, 0.5).expect("valid normal");
        let mut theta = vec![0.0; Self::LEN];
        for v in &mut theta[W1..B1] {
            *v = w.sample(&mut rng);
        }
        for v in &mut theta[B1..W2] {
            *v = b.sample(&mut rng);
        }
        Self { theta }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != Self::LEN {
            return Err(Error::DimensionMismatch(format!(
                "mask head needs {} parameters, got {}",
                Self::LEN,
                self.theta.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, crop: &Image) -> Result<MaskOutput> {
        self.validate()?;
        if crop.channels() != 3 {
            return Err(Error::DimensionMismatch(
                "mask head expects an RGB crop".into(),
            ));
        }
        let t = &self.theta;
        let (w, h) = (crop.width(), crop.height());
        let n = w * h;
        let mut hidden = vec![0.0; n * MASK_HIDDEN];
        let mut raw_fg = vec![0.0; n * 3];
        let mut fg = Image::zeros(w, h, 3);
        let mut mask = Image::zeros(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let inp = inputs(crop, x, y);
                let hp = &mut hidden[p * MASK_HIDDEN..(p + 1) * MASK_HIDDEN];
                for (j, hv) in hp.iter_mut().enumerate() {
                    let row = &t[W1 + j * INPUTS..W1 + (j + 1) * INPUTS];
                    let z: f64 = t[B1 + j] + row.iter().zip(&inp).map(|(a, b)| a * b).sum::<f64>();
                    *hv = z.tanh();
                }
                let mut out = [0.0; OUTPUTS];
                for (o, ov) in out.iter_mut().enumerate() {
                    let row = &t[W2 + o * MASK_HIDDEN..W2 + (o + 1) * MASK_HIDDEN];
                    *ov = t[B2 + o] + row.iter().zip(hp.iter()).map(|(a, b)| a * b).sum::<f64>();
                }
                let px = crop.pixel(x, y);
                for k in 0..3 {
                    let r = px[k] + out[k];
                    raw_fg[p * 3 + k] = r;
                    fg.set(x, y, k, r.clamp(0.0, 1.0));
                }
                mask.set(x, y, 0, sigmoid(out[3]));
            }
        }
        Ok(MaskOutput {
            fg,
            mask,
            hidden,
            raw_fg,
        })
    }

    /// Gradients wrt the parameters and the crop, given gradients wrt the
    /// foreground and the mask.
    pub fn backward(
        &self,
        crop: &Image,
        out: &MaskOutput,
        d_fg: &Image,
        d_mask: &Image,
    ) -> (Vec<f64>, Image) {
        let t = &self.theta;
        let (w, h) = (crop.width(), crop.height());
        let mut g = vec![0.0; Self::LEN];
        let mut d_crop = Image::zeros(w, h, 3);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let inp = inputs(crop, x, y);
                let hp = &out.hidden[p * MASK_HIDDEN..(p + 1) * MASK_HIDDEN];
                let mut d_out = [0.0; OUTPUTS];
                for k in 0..3 {
                    let r = out.raw_fg[p * 3 + k];
                    if (0.0..=1.0).contains(&r) {
                        d_out[k] = d_fg.get(x, y, k);
                    }
                }
                let m = out.mask.get(x, y, 0);
                d_out[3] = d_mask.get(x, y, 0) * m * (1.0 - m);
                if d_out.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let mut d_hidden = [0.0; MASK_HIDDEN];
                for (o, &dv) in d_out.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    g[B2 + o] += dv;
                    for j in 0..MASK_HIDDEN {
                        g[W2 + o * MASK_HIDDEN + j] += dv * hp[j];
                        d_hidden[j] += dv * t[W2 + o * MASK_HIDDEN + j];
                    }
                }
                let mut d_in = [0.0; INPUTS];
                for j in 0..MASK_HIDDEN {
                    let dz = d_hidden[j] * (1.0 - hp[j] * hp[j]);
                    if dz == 0.0 {
                        continue;
                    }
                    g[B1 + j] += dz;
                    for i in 0..INPUTS {
                        g[W1 + j * INPUTS + i] += dz * inp[i];
                        d_in[i] += dz * t[W1 + j * INPUTS + i];
                    }
                }
                for k in 0..3 {
                    d_crop.set(x, y, k, d_out[k] + d_in[k]);
                }
            }
        }
        (g, d_crop)
    }
}
