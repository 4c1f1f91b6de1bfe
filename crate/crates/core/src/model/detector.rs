//! Linear detector head shared by every cell.

use serde::{Deserialize, Serialize};

use super::features::{detector_features, CellFeatures, N_FEATURES};
use crate::autodiff::{self, Real};
use crate::bbox::{decode_bbox_generic, PixelBBox};
use crate::error::{Error, Result};
use crate::grid::{GridSpec2D, ProbMap2D};
use crate::image::Image;

/// Score, dx, dy, sx, sy.
pub const DETECTOR_OUTPUTS: usize = 5;
/// Smallest box side the detector can emit.
pub const MIN_BOX_PX: f64 = 4.0;
/// Box side (fraction of the image) the untrained detector emits.
pub const INITIAL_BOX_FRACTION: f64 = 0.25;

const ROW: usize = N_FEATURES + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Row-major `DETECTOR_OUTPUTS × (N_FEATURES + 1)`, bias last in each row.
    pub theta: Vec<f64>,
}

impl DetectorParams {
    pub const LEN: usize = DETECTOR_OUTPUTS * ROW;

    pub fn zeros() -> Self {
        Self {
            theta: vec![0.0; Self::LEN],
        }
    }

    /// Zero weights with size biases giving [`INITIAL_BOX_FRACTION`] boxes
    /// on a `width × height` image.
    pub fn initial(width: usize, height: usize) -> Self {
        let mut p = Self::zeros();
        for (out, size) in [(3, width), (4, height)] {
            let floor = MIN_BOX_PX / size as f64;
            let s = ((INITIAL_BOX_FRACTION - floor) / (1.0 - floor)).clamp(1e-6, 1.0 - 1e-6);
            p.theta[out * ROW + N_FEATURES] = (s / (1.0 - s)).ln();
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != Self::LEN {
            return Err(Error::DimensionMismatch(format!(
                "detector needs {} parameters, got {}",
                Self::LEN,
                self.theta.len()
            )));
        }
        Ok(())
    }
}

fn output<T: Real>(theta: &[T], out: usize, f: &CellFeatures) -> T {
    let row = &theta[out * ROW..(out + 1) * ROW];
    autodiff::affine(&row[..N_FEATURES], row[N_FEATURES], f)
}

/// Cell probabilities: soft-max of the scores over interior cells, border
/// cells exactly zero.
pub fn cell_probs<T: Real>(theta: &[T], feats: &[CellFeatures], spec: &GridSpec2D) -> Vec<T> {
    let interior = spec.interior_cells();
    let scores: Vec<T> = interior
        .iter()
        .map(|&i| output(theta, 0, &feats[i]))
        .collect();
    let lse = autodiff::log_sum_exp(&scores);
    let zero = theta[0].lift(0.0);
    let mut p = vec![zero; spec.n_cells()];
    for (&i, &s) in interior.iter().zip(&scores) {
        p[i] = (s - lse).exp();
    }
    p
}

/// Squashed `(dx, dy, sx, sy)` of one cell.
pub fn cell_box_params<T: Real>(theta: &[T], f: &CellFeatures, spec: &GridSpec2D) -> [T; 4] {
    let fx = MIN_BOX_PX / spec.width as f64;
    let fy = MIN_BOX_PX / spec.height as f64;
    [
        output(theta, 1, f).sigmoid(),
        output(theta, 2, f).sigmoid(),
        output(theta, 3, f).sigmoid() * (1.0 - fx) + fx,
        output(theta, 4, f).sigmoid() * (1.0 - fy) + fy,
    ]
}

/// Per-cell box parameters of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct BBoxField {
    pub spec: GridSpec2D,
    /// `(dx, dy, sx, sy)` per cell.
    pub params: Vec<[f64; 4]>,
}

impl BBoxField {
    pub fn decode(&self, cell: usize) -> Result<PixelBBox> {
        decode_bbox_generic(&self.spec, cell, self.params[cell])
    }
}

/// Detector forward pass on plain values.
pub fn detect(
    params: &DetectorParams,
    image: &Image,
    spec: &GridSpec2D,
) -> Result<(ProbMap2D, BBoxField)> {
    params.validate()?;
    let feats = detector_features(image, spec)?;
    let p = cell_probs(&params.theta, &feats, spec);
    let field = BBoxField {
        spec: *spec,
        params: feats
            .iter()
            .map(|f| cell_box_params(&params.theta, f, spec))
            .collect(),
    };
    // Re-normalize away the last-ulp drift of the soft-max.
    Ok((ProbMap2D::from_weights(*spec, p)?, field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_grad, scalar_fn, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(64, 64, 3, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn zero_weights_give_uniform_interior() {
        let spec = GridSpec2D::default_for(64, 64);
        let (p, _) = detect(&DetectorParams::zeros(), &textured(1), &spec).unwrap();
        let interior = spec.interior_cells();
        for (i, &v) in p.probs().iter().enumerate() {
            if spec.is_border(i) {
                assert_eq!(v, 0.0);
            } else {
                assert!((v - 1.0 / interior.len() as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one_and_boxes_respect_floor() {
        let spec = GridSpec2D::default_for(64, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = DetectorParams {
            theta: (0..DetectorParams::LEN)
                .map(|_| rng.random_range(-8.0..8.0))
                .collect(),
        };
        let (p, field) = detect(&params, &textured(2), &spec).unwrap();
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (i, b) in field.params.iter().enumerate() {
            assert!(b.iter().all(|v| (0.0..=1.0).contains(v)));
            let bb = field.decode(i).unwrap();
            assert!(bb.w >= MIN_BOX_PX - 1e-12 && bb.h >= MIN_BOX_PX - 1e-12);
        }
    }

    #[test]
    fn initial_boxes_have_requested_size() {
        let spec = GridSpec2D::default_for(128, 96);
        let img = Image::filled(128, 96, 3, 0.5);
        let (_, field) = detect(&DetectorParams::initial(128, 96), &img, &spec).unwrap();
        let b = field.decode(27).unwrap();
        assert!((b.w - 32.0).abs() < 1e-9 && (b.h - 24.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = GridSpec2D::default_for(64, 64);
        let feats = detector_features(&textured(5), &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<f64> = (0..DetectorParams::LEN)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let f = scalar_fn(|t: &[Var]| {
            let p = cell_probs(t, &feats, &spec);
            let b = cell_box_params(t, &feats[27], &spec);
            p[27].ln() + p[42] * 3.0 + b[0] * b[2] - b[3] + b[1]
        });
        let r = check_grad(f, &x, 1e-6, 1e-4).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
