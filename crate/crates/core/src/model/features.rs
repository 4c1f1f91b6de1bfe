//! Fixed per-cell image features for the detector.

use crate::error::{Error, Result};
use crate::grid::GridSpec2D;
use crate::image::Image;

/// Mean RGB (3), RGB variance (3), mean gradient magnitude (1), and
/// contrast to the 8 neighbors: isotropic, east−west and south−north (3).
pub const N_FEATURES: usize = 10;

pub type CellFeatures = [f64; N_FEATURES];

fn cell_range(i: usize, n: usize, size: usize) -> (usize, usize) {
    (
        i * size / n,
        ((i + 1) * size / n).max(i * size / n + 1).min(size),
    )
}

/// Raw features of every cell, row-major.
pub fn cell_features(image: &Image, spec: &GridSpec2D) -> Result<Vec<CellFeatures>> {
    if image.width() != spec.width || image.height() != spec.height || image.channels() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "detector expects {}x{}x3, got {}x{}x{}",
            spec.width,
            spec.height,
            image.width(),
            image.height(),
            image.channels()
        )));
    }
    let (w, h) = (image.width(), image.height());
    let global: [f64; 3] = std::array::from_fn(|k| {
        image.data().iter().skip(k).step_by(3).sum::<f64>() / (w * h) as f64
    });
    let mut feats = vec![[0.0; N_FEATURES]; spec.n_cells()];
    let mut saliency = vec![0.0; spec.n_cells()];
    for (i, f) in feats.iter_mut().enumerate() {
        let (col, row) = spec.col_row(i);
        let (x0, x1) = cell_range(col, spec.n_col, w);
        let (y0, y1) = cell_range(row, spec.n_row, h);
        let n = ((x1 - x0) * (y1 - y0)) as f64;
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        let mut grad = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                for k in 0..3 {
                    let v = image.get(x, y, k);
                    sum[k] += v;
                    sq[k] += v * v;
                    let gx = image.get((x + 1).min(w - 1), y, k) - v;
                    let gy = image.get(x, (y + 1).min(h - 1), k) - v;
                    grad += (gx * gx + gy * gy).sqrt();
                }
            }
        }
        for k in 0..3 {
            let m = sum[k] / n;
            f[k] = m;
            f[3 + k] = (sq[k] / n - m * m).max(0.0);
        }
        f[6] = grad / (3.0 * n);
        saliency[i] = (0..3)
            .map(|k| (f[k] - global[k]).powi(2))
            .sum::<f64>()
            .sqrt();
    }
    // Out-of-grid neighbors replicate the cell itself.
    let sal = |col: isize, row: isize, own: f64| {
        if col < 0 || row < 0 || col >= spec.n_col as isize || row >= spec.n_row as isize {
            own
        } else {
            saliency[col as usize + spec.n_col * row as usize]
        }
    };
    for (i, f) in feats.iter_mut().enumerate() {
        let (col, row) = spec.col_row(i);
        let (c, r) = (col as isize, row as isize);
        let own = saliency[i];
        let mut ring = 0.0;
        let (mut east, mut west, mut south, mut north) = (0.0, 0.0, 0.0, 0.0);
        for dr in -1..=1 {
            for dc in -1..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let s = sal(c + dc, r + dr, own);
                ring += s;
                match dc {
                    1 => east += s,
                    -1 => west += s,
                    _ => {}
                }
                match dr {
                    1 => south += s,
                    -1 => north += s,
                    _ => {}
                }
            }
        }
        f[7] = own - ring / 8.0;
        f[8] = (east - west) / 3.0;
        f[9] = (south - north) / 3.0;
    }
    Ok(feats)
}

/// Zero-mean, unit-variance features across the cells of one image.
pub fn standardize(feats: &mut [CellFeatures]) {
    let n = feats.len() as f64;
    if feats.is_empty() {
        return;
    }
    for k in 0..N_FEATURES {
        let mean = feats.iter().map(|f| f[k]).sum::<f64>() / n;
        let var = feats.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-6);
        for f in feats.iter_mut() {
            f[k] = (f[k] - mean) / sd;
        }
    }
}

/// Standardized features, as consumed by the detector.
pub fn detector_features(image: &Image, spec: &GridSpec2D) -> Result<Vec<CellFeatures>> {
    let mut f = cell_features(image, spec)?;
    standardize(&mut f);
    Ok(f)
}
