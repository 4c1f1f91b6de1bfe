//! The 3D voxel proposal grid and multi-view fusion of per-view cell
//! probabilities.
//!
//! Each voxel center is projected into every camera; the log probabilities of
//! the cells it lands in are summed and the result is normalized over the
//! voxels visible in all cameras:
//!
//! `q_j = exp(Σ_c log p^c_{i^c(j)}) / Z`

use crate::autodiff::{self, Real};
use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::vec3::V3;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// A regular `n_col × n_row` grid of cells over a `width × height` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec2D {
    pub n_col: usize,
    pub n_row: usize,
    pub width: usize,
    pub height: usize,
}

impl GridSpec2D {
    pub fn new(n_col: usize, n_row: usize, width: usize, height: usize) -> Result<Self> {
        if n_col < 2 || n_row < 2 {
            return Err(Error::InvalidSpec(format!(
                "cell grid must be at least 2x2, got {n_col}x{n_row}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidSpec("image size must be positive".into()));
        }
        Ok(Self {
            n_col,
            n_row,
            width,
            height,
        })
    }

    /// The default 8×8 grid.
    pub fn default_for(width: usize, height: usize) -> Self {
        Self::new(8, 8, width, height).expect("8x8 is valid for any positive image")
    }

    pub fn n_cells(&self) -> usize {
        self.n_col * self.n_row
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (
            self.width as f64 / self.n_col as f64,
            self.height as f64 / self.n_row as f64,
        )
    }

    /// `(col, row)` of cell `i`.
    pub fn col_row(&self, i: usize) -> (usize, usize) {
        (i % self.n_col, i / self.n_col)
    }

    /// Pixel center of cell `i`.
    pub fn cell_center(&self, i: usize) -> (f64, f64) {
        let (col, row) = self.col_row(i);
        let (cw, ch) = self.cell_size();
        ((col as f64 + 0.5) * cw, (row as f64 + 0.5) * ch)
    }

    pub fn is_border(&self, i: usize) -> bool {
        let (col, row) = self.col_row(i);
        col == 0 || row == 0 || col + 1 == self.n_col || row + 1 == self.n_row
    }

    pub fn interior_cells(&self) -> Vec<usize> {
        (0..self.n_cells())
            .filter(|&i| !self.is_border(i))
            .collect()
    }

    /// Cell containing pixel `(u, v)`, or `None` outside `[0, W) × [0, H)`.
    pub fn cell_index(&self, u: f64, v: f64) -> Option<usize> {
        if !(u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64) {
            return None;
        }
        let col =
            ((u * self.n_col as f64 / self.width as f64).floor() as usize).min(self.n_col - 1);
        let row =
            ((v * self.n_row as f64 / self.height as f64).floor() as usize).min(self.n_row - 1);
        Some(col + self.n_col * row)
    }
}

/// Free-function form of [`GridSpec2D::cell_index`].
pub fn cell_index(spec: &GridSpec2D, u: f64, v: f64) -> Option<usize> {
    spec.cell_index(u, v)
}

/// A probability distribution over grid cells with zeroed border cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap2D {
    spec: GridSpec2D,
    p: Vec<f64>,
}

impl ProbMap2D {
    pub fn new(spec: GridSpec2D, p: Vec<f64>) -> Result<Self> {
        if p.len() != spec.n_cells() {
            return Err(Error::DimensionMismatch(format!(
                "{} probabilities for {} cells",
                p.len(),
                spec.n_cells()
            )));
        }
        if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidSpec(
                "probabilities must be finite and >= 0".into(),
            ));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!("probabilities sum to {total}")));
        }
        if (0..p.len()).any(|i| spec.is_border(i) && p[i] != 0.0) {
            return Err(Error::InvalidSpec(
                "border cells must have zero probability".into(),
            ));
        }
        Ok(Self { spec, p })
    }

    /// Normalizes non-negative weights after zeroing the border.
    pub fn from_weights(spec: GridSpec2D, mut w: Vec<f64>) -> Result<Self> {
        for (i, x) in w.iter_mut().enumerate() {
            if spec.is_border(i) {
                *x = 0.0;
            }
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidSpec("no interior mass".into()));
        }
        Self::new(spec, w.into_iter().map(|x| x / total).collect())
    }

    pub fn uniform(spec: GridSpec2D) -> Self {
        Self::from_weights(spec, vec![1.0; spec.n_cells()]).expect("interior is non-empty")
    }

    pub fn spec(&self) -> &GridSpec2D {
        &self.spec
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    /// Highest-probability cell; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.p.iter().enumerate() {
            if x > self.p[best] {
                best = i;
            }
        }
        best
    }
}

/// A cuboid lattice of voxel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub center: V3,
    pub side: f64,
    pub dims: [usize; 3],
    centers: Vec<V3>,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[V3] {
        &self.centers
    }

    /// Linear index, x fastest.
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    pub fn spacing(&self) -> [f64; 3] {
        [
            self.side / self.dims[0] as f64,
            self.side / self.dims[1] as f64,
            self.side / self.dims[2] as f64,
        ]
    }

    /// Voxel whose center is nearest to `x`.
    pub fn nearest_voxel(&self, x: V3) -> usize {
        let s = self.spacing();
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let corner = self.center[k] - self.side / 2.0;
            let f = ((x[k] - corner) / s[k] - 0.5).round();
            idx[k] = f.clamp(0.0, (self.dims[k] - 1) as f64) as usize;
        }
        self.index(idx[0], idx[1], idx[2])
    }
}

/// Builds a cube of side `side` meters centered at `center`, with `dims`
/// voxels per axis.
pub fn build_grid(center: V3, side: f64, dims: [usize; 3]) -> Result<VoxelGrid> {
    if !(side > 0.0) || !side.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "side length must be positive, got {side}"
        )));
    }
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::InvalidSpec(format!(
            "each grid dimension must be >= 2, got {dims:?}"
        )));
    }
    let mut centers = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    let step = [
        side / dims[0] as f64,
        side / dims[1] as f64,
        side / dims[2] as f64,
    ];
    let corner = [
        center[0] - side / 2.0,
        center[1] - side / 2.0,
        center[2] - side / 2.0,
    ];
    for iz in 0..dims[2] {
        for iy in 0..dims[1] {
            for ix in 0..dims[0] {
                centers.push([
                    corner[0] + (ix as f64 + 0.5) * step[0],
                    corner[1] + (iy as f64 + 0.5) * step[1],
                    corner[2] + (iz as f64 + 0.5) * step[2],
                ]);
            }
        }
    }
    Ok(VoxelGrid {
        center,
        side,
        dims,
        centers,
    })
}

/// A normalized distribution over the voxels visible in every camera.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelDistribution {
    /// One entry per voxel of the grid; zero outside the support.
    pub q: Vec<f64>,
    /// Sorted voxel indices with non-trivial support.
    pub support: Vec<usize>,
}

impl VoxelDistribution {
    /// Probabilities restricted to the support, in support order.
    pub fn support_probs(&self) -> Vec<f64> {
        self.support.iter().map(|&j| self.q[j]).collect()
    }

    pub fn argmax(&self) -> usize {
        let mut best = self.support[0];
        for &j in &self.support {
            if self.q[j] > self.q[best] {
                best = j;
            }
        }
        best
    }
}

/// Precomputed voxel-to-cell lookup for a fixed rig, grid and cell layout.
#[derive(Debug, Clone)]
pub struct ConsensusGrid {
    grid: VoxelGrid,
    specs: Vec<GridSpec2D>,
    support: Vec<usize>,
    // cells[s * n_cams + c]: cell of support voxel s in camera c
    cells: Vec<usize>,
}

impl ConsensusGrid {
    pub fn new(rig: &CameraRig, grid: VoxelGrid, n_col: usize, n_row: usize) -> Result<Self> {
        let specs: Vec<GridSpec2D> = rig
            .cameras()
            .iter()
            .map(|c| GridSpec2D::new(n_col, n_row, c.width(), c.height()))
            .collect::<Result<_>>()?;
        let n = rig.len();
        let mut support = Vec::new();
        let mut cells = Vec::new();
        let mut scratch = Vec::with_capacity(n);
        'voxels: for (j, x) in grid.centers().iter().enumerate() {
            scratch.clear();
            for (cam, spec) in rig.cameras().iter().zip(&specs) {
                let Ok([u, v]) = cam.project(x) else {
                    continue 'voxels;
                };
                match spec.cell_index(u, v) {
                    Some(i) => scratch.push(i),
                    None => continue 'voxels,
                }
            }
            support.push(j);
            cells.extend_from_slice(&scratch);
        }
        if support.is_empty() {
            return Err(Error::EmptySupport);
        }
        Ok(Self {
            grid,
            specs,
            support,
            cells,
        })
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn specs(&self) -> &[GridSpec2D] {
        &self.specs
    }

    pub fn n_cameras(&self) -> usize {
        self.specs.len()
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Cell hit by support voxel `s` (position in the support list) in camera `c`.
    pub fn cell(&self, s: usize, c: usize) -> usize {
        self.cells[s * self.specs.len() + c]
    }

    /// Unnormalized log scores `Σ_c log_p[c][i^c(j)]` per support voxel.
    pub fn support_scores<T: Real>(&self, log_p: &[Vec<T>]) -> Vec<T> {
        let n = self.specs.len();
        assert_eq!(log_p.len(), n, "one log-probability map per camera");
        let mut terms = Vec::with_capacity(n);
        (0..self.support.len())
            .map(|s| {
                terms.clear();
                terms.extend((0..n).map(|c| log_p[c][self.cell(s, c)]));
                autodiff::sum(&terms)
            })
            .collect()
    }

    /// Fusion of per-camera cell probabilities into normalized support
    /// probabilities (support order). Differentiable in every `p`.
    pub fn fuse_generic<T: Real>(&self, p: &[Vec<T>]) -> Vec<T> {
        let log_p: Vec<Vec<T>> = p
            .iter()
            .map(|map| {
                map.iter()
                    .map(|&x| x.max(x.lift(PROB_FLOOR)).ln())
                    .collect()
            })
            .collect();
        normalize_log_scores(&self.support_scores(&log_p))
    }

    pub fn fuse(&self, maps: &[ProbMap2D]) -> Result<VoxelDistribution> {
        if maps.len() != self.specs.len() {
            return Err(Error::LengthMismatch {
                left: maps.len(),
                right: self.specs.len(),
            });
        }
        for (m, s) in maps.iter().zip(&self.specs) {
            if m.spec() != s {
                return Err(Error::DimensionMismatch(format!(
                    "map grid {:?} does not match camera grid {:?}",
                    m.spec(),
                    s
                )));
            }
        }
        let p: Vec<Vec<f64>> = maps.iter().map(|m| m.probs().to_vec()).collect();
        let q_support = self.fuse_generic(&p);
        Ok(self.distribution(&q_support))
    }

    /// Scatters support-ordered probabilities into a full distribution.
    pub fn distribution(&self, q_support: &[f64]) -> VoxelDistribution {
        let mut q = vec![0.0; self.grid.len()];
        for (&j, &v) in self.support.iter().zip(q_support) {
            q[j] = v;
        }
        VoxelDistribution {
            q,
            support: self.support.clone(),
        }
    }

    /// Per-cell mass of `dist` as seen from camera `c`.
    pub fn marginalize(&self, dist: &VoxelDistribution, c: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.specs[c].n_cells()];
        for (s, &j) in self.support.iter().enumerate() {
            out[self.cell(s, c)] += dist.q[j];
        }
        out
    }
}

/// `exp(s_j − logsumexp(s))`, with a max shift for stability.
pub fn normalize_log_scores<T: Real>(scores: &[T]) -> Vec<T> {
    let lse = autodiff::log_sum_exp(scores);
    scores.iter().map(|&s| (s - lse).exp()).collect()
}

/// One-shot fusion: builds the voxel-to-cell lookup and fuses `maps`.
pub fn fuse(maps: &[ProbMap2D], rig: &CameraRig, grid: &VoxelGrid) -> Result<VoxelDistribution> {
    let spec = maps.first().ok_or(Error::EmptyInput)?.spec();
    ConsensusGrid::new(rig, grid.clone(), spec.n_col, spec.n_row)?.fuse(maps)
}
