//! Calibrated projective cameras.
//!
//! Pixel convention: `u ∈ [0, W)`, `v ∈ [0, H)`, origin at the top-left
//! corner, `v` growing downward. World units are meters.

use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::vec3::{self, V3};

/// A ray with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line3<T = f64> {
    pub origin: V3<T>,
    pub dir: V3<T>,
}

impl Line3<f64> {
    /// Builds a line, normalizing `dir`.
    pub fn new(origin: V3, dir: V3) -> Self {
        Self {
            origin,
            dir: vec3::normalize(dir),
        }
    }

    pub fn at(&self, t: f64) -> V3 {
        vec3::add(self.origin, vec3::scale(self.dir, t))
    }
}

/// A 3×4 projection matrix with its cached decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    p: Matrix3x4<f64>,
    m: Matrix3<f64>,
    m_inv: Matrix3<f64>,
    center: Vector3<f64>,
    width: usize,
    height: usize,
    // row-major copies for the scalar-generic paths
    p_rows: [[f64; 4]; 3],
    m_inv_rows: [[f64; 3]; 3],
}

impl CameraModel {
    /// Splits `P = [M | m]`, inverts `M`, and computes the optical center
    /// `−M⁻¹·m`.
    pub fn decompose(p: Matrix3x4<f64>, width: usize, height: usize) -> Result<Self> {
        let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= 1e-12 {
            return Err(Error::SingularCamera { det });
        }
        let m_inv = m.try_inverse().ok_or(Error::SingularCamera { det })?;
        let col = p.column(3).into_owned();
        let center = -(m_inv * col);
        let mut p_rows = [[0.0; 4]; 3];
        let mut m_inv_rows = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..4 {
                p_rows[r][c] = p[(r, c)];
            }
            for c in 0..3 {
                m_inv_rows[r][c] = m_inv[(r, c)];
            }
        }
        Ok(Self {
            p,
            m,
            m_inv,
            center,
            width,
            height,
            p_rows,
            m_inv_rows,
        })
    }

    pub fn from_rows(rows: [[f64; 4]; 3], width: usize, height: usize) -> Result<Self> {
        let p = Matrix3x4::from_fn(|r, c| rows[r][c]);
        Self::decompose(p, width, height)
    }

    /// A pinhole camera at `position` looking at `target`, with `up` giving
    /// the world direction that maps to decreasing `v`. The principal point
    /// is the image center.
    pub fn look_at(
        position: V3,
        target: V3,
        up: V3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = vec3::normalize(vec3::sub(target, position));
        let right = vec3::cross(forward, up);
        if vec3::norm(right) < 1e-9 {
            return Err(Error::InvalidSpec("view direction parallel to up".into()));
        }
        let right = vec3::normalize(right);
        let down = vec3::cross(forward, right);
        let r = Matrix3::from_rows(&[
            Vector3::from(right).transpose(),
            Vector3::from(down).transpose(),
            Vector3::from(forward).transpose(),
        ]);
        let k = Matrix3::new(
            focal,
            0.0,
            width as f64 / 2.0,
            0.0,
            focal,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        let t = -(r * Vector3::from(position));
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        rt.set_column(3, &t);
        Self::decompose(k * rt, width, height)
    }

    pub fn p(&self) -> &Matrix3x4<f64> {
        &self.p
    }

    pub fn m(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn m_inv(&self) -> &Matrix3<f64> {
        &self.m_inv
    }

    pub fn center(&self) -> V3 {
        [self.center.x, self.center.y, self.center.z]
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rows(&self) -> [[f64; 4]; 3] {
        self.p_rows
    }

    /// Homogeneous depth `(P·[X;1])₃`.
    pub fn depth(&self, x: V3) -> f64 {
        let r = &self.p_rows[2];
        r[0] * x[0] + r[1] * x[1] + r[2] * x[2] + r[3]
    }

    /// Dehomogenized projection with the full `P`. No clamping to the image.
    pub fn project<T: Real>(&self, x: &V3<T>) -> Result<[T; 2]> {
        let row = |r: &[f64; 4]| x[0] * r[0] + x[1] * r[1] + x[2] * r[2] + r[3];
        let w = row(&self.p_rows[2]);
        if w.value() <= 1e-9 {
            return Err(Error::BehindCamera { depth: w.value() });
        }
        let inv = w.recip();
        Ok([row(&self.p_rows[0]) * inv, row(&self.p_rows[1]) * inv])
    }

    /// Line of sight through pixel `(u, v)`: origin at the optical center,
    /// direction `normalize(M⁻¹·(u, v, 1))`. Points at positive distance along
    /// it have positive projective depth since `M·dir ∝ (u, v, 1)`.
    pub fn ray_through_pixel<T: Real>(&self, u: T, v: T) -> Line3<T> {
        let one = u.lift(1.0);
        let l = vec3::mat_vec(&self.m_inv_rows, [u, v, one]);
        Line3 {
            origin: vec3::lift(u, self.center()),
            dir: vec3::normalize(l),
        }
    }

    /// The optical axis: through the center along the normalized third row
    /// of `M`, oriented toward positive depth.
    pub fn optical_axis(&self) -> Line3 {
        let r = [self.m[(2, 0)], self.m[(2, 1)], self.m[(2, 2)]];
        Line3::new(self.center(), r)
    }

    /// Strictly inside the image rectangle and in front of the camera.
    pub fn sees(&self, x: V3) -> bool {
        match self.project(&x) {
            Ok([u, v]) => u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64,
            Err(_) => false,
        }
    }
}

/// An ordered set of cameras sharing one world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<CameraModel>,
}

#[derive(Serialize, Deserialize)]
struct RigFile {
    cameras: Vec<RigEntry>,
}

#[derive(Serialize, Deserialize)]
struct RigEntry {
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    width: usize,
    height: usize,
}

impl CameraRig {
    pub fn new(cameras: Vec<CameraModel>) -> Result<Self> {
        if cameras.len() < 2 {
            return Err(Error::TooFewCameras {
                count: cameras.len(),
            });
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[CameraModel] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn camera(&self, c: usize) -> &CameraModel {
        &self.cameras[c]
    }

    pub fn to_json(&self) -> String {
        let file = RigFile {
            cameras: self
                .cameras
                .iter()
                .map(|c| RigEntry {
                    p: c.p_rows.iter().map(|r| r.to_vec()).collect(),
                    width: c.width,
                    height: c.height,
                })
                .collect(),
        };
        // serde_json writes the shortest decimal that round-trips each f64
        serde_json::to_string_pretty(&file).expect("rig serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RigFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut cameras = Vec::with_capacity(file.cameras.len());
        for (i, e) in file.cameras.into_iter().enumerate() {
            if e.p.len() != 3 || e.p.iter().any(|r| r.len() != 4) {
                return Err(Error::Parse(format!("camera {i}: P must be 3 rows of 4")));
            }
            let mut rows = [[0.0; 4]; 3];
            for r in 0..3 {
                rows[r].copy_from_slice(&e.p[r]);
            }
            cameras.push(CameraModel::from_rows(rows, e.width, e.height)?);
        }
        Self::new(cameras)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Reads and validates a rig file.
pub fn load_rig(path: impl AsRef<Path>) -> Result<CameraRig> {
    CameraRig::load(path)
}

pub fn save_rig(rig: &CameraRig, path: impl AsRef<Path>) -> Result<()> {
    rig.save(path)
}
