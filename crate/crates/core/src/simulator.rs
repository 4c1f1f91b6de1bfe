//! Synthetic multi-camera scenes: one ellipsoid subject moving on a smooth
//! closed path, a static camera ring aimed at the path centroid, procedural
//! backgrounds and optional decoys that exist in a single view only.

use nalgebra::{Matrix3, Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::PixelBBox;
use crate::camera::{CameraModel, CameraRig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::BinaryMask;
use crate::vec3::{self, V3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    /// Value-noise octaves; each halves the feature size of the previous one.
    pub octaves: usize,
    /// Feature size of the coarsest octave, pixels.
    pub scale_px: f64,
    /// Peak deviation from the base color.
    pub contrast: f64,
    /// Static blobs baked into every camera's texture.
    pub blobs: usize,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self {
            octaves: 3,
            scale_px: 48.0,
            contrast: 0.12,
            blobs: 0,
        }
    }
}

/// A 2D ellipse drawn into one camera only, moving on a small circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub camera: usize,
    pub center_px: [f64; 2],
    pub semi_axes_px: [f64; 2],
    /// Radius of the circular drift, pixels.
    pub drift_px: f64,
    pub period_frames: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CameraMotion {
    Static,
    /// Background re-sampled along a horizontal sinusoidal pan.
    Panning {
        amplitude_px: f64,
        period_frames: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_cameras: usize,
    pub ring_radius: f64,
    pub camera_height: f64,
    pub focal_px: f64,
    pub image_size: (usize, usize),
    /// Axis-aligned ellipsoid semi-axes, meters.
    pub subject_semi_axes: [f64; 3],
    /// Radius of the disk holding the path's control points, meters.
    pub path_radius: f64,
    pub path_control_points: usize,
    pub background: BackgroundSpec,
    pub distractors: Vec<Distractor>,
    pub motion: CameraMotion,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_cameras: 3,
            ring_radius: 10.0,
            camera_height: 1.5,
            focal_px: 250.0,
            image_size: (128, 128),
            subject_semi_axes: [0.35, 0.35, 0.8],
            path_radius: 1.0,
            path_control_points: 6,
            background: BackgroundSpec::default(),
            distractors: Vec::new(),
            motion: CameraMotion::Static,
            frames: 200,
            seed: 7,
        }
    }
}

impl SceneConfig {
    /// Adds one decoy per camera, each visible in that camera only.
    pub fn with_single_view_distractors(mut self) -> Self {
        let (w, h) = (self.image_size.0 as f64, self.image_size.1 as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xd15_7ac7);
        self.distractors = (0..self.n_cameras)
            .map(|camera| {
                let side = if rng.random_bool(0.5) { 0.22 } else { 0.78 };
                Distractor {
                    camera,
                    center_px: [side * w, rng.random_range(0.4..0.6) * h],
                    semi_axes_px: [0.06 * w, 0.16 * h],
                    drift_px: 0.06 * w,
                    period_frames: rng.random_range(30.0..60.0),
                }
            })
            .collect();
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n_cameras < 2 {
            return bad("need at least 2 cameras");
        }
        if self.frames == 0 {
            return bad("need at least one frame");
        }
        if !(self.ring_radius > 0.0 && self.focal_px > 0.0) {
            return bad("ring radius and focal length must be positive");
        }
        if self.image_size.0 < 8 || self.image_size.1 < 8 {
            return bad("images must be at least 8x8");
        }
        if self.subject_semi_axes.iter().any(|&a| !(a > 0.0)) {
            return bad("subject semi-axes must be positive");
        }
        if self.path_control_points < 3 {
            return bad("path needs at least 3 control points");
        }
        if self.distractors.iter().any(|d| d.camera >= self.n_cameras) {
            return bad("distractor refers to a missing camera");
        }
        Ok(())
    }
}

/// Axis-aligned ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: V3,
    pub semi_axes: V3,
}

impl Ellipsoid {
    /// Nearest positive ray parameter of the intersection, if any.
    pub fn hit(&self, origin: V3, dir: V3) -> Option<f64> {
        let o: V3 = std::array::from_fn(|i| (origin[i] - self.center[i]) / self.semi_axes[i]);
        let d: V3 = std::array::from_fn(|i| dir[i] / self.semi_axes[i]);
        let a = vec3::dot(d, d);
        let b = 2.0 * vec3::dot(o, d);
        let c = vec3::dot(o, o) - 1.0;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let t = (-b - disc.sqrt()) / (2.0 * a);
        (t > 0.0).then_some(t)
    }

    /// Dual quadric `Q*`: planes `π` tangent to the surface satisfy `πᵀQ*π = 0`.
    pub fn dual_quadric(&self) -> Matrix4<f64> {
        let a = self.semi_axes;
        let d = Matrix4::from_diagonal(&Vector4::new(a[0] * a[0], a[1] * a[1], a[2] * a[2], -1.0));
        let mut t = Matrix4::identity();
        for i in 0..3 {
            t[(i, 3)] = self.center[i];
        }
        t * d * t.transpose()
    }

    /// Dual conic of the silhouette in `cam`.
    pub fn silhouette_dual_conic(&self, cam: &CameraModel) -> Matrix3<f64> {
        let p = cam.p();
        p * self.dual_quadric() * p.transpose()
    }

    /// Exact image-space bounding box of the silhouette.
    pub fn silhouette_bounds(&self, cam: &CameraModel) -> Option<PixelBBox> {
        let c = self.silhouette_dual_conic(cam);
        // Tangent lines x = s satisfy C00 − 2s·C02 + s²·C22 = 0.
        let roots = |aa: f64, ab: f64| {
            let disc = ab * ab - aa * c[(2, 2)];
            (disc >= 0.0 && c[(2, 2)] != 0.0).then(|| {
                let r = disc.sqrt();
                let (p, q) = ((ab - r) / c[(2, 2)], (ab + r) / c[(2, 2)]);
                (p.min(q), p.max(q))
            })
        };
        let (l, r) = roots(c[(0, 0)], c[(0, 2)])?;
        let (t, b) = roots(c[(1, 1)], c[(1, 2)])?;
        Some(PixelBBox::from_edges(l, t, r, b))
    }
}

/// One camera's view of one frame.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub image: Image,
    pub gt_mask: BinaryMask,
    pub gt_box: PixelBBox,
    /// Exact projection of the subject center.
    pub subject_px: [f64; 2],
}

/// All views of one frame.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub frame: usize,
    pub images: Vec<Image>,
    pub gt_masks: Vec<BinaryMask>,
    pub gt_boxes: Vec<PixelBBox>,
    pub subject_px: Vec<[f64; 2]>,
    pub subject_pos: V3,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub rig: CameraRig,
    pub path: Vec<V3>,
    pub centroid: V3,
    textures: Vec<Image>,
    pan_margin: usize,
}

fn catmull_rom(p: &[V3], t: f64) -> V3 {
    let n = p.len();
    let s = t * n as f64;
    let i = s.floor() as usize % n;
    let f = s - s.floor();
    let p0 = p[(i + n - 1) % n];
    let p1 = p[i];
    let p2 = p[(i + 1) % n];
    let p3 = p[(i + 2) % n];
    let (f2, f3) = (f * f, f * f * f);
    std::array::from_fn(|k| {
        0.5 * (2.0 * p1[k]
            + (-p0[k] + p2[k]) * f
            + (2.0 * p0[k] - 5.0 * p1[k] + 4.0 * p2[k] - p3[k]) * f2
            + (-p0[k] + 3.0 * p1[k] - 3.0 * p2[k] + p3[k]) * f3)
    })
}

#[inline]
fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lattice(seed: u64, x: i64, y: i64) -> f64 {
    // splitmix64 over the packed lattice coordinates
    let mut z = seed
        .wrapping_add((x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add((y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (smooth(x - x0), smooth(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
}

const BASE_COLOR: [f64; 3] = [0.36, 0.48, 0.44];

/// Color ramp of the subject and decoys, `s ∈ [−1, 1]` from bottom to top.
fn ramp(s: f64) -> [f64; 3] {
    let t = (0.5 * (s + 1.0)).clamp(0.0, 1.0);
    let lo = [0.80, 0.18, 0.16];
    let hi = [0.96, 0.78, 0.22];
    std::array::from_fn(|k| lo[k] + (hi[k] - lo[k]) * t)
}

fn make_texture(spec: &BackgroundSpec, width: usize, height: usize, seed: u64) -> Image {
    let mut img = Image::from_fn(width, height, 3, |x, y, k| {
        let mut v = 0.0;
        let mut amp = 1.0;
        let mut norm = 0.0;
        let mut scale = spec.scale_px;
        for o in 0..spec.octaves {
            let s = seed.wrapping_add(((o * 3 + k) as u64) << 32);
            v += amp * value_noise(s, x as f64 / scale, y as f64 / scale);
            norm += amp;
            amp *= 0.5;
            scale *= 0.5;
        }
        let n = if norm > 0.0 { v / norm } else { 0.0 };
        (BASE_COLOR[k] + spec.contrast * n).clamp(0.0, 1.0)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb10b);
    for _ in 0..spec.blobs {
        let c = [
            rng.random_range(0.0..width as f64),
            rng.random_range(0.0..height as f64),
        ];
        let r = [rng.random_range(4.0..10.0), rng.random_range(4.0..10.0)];
        let col: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
        draw_ellipse(&mut img, c, r, |_| col);
    }
    img
}

fn draw_ellipse(img: &mut Image, c: [f64; 2], r: [f64; 2], color: impl Fn(f64) -> [f64; 3]) {
    let x0 = (c[0] - r[0]).floor().max(0.0) as usize;
    let x1 = ((c[0] + r[0]).ceil().max(0.0) as usize).min(img.width());
    let y0 = (c[1] - r[1]).floor().max(0.0) as usize;
    let y1 = ((c[1] + r[1]).ceil().max(0.0) as usize).min(img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = (x as f64 + 0.5 - c[0]) / r[0];
            let dy = (y as f64 + 0.5 - c[1]) / r[1];
            if dx * dx + dy * dy <= 1.0 {
                let col = color(-dy);
                for (k, v) in col.iter().enumerate() {
                    img.set(x, y, k, *v);
                }
            }
        }
    }
}

/// Builds the rig, the subject path and the per-camera backgrounds.
pub fn make_scene(config: SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let controls: Vec<V3> = (0..config.path_control_points)
        .map(|i| {
            let a = i as f64 * std::f64::consts::TAU / config.path_control_points as f64;
            let r = config.path_radius * rng.random_range(0.4..1.0);
            [r * a.cos(), r * a.sin(), 0.0]
        })
        .collect();
    let path: Vec<V3> = (0..config.frames)
        .map(|t| catmull_rom(&controls, t as f64 / config.frames as f64))
        .collect();
    let mut centroid = [0.0; 3];
    for p in &path {
        centroid = vec3::add(centroid, *p);
    }
    centroid = vec3::scale(centroid, 1.0 / path.len() as f64);

    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let (w, h) = config.image_size;
    let cams = (0..config.n_cameras)
        .map(|c| {
            let a = phase + c as f64 * std::f64::consts::TAU / config.n_cameras as f64;
            let pos = [
                centroid[0] + config.ring_radius * a.cos(),
                centroid[1] + config.ring_radius * a.sin(),
                centroid[2] + config.camera_height,
            ];
            CameraModel::look_at(pos, centroid, [0.0, 0.0, 1.0], config.focal_px, w, h)
        })
        .collect::<Result<Vec<_>>>()?;
    let rig = CameraRig::new(cams)?;

    for p in &path {
        let body = Ellipsoid {
            center: *p,
            semi_axes: config.subject_semi_axes,
        };
        for cam in rig.cameras() {
            let inside = cam.depth(*p) > 0.0
                && body.silhouette_bounds(cam).is_some_and(|b| {
                    b.left() >= 0.0
                        && b.top() >= 0.0
                        && b.right() <= w as f64
                        && b.bottom() <= h as f64
                });
            if !inside {
                return Err(Error::InvalidConfig(
                    "subject leaves a camera frustum".into(),
                ));
            }
        }
    }

    let pan_margin = match config.motion {
        CameraMotion::Static => 0,
        CameraMotion::Panning { amplitude_px, .. } => amplitude_px.abs().ceil() as usize + 1,
    };
    let textures = (0..config.n_cameras)
        .map(|c| {
            let s = config
                .seed
                .wrapping_mul(1_000_003)
                .wrapping_add(c as u64 + 1);
            make_texture(&config.background, w + 2 * pan_margin, h, s)
        })
        .collect();
    Ok(Scene {
        config,
        rig,
        path,
        centroid,
        textures,
        pan_margin,
    })
}

impl Scene {
    pub fn frames(&self) -> usize {
        self.path.len()
    }

    pub fn subject(&self, t: usize) -> Ellipsoid {
        Ellipsoid {
            center: self.path[t],
            semi_axes: self.config.subject_semi_axes,
        }
    }

    fn pan_offset(&self, t: usize) -> f64 {
        match self.config.motion {
            CameraMotion::Static => 0.0,
            CameraMotion::Panning {
                amplitude_px,
                period_frames,
            } => amplitude_px * (std::f64::consts::TAU * t as f64 / period_frames).sin(),
        }
    }

    /// Background of camera `c` at frame `t`, without subject or decoys.
    pub fn background(&self, c: usize, t: usize) -> Image {
        let (w, h) = self.config.image_size;
        let tex = &self.textures[c];
        if self.pan_margin == 0 {
            return tex.clone();
        }
        let shift = self.pan_margin as f64 + self.pan_offset(t);
        let (i0, f) = (shift.floor() as usize, shift - shift.floor());
        Image::from_fn(w, h, 3, |x, y, k| {
            let a = tex.get(x + i0, y, k);
            let b = tex.get((x + i0 + 1).min(tex.width() - 1), y, k);
            a * (1.0 - f) + b * f
        })
    }

    pub fn render(&self, c: usize, t: usize) -> Result<CameraView> {
        if t >= self.frames() || c >= self.rig.len() {
            return Err(Error::InvalidSpec(format!(
                "no view (camera {c}, frame {t})"
            )));
        }
        let cam = self.rig.camera(c);
        let (w, h) = self.config.image_size;
        let mut image = self.background(c, t);
        for d in self.config.distractors.iter().filter(|d| d.camera == c) {
            let a = std::f64::consts::TAU * t as f64 / d.period_frames;
            let center = [
                d.center_px[0] + d.drift_px * a.cos(),
                d.center_px[1] + d.drift_px * a.sin(),
            ];
            draw_ellipse(&mut image, center, d.semi_axes_px, ramp);
        }
        let body = self.subject(t);
        let bounds = body
            .silhouette_bounds(cam)
            .ok_or_else(|| Error::InvalidConfig("subject silhouette is not an ellipse".into()))?;
        let mut mask = BinaryMask::empty(w, h);
        let light = vec3::normalize([0.3, -0.4, 0.85]);
        let x0 = (bounds.left().floor() - 1.0).max(0.0) as usize;
        let x1 = ((bounds.right().ceil() + 1.0).max(0.0) as usize).min(w);
        let y0 = (bounds.top().floor() - 1.0).max(0.0) as usize;
        let y1 = ((bounds.bottom().ceil() + 1.0).max(0.0) as usize).min(h);
        let a = body.semi_axes;
        for y in y0..y1 {
            for x in x0..x1 {
                let ray = cam.ray_through_pixel(x as f64 + 0.5, y as f64 + 0.5);
                let Some(s) = body.hit(ray.origin, ray.dir) else {
                    continue;
                };
                mask.set(x, y, true);
                let p = ray.at(s);
                let n = vec3::normalize(std::array::from_fn(|i| {
                    (p[i] - body.center[i]) / (a[i] * a[i])
                }));
                let shade = 0.65 + 0.35 * vec3::dot(n, light).max(0.0);
                let col = ramp((p[2] - body.center[2]) / a[2]);
                for (k, v) in col.iter().enumerate() {
                    image.set(x, y, k, (v * shade).clamp(0.0, 1.0));
                }
            }
        }
        let gt_box = mask
            .bounding_box()
            .ok_or_else(|| Error::InvalidConfig("subject covers no pixel".into()))?;
        let subject_px = cam.project(&body.center)?;
        Ok(CameraView {
            image,
            gt_mask: mask,
            gt_box,
            subject_px,
        })
    }

    pub fn frame(&self, t: usize) -> Result<FrameBundle> {
        let mut out = FrameBundle {
            frame: t,
            images: Vec::new(),
            gt_masks: Vec::new(),
            gt_boxes: Vec::new(),
            subject_px: Vec::new(),
            subject_pos: self.path.get(t).copied().unwrap_or_default(),
        };
        for c in 0..self.rig.len() {
            let v = self.render(c, t)?;
            out.images.push(v.image);
            out.gt_masks.push(v.gt_mask);
            out.gt_boxes.push(v.gt_box);
            out.subject_px.push(v.subject_px);
        }
        Ok(out)
    }
}
