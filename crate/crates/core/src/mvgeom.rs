//! Closest point to a set of 3D lines in the least-squares sense.
//!
//! For unit directions `n_c` and origins `o_c`, the point minimizing
//! `Σ (o_c − x)ᵀ (I − n_c n_cᵀ) (o_c − x)` solves `A x = m` with
//! `A = Σ (I − n_c n_cᵀ)` and `m = Σ (I − n_c n_cᵀ) o_c`.

use nalgebra::{Matrix3, SymmetricEigen};

use crate::autodiff::{self, Real};
use crate::camera::{CameraRig, Line3};
use crate::error::{Error, Result};
use crate::vec3::{self, V3};

/// Tikhonov term added to `A` before solving.
pub const DAMPING: f64 = 1e-9;

/// Solutions with `cond(A)` above this are rejected.
pub const MAX_CONDITION: f64 = 1e9;

#[derive(Debug, Clone, Copy)]
pub struct LsqResult<T = f64> {
    pub point: V3<T>,
    /// Condition number of the damped normal matrix.
    pub condition: f64,
    /// Sum of squared perpendicular distances, m².
    pub residual: T,
}

/// Squared perpendicular distance from `x` to a line with unit direction.
pub fn sq_distance<T: Real>(line: &Line3<T>, x: V3<T>) -> T {
    let c = vec3::cross(vec3::sub(line.origin, x), line.dir);
    vec3::dot(c, c)
}

/// Ratio of extreme eigenvalues of a symmetric positive semi-definite matrix.
pub fn condition_number(a: &[[f64; 3]; 3]) -> f64 {
    let m = Matrix3::from_fn(|r, c| a[r][c]);
    let eig = SymmetricEigen::new(m).eigenvalues;
    let hi = eig
        .iter()
        .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v.abs()));
    let lo = eig.iter().fold(f64::INFINITY, |acc, &v| acc.min(v));
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Least-squares intersection of `lines`, differentiable in every origin
/// and direction when `T` is a recorded scalar.
pub fn nearest_point_to_lines<T: Real>(lines: &[Line3<T>]) -> Result<LsqResult<T>> {
    let Some(first) = lines.first() else {
        return Err(Error::InvalidSpec("no lines to intersect".into()));
    };
    let ctx = first.origin[0];
    let zero = ctx.lift(0.0);
    let mut a = [[zero; 3]; 3];
    let mut m = [zero; 3];
    for line in lines {
        let n = line.dir;
        let o = line.origin;
        let n_dot_o = vec3::dot(n, o);
        for r in 0..3 {
            for c in 0..3 {
                let eye = if r == c { 1.0 } else { 0.0 };
                a[r][c] = a[r][c] - n[r] * n[c] + eye;
            }
            m[r] = m[r] + o[r] - n[r] * n_dot_o;
        }
    }
    for (r, row) in a.iter_mut().enumerate() {
        row[r] = row[r] + DAMPING;
    }
    let av = a.map(|row| row.map(|x| x.value()));
    let condition = condition_number(&av);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::DegenerateConfiguration { condition });
    }
    let point = autodiff::solve3(a, m)?;
    let mut residual = zero;
    for line in lines {
        residual = residual + sq_distance(line, point);
    }
    Ok(LsqResult {
        point,
        condition,
        residual,
    })
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: V3,
    pub max: V3,
}

impl Aabb {
    pub fn cube(center: V3, half: f64) -> Self {
        Self {
            min: [center[0] - half, center[1] - half, center[2] - half],
            max: [center[0] + half, center[1] + half, center[2] + half],
        }
    }
}

fn objective(lines: &[Line3], x: V3) -> f64 {
    lines.iter().map(|l| sq_distance(l, x)).sum()
}

/// Test oracle: exhaustive grid search of `Σ d²` over `bounds` at spacing
/// `step`, followed by per-axis bisection on the slope sign. Uses no linear
/// algebra.
pub fn nearest_point_bruteforce(lines: &[Line3], bounds: &Aabb, step: f64) -> V3 {
    assert!(step > 0.0, "grid step must be positive");
    let counts: Vec<usize> = (0..3)
        .map(|k| ((bounds.max[k] - bounds.min[k]) / step).floor() as usize + 1)
        .collect();
    let mut best = bounds.min;
    let mut best_f = f64::INFINITY;
    for i in 0..counts[0] {
        for j in 0..counts[1] {
            for k in 0..counts[2] {
                let x = [
                    bounds.min[0] + i as f64 * step,
                    bounds.min[1] + j as f64 * step,
                    bounds.min[2] + k as f64 * step,
                ];
                let f = objective(lines, x);
                if f < best_f {
                    best_f = f;
                    best = x;
                }
            }
        }
    }

    let resolution = step / 1024.0;
    let tiny = resolution * 1e-6;
    let mut x = best;
    for _sweep in 0..20_000 {
        let mut moved = 0.0f64;
        for axis in 0..3 {
            let at = |t: f64| {
                let mut p = x;
                p[axis] = t;
                objective(lines, p)
            };
            let slope = |t: f64| at(t + tiny) - at(t - tiny);
            // bracket the 1D minimum
            let mut half = step;
            let (mut lo, mut hi);
            loop {
                lo = x[axis] - half;
                hi = x[axis] + half;
                if slope(lo) <= 0.0 && slope(hi) >= 0.0 {
                    break;
                }
                half *= 2.0;
                if half > 1e6 {
                    break;
                }
            }
            while hi - lo > resolution * 1e-4 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let t = 0.5 * (lo + hi);
            moved = moved.max((t - x[axis]).abs());
            x[axis] = t;
        }
        if moved < resolution * 1e-4 {
            break;
        }
    }
    x
}

/// The point nearest to every camera's optical axis.
pub fn rig_focus_point(rig: &CameraRig) -> Result<V3> {
    let axes: Vec<Line3> = rig.cameras().iter().map(|c| c.optical_axis()).collect();
    Ok(nearest_point_to_lines(&axes)?.point)
}
