//! Fixed-size helpers over `[T; 3]` usable with both plain and recorded scalars.

use crate::autodiff::Real;

pub type V3<T = f64> = [T; 3];

#[inline]
pub fn add<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Real>(a: V3<T>, s: T) -> V3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<T: Real>(a: V3<T>, b: V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm<T: Real>(a: V3<T>) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize<T: Real>(a: V3<T>) -> V3<T> {
    let inv = norm(a).recip();
    scale(a, inv)
}

#[inline]
pub fn cross<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// `m · v` for a constant matrix.
#[inline]
pub fn mat_vec<T: Real>(m: &[[f64; 3]; 3], v: V3<T>) -> V3<T> {
    [
        v[0] * m[0][0] + v[1] * m[0][1] + v[2] * m[0][2],
        v[0] * m[1][0] + v[1] * m[1][1] + v[2] * m[1][2],
        v[0] * m[2][0] + v[1] * m[2][1] + v[2] * m[2][2],
    ]
}

#[inline]
pub fn lift<T: Real>(ctx: T, v: V3) -> V3<T> {
    [ctx.lift(v[0]), ctx.lift(v[1]), ctx.lift(v[2])]
}

#[inline]
pub fn values<T: Real>(v: V3<T>) -> V3 {
    [v[0].value(), v[1].value(), v[2].value()]
}

#[inline]
pub fn dist(a: V3, b: V3) -> f64 {
    norm(sub(a, b))
}
