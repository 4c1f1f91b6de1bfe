//! Scalar reverse-mode differentiation.
//!
//! A [`Tape`] records every operation on [`Var`] values as a node with a list
//! of `(parent, local partial)` edges. [`Tape::gradient`] walks the nodes in
//! reverse append order, which is a valid reverse topological order because a
//! node can only reference nodes created before it.
//!
//! Numeric code that should run both with and without a tape is written
//! against the [`Real`] trait, which is implemented for `f64` (plain values)
//! and for [`Var`] (recorded values).

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

const CONSTANT: u32 = u32::MAX;

#[derive(Default)]
struct Inner {
    // (first edge, edge count) per node
    spans: Vec<(u32, u32)>,
    edges: Vec<(u32, f64)>,
    poison: Option<&'static str>,
}

/// Append-only record of operations.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.spans.len())
            .field("edges", &inner.edges.len())
            .finish()
    }
}

/// A value that may be tracked on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.idx == CONSTANT {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} = {})", self.idx, self.val)
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A new independent variable (leaf node).
    pub fn var(&self, value: f64) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        if !value.is_finite() && inner.poison.is_none() {
            inner.poison = Some("var");
        }
        let start = inner.edges.len() as u32;
        inner.spans.push((start, 0));
        Var {
            tape: self,
            idx: (inner.spans.len() - 1) as u32,
            val: value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// A constant: participates in arithmetic but never receives gradient.
    pub fn constant(&self, value: f64) -> Var<'_> {
        Var {
            tape: self,
            idx: CONSTANT,
            val: value,
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a node with explicit local partials. Constant parents are
    /// dropped; a node without live parents collapses to a constant.
    pub fn push<'t>(&'t self, value: f64, parents: &[(Var<'t>, f64)], op: &'static str) -> Var<'t> {
        let mut inner = self.inner.borrow_mut();
        if !value.is_finite() && inner.poison.is_none() {
            inner.poison = Some(op);
        }
        let start = inner.edges.len();
        for &(p, d) in parents {
            debug_assert!(std::ptr::eq(p.tape, self), "mixing tapes");
            if p.idx != CONSTANT {
                if !d.is_finite() && inner.poison.is_none() {
                    inner.poison = Some(op);
                }
                inner.edges.push((p.idx, d));
            }
        }
        let count = inner.edges.len() - start;
        if count == 0 {
            return Var {
                tape: self,
                idx: CONSTANT,
                val: value,
            };
        }
        inner.spans.push((start as u32, count as u32));
        Var {
            tape: self,
            idx: (inner.spans.len() - 1) as u32,
            val: value,
        }
    }

    /// Reverse pass from `output`.
    pub fn gradient(&self, output: Var<'_>) -> Result<Gradients> {
        let inner = self.inner.borrow();
        if let Some(op) = inner.poison {
            return Err(Error::NonFiniteValue { op });
        }
        let mut adj = vec![0.0; inner.spans.len()];
        if output.idx == CONSTANT {
            return Ok(Gradients { adj });
        }
        adj[output.idx as usize] = 1.0;
        for i in (0..=output.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let (start, count) = inner.spans[i];
            for &(p, d) in &inner.edges[start as usize..(start + count) as usize] {
                adj[p as usize] += a * d;
            }
        }
        Ok(Gradients { adj })
    }
}

/// Adjoints produced by a reverse pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    adj: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.idx == CONSTANT {
            0.0
        } else {
            self.adj.get(v.idx as usize).copied().unwrap_or(0.0)
        }
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }
}

impl<'t> Var<'t> {
    pub fn val(self) -> f64 {
        self.val
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn is_constant(self) -> bool {
        self.idx == CONSTANT
    }
}

/// Scalar arithmetic shared by plain and recorded values.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;

    /// A constant living in the same context as `self`.
    fn lift(self, v: f64) -> Self;

    /// A value with caller-supplied local partials. `self` only provides the
    /// context; it is not implicitly a parent.
    fn custom(self, value: f64, parents: &[(Self, f64)], op: &'static str) -> Self;

    /// Same value, no gradient flow.
    fn detach(self) -> Self {
        self.lift(self.value())
    }

    fn exp(self) -> Self {
        let e = self.value().exp();
        self.custom(e, &[(self, e)], "exp")
    }

    fn ln(self) -> Self {
        let v = self.value();
        self.custom(v.ln(), &[(self, 1.0 / v)], "ln")
    }

    fn sqrt(self) -> Self {
        let s = self.value().sqrt();
        self.custom(s, &[(self, 0.5 / s)], "sqrt")
    }

    fn recip(self) -> Self {
        let v = self.value();
        self.custom(1.0 / v, &[(self, -1.0 / (v * v))], "recip")
    }

    fn square(self) -> Self {
        let v = self.value();
        self.custom(v * v, &[(self, 2.0 * v)], "square")
    }

    fn tanh(self) -> Self {
        let t = self.value().tanh();
        self.custom(t, &[(self, 1.0 - t * t)], "tanh")
    }

    fn sigmoid(self) -> Self {
        let s = sigmoid(self.value());
        self.custom(s, &[(self, s * (1.0 - s))], "sigmoid")
    }

    /// Subgradient +1 at zero.
    fn abs(self) -> Self {
        let v = self.value();
        let d = if v >= 0.0 { 1.0 } else { -1.0 };
        self.custom(v.abs(), &[(self, d)], "abs")
    }

    /// Ties pick `self`.
    fn max(self, other: Self) -> Self {
        if self.value() >= other.value() {
            self.custom(self.value(), &[(self, 1.0)], "max")
        } else {
            self.custom(other.value(), &[(other, 1.0)], "max")
        }
    }

    /// Ties pick `self`.
    fn min(self, other: Self) -> Self {
        if self.value() <= other.value() {
            self.custom(self.value(), &[(self, 1.0)], "min")
        } else {
            self.custom(other.value(), &[(other, 1.0)], "min")
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn lift(self, v: f64) -> Self {
        v
    }
    #[inline]
    fn custom(self, value: f64, _parents: &[(Self, f64)], _op: &'static str) -> Self {
        value
    }
}

impl<'t> Real for Var<'t> {
    #[inline]
    fn value(self) -> f64 {
        self.val
    }
    #[inline]
    fn lift(self, v: f64) -> Self {
        self.tape.constant(v)
    }
    #[inline]
    fn custom(self, value: f64, parents: &[(Self, f64)], op: &'static str) -> Self {
        self.tape.push(value, parents, op)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Self) -> Self {
        self.tape
            .push(self.val + o.val, &[(self, 1.0), (o, 1.0)], "add")
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Self) -> Self {
        self.tape
            .push(self.val - o.val, &[(self, 1.0), (o, -1.0)], "sub")
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Self) -> Self {
        self.tape
            .push(self.val * o.val, &[(self, o.val), (o, self.val)], "mul")
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Self) -> Self {
        let q = self.val / o.val;
        self.tape
            .push(q, &[(self, 1.0 / o.val), (o, -q / o.val)], "div")
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.tape.push(-self.val, &[(self, -1.0)], "neg")
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: f64) -> Self {
        self.tape.push(self.val + o, &[(self, 1.0)], "add")
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: f64) -> Self {
        self.tape.push(self.val - o, &[(self, 1.0)], "sub")
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: f64) -> Self {
        self.tape.push(self.val * o, &[(self, o)], "mul")
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: f64) -> Self {
        self.tape.push(self.val / o, &[(self, 1.0 / o)], "div")
    }
}

/// Sum as a single node.
pub fn sum<T: Real>(xs: &[T]) -> T {
    assert!(!xs.is_empty(), "sum of an empty slice has no context");
    let total: f64 = xs.iter().map(|x| x.value()).sum();
    let parents: Vec<(T, f64)> = xs.iter().map(|&x| (x, 1.0)).collect();
    xs[0].custom(total, &parents, "sum")
}

/// `bias + Σ w_k x_k` with constant features `x`, as a single node.
pub fn affine<T: Real>(weights: &[T], bias: T, features: &[f64]) -> T {
    debug_assert_eq!(weights.len(), features.len());
    let mut v = bias.value();
    let mut parents = Vec::with_capacity(weights.len() + 1);
    parents.push((bias, 1.0));
    for (&w, &x) in weights.iter().zip(features) {
        v += w.value() * x;
        parents.push((w, x));
    }
    bias.custom(v, &parents, "affine")
}

/// Splices an externally differentiated kernel into the graph: `value` with
/// `partials[i] = ∂value/∂inputs[i]`.
pub fn external<T: Real>(inputs: &[T], value: f64, partials: &[f64], op: &'static str) -> T {
    assert!(!inputs.is_empty(), "external node needs at least one input");
    assert_eq!(inputs.len(), partials.len());
    let parents: Vec<(T, f64)> = inputs
        .iter()
        .copied()
        .zip(partials.iter().copied())
        .collect();
    inputs[0].custom(value, &parents, op)
}

/// Max-shifted log-sum-exp.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    assert!(!xs.is_empty(), "log-sum-exp of an empty slice");
    let m = xs
        .iter()
        .map(|x| x.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = xs.iter().map(|x| (x.value() - m).exp()).sum();
    let lse = m + s.ln();
    let parents: Vec<(T, f64)> = xs.iter().map(|&x| (x, (x.value() - lse).exp())).collect();
    xs[0].custom(lse, &parents, "log_sum_exp")
}

/// Solves `a · x = b` for a 3×3 system by explicit inversion. The backward
/// rule is closed-form: `∂x/∂b = a⁻¹`, `∂x_i/∂a_kl = −(a⁻¹)_ik · x_l`.
pub fn solve3<T: Real>(a: [[T; 3]; 3], b: [T; 3]) -> Result<[T; 3]> {
    let av = a.map(|row| row.map(|x| x.value()));
    let inv = invert3(&av).ok_or(Error::DegenerateConfiguration {
        condition: f64::INFINITY,
    })?;
    let bv = b.map(|x| x.value());
    let mut x = [0.0; 3];
    for i in 0..3 {
        x[i] = inv[i][0] * bv[0] + inv[i][1] * bv[1] + inv[i][2] * bv[2];
    }
    let ctx = b[0];
    let mut out = [ctx; 3];
    let mut parents = Vec::with_capacity(12);
    for i in 0..3 {
        parents.clear();
        for k in 0..3 {
            parents.push((b[k], inv[i][k]));
        }
        for k in 0..3 {
            for l in 0..3 {
                parents.push((a[k][l], -inv[i][k] * x[l]));
            }
        }
        out[i] = ctx.custom(x[i], &parents, "solve3");
    }
    Ok(out)
}

/// Plain 3×3 inverse via the adjugate; `None` when the determinant vanishes.
pub fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let d = 1.0 / det;
    Some([
        [
            c00 * d,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * d,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * d,
        ],
        [
            c01 * d,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * d,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * d,
        ],
        [
            c02 * d,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * d,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * d,
        ],
    ])
}

/// Pins a closure to the higher-ranked signature the tape helpers expect;
/// `let`-bound closures otherwise infer a single concrete lifetime.
pub fn scalar_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    f
}

/// Reverse-mode gradient of `f` at `x`.
pub fn grad<F>(f: F, x: &[f64]) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars = tape.vars(x);
    let out = f(&vars);
    let g = tape.gradient(out)?;
    Ok(g.wrt_all(&vars))
}

/// Evaluates `f` at `x` without keeping gradients.
pub fn eval<F>(f: &F, x: &[f64]) -> f64
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars = tape.vars(x);
    f(&vars).val()
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub argmax: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub tol: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Compares the reverse-mode gradient against central differences with step
/// `h`. Relative error per coordinate uses `max(|analytic|, |numeric|, 1e-8)`
/// as denominator.
pub fn check_grad<F>(f: F, x: &[f64], h: f64, tol: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let analytic = grad(&f, x)?;
    let mut numeric = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = eval(&f, &xp);
        xp[i] = x[i] - h;
        let fm = eval(&f, &xp);
        xp[i] = x[i];
        numeric.push((fp - fm) / (2.0 * h));
    }
    let (mut max_rel_err, mut argmax) = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(1e-8);
        let rel = (a - n).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            argmax = i;
        }
    }
    Ok(GradCheck {
        max_rel_err,
        argmax,
        analytic,
        numeric,
        tol,
    })
}
