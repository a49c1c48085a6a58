//! Composite Gauss–Legendre quadrature with panel doubling, plus spectral
//! cumulative integration on the same nodes.
//!
//! The cumulative rule integrates the degree-15 interpolant through the
//! panel nodes from the panel start to each node, so nested integrals
//! (`∫ f(∫ g)`) reuse one set of function evaluations.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// Points per panel.
pub const POINTS: usize = 16;
/// Default relative agreement between successive panel doublings.
pub const DEFAULT_RTOL: f64 = 1e-11;
const MAX_DOUBLINGS: u32 = 18;

/// Values that can be accumulated by a quadrature rule.
pub trait Quantity: Clone {
    fn zeros_like(&self) -> Self;
    fn add_scaled(&mut self, other: &Self, k: f64);
    fn scaled(&self, k: f64) -> Self {
        let mut out = self.zeros_like();
        out.add_scaled(self, k);
        out
    }
    fn magnitude(&self) -> f64;
    fn is_finite(&self) -> bool;
}

impl Quantity for f64 {
    fn zeros_like(&self) -> Self {
        0.0
    }
    fn add_scaled(&mut self, other: &Self, k: f64) {
        *self += k * other;
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl Quantity for DVector<f64> {
    fn zeros_like(&self) -> Self {
        DVector::zeros(self.len())
    }
    fn add_scaled(&mut self, other: &Self, k: f64) {
        self.axpy(k, other, 1.0);
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

impl Quantity for DMatrix<f64> {
    fn zeros_like(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }
    fn add_scaled(&mut self, other: &Self, k: f64) {
        *self += other * k;
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

/// Gauss–Legendre rule on `[-1, 1]` with its cumulative integration matrix.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `cumulative[i][j] = ∫_{-1}^{x_i} ℓ_j(x) dx` for the Lagrange basis `ℓ_j`.
    pub cumulative: Vec<Vec<f64>>,
}

/// `P_0(x) .. P_{n}(x)` by the three-term recurrence.
fn legendre_all(n: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n + 1];
    p[0] = 1.0;
    if n >= 1 {
        p[1] = x;
    }
    for k in 1..n {
        let kf = k as f64;
        p[k + 1] = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
    }
    p
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "need at least two nodes");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            for _ in 0..100 {
                let p = legendre_all(n, x);
                let dp = nf * (x * p[n] - p[n - 1]) / (x * x - 1.0);
                let dx = p[n] / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let p = legendre_all(n, x);
            let dp = nf * (x * p[n] - p[n - 1]) / (x * x - 1.0);
            // ascending order
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }

        let polys: Vec<Vec<f64>> = nodes.iter().map(|&x| legendre_all(n, x)).collect();
        let mut cumulative = vec![vec![0.0; n]; n];
        for i in 0..n {
            let pi = &polys[i];
            for j in 0..n {
                let pj = &polys[j];
                let mut s = 0.5 * (nodes[i] + 1.0);
                for k in 1..n {
                    s += 0.5 * pj[k] * (pi[k + 1] - pi[k - 1]);
                }
                cumulative[i][j] = weights[j] * s;
            }
        }
        Self {
            nodes,
            weights,
            cumulative,
        }
    }

    /// The shared 16-point rule.
    pub fn standard() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(POINTS))
    }
}

/// Uniform partition of `[a, b]` into `count` panels carrying Gauss nodes.
#[derive(Debug, Clone, Copy)]
pub struct Panels {
    pub a: f64,
    pub b: f64,
    pub count: usize,
}

impl Panels {
    pub fn new(a: f64, b: f64, count: usize) -> Self {
        Self {
            a,
            b,
            count: count.max(1),
        }
    }

    pub fn width(&self) -> f64 {
        (self.b - self.a) / self.count as f64
    }

    pub fn bounds(&self, panel: usize) -> (f64, f64) {
        let h = self.width();
        let lo = self.a + h * panel as f64;
        let hi = if panel + 1 == self.count { self.b } else { lo + h };
        (lo, hi)
    }

    /// All nodes in panel-major order.
    pub fn nodes(&self) -> Vec<f64> {
        let rule = GaussLegendre::standard();
        let mut out = Vec::with_capacity(self.count * POINTS);
        for p in 0..self.count {
            let (lo, hi) = self.bounds(p);
            let half = 0.5 * (hi - lo);
            out.extend(rule.nodes.iter().map(|&x| lo + half * (x + 1.0)));
        }
        out
    }

    /// `∫_a^b f` from values at [`Panels::nodes`].
    pub fn integrate_values<T: Quantity>(&self, values: &[T]) -> T {
        let rule = GaussLegendre::standard();
        let mut acc = values[0].zeros_like();
        for p in 0..self.count {
            let (lo, hi) = self.bounds(p);
            let half = 0.5 * (hi - lo);
            for (i, w) in rule.weights.iter().enumerate() {
                acc.add_scaled(&values[p * POINTS + i], w * half);
            }
        }
        acc
    }

    /// Discounted running integral
    /// `F(x) = e^{-rate (x - a)} F0 + ∫_a^x e^{-rate (x - s)} f(s) ds`
    /// at every node, plus its value at `b`.
    pub fn discounted_cumulative<T: Quantity>(&self, rate: f64, values: &[T], initial: T) -> (Vec<T>, T) {
        let rule = GaussLegendre::standard();
        let mut at_nodes = Vec::with_capacity(values.len());
        let mut start = initial;
        for p in 0..self.count {
            let (lo, hi) = self.bounds(p);
            let half = 0.5 * (hi - lo);
            let local: Vec<f64> = rule.nodes.iter().map(|&x| half * (x + 1.0)).collect();
            let grown: Vec<T> = (0..POINTS)
                .map(|j| values[p * POINTS + j].scaled((rate * local[j]).exp()))
                .collect();
            for i in 0..POINTS {
                let mut acc = start.clone();
                for (j, g) in grown.iter().enumerate() {
                    acc.add_scaled(g, rule.cumulative[i][j] * half);
                }
                at_nodes.push(acc.scaled((-rate * local[i]).exp()));
            }
            let mut end = start.clone();
            for (j, g) in grown.iter().enumerate() {
                end.add_scaled(g, rule.weights[j] * half);
            }
            start = end.scaled((-rate * (hi - lo)).exp());
        }
        (at_nodes, start)
    }
}

/// Panel count at which an exponential rate `rate` is resolved on `[a, b]`.
pub fn initial_panels(rate: f64, a: f64, b: f64) -> usize {
    let span = (b - a).abs();
    ((rate.abs() * span / 4.0).ceil() as usize).clamp(1, 1 << 16)
}

/// Relative closeness test used by the doubling loops.
pub fn converged(prev: f64, next: f64, scale: f64, rtol: f64) -> bool {
    prev.is_finite() && next.is_finite() && (next - prev).abs() <= rtol * scale.max(f64::MIN_POSITIVE)
}

/// Composite rule with a fixed panel count.
pub fn integrate_fixed<T: Quantity>(f: &impl Fn(f64) -> Result<T>, a: f64, b: f64, panels: usize) -> Result<T> {
    let grid = Panels::new(a, b, panels);
    let values = grid.nodes().into_iter().map(f).collect::<Result<Vec<T>>>()?;
    Ok(grid.integrate_values(&values))
}

/// Integrates `f` over `[a, b]`, doubling the panel count until two
/// successive estimates agree to `rtol` relative.
pub fn integrate<T: Quantity>(f: impl Fn(f64) -> Result<T>, a: f64, b: f64, start_panels: usize, rtol: f64) -> Result<T> {
    integrate_with_floor(f, a, b, start_panels, rtol, 0.0)
}

/// As [`integrate`], also accepting agreement to the absolute `atol`.
pub fn integrate_with_floor<T: Quantity>(
    f: impl Fn(f64) -> Result<T>,
    a: f64,
    b: f64,
    start_panels: usize,
    rtol: f64,
    atol: f64,
) -> Result<T> {
    if a == b {
        let probe = f(a)?;
        return Ok(probe.zeros_like());
    }
    let mut panels = start_panels.max(1);
    let mut prev = integrate_fixed(&f, a, b, panels)?;
    let mut last_change = f64::INFINITY;
    for round in 0..MAX_DOUBLINGS {
        panels *= 2;
        let next = integrate_fixed(&f, a, b, panels)?;
        let mut diff = next.clone();
        diff.add_scaled(&prev, -1.0);
        let change = diff.magnitude();
        let bound = (rtol * next.magnitude()).max(atol).max(f64::MIN_POSITIVE);
        let converged = next.is_finite() && change <= bound;
        // a resolved smooth integrand stops improving only at roundoff level
        let stalled = round >= 2 && change > 0.5 * last_change;
        prev = next;
        if converged || stalled {
            break;
        }
        last_change = change;
    }
    Ok(prev)
}

/// Integrates over `[a, b]` on pieces `[a, a+h], [a+h, a+2h], [a+2h, a+4h], …`
/// with `h = 1/rate`, resolving a boundary layer of width `1/rate` at `a`
/// without refining the rest of the interval.
pub fn integrate_graded<T: Quantity>(f: impl Fn(f64) -> Result<T>, a: f64, b: f64, rate: f64, rtol: f64) -> Result<T> {
    let span = b - a;
    let h = if rate > 0.0 { (1.0 / rate).min(span) } else { span };
    let mut pieces = Vec::new();
    let (mut lo, mut width) = (a, h);
    while lo < b {
        let hi = if lo + width >= b - 1e-3 * width { b } else { lo + width };
        pieces.push((lo, hi));
        if lo > a {
            width *= 2.0;
        }
        lo = hi;
    }
    let mut rough = f(a)?.zeros_like();
    for &(lo, hi) in &pieces {
        rough.add_scaled(&integrate_fixed(&f, lo, hi, 2)?, 1.0);
    }
    let atol = 0.1 * rtol * rough.magnitude();
    let mut total = rough.zeros_like();
    for &(lo, hi) in &pieces {
        total.add_scaled(&integrate_with_floor(&f, lo, hi, 1, rtol, atol)?, 1.0);
    }
    Ok(total)
}
