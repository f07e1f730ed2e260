//! Quadrature rules on the unit interval and on triangles.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use crate::{Error, Result, Vec2};

/// Highest Gauss–Legendre order accepted by [`gauss_legendre`].
pub const MAX_GAUSS_ORDER: usize = 10;

/// Gauss–Legendre nodes and weights mapped to `[0, 1]`.
///
/// The rule with `order` points integrates polynomials of degree
/// `2·order − 1` exactly. Weights sum to one.
pub fn gauss_legendre(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 || order > MAX_GAUSS_ORDER {
        return Err(Error::InvalidArgument(format!(
            "unsupported Gauss-Legendre order {order} (expected 1..={MAX_GAUSS_ORDER})"
        )));
    }
    let n = order;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        // Newton iteration on P_n from the Chebyshev-like initial guess
        let mut x = (core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes.push(0.5 * (1.0 - x));
        weights.push(0.5 * w);
    }
    Ok((nodes, weights))
}

/// Value and derivative of the Legendre polynomial of degree `n` at `x`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A quadrature rule on a triangle in barycentric coordinates; weights sum to one.
#[derive(Debug, Clone, Copy)]
pub struct TriangleRule {
    pub points: &'static [[f64; 3]],
    pub weights: &'static [f64],
    pub degree: usize,
}

impl TriangleRule {
    /// Physical points and area-scaled weights on the triangle `(a, b, c)`.
    pub fn map(&self, a: Vec2, b: Vec2, c: Vec2, area: f64) -> impl Iterator<Item = (Vec2, [f64; 3], f64)> + '_ {
        self.points.iter().zip(self.weights).map(move |(l, w)| {
            let p = Vec2::new(
                l[0] * a.x + l[1] * b.x + l[2] * c.x,
                l[0] * a.y + l[1] * b.y + l[2] * c.y,
            );
            (p, *l, w * area)
        })
    }
}

// Seven-point rule exact to degree five, with the closed forms
// a = (6 ∓ √15)/21 and weights (155 ± √15)/1200.
const SQRT15: f64 = 3.872_983_346_207_417;
const A1: f64 = (6.0 - SQRT15) / 21.0;
const B1: f64 = (9.0 + 2.0 * SQRT15) / 21.0;
const A2: f64 = (6.0 + SQRT15) / 21.0;
const B2: f64 = (9.0 - 2.0 * SQRT15) / 21.0;
const W1: f64 = (155.0 - SQRT15) / 1200.0;
const W2: f64 = (155.0 + SQRT15) / 1200.0;

static DEG5_POINTS: [[f64; 3]; 7] = [
    [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    [A1, A1, B1],
    [A1, B1, A1],
    [B1, A1, A1],
    [A2, A2, B2],
    [A2, B2, A2],
    [B2, A2, A2],
];
static DEG5_WEIGHTS: [f64; 7] = [9.0 / 40.0, W1, W1, W1, W2, W2, W2];

/// The degree-5 seven-point rule; used for every element integral in the crate.
pub const TRIANGLE_DEG5: TriangleRule = TriangleRule {
    points: &DEG5_POINTS,
    weights: &DEG5_WEIGHTS,
    degree: 5,
};
