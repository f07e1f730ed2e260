//! Features, the partition of their boundaries, and quadrature on curves
//! clipped against a mesh.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
#[allow(unused_imports)]
use num_traits::Float;

use crate::mesh::{Mesh, Rect};
use crate::quadrature::gauss_legendre;
use crate::{Error, Result, Vec2};

/// Scalar data `x ↦ v(x)`.
pub type ScalarFn = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;
/// Boundary flux data `(x, n) ↦ g(x, n)`, with `n` the outward unit normal.
pub type FluxFn = Arc<dyn Fn(Vec2, Vec2) -> f64 + Send + Sync>;
/// Boundary classifier, e.g. "is this point on the Dirichlet boundary".
pub type PointPredicate = Arc<dyn Fn(Vec2) -> bool + Send + Sync>;

pub fn constant(c: f64) -> ScalarFn {
    Arc::new(move |_| c)
}

pub fn constant_flux(c: f64) -> FluxFn {
    Arc::new(move |_, _| c)
}

/// Tolerance used to decide whether a point lies on a straight line.
pub const ON_LINE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum FeatureKind {
    NegativeInternal,
    NegativeBoundary,
    Positive,
}

impl FeatureKind {
    pub fn is_positive(self) -> bool {
        self == FeatureKind::Positive
    }
}

/// A set of oriented straight segments. The normal of a segment `a → b` is
/// its right normal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Curve {
    pub segments: Vec<[Vec2; 2]>,
}

impl Curve {
    pub fn new(segments: Vec<[Vec2; 2]>) -> Self {
        Self { segments }
    }

    /// Closed loop through the given points.
    pub fn closed(points: &[Vec2]) -> Self {
        let n = points.len();
        Self::new((0..n).map(|i| [points[i], points[(i + 1) % n]]).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn length(&self) -> f64 {
        curve_length(self)
    }

    /// Same point set with reversed orientation (normals flip).
    pub fn flipped(&self) -> Self {
        Self::new(self.segments.iter().rev().map(|&[a, b]| [b, a]).collect())
    }

    pub fn extend(&mut self, other: Curve) {
        self.segments.extend(other.segments);
    }
}

pub fn curve_length(curve: &Curve) -> f64 {
    curve.segments.iter().map(|[a, b]| a.distance(*b)).sum()
}

/// Data attached to a feature extension `F̃ ⊇ F`.
#[derive(Clone)]
pub struct Extension {
    /// Counterclockwise polygon of the extension.
    pub polygon: Vec<Vec2>,
    /// Neumann data on the part of `∂F̃` that is not on `∂F`.
    pub g_tilde: FluxFn,
}

/// A geometric feature with its Neumann data.
#[derive(Clone)]
pub struct FeatureSpec {
    pub id: usize,
    pub kind: FeatureKind,
    /// Counterclockwise polygon of the feature.
    pub polygon: Vec<Vec2>,
    /// Neumann data on the free boundary.
    pub g: FluxFn,
    /// Neumann data imposed on the shared boundary when the feature is removed.
    pub g0: FluxFn,
    pub extension: Option<Extension>,
}

impl fmt::Debug for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureSpec")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("polygon", &self.polygon)
            .field("extension", &self.extension.as_ref().map(|e| &e.polygon))
            .finish_non_exhaustive()
    }
}

impl FeatureSpec {
    /// Feature with homogeneous data on every part of its boundary.
    pub fn new(id: usize, kind: FeatureKind, polygon: Vec<Vec2>) -> Self {
        Self {
            id,
            kind,
            polygon,
            g: constant_flux(0.0),
            g0: constant_flux(0.0),
            extension: None,
        }
    }

    pub fn with_g(mut self, g: FluxFn) -> Self {
        self.g = g;
        self
    }

    pub fn with_g0(mut self, g0: FluxFn) -> Self {
        self.g0 = g0;
        self
    }

    pub fn with_extension(mut self, polygon: Vec<Vec2>, g_tilde: FluxFn) -> Self {
        self.extension = Some(Extension { polygon, g_tilde });
        self
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.polygon)
    }

    /// Bounding rectangle if the polygon is an axis-aligned rectangle.
    pub fn as_rect(&self) -> Option<Rect> {
        polygon_as_rect(&self.polygon)
    }
}

/// Problem data on the exact domain together with its features.
#[derive(Clone)]
pub struct DomainSpec {
    pub features: Vec<FeatureSpec>,
    pub forcing: ScalarFn,
    pub dirichlet_data: ScalarFn,
    /// Neumann data on the outer boundary (not on any feature).
    pub outer_neumann: FluxFn,
    /// Which points of the unit-square boundary are Dirichlet.
    pub is_dirichlet: PointPredicate,
}

impl fmt::Debug for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DomainSpec")
            .field("features", &self.features)
            .finish_non_exhaustive()
    }
}

impl DomainSpec {
    pub fn feature(&self, id: usize) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.id == id)
    }
}

/// Signed area (positive for counterclockwise loops).
pub fn polygon_area(points: &[Vec2]) -> f64 {
    let n = points.len();
    0.5 * (0..n).map(|i| points[i].cross(points[(i + 1) % n])).sum::<f64>()
}

pub fn polygon_as_rect(points: &[Vec2]) -> Option<Rect> {
    if points.len() != 4 {
        return None;
    }
    let x0 = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let x1 = points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let y0 = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y1 = points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let r = Rect::new(x0, x1, y0, y1);
    let tol = 1e-12 * (1.0 + r.area().abs());
    ((polygon_area(points) - r.area()).abs() <= tol).then_some(r)
}

/// The pieces of a feature boundary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition {
    /// Free boundary; normals point out of the exact domain for negative
    /// features and out of the feature for positive ones.
    pub gamma: Curve,
    /// Boundary shared with the simplified domain; normals point out of the feature.
    pub gamma0: Curve,
    pub gamma_s: Curve,
    pub gamma_r: Curve,
    /// Extension boundary off the feature, normals out of the extension.
    pub gamma_tilde: Curve,
}

fn on_unit_square_side(a: Vec2, b: Vec2) -> bool {
    let tol = ON_LINE_TOLERANCE;
    let in01 = |v: f64| (-tol..=1.0 + tol).contains(&v);
    let on = |u: f64, v: f64| (u.abs() <= tol && v.abs() <= tol) || ((u - 1.0).abs() <= tol && (v - 1.0).abs() <= tol);
    (on(a.x, b.x) && in01(a.y) && in01(b.y)) || (on(a.y, b.y) && in01(a.x) && in01(b.x))
}

/// Splits `seg` into the parts that overlap (collinearly) some segment of
/// `others` and the parts that do not.
fn split_by_overlap(seg: [Vec2; 2], others: &[[Vec2; 2]]) -> (Vec<[Vec2; 2]>, Vec<[Vec2; 2]>) {
    let [a, b] = seg;
    let d = b - a;
    let len2 = d.norm_squared();
    let len = len2.sqrt();
    let mut covered: Vec<(f64, f64)> = Vec::new();
    for &[p, q] in others {
        let on_line = |x: Vec2| d.cross(x - a).abs() <= ON_LINE_TOLERANCE * len.max(1.0) * len.max(1.0);
        if !(on_line(p) && on_line(q)) {
            continue;
        }
        let (tp, tq) = ((p - a).dot(d) / len2, (q - a).dot(d) / len2);
        let (lo, hi) = (tp.min(tq).max(0.0), tp.max(tq).min(1.0));
        if hi - lo > ON_LINE_TOLERANCE {
            covered.push((lo, hi));
        }
    }
    covered.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    let mut t = 0.0;
    for (lo, hi) in covered {
        if lo > t + ON_LINE_TOLERANCE {
            outside.push([a.lerp(b, t), a.lerp(b, lo)]);
        }
        let start = lo.max(t);
        if hi > start + ON_LINE_TOLERANCE {
            inside.push([a.lerp(b, start), a.lerp(b, hi)]);
        }
        t = t.max(hi);
    }
    if t < 1.0 - ON_LINE_TOLERANCE {
        outside.push([a.lerp(b, t), b]);
    }
    (inside, outside)
}

/// Partitions the boundary of a feature of the unit-square domain.
///
/// Without an extension a positive feature has `gamma_s = gamma` and an
/// empty `gamma_r`. Features whose shared boundary touches the Dirichlet
/// boundary are rejected.
pub fn partition_feature_boundary(f: &FeatureSpec, is_dirichlet: &dyn Fn(Vec2) -> bool) -> Result<Partition> {
    if f.polygon.len() < 3 {
        return Err(Error::Geometry(format!("feature {} needs at least three vertices", f.id)));
    }
    if polygon_area(&f.polygon) <= 0.0 {
        return Err(Error::Geometry(format!("feature {} polygon is not counterclockwise", f.id)));
    }
    let loop_ = Curve::closed(&f.polygon);
    let (mut shared, mut free) = (Curve::default(), Curve::default());
    for &[a, b] in &loop_.segments {
        if on_unit_square_side(a, b) {
            shared.segments.push([a, b]);
        } else {
            free.segments.push([a, b]);
        }
    }
    for &[a, b] in &shared.segments {
        if is_dirichlet(a) || is_dirichlet(b) || is_dirichlet(a.lerp(b, 0.5)) {
            return Err(Error::Validation(format!(
                "feature {} touches the Dirichlet boundary",
                f.id
            )));
        }
    }
    let inside = |p: Vec2| p.x > 0.0 && p.x < 1.0 && p.y > 0.0 && p.y < 1.0;
    match f.kind {
        FeatureKind::NegativeInternal => {
            if !shared.is_empty() || !f.polygon.iter().all(|&p| inside(p)) {
                return Err(Error::Geometry(format!(
                    "internal feature {} must lie strictly inside the domain",
                    f.id
                )));
            }
        }
        FeatureKind::NegativeBoundary | FeatureKind::Positive => {
            if shared.is_empty() {
                return Err(Error::Geometry(format!(
                    "boundary feature {} shares no edge with the domain boundary",
                    f.id
                )));
            }
        }
    }

    let mut part = Partition {
        gamma0: shared,
        ..Partition::default()
    };
    match (f.kind, &f.extension) {
        (FeatureKind::Positive, Some(ext)) => {
            if polygon_area(&ext.polygon) <= 0.0 {
                return Err(Error::Geometry(format!("extension of feature {} is not counterclockwise", f.id)));
            }
            let ext_loop = Curve::closed(&ext.polygon);
            for &seg in &part.gamma0.segments {
                let (_, rest) = split_by_overlap(seg, &ext_loop.segments);
                if !rest.is_empty() {
                    return Err(Error::Geometry(format!(
                        "shared boundary of feature {} is not on the extension boundary",
                        f.id
                    )));
                }
            }
            for &seg in &free.segments {
                let (on, off) = split_by_overlap(seg, &ext_loop.segments);
                part.gamma_s.segments.extend(on);
                part.gamma_r.segments.extend(off);
            }
            for &seg in &ext_loop.segments {
                let (_, off) = split_by_overlap(seg, &loop_.segments);
                part.gamma_tilde.segments.extend(off);
            }
            part.gamma = free;
        }
        (FeatureKind::Positive, None) => {
            part.gamma_s = free.clone();
            part.gamma = free;
        }
        (_, _) => {
            // normals of the exact domain point into the removed feature
            part.gamma = free.flipped();
        }
    }
    Ok(part)
}

/// A curve piece lying inside one triangle (or on one of its edges).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClippedSegment {
    pub a: Vec2,
    pub b: Vec2,
    pub triangle: usize,
    pub normal: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveNode {
    pub point: Vec2,
    pub weight: f64,
    pub normal: Vec2,
    pub triangle: usize,
}

/// Gauss–Legendre quadrature on a curve, with every node owned by a triangle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveQuadrature {
    pub segments: Vec<ClippedSegment>,
    pub nodes: Vec<CurveNode>,
}

impl CurveQuadrature {
    pub fn length(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.nodes.iter().zip(values).map(|(n, v)| n.weight * v).sum()
    }
}

/// Default number of Gauss points per clipped sub-segment.
pub const DEFAULT_CURVE_GAUSS_ORDER: usize = 4;

/// Subdivides every segment of `curve` at its crossings with mesh edges and
/// places Gauss–Legendre nodes on the pieces.
pub fn clip_curve_to_mesh(curve: &Curve, mesh: &Mesh, gauss_order: usize) -> Result<CurveQuadrature> {
    let (gx, gw) = gauss_legendre(gauss_order)?;
    let mut out = CurveQuadrature::default();
    let edge_boxes: Vec<(Vec2, Vec2)> = (0..mesh.n_edges())
        .map(|e| {
            let [p, q] = mesh.edge_points(e);
            (Vec2::new(p.x.min(q.x), p.y.min(q.y)), Vec2::new(p.x.max(q.x), p.y.max(q.y)))
        })
        .collect();
    for &[a, b] in &curve.segments {
        let d = b - a;
        let len = d.norm();
        if len == 0.0 {
            continue;
        }
        let normal = d.right_normal().normalized();
        let slack = 1e-12 * (1.0 + len);
        let lo = Vec2::new(a.x.min(b.x) - slack, a.y.min(b.y) - slack);
        let hi = Vec2::new(a.x.max(b.x) + slack, a.y.max(b.y) + slack);
        let mut params = alloc::vec![0.0, 1.0];
        for (e, (elo, ehi)) in edge_boxes.iter().enumerate() {
            if elo.x > hi.x || ehi.x < lo.x || elo.y > hi.y || ehi.y < lo.y {
                continue;
            }
            let [p, q] = mesh.edge_points(e);
            let ev = q - p;
            let denom = d.cross(ev);
            let scale = len * ev.norm();
            if denom.abs() > 1e-14 * scale {
                let t = (p - a).cross(ev) / denom;
                let s = (p - a).cross(d) / denom;
                if (-1e-12..=1.0 + 1e-12).contains(&t) && (-1e-12..=1.0 + 1e-12).contains(&s) {
                    params.push(t.clamp(0.0, 1.0));
                }
            } else if d.cross(p - a).abs() <= 1e-12 * scale {
                // collinear: the edge endpoints split the segment
                for x in [p, q] {
                    let t = (x - a).dot(d) / (len * len);
                    if (0.0..=1.0).contains(&t) {
                        params.push(t);
                    }
                }
            }
        }
        params.sort_by(f64::total_cmp);
        params.dedup_by(|x, y| (*x - *y).abs() <= 1e-12);
        if let Some(last) = params.last_mut() {
            *last = 1.0;
        }
        for w in params.windows(2) {
            let (pa, pb) = (a.lerp(b, w[0]), a.lerp(b, w[1]));
            let mid = pa.lerp(pb, 0.5);
            let (t, _) = mesh.locate_point(mid).ok_or_else(|| {
                Error::Geometry(format!("curve leaves the mesh near ({}, {})", mid.x, mid.y))
            })?;
            let sub_len = pa.distance(pb);
            out.segments.push(ClippedSegment {
                a: pa,
                b: pb,
                triangle: t,
                normal,
            });
            for (x, wt) in gx.iter().zip(&gw) {
                out.nodes.push(CurveNode {
                    point: pa.lerp(pb, *x),
                    weight: wt * sub_len,
                    normal,
                    triangle: t,
                });
            }
        }
    }
    Ok(out)
}

/// Regular polygon with `sides` vertices on the circle of radius `r`,
/// counterclockwise, the first vertex at angle zero.
pub fn regular_polygon(center: Vec2, r: f64, sides: usize) -> Vec<Vec2> {
    (0..sides)
        .map(|k| {
            let th = 2.0 * core::f64::consts::PI * k as f64 / sides as f64;
            center + r * Vec2::new(th.cos(), th.sin())
        })
        .collect()
}
