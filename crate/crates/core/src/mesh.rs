//! Triangle meshes with edge topology, boundary markers and vertex patches.
//!
//! Edges are stored once with their endpoints sorted (`i < j`); the global
//! edge normal is the direction `i → j` rotated by −90°. Every triangle keeps
//! the sign that turns this global normal into its own outward normal.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use crate::{Error, Result, Vec2};

/// Portion of a feature boundary an edge belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "camelCase"))]
pub enum FeaturePart {
    /// Free part of the feature boundary (lies on the exact boundary).
    Gamma,
    /// Part shared with the simplified domain boundary.
    Gamma0,
    /// Free part shared with the boundary of the feature extension.
    GammaS,
    /// Free part strictly inside the feature extension.
    GammaR,
    /// Boundary of the feature extension that is not on the feature.
    GammaTilde,
}

impl FeaturePart {
    pub fn as_str(self) -> &'static str {
        match self {
            FeaturePart::Gamma => "gamma",
            FeaturePart::Gamma0 => "gamma0",
            FeaturePart::GammaS => "gammaS",
            FeaturePart::GammaR => "gammaR",
            FeaturePart::GammaTilde => "gammaTilde",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "gamma" => FeaturePart::Gamma,
            "gamma0" => FeaturePart::Gamma0,
            "gammaS" => FeaturePart::GammaS,
            "gammaR" => FeaturePart::GammaR,
            "gammaTilde" => FeaturePart::GammaTilde,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BoundaryMarker {
    Dirichlet,
    NeumannOuter,
    Feature { feature_id: usize, part: FeaturePart },
}

impl BoundaryMarker {
    pub fn feature(feature_id: usize, part: FeaturePart) -> Self {
        BoundaryMarker::Feature { feature_id, part }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Endpoints with `vertices[0] < vertices[1]`.
    pub vertices: [usize; 2],
    /// Triangle on the left of `vertices[0] → vertices[1]`.
    pub left: Option<usize>,
    /// Triangle on the right, if any.
    pub right: Option<usize>,
    pub marker: Option<BoundaryMarker>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.left.is_none() || self.right.is_none()
    }

    /// The (first) incident triangle.
    pub fn any_triangle(&self) -> usize {
        self.left.or(self.right).expect("edge without triangles")
    }
}

/// Uniform bucket grid over the mesh bounding box for point location.
#[derive(Debug, Clone)]
struct BucketGrid {
    origin: Vec2,
    cell: Vec2,
    nx: usize,
    ny: usize,
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl BucketGrid {
    fn build(vertices: &[Vec2], triangles: &[[usize; 3]]) -> Self {
        let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for v in vertices {
            lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        if vertices.is_empty() {
            lo = Vec2::ZERO;
            hi = Vec2::new(1.0, 1.0);
        }
        let ext = hi - lo;
        let pad = 1e-9 * ext.x.max(ext.y).max(1e-300);
        lo = lo - Vec2::new(pad, pad);
        let ext = Vec2::new(ext.x + 2.0 * pad, ext.y + 2.0 * pad);
        let target = (triangles.len().max(1) as f64).sqrt().ceil();
        let aspect = (ext.x / ext.y).clamp(1e-3, 1e3);
        let nx = ((target * aspect.sqrt()).ceil() as usize).clamp(1, 4096);
        let ny = ((target / aspect.sqrt()).ceil() as usize).clamp(1, 4096);
        let cell = Vec2::new(ext.x / nx as f64, ext.y / ny as f64);

        let mut grid = Self {
            origin: lo,
            cell,
            nx,
            ny,
            offsets: vec![0; nx * ny + 1],
            items: Vec::new(),
        };
        let ranges: Vec<(usize, usize, usize, usize)> = triangles
            .iter()
            .map(|tri| {
                let (mut a, mut b) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
                for &v in tri {
                    let p = vertices[v];
                    a = Vec2::new(a.x.min(p.x), a.y.min(p.y));
                    b = Vec2::new(b.x.max(p.x), b.y.max(p.y));
                }
                let slack = 1e-10 * ((b - a).norm() + 1e-300);
                let (i0, j0) = grid.cell_of(a - Vec2::new(slack, slack));
                let (i1, j1) = grid.cell_of(b + Vec2::new(slack, slack));
                (i0, i1, j0, j1)
            })
            .collect();
        for &(i0, i1, j0, j1) in &ranges {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    grid.offsets[j * nx + i + 1] += 1;
                }
            }
        }
        for k in 0..nx * ny {
            grid.offsets[k + 1] += grid.offsets[k];
        }
        let mut fill = grid.offsets.clone();
        grid.items = vec![0; grid.offsets[nx * ny]];
        // ascending triangle order inside every bucket
        for (t, &(i0, i1, j0, j1)) in ranges.iter().enumerate() {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let k = j * nx + i;
                    grid.items[fill[k]] = t;
                    fill[k] += 1;
                }
            }
        }
        grid
    }

    fn cell_of(&self, p: Vec2) -> (usize, usize) {
        let fx = ((p.x - self.origin.x) / self.cell.x).floor();
        let fy = ((p.y - self.origin.y) / self.cell.y).floor();
        let i = if fx.is_nan() { 0.0 } else { fx.clamp(0.0, (self.nx - 1) as f64) } as usize;
        let j = if fy.is_nan() { 0.0 } else { fy.clamp(0.0, (self.ny - 1) as f64) } as usize;
        (i, j)
    }

    fn candidates(&self, p: Vec2) -> Option<&[usize]> {
        let fx = (p.x - self.origin.x) / self.cell.x;
        let fy = (p.y - self.origin.y) / self.cell.y;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= self.nx as f64 && fy <= self.ny as f64) {
            return None;
        }
        let (i, j) = self.cell_of(p);
        let k = j * self.nx + i;
        Some(&self.items[self.offsets[k]..self.offsets[k + 1]])
    }
}

/// Snap tolerance on barycentric coordinates for [`Mesh::locate_point`].
pub const LOCATE_TOLERANCE: f64 = 1e-12;

/// Immutable triangle mesh with edge topology.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Vec2>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    triangle_edges: Vec<[usize; 3]>,
    triangle_edge_signs: Vec<[f64; 3]>,
    vertex_tri_offsets: Vec<usize>,
    vertex_tris: Vec<usize>,
    locator: BucketGrid,
}

impl Mesh {
    /// Builds and validates a mesh from vertices, counterclockwise triangles and
    /// a list of marked edges.
    ///
    /// Every boundary edge must be marked. Interior edges may only carry
    /// feature markers (used to tag interfaces of included positive features).
    pub fn new(
        vertices: Vec<Vec2>,
        triangles: Vec<[usize; 3]>,
        markers: &[([usize; 2], BoundaryMarker)],
    ) -> Result<Self> {
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&v) = tri.iter().find(|&&v| v >= nv) {
                return Err(Error::Validation(format!("triangle {t} references missing vertex {v}")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Validation(format!("triangle {t} has repeated vertices")));
            }
            let [a, b, c] = tri.map(|v| vertices[v]);
            let area2 = (b - a).cross(c - a);
            if !(area2 > 0.0) {
                return Err(Error::Validation(format!(
                    "triangle {t} is not counterclockwise (signed area {:e})",
                    0.5 * area2
                )));
            }
        }

        // (lo, hi, triangle, local edge, triangle lies on the left of lo → hi)
        let mut half: Vec<(usize, usize, usize, usize, bool)> = Vec::with_capacity(3 * triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (p, q) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                half.push((p.min(q), p.max(q), t, k, p < q));
            }
        }
        half.sort_unstable();

        let mut edges: Vec<Edge> = Vec::new();
        let mut triangle_edges = vec![[usize::MAX; 3]; triangles.len()];
        let mut triangle_edge_signs = vec![[0.0; 3]; triangles.len()];
        let mut idx = 0;
        while idx < half.len() {
            let (lo, hi) = (half[idx].0, half[idx].1);
            let mut end = idx;
            while end < half.len() && half[end].0 == lo && half[end].1 == hi {
                end += 1;
            }
            if end - idx > 2 {
                return Err(Error::Validation(format!("edge ({lo}, {hi}) is shared by more than two triangles")));
            }
            let e = edges.len();
            let mut edge = Edge {
                vertices: [lo, hi],
                left: None,
                right: None,
                marker: None,
            };
            for &(_, _, t, k, is_left) in &half[idx..end] {
                let slot = if is_left { &mut edge.left } else { &mut edge.right };
                if slot.is_some() {
                    return Err(Error::Validation(format!(
                        "edge ({lo}, {hi}) is traversed in the same direction by two triangles"
                    )));
                }
                *slot = Some(t);
                triangle_edges[t][k] = e;
                triangle_edge_signs[t][k] = if is_left { 1.0 } else { -1.0 };
            }
            edges.push(edge);
            idx = end;
        }

        for &([a, b], marker) in markers {
            let key = [a.min(b), a.max(b)];
            let e = edges
                .binary_search_by(|edge| edge.vertices.cmp(&key))
                .map_err(|_| Error::Validation(format!("marked edge ({a}, {b}) is not a mesh edge")))?;
            if edges[e].marker.is_some() {
                return Err(Error::Validation(format!("edge ({a}, {b}) is marked twice")));
            }
            if !edges[e].is_boundary() && !matches!(marker, BoundaryMarker::Feature { .. }) {
                return Err(Error::Validation(format!(
                    "interior edge ({a}, {b}) carries a boundary marker"
                )));
            }
            edges[e].marker = Some(marker);
        }
        if let Some(edge) = edges.iter().find(|e| e.is_boundary() && e.marker.is_none()) {
            return Err(Error::Validation(format!(
                "unmarked boundary edge ({}, {})",
                edge.vertices[0], edge.vertices[1]
            )));
        }

        let mut vertex_tri_offsets = vec![0usize; nv + 1];
        for tri in &triangles {
            for &v in tri {
                vertex_tri_offsets[v + 1] += 1;
            }
        }
        for v in 0..nv {
            vertex_tri_offsets[v + 1] += vertex_tri_offsets[v];
        }
        let mut fill = vertex_tri_offsets.clone();
        let mut vertex_tris = vec![0; vertex_tri_offsets[nv]];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_tris[fill[v]] = t;
                fill[v] += 1;
            }
        }

        let locator = BucketGrid::build(&vertices, &triangles);
        Ok(Self {
            vertices,
            triangles,
            edges,
            triangle_edges,
            triangle_edge_signs,
            vertex_tri_offsets,
            vertex_tris,
            locator,
        })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Vec2 {
        self.vertices[v]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Global edge indices, local edge `k` being opposite local vertex `k`.
    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.triangle_edges[t]
    }

    /// `+1` where the global edge normal points out of triangle `t`.
    pub fn triangle_edge_signs(&self, t: usize) -> [f64; 3] {
        self.triangle_edge_signs[t]
    }

    pub fn triangle_points(&self, t: usize) -> [Vec2; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        0.5 * (b - a).cross(c - a)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> Vec2 {
        let [a, b, c] = self.triangle_points(t);
        Vec2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    /// Longest edge of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        a.distance(b).max(b.distance(c)).max(c.distance(a))
    }

    /// Mesh size `h = max_K diam(K)`.
    pub fn h(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.diameter(t)).fold(0.0, f64::max)
    }

    pub fn edge_points(&self, e: usize) -> [Vec2; 2] {
        self.edges[e].vertices.map(|v| self.vertices[v])
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edge_points(e);
        a.distance(b)
    }

    pub fn edge_midpoint(&self, e: usize) -> Vec2 {
        let [a, b] = self.edge_points(e);
        a.lerp(b, 0.5)
    }

    /// Global unit normal of edge `e`.
    pub fn edge_normal(&self, e: usize) -> Vec2 {
        let [a, b] = self.edge_points(e);
        (b - a).right_normal().normalized()
    }

    /// Outward unit normal of a boundary edge.
    pub fn boundary_normal(&self, e: usize) -> Vec2 {
        let n = self.edge_normal(e);
        if self.edges[e].left.is_some() {
            n
        } else {
            -n
        }
    }

    pub fn vertex_triangles(&self, v: usize) -> &[usize] {
        &self.vertex_tris[self.vertex_tri_offsets[v]..self.vertex_tri_offsets[v + 1]]
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len()).filter(move |&e| self.edges[e].is_boundary())
    }

    /// All marked edges (boundary edges and tagged interfaces) with their marker.
    pub fn marked_edges(&self) -> impl Iterator<Item = (usize, BoundaryMarker)> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter_map(|(e, edge)| edge.marker.map(|m| (e, m)))
    }

    /// `V − E + T`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.triangles.len() as i64
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: Vec2) -> [f64; 3] {
        let [a, b, c] = self.triangle_points(t);
        let area2 = (b - a).cross(c - a);
        let l0 = (b - p).cross(c - p) / area2;
        let l1 = (c - p).cross(a - p) / area2;
        let l2 = (a - p).cross(b - p) / area2;
        [l0, l1, l2]
    }

    /// Finds the triangle containing `p` (within the snap tolerance).
    ///
    /// Points on shared edges or vertices resolve to the lowest triangle index.
    pub fn locate_point(&self, p: Vec2) -> Option<(usize, [f64; 3])> {
        let candidates = self.locator.candidates(p)?;
        candidates.iter().find_map(|&t| {
            let l = self.barycentric(t, p);
            let inside = l
                .iter()
                .all(|&li| (-LOCATE_TOLERANCE..=1.0 + LOCATE_TOLERANCE).contains(&li));
            inside.then_some((t, l))
        })
    }

    /// Vertex within `tol` of `p`, if any.
    pub fn find_vertex(&self, p: Vec2, tol: f64) -> Option<usize> {
        let (t, _) = self.locate_point(p)?;
        self.triangles[t]
            .iter()
            .copied()
            .find(|&v| self.vertices[v].distance(p) <= tol)
    }
}

/// Patch of the triangles sharing one vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexPatch {
    pub vertex: usize,
    pub triangles: Vec<usize>,
    /// Patch boundary edges opposite the vertex (hat function vanishes there).
    pub boundary_edges_zero: Vec<usize>,
    /// Mesh boundary edges incident to the vertex.
    pub boundary_edges_psi: Vec<usize>,
    pub is_interior: bool,
}

impl Mesh {
    pub fn vertex_patch(&self, a: usize) -> VertexPatch {
        let triangles = self.vertex_triangles(a).to_vec();
        let mut zero = Vec::with_capacity(triangles.len());
        let mut psi = Vec::new();
        for &t in &triangles {
            let local = self.triangles[t].iter().position(|&v| v == a).unwrap();
            for k in 0..3 {
                let e = self.triangle_edges[t][k];
                if k == local {
                    zero.push(e);
                } else if self.edges[e].is_boundary() && !psi.contains(&e) {
                    psi.push(e);
                }
            }
        }
        psi.sort_unstable();
        VertexPatch {
            vertex: a,
            triangles,
            boundary_edges_zero: zero,
            is_interior: psi.is_empty(),
            boundary_edges_psi: psi,
        }
    }

    pub fn vertex_patches(&self) -> Vec<VertexPatch> {
        (0..self.n_vertices()).map(|a| self.vertex_patch(a)).collect()
    }
}

/// Splits every triangle into four through its edge midpoints.
///
/// New vertices are appended in edge order; markers are inherited by both halves.
pub fn uniform_refine(mesh: &Mesh) -> Result<Mesh> {
    let nv = mesh.n_vertices();
    let mut vertices = mesh.vertices.clone();
    vertices.extend((0..mesh.n_edges()).map(|e| mesh.edge_midpoint(e)));
    let mut triangles = Vec::with_capacity(4 * mesh.n_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let te = mesh.triangle_edges[t];
        // local edge k is opposite vertex k
        let m = [nv + te[0], nv + te[1], nv + te[2]];
        let [a, b, c] = *tri;
        triangles.push([a, m[2], m[1]]);
        triangles.push([m[2], b, m[0]]);
        triangles.push([m[1], m[0], c]);
        triangles.push([m[2], m[0], m[1]]);
    }
    let mut markers = Vec::new();
    for (e, marker) in mesh.marked_edges() {
        let [a, b] = mesh.edges[e].vertices;
        markers.push(([a, nv + e], marker));
        markers.push(([nv + e, b], marker));
    }
    Mesh::new(vertices, triangles, &markers)
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// Counterclockwise corner loop starting at the lower-left corner.
    pub fn corners(&self) -> [Vec2; 4] {
        [
            Vec2::new(self.x0, self.y0),
            Vec2::new(self.x1, self.y0),
            Vec2::new(self.x1, self.y1),
            Vec2::new(self.x0, self.y1),
        ]
    }
}

/// A rectangular feature for the structured generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectFeature {
    pub id: usize,
    pub rect: Rect,
    /// Positive features add material outside the unit square; negative ones remove it.
    pub positive: bool,
    /// Whether the feature is part of the meshed geometry.
    pub include: bool,
}

/// Rectangle in integer lattice coordinates.
#[derive(Debug, Clone, Copy)]
struct IRect {
    i0: i64,
    i1: i64,
    j0: i64,
    j1: i64,
}

impl IRect {
    fn contains_cell(&self, ci: i64, cj: i64) -> bool {
        ci >= self.i0 && ci < self.i1 && cj >= self.j0 && cj < self.j1
    }

    /// Whether the doubled-coordinate point lies on the rectangle perimeter.
    fn on_perimeter2(&self, x2: i64, y2: i64) -> bool {
        let inside_x = x2 >= 2 * self.i0 && x2 <= 2 * self.i1;
        let inside_y = y2 >= 2 * self.j0 && y2 <= 2 * self.j1;
        ((x2 == 2 * self.i0 || x2 == 2 * self.i1) && inside_y) || ((y2 == 2 * self.j0 || y2 == 2 * self.j1) && inside_x)
    }

    fn interiors_overlap(&self, o: &IRect) -> bool {
        self.i0 < o.i1 && o.i0 < self.i1 && self.j0 < o.j1 && o.j0 < self.j1
    }
}

fn snap(v: f64, n: usize, id: usize) -> Result<i64> {
    let s = v * n as f64;
    let r = s.round();
    if (s - r).abs() > 1e-9 * (1.0 + s.abs()) {
        return Err(Error::Geometry(format!(
            "feature {id} is not aligned with the {n}x{n} grid (coordinate {v})"
        )));
    }
    Ok(r as i64)
}

fn snap_rect(r: &Rect, n: usize, id: usize) -> Result<IRect> {
    let ir = IRect {
        i0: snap(r.x0, n, id)?,
        i1: snap(r.x1, n, id)?,
        j0: snap(r.y0, n, id)?,
        j1: snap(r.y1, n, id)?,
    };
    if ir.i1 <= ir.i0 || ir.j1 <= ir.j0 {
        return Err(Error::Geometry(format!("feature {id} has an empty rectangle")));
    }
    Ok(ir)
}

/// Which side(s) of the feature rectangle lie on the unit-square boundary,
/// as a doubled-coordinate membership test.
fn on_square_side2(r: &IRect, n: i64, x2: i64, y2: i64) -> bool {
    let n2 = 2 * n;
    let on_side = |coord2: i64, side: i64| coord2 == 2 * side && (side == 0 || side == n);
    let within_x = x2 >= 2 * r.i0 && x2 <= 2 * r.i1;
    let within_y = y2 >= 2 * r.j0 && y2 <= 2 * r.j1;
    let _ = n2;
    (within_x && (on_side(y2, r.j0) || on_side(y2, r.j1)) && (y2 == 0 || y2 == 2 * n))
        || (within_y && (on_side(x2, r.i0) || on_side(x2, r.i1)) && (x2 == 0 || x2 == 2 * n))
}

fn classify_feature(f: &RectFeature, r: &IRect, n: i64) -> Result<()> {
    if f.positive {
        let outside = r.i1 <= 0 || r.i0 >= n || r.j1 <= 0 || r.j0 >= n;
        let touches = (r.j1 == 0 || r.j0 == n) && r.i0 >= 0 && r.i1 <= n
            || (r.i1 == 0 || r.i0 == n) && r.j0 >= 0 && r.j1 <= n;
        if !outside || !touches {
            return Err(Error::Geometry(format!(
                "positive feature {} must lie outside the unit square and share a side with it",
                f.id
            )));
        }
    } else if r.i0 < 0 || r.j0 < 0 || r.i1 > n || r.j1 > n {
        return Err(Error::Geometry(format!(
            "negative feature {} must lie inside the unit square",
            f.id
        )));
    }
    Ok(())
}

/// Structured mesh of the unit square: `n × n` cells, each split along the
/// diagonal from its lower-left to its upper-right corner.
///
/// Boundary edges are marked Dirichlet where `dirichlet(midpoint)` holds and
/// `NeumannOuter` elsewhere.
pub fn generate_unit_square(n: usize, dirichlet: &dyn Fn(Vec2) -> bool) -> Mesh {
    generate_with_rect_features(n, &[], dirichlet).expect("plain unit square is always valid")
}

/// Structured mesh of the unit square with rectangular features.
///
/// Included negative features remove their cells and mark the new boundary
/// `gamma`; included positive features append cells outside the square, mark
/// their free sides `gamma` and tag the (interior) interface edges `gamma0`.
/// For excluded features the cells are untouched and the edges of the feature
/// side lying on the square boundary are marked `gamma0`.
pub fn generate_with_rect_features(
    n: usize,
    features: &[RectFeature],
    dirichlet: &dyn Fn(Vec2) -> bool,
) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidArgument("grid resolution must be at least 1".into()));
    }
    let ni = n as i64;
    let rects: Vec<IRect> = features
        .iter()
        .map(|f| snap_rect(&f.rect, n, f.id))
        .collect::<Result<_>>()?;
    for (f, r) in features.iter().zip(&rects) {
        classify_feature(f, r, ni)?;
    }
    for a in 0..features.len() {
        for b in (a + 1)..features.len() {
            if rects[a].interiors_overlap(&rects[b]) {
                return Err(Error::Geometry(format!(
                    "features {} and {} overlap",
                    features[a].id, features[b].id
                )));
            }
        }
    }

    let (mut ilo, mut ihi, mut jlo, mut jhi) = (0i64, ni, 0i64, ni);
    for (f, r) in features.iter().zip(&rects) {
        if f.positive && f.include {
            ilo = ilo.min(r.i0);
            ihi = ihi.max(r.i1);
            jlo = jlo.min(r.j0);
            jhi = jhi.max(r.j1);
        }
    }
    let material = |ci: i64, cj: i64| -> bool {
        let in_square = ci >= 0 && ci < ni && cj >= 0 && cj < ni;
        if in_square {
            !features
                .iter()
                .zip(&rects)
                .any(|(f, r)| !f.positive && f.include && r.contains_cell(ci, cj))
        } else {
            features
                .iter()
                .zip(&rects)
                .any(|(f, r)| f.positive && f.include && r.contains_cell(ci, cj))
        }
    };
    build_lattice_mesh(n, (ilo, ihi, jlo, jhi), &material, &|x2, y2, interior| {
        // returns the marker of an edge given its doubled-coordinate midpoint
        for (f, r) in features.iter().zip(&rects) {
            if !r.on_perimeter2(x2, y2) {
                continue;
            }
            let on_square = on_square_side2(r, ni, x2, y2);
            if f.include {
                if interior {
                    if f.positive && on_square {
                        return Some(BoundaryMarker::feature(f.id, FeaturePart::Gamma0));
                    }
                } else if !on_square {
                    return Some(BoundaryMarker::feature(f.id, FeaturePart::Gamma));
                }
            } else if on_square && !interior {
                return Some(BoundaryMarker::feature(f.id, FeaturePart::Gamma0));
            }
        }
        if interior {
            return None;
        }
        let m = Vec2::new(x2 as f64 / (2 * n) as f64, y2 as f64 / (2 * n) as f64);
        Some(if dirichlet(m) {
            BoundaryMarker::Dirichlet
        } else {
            BoundaryMarker::NeumannOuter
        })
    })
}

/// Structured mesh of a positive feature (or of its rectangular extension)
/// on the same lattice as [`generate_with_rect_features`].
///
/// The feature side on the unit-square boundary is marked `gamma0`; the rest
/// of the feature boundary is `gamma` without extension and `gammaS` with
/// one; extension boundary off the feature is `gammaTilde`. Free feature
/// sides inside the extension are tagged `gammaR` as interior edges.
pub fn generate_feature_mesh(n: usize, feature: &RectFeature, extension: Option<Rect>) -> Result<Mesh> {
    if !feature.positive {
        return Err(Error::Geometry(format!("feature {} is not positive", feature.id)));
    }
    let ni = n as i64;
    let r = snap_rect(&feature.rect, n, feature.id)?;
    classify_feature(feature, &r, ni)?;
    let ext = match extension {
        Some(e) => {
            let er = snap_rect(&e, n, feature.id)?;
            if er.i0 > r.i0 || er.i1 < r.i1 || er.j0 > r.j0 || er.j1 < r.j1 {
                return Err(Error::Geometry(format!(
                    "extension of feature {} does not contain the feature",
                    feature.id
                )));
            }
            let square = IRect { i0: 0, i1: ni, j0: 0, j1: ni };
            if er.interiors_overlap(&square) {
                return Err(Error::Geometry(format!(
                    "extension of feature {} overlaps the simplified domain",
                    feature.id
                )));
            }
            Some(er)
        }
        None => None,
    };
    let dom = ext.unwrap_or(r);
    let part_free = if ext.is_some() { FeaturePart::GammaS } else { FeaturePart::Gamma };
    build_lattice_mesh(
        n,
        (dom.i0, dom.i1, dom.j0, dom.j1),
        &|ci, cj| dom.contains_cell(ci, cj),
        &|x2, y2, interior| {
            if interior {
                let free = r.on_perimeter2(x2, y2) && !on_square_side2(&r, ni, x2, y2);
                return free.then_some(BoundaryMarker::feature(feature.id, FeaturePart::GammaR));
            }
            let part = if r.on_perimeter2(x2, y2) {
                if on_square_side2(&r, ni, x2, y2) {
                    FeaturePart::Gamma0
                } else {
                    part_free
                }
            } else {
                FeaturePart::GammaTilde
            };
            Some(BoundaryMarker::feature(feature.id, part))
        },
    )
}

/// Common lattice mesher: cells `[ci, ci+1] × [cj, cj+1]` (lattice units)
/// inside the bounds for which `material` holds, split along the rising
/// diagonal. `marker(2x, 2y, interior)` labels edges by doubled midpoint.
fn build_lattice_mesh(
    n: usize,
    bounds: (i64, i64, i64, i64),
    material: &dyn Fn(i64, i64) -> bool,
    marker: &dyn Fn(i64, i64, bool) -> Option<BoundaryMarker>,
) -> Result<Mesh> {
    let (ilo, ihi, jlo, jhi) = bounds;
    let w = (ihi - ilo + 1) as usize;
    let h = (jhi - jlo + 1) as usize;
    let mut used = vec![false; w * h];
    let vid = |i: i64, j: i64| ((j - jlo) as usize) * w + (i - ilo) as usize;
    for cj in jlo..jhi {
        for ci in ilo..ihi {
            if material(ci, cj) {
                for (di, dj) in [(0, 0), (1, 0), (1, 1), (0, 1)] {
                    used[vid(ci + di, cj + dj)] = true;
                }
            }
        }
    }
    let mut index = vec![usize::MAX; w * h];
    let mut vertices = Vec::new();
    let nf = n as f64;
    for j in jlo..=jhi {
        for i in ilo..=ihi {
            if used[vid(i, j)] {
                index[vid(i, j)] = vertices.len();
                vertices.push(Vec2::new(i as f64 / nf, j as f64 / nf));
            }
        }
    }
    let mut triangles = Vec::new();
    for cj in jlo..jhi {
        for ci in ilo..ihi {
            if material(ci, cj) {
                let v00 = index[vid(ci, cj)];
                let v10 = index[vid(ci + 1, cj)];
                let v11 = index[vid(ci + 1, cj + 1)];
                let v01 = index[vid(ci, cj + 1)];
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
    }
    // lattice coordinates of every vertex, for exact midpoints
    let mut lattice = vec![(0i64, 0i64); vertices.len()];
    for j in jlo..=jhi {
        for i in ilo..=ihi {
            let k = index[vid(i, j)];
            if k != usize::MAX {
                lattice[k] = (i, j);
            }
        }
    }
    // edge incidence counts
    let mut half: Vec<(usize, usize)> = Vec::with_capacity(3 * triangles.len());
    for tri in &triangles {
        for k in 0..3 {
            let (p, q) = (tri[k], tri[(k + 1) % 3]);
            half.push((p.min(q), p.max(q)));
        }
    }
    half.sort_unstable();
    let mut markers = Vec::new();
    let mut idx = 0;
    while idx < half.len() {
        let mut end = idx + 1;
        while end < half.len() && half[end] == half[idx] {
            end += 1;
        }
        let (a, b) = half[idx];
        let interior = end - idx == 2;
        let (x2, y2) = (lattice[a].0 + lattice[b].0, lattice[a].1 + lattice[b].1);
        if let Some(m) = marker(x2, y2, interior) {
            markers.push(([a, b], m));
        }
        idx = end;
    }
    Mesh::new(vertices, triangles, &markers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn no_dirichlet(_: Vec2) -> bool {
        false
    }

    fn left_right(p: Vec2) -> bool {
        p.x.abs() < 1e-12 || (p.x - 1.0).abs() < 1e-12
    }

    fn count_markers(m: &Mesh, target: BoundaryMarker) -> usize {
        m.marked_edges().filter(|(_, mk)| *mk == target).count()
    }

    #[test]
    fn single_cell_square() {
        let m = generate_unit_square(1, &no_dirichlet);
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.boundary_edges().count(), 4);
        assert!((m.h() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_euler() {
        let m = generate_unit_square(2, &no_dirichlet);
        assert_eq!((m.n_vertices(), m.n_edges(), m.n_triangles()), (9, 16, 8));
        assert_eq!(m.euler_characteristic(), 1);
    }

    #[test]
    fn dirichlet_classifier_marks_sides() {
        let m = generate_unit_square(4, &left_right);
        assert_eq!(count_markers(&m, BoundaryMarker::Dirichlet), 8);
        assert_eq!(count_markers(&m, BoundaryMarker::NeumannOuter), 8);
    }

    fn notch(eps: f64, include: bool) -> RectFeature {
        RectFeature {
            id: 1,
            rect: Rect::new((1.0 - eps) / 2.0, (1.0 + eps) / 2.0, 1.0 - eps, 1.0),
            positive: false,
            include,
        }
    }

    fn bump(eps: f64, include: bool) -> RectFeature {
        RectFeature {
            id: 2,
            rect: Rect::new((1.0 - eps) / 2.0, (1.0 + eps) / 2.0, -eps, 0.0),
            positive: true,
            include,
        }
    }

    #[test]
    fn included_notch_removes_cells() {
        let m = generate_with_rect_features(10, &[notch(0.2, true)], &left_right).unwrap();
        assert_eq!(m.n_triangles(), 192);
        assert!((m.total_area() - (1.0 - 0.04)).abs() < 1e-12);
        // left, bottom and right sides of the notch: 2 + 2 + 2 edges
        assert_eq!(count_markers(&m, BoundaryMarker::feature(1, FeaturePart::Gamma)), 6);
        assert_eq!(count_markers(&m, BoundaryMarker::feature(1, FeaturePart::Gamma0)), 0);
        assert_eq!(m.euler_characteristic(), 1);
    }

    #[test]
    fn included_bump_appends_cells() {
        let m = generate_with_rect_features(10, &[bump(0.2, true)], &left_right).unwrap();
        assert_eq!(m.n_triangles(), 208);
        assert_eq!(count_markers(&m, BoundaryMarker::feature(2, FeaturePart::Gamma0)), 2);
        assert_eq!(count_markers(&m, BoundaryMarker::feature(2, FeaturePart::Gamma)), 6);
        assert!((m.total_area() - 1.04).abs() < 1e-12);
    }

    #[test]
    fn excluded_features_keep_the_square() {
        let plain = generate_unit_square(10, &left_right);
        for f in [notch(0.2, false), bump(0.2, false)] {
            let m = generate_with_rect_features(10, &[f], &left_right).unwrap();
            assert_eq!(m.vertices(), plain.vertices());
            assert_eq!(m.triangles(), plain.triangles());
            // the feature side on the square boundary becomes gamma0
            assert_eq!(count_markers(&m, BoundaryMarker::feature(f.id, FeaturePart::Gamma0)), 2);
        }
    }

    #[test]
    fn internal_hole_has_euler_zero() {
        let hole = RectFeature {
            id: 3,
            rect: Rect::new(0.25, 0.75, 0.25, 0.75),
            positive: false,
            include: true,
        };
        let m = generate_with_rect_features(4, &[hole], &no_dirichlet).unwrap();
        assert_eq!(m.euler_characteristic(), 0);
        assert!((m.total_area() - 0.75).abs() < 1e-12);
        assert_eq!(count_markers(&m, BoundaryMarker::feature(3, FeaturePart::Gamma)), 8);
    }

    #[test]
    fn misaligned_and_overlapping_features_are_rejected() {
        assert!(matches!(
            generate_with_rect_features(10, &[notch(0.25, true)], &left_right),
            Err(Error::Geometry(_))
        ));
        let a = RectFeature { id: 1, rect: Rect::new(0.2, 0.5, 0.2, 0.5), positive: false, include: true };
        let b = RectFeature { id: 2, rect: Rect::new(0.4, 0.6, 0.4, 0.6), positive: false, include: false };
        assert!(matches!(generate_with_rect_features(10, &[a, b], &left_right), Err(Error::Geometry(_))));
    }

    #[test]
    fn feature_mesh_matches_interface() {
        let f = bump(0.2, false);
        let fm = generate_feature_mesh(10, &f, None).unwrap();
        assert_eq!(fm.n_triangles(), 8);
        assert_eq!(count_markers(&fm, BoundaryMarker::feature(2, FeaturePart::Gamma0)), 2);
        assert_eq!(count_markers(&fm, BoundaryMarker::feature(2, FeaturePart::Gamma)), 6);
        let om = generate_with_rect_features(10, &[f], &left_right).unwrap();
        for (e, m) in fm.marked_edges() {
            if m == BoundaryMarker::feature(2, FeaturePart::Gamma0) {
                for v in fm.edge(e).vertices {
                    assert!(om.find_vertex(fm.vertex(v), 1e-12).is_some());
                }
            }
        }
    }

    #[test]
    fn extended_feature_mesh_partitions_boundary() {
        let f = bump(0.2, false);
        let fm = generate_feature_mesh(10, &f, Some(Rect::new(0.3, 0.7, -0.3, 0.0))).unwrap();
        let count = |p| count_markers(&fm, BoundaryMarker::feature(2, p));
        assert_eq!(count(FeaturePart::Gamma0), 2);
        assert_eq!(count(FeaturePart::GammaS), 0);
        assert_eq!(count(FeaturePart::GammaTilde), 4 + 4 + 3 + 3 - 2);
        // the free sides of the bump are interior to the extension
        assert_eq!(count(FeaturePart::GammaR), 6);
    }

    #[test]
    fn clockwise_triangle_is_named() {
        let v = alloc::vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let err = Mesh::new(v, alloc::vec![[0, 2, 1]], &[]).unwrap_err();
        assert!(matches!(err, Error::Validation(ref s) if s.contains("triangle 0")));
    }

    #[test]
    fn missing_marker_is_reported() {
        let v = alloc::vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let marks = [([0, 1], BoundaryMarker::Dirichlet), ([1, 2], BoundaryMarker::Dirichlet)];
        let err = Mesh::new(v, alloc::vec![[0, 1, 2]], &marks).unwrap_err();
        assert!(matches!(err, Error::Validation(ref s) if s.contains("unmarked boundary edge")));
    }

    #[test]
    fn interior_vertex_patch() {
        let m = generate_unit_square(4, &no_dirichlet);
        let a = 2 * 5 + 2;
        let p = m.vertex_patch(a);
        assert_eq!(p.triangles.len(), 6);
        assert_eq!(p.boundary_edges_zero.len(), 6);
        assert!(p.boundary_edges_psi.is_empty());
        assert!(p.is_interior);
    }

    #[test]
    fn corner_and_side_patches() {
        let m = generate_unit_square(2, &no_dirichlet);
        let corner = m.vertex_patch(0);
        assert_eq!(corner.triangles.len(), 2);
        assert_eq!(corner.boundary_edges_psi.len(), 2);
        assert!(!corner.is_interior);
        let side = m.vertex_patch(1);
        assert_eq!(side.boundary_edges_psi.len(), 2);
    }

    #[test]
    fn patches_cover_each_triangle_three_times() {
        let m = generate_with_rect_features(6, &[notch(1.0 / 3.0, true)], &left_right).unwrap();
        let mut count = alloc::vec![0; m.n_triangles()];
        for p in m.vertex_patches() {
            for t in p.triangles {
                count[t] += 1;
            }
        }
        assert!(count.iter().all(|&c| c == 3));
    }

    #[test]
    fn locate_on_the_diagonal_prefers_lowest_index() {
        let m = generate_unit_square(1, &no_dirichlet);
        let (t, l) = m.locate_point(Vec2::new(0.25, 0.25)).unwrap();
        assert_eq!(t, 0);
        let expected = [0.75, 0.0, 0.25];
        for k in 0..3 {
            assert!((l[k] - expected[k]).abs() < 1e-15, "{l:?}");
        }
        let (t, l) = m.locate_point(Vec2::new(0.25, 0.125)).unwrap();
        assert_eq!(t, 0);
        assert!((l[0] - 0.75).abs() < 1e-15 && (l[1] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn locate_vertex_and_outside() {
        let m = generate_unit_square(3, &no_dirichlet);
        let (_, l) = m.locate_point(m.vertex(5)).unwrap();
        assert!(l.iter().any(|&li| (li - 1.0).abs() < 1e-12));
        assert!(m.locate_point(Vec2::new(2.0, 2.0)).is_none());
    }

    #[test]
    fn refinement_counts() {
        let m = generate_unit_square(1, &no_dirichlet);
        let r = uniform_refine(&m).unwrap();
        assert_eq!(r.n_triangles(), 8);
        assert_eq!(r.n_vertices(), 9);
        assert_eq!(r.boundary_edges().count(), 8);
    }

    fn triangle_key(m: &Mesh, t: usize) -> Vec<(i64, i64)> {
        let mut k: Vec<(i64, i64)> = m
            .triangle_points(t)
            .iter()
            .map(|p| ((p.x * 1024.0).round() as i64, (p.y * 1024.0).round() as i64))
            .collect();
        k.sort_unstable();
        k
    }

    #[test]
    fn refining_twice_reproduces_the_finer_grid() {
        let r = uniform_refine(&uniform_refine(&generate_unit_square(1, &left_right)).unwrap()).unwrap();
        let g = generate_unit_square(4, &left_right);
        let mut a: Vec<_> = (0..r.n_triangles()).map(|t| triangle_key(&r, t)).collect();
        let mut b: Vec<_> = (0..g.n_triangles()).map(|t| triangle_key(&g, t)).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(count_markers(&r, BoundaryMarker::Dirichlet), 8);
    }

    #[test]
    fn interior_edges_have_opposite_orientations() {
        let m = generate_with_rect_features(8, &[bump(0.25, true)], &left_right).unwrap();
        for (e, edge) in m.edges().iter().enumerate() {
            if let (Some(l), Some(r)) = (edge.left, edge.right) {
                let kl = m.triangle_edges(l).iter().position(|&x| x == e).unwrap();
                let kr = m.triangle_edges(r).iter().position(|&x| x == e).unwrap();
                assert_eq!(m.triangle_edge_signs(l)[kl], 1.0);
                assert_eq!(m.triangle_edge_signs(r)[kr], -1.0);
            }
        }
    }

    proptest! {
        #[test]
        fn located_triangle_contains_sample(n in 1usize..12, t_frac in 0.0f64..1.0, a in 0.01f64..0.98, b in 0.01f64..0.98) {
            let m = generate_unit_square(n, &no_dirichlet);
            let t = ((t_frac * m.n_triangles() as f64) as usize).min(m.n_triangles() - 1);
            let (a, b) = if a + b >= 0.99 { (a / 2.0, b / 2.0) } else { (a, b) };
            let c = 1.0 - a - b;
            prop_assume!(c > 0.005);
            let [p0, p1, p2] = m.triangle_points(t);
            let p = Vec2::new(a * p0.x + b * p1.x + c * p2.x, a * p0.y + b * p1.y + c * p2.y);
            let (found, _) = m.locate_point(p).unwrap();
            prop_assert_eq!(found, t);
        }

        #[test]
        fn areas_sum_to_domain_area(k in 1usize..6, half in 1usize..3) {
            let n = 16 * k;
            let s = half as f64 / 8.0;
            let hole = RectFeature { id: 1, rect: Rect::new(0.5 - s / 2.0, 0.5 + s / 2.0, 0.5 - s / 2.0, 0.5 + s / 2.0), positive: false, include: true };
            let m = generate_with_rect_features(n, &[hole], &no_dirichlet).unwrap();
            prop_assert!((m.total_area() - (1.0 - s * s)).abs() < 1e-12);
        }
    }
}
