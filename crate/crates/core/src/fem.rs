//! P1 Lagrange discretisation of the Poisson problem.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::geometry::{FluxFn, ScalarFn};
use crate::linalg::{csr_from_triplets, solve_spd, SparseMatrix};
use crate::mesh::{BoundaryMarker, FeaturePart, Mesh};
use crate::quadrature::{gauss_legendre, TRIANGLE_DEG5};
use crate::{Error, Result, Vec2};

/// Default relative residual for global solves.
pub const DEFAULT_SOLVER_TOL: f64 = 1e-12;
/// Default iteration cap for global solves.
pub const DEFAULT_MAX_ITER: usize = 20_000;

/// Nodal P1 field on a mesh.
#[derive(Debug, Clone)]
pub struct ScalarField<'a> {
    pub mesh: &'a Mesh,
    pub values: Vec<f64>,
}

impl<'a> ScalarField<'a> {
    pub fn new(mesh: &'a Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_vertices() {
            return Err(Error::Dimension(format!(
                "{} nodal values for {} vertices",
                values.len(),
                mesh.n_vertices()
            )));
        }
        Ok(Self { mesh, values })
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: &'a Mesh, f: &dyn Fn(Vec2) -> f64) -> Self {
        Self {
            mesh,
            values: mesh.vertices().iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn gradient(&self, t: usize) -> Vec2 {
        gradient_on_triangle(self, t)
    }

    /// Value at `p`, if `p` lies in the mesh.
    pub fn eval(&self, p: Vec2) -> Option<f64> {
        let (t, l) = self.mesh.locate_point(p)?;
        let tri = self.mesh.triangles()[t];
        Some((0..3).map(|k| l[k] * self.values[tri[k]]).sum())
    }
}

/// Gradients of the barycentric coordinates of triangle `t`.
pub fn barycentric_gradients(mesh: &Mesh, t: usize) -> [Vec2; 3] {
    let [a, b, c] = mesh.triangle_points(t);
    let area2 = (b - a).cross(c - a);
    // ∇λ_i is the inward normal of the opposite edge over twice the area
    let g = |p: Vec2, q: Vec2| Vec2::new(p.y - q.y, q.x - p.x) * (1.0 / area2);
    [g(b, c), g(c, a), g(a, b)]
}

/// Constant gradient of the linear interpolant on triangle `t`.
pub fn gradient_on_triangle(u: &ScalarField, t: usize) -> Vec2 {
    let tri = u.mesh.triangles()[t];
    let g = barycentric_gradients(u.mesh, t);
    (0..3).fold(Vec2::ZERO, |acc, k| acc + u.values[tri[k]] * g[k])
}

/// Boundary condition attached to an edge marker.
#[derive(Clone)]
pub enum Condition {
    Dirichlet(ScalarFn),
    Neumann(FluxFn),
}

/// Resolves markers to boundary conditions.
pub type ConditionMap = Arc<dyn Fn(BoundaryMarker) -> Condition + Send + Sync>;

/// Source and boundary data of a Poisson problem on a mesh.
#[derive(Clone)]
pub struct ProblemSpec {
    pub forcing: ScalarFn,
    pub conditions: ConditionMap,
}

/// Data projected onto the discrete spaces used by the solver and the flux
/// reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    /// Per triangle, nodal values of the L² projection of `f` onto P1.
    pub f_proj: Vec<[f64; 3]>,
    /// Per edge, values at the two edge vertices of the L² projection of the
    /// Neumann datum; `None` on edges that are not Neumann boundary edges.
    pub g_n_proj: Vec<Option<[f64; 2]>>,
    /// Per vertex, the Dirichlet value if the vertex is on a Dirichlet edge.
    pub dirichlet: Vec<Option<f64>>,
}

impl ProblemData {
    pub fn is_dirichlet_edge(&self, mesh: &Mesh, e: usize) -> bool {
        let edge = mesh.edge(e);
        edge.is_boundary() && self.g_n_proj[e].is_none()
    }

    /// Largest |f_proj| over all nodal coefficients.
    pub fn f_max(&self) -> f64 {
        self.f_proj.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn g_max(&self) -> f64 {
        self.g_n_proj.iter().flatten().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// L² norm of the projected source.
    pub fn f_norm(&self, mesh: &Mesh) -> f64 {
        (0..mesh.n_triangles())
            .map(|t| p1_mass_norm2(&self.f_proj[t], mesh.area(t)))
            .sum::<f64>()
            .sqrt()
    }
}

/// `∫_K v²` for the P1 function with nodal values `v` on a triangle of area `area`.
pub fn p1_mass_norm2(v: &[f64; 3], area: f64) -> f64 {
    let s: f64 = v.iter().sum();
    let sq: f64 = v.iter().map(|x| x * x).sum();
    area / 12.0 * (sq + s * s)
}

/// Gauss points per direction of the collapsed rule used for data projection.
const PROJECTION_ORDER: usize = 8;

/// Local P1 projection on one triangle: solves the 3×3 mass system.
///
/// Moments are taken with a collapsed tensor Gauss rule, exact for
/// polynomials of degree `2·PROJECTION_ORDER − 2`.
fn project_on_triangle(mesh: &Mesh, t: usize, f: &dyn Fn(Vec2) -> f64) -> [f64; 3] {
    let [a, b, c] = mesh.triangle_points(t);
    let area = mesh.area(t);
    let (x, w) = gauss_legendre(PROJECTION_ORDER).expect("supported order");
    let mut rhs = [0.0; 3];
    for (xi, wi) in x.iter().zip(&w) {
        for (eta, wj) in x.iter().zip(&w) {
            let (l1, l2) = (*xi, eta * (1.0 - xi));
            let l = [1.0 - l1 - l2, l1, l2];
            let p = Vec2::new(
                l[0] * a.x + l[1] * b.x + l[2] * c.x,
                l[0] * a.y + l[1] * b.y + l[2] * c.y,
            );
            let wt = 2.0 * area * wi * wj * (1.0 - xi);
            let v = f(p);
            for k in 0..3 {
                rhs[k] += wt * v * l[k];
            }
        }
    }
    // M = area/12 (I + 11ᵀ), M⁻¹ = 12/area (I − 11ᵀ/4)
    let s: f64 = rhs.iter().sum();
    rhs.map(|r| 12.0 / area * (r - s / 4.0))
}

/// Local P1 projection on an edge: solves the 2×2 mass system.
fn project_on_edge(a: Vec2, b: Vec2, n: Vec2, g: &dyn Fn(Vec2, Vec2) -> f64) -> [f64; 2] {
    let (x, w) = gauss_legendre(4).expect("order 4 is supported");
    let len = a.distance(b);
    let mut rhs = [0.0; 2];
    for (s, wt) in x.iter().zip(&w) {
        let v = g(a.lerp(b, *s), n) * wt * len;
        rhs[0] += v * (1.0 - s);
        rhs[1] += v * s;
    }
    // M = len/6 [[2,1],[1,2]], M⁻¹ = 2/len [[2,−1],[−1,2]]
    [2.0 / len * (2.0 * rhs[0] - rhs[1]), 2.0 / len * (2.0 * rhs[1] - rhs[0])]
}

/// Projects source and Neumann data, and interpolates Dirichlet data.
///
/// Edges carrying a marker are classified through `spec.conditions`;
/// interior interface tags are ignored.
pub fn project_data(spec: &ProblemSpec, mesh: &Mesh) -> ProblemData {
    let f_proj = (0..mesh.n_triangles())
        .map(|t| project_on_triangle(mesh, t, &*spec.forcing))
        .collect();
    let mut g_n_proj = vec![None; mesh.n_edges()];
    let mut dirichlet = vec![None; mesh.n_vertices()];
    for e in mesh.boundary_edges() {
        let marker = mesh.edge(e).marker.expect("boundary edges are marked");
        match (spec.conditions)(marker) {
            Condition::Neumann(g) => {
                let [a, b] = mesh.edge_points(e);
                g_n_proj[e] = Some(project_on_edge(a, b, mesh.boundary_normal(e), &*g));
            }
            Condition::Dirichlet(gd) => {
                for v in mesh.edge(e).vertices {
                    if dirichlet[v].is_none() {
                        dirichlet[v] = Some(gd(mesh.vertex(v)));
                    }
                }
            }
        }
    }
    ProblemData {
        f_proj,
        g_n_proj,
        dirichlet,
    }
}

/// Element stiffness matrix of triangle `t`.
pub fn local_stiffness(mesh: &Mesh, t: usize) -> [[f64; 3]; 3] {
    let g = barycentric_gradients(mesh, t);
    let area = mesh.area(t);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * g[i].dot(g[j]);
        }
    }
    k
}

pub fn assemble_stiffness(mesh: &Mesh) -> SparseMatrix {
    let mut triplets = Vec::with_capacity(9 * mesh.n_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let k = local_stiffness(mesh, t);
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((tri[i], tri[j], k[i][j]));
            }
        }
    }
    let n = mesh.n_vertices();
    csr_from_triplets(n, n, &triplets).expect("mesh indices are in range")
}

/// `(f_proj, φ_i) + ⟨g_N, φ_i⟩` for every vertex `i`, integrated exactly.
pub fn assemble_load(mesh: &Mesh, data: &ProblemData) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let f = data.f_proj[t];
        let s: f64 = f.iter().sum();
        let area = mesh.area(t);
        for k in 0..3 {
            b[tri[k]] += area / 12.0 * (f[k] + s);
        }
    }
    for (e, g) in data.g_n_proj.iter().enumerate() {
        if let Some([g0, g1]) = *g {
            let len = mesh.edge_length(e);
            let [i, j] = mesh.edge(e).vertices;
            b[i] += len / 6.0 * (2.0 * g0 + g1);
            b[j] += len / 6.0 * (g0 + 2.0 * g1);
        }
    }
    b
}

/// Solves the discrete Poisson problem with Dirichlet values imposed at the
/// Dirichlet vertices and symmetric condensation.
///
/// Without Dirichlet vertices the Neumann problem is solved with a
/// zero-mean normalisation of the nodal values; incompatible data is an error.
pub fn solve_poisson<'a>(mesh: &'a Mesh, data: &ProblemData, tol: f64) -> Result<ScalarField<'a>> {
    let k = assemble_stiffness(mesh);
    let load = assemble_load(mesh, data);
    let n = mesh.n_vertices();
    let pure_neumann = data.dirichlet.iter().all(Option::is_none);
    let mut fixed: Vec<Option<f64>> = data.dirichlet.clone();
    if pure_neumann {
        let total: f64 = load.iter().sum();
        let scale: f64 = load.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);
        if total.abs() > 1e-10 * scale {
            return Err(Error::Singular {
                column: 0,
                pivot: total,
            });
        }
        fixed[0] = Some(0.0);
    }
    let mut free_index = vec![usize::MAX; n];
    let mut n_free = 0;
    for v in 0..n {
        if fixed[v].is_none() {
            free_index[v] = n_free;
            n_free += 1;
        }
    }
    let mut triplets = Vec::with_capacity(k.nnz());
    let mut rhs = vec![0.0; n_free];
    for i in 0..n {
        let fi = free_index[i];
        if fi == usize::MAX {
            continue;
        }
        rhs[fi] += load[i];
        for (j, kij) in k.row(i) {
            match fixed[j] {
                Some(uj) => rhs[fi] -= kij * uj,
                None => triplets.push((fi, free_index[j], kij)),
            }
        }
    }
    let kff = csr_from_triplets(n_free, n_free, &triplets)?;
    let x = if n_free > 0 {
        solve_spd(&kff, &rhs, tol, DEFAULT_MAX_ITER.max(4 * n_free))?
    } else {
        Vec::new()
    };
    let mut values: Vec<f64> = (0..n)
        .map(|v| fixed[v].unwrap_or_else(|| x[free_index[v]]))
        .collect();
    if pure_neumann {
        let mean = values.iter().sum::<f64>() / n as f64;
        values.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(ScalarField { mesh, values })
}

/// Discrete residual `(f, φ_a) + ⟨g_N, φ_a⟩ − (∇u_h, ∇φ_a)` for every vertex.
pub fn galerkin_residual(u: &ScalarField, data: &ProblemData) -> Vec<f64> {
    let k = assemble_stiffness(u.mesh);
    let mut r = assemble_load(u.mesh, data);
    let ku = k.mul_vec(&u.values);
    for (ri, kui) in r.iter_mut().zip(ku) {
        *ri -= kui;
    }
    r
}

/// Data of the problem posed on a positive feature (or its extension):
/// Dirichlet values on `gamma0` taken from `trace` at coinciding vertices,
/// Neumann `g` on the free feature boundary and `g_tilde` on the rest.
pub fn feature_problem_data(
    feature_mesh: &Mesh,
    feature_id: usize,
    forcing: ScalarFn,
    g: FluxFn,
    g_tilde: FluxFn,
    trace: &ScalarField,
) -> Result<ProblemData> {
    let zero: ScalarFn = Arc::new(|_| 0.0);
    let conditions: ConditionMap = Arc::new(move |m| match m {
        BoundaryMarker::Feature {
            part: FeaturePart::Gamma0,
            ..
        } => Condition::Dirichlet(zero.clone()),
        BoundaryMarker::Feature {
            part: FeaturePart::GammaTilde,
            ..
        } => Condition::Neumann(g_tilde.clone()),
        _ => Condition::Neumann(g.clone()),
    });
    let spec = ProblemSpec { forcing, conditions };
    let mut data = project_data(&spec, feature_mesh);
    let mut found_interface = false;
    for e in feature_mesh.boundary_edges() {
        let marker = feature_mesh.edge(e).marker.expect("boundary edges are marked");
        match marker {
            BoundaryMarker::Feature { feature_id: id, part } if id == feature_id => {
                if part == FeaturePart::Gamma0 {
                    found_interface = true;
                    for v in feature_mesh.edge(e).vertices {
                        let p = feature_mesh.vertex(v);
                        let w = trace.mesh.find_vertex(p, 1e-12).ok_or_else(|| {
                            Error::Coupling(format!(
                                "interface vertex ({}, {}) of feature {feature_id} has no match in the simplified mesh",
                                p.x, p.y
                            ))
                        })?;
                        data.dirichlet[v] = Some(trace.values[w]);
                    }
                }
            }
            other => {
                return Err(Error::Coupling(format!(
                    "feature mesh of feature {feature_id} carries foreign marker {other:?}"
                )))
            }
        }
    }
    if !found_interface {
        return Err(Error::Coupling(format!("feature mesh of feature {feature_id} has no interface edges")));
    }
    Ok(data)
}

/// Solves the feature problem; see [`feature_problem_data`].
pub fn solve_feature_problem<'a>(
    feature_mesh: &'a Mesh,
    feature_id: usize,
    forcing: ScalarFn,
    g: FluxFn,
    g_tilde: FluxFn,
    trace: &ScalarField,
    tol: f64,
) -> Result<(ScalarField<'a>, ProblemData)> {
    let data = feature_problem_data(feature_mesh, feature_id, forcing, g, g_tilde, trace)?;
    let u = solve_poisson(feature_mesh, &data, tol)?;
    Ok((u, data))
}

/// Something with a (piecewise) gradient defined pointwise.
pub trait GradientField {
    fn gradient_at(&self, p: Vec2) -> Option<Vec2>;
}

impl GradientField for ScalarField<'_> {
    fn gradient_at(&self, p: Vec2) -> Option<Vec2> {
        let (t, _) = self.mesh.locate_point(p)?;
        Some(gradient_on_triangle(self, t))
    }
}

/// Fields on several meshes glued together; the first mesh containing a
/// point wins.
pub struct CompositeField<'f, 'a> {
    pub parts: Vec<&'f ScalarField<'a>>,
}

impl GradientField for CompositeField<'_, '_> {
    fn gradient_at(&self, p: Vec2) -> Option<Vec2> {
        self.parts.iter().find_map(|u| u.gradient_at(p))
    }
}

/// Squared energy error of `coarse` against `reference` on one fine triangle.
pub fn energy_error_on_triangle(coarse: &dyn GradientField, reference: &ScalarField, t: usize) -> Result<f64> {
    let g_ref = gradient_on_triangle(reference, t);
    let [a, b, c] = reference.mesh.triangle_points(t);
    let mut s = 0.0;
    for (p, _, w) in TRIANGLE_DEG5.map(a, b, c, reference.mesh.area(t)) {
        let g = coarse
            .gradient_at(p)
            .ok_or(Error::Coverage { x: p.x, y: p.y })?;
        s += w * (g_ref - g).norm_squared();
    }
    Ok(s)
}

/// `‖∇(reference − coarse)‖` over the reference mesh.
pub fn energy_error_cross_mesh(coarse: &dyn GradientField, reference: &ScalarField) -> Result<f64> {
    let mut s = 0.0;
    for t in 0..reference.mesh.n_triangles() {
        s += energy_error_on_triangle(coarse, reference, t)?;
    }
    Ok(s.sqrt())
}

/// `‖∇u‖` over the mesh of `u`.
pub fn energy_norm(u: &ScalarField) -> f64 {
    (0..u.mesh.n_triangles())
        .map(|t| u.mesh.area(t) * gradient_on_triangle(u, t).norm_squared())
        .sum::<f64>()
        .sqrt()
}
