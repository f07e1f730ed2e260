//! Degree-1 Raviart–Thomas fields and the equilibrated flux built from
//! vertex-patch mixed problems.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::fem::{
    assemble_load, assemble_stiffness, barycentric_gradients, gradient_on_triangle, p1_mass_norm2, ProblemData, ScalarField,
};
use crate::geometry::CurveQuadrature;
use crate::linalg::{dense_lu_solve, DenseMatrix};
use crate::mesh::{Mesh, VertexPatch};
use crate::quadrature::{gauss_legendre, TRIANGLE_DEG5};
use crate::{Error, Result, Vec2};

/// Number of local degrees of freedom per triangle.
pub const LOCAL_DOFS: usize = 8;

/// Local basis of one triangle expressed in scaled monomials
/// `ξ = (x − c)/h`, `η = (y − c)/h`:
/// `(1,0) (ξ,0) (η,0) (0,1) (0,ξ) (0,η) (ξ²,ξη) (ξη,η²)`.
#[derive(Debug, Clone, Copy)]
struct LocalBasis {
    center: Vec2,
    scale: f64,
    /// `coef[i][j]`: weight of monomial `j` in basis function `i`.
    coef: [[f64; LOCAL_DOFS]; LOCAL_DOFS],
}

fn monomials(center: Vec2, scale: f64, p: Vec2) -> [Vec2; LOCAL_DOFS] {
    let xi = (p.x - center.x) / scale;
    let eta = (p.y - center.y) / scale;
    [
        Vec2::new(1.0, 0.0),
        Vec2::new(xi, 0.0),
        Vec2::new(eta, 0.0),
        Vec2::new(0.0, 1.0),
        Vec2::new(0.0, xi),
        Vec2::new(0.0, eta),
        Vec2::new(xi * xi, xi * eta),
        Vec2::new(xi * eta, eta * eta),
    ]
}

fn monomial_divergence(center: Vec2, scale: f64, p: Vec2) -> [f64; LOCAL_DOFS] {
    let xi = (p.x - center.x) / scale;
    let eta = (p.y - center.y) / scale;
    let s = 1.0 / scale;
    [0.0, s, 0.0, 0.0, 0.0, s, 3.0 * xi * s, 3.0 * eta * s]
}

impl LocalBasis {
    fn values(&self, p: Vec2) -> [Vec2; LOCAL_DOFS] {
        let m = monomials(self.center, self.scale, p);
        let mut out = [Vec2::ZERO; LOCAL_DOFS];
        for i in 0..LOCAL_DOFS {
            for j in 0..LOCAL_DOFS {
                out[i] += self.coef[i][j] * m[j];
            }
        }
        out
    }

    fn divergences(&self, p: Vec2) -> [f64; LOCAL_DOFS] {
        let d = monomial_divergence(self.center, self.scale, p);
        let mut out = [0.0; LOCAL_DOFS];
        for i in 0..LOCAL_DOFS {
            for j in 0..LOCAL_DOFS {
                out[i] += self.coef[i][j] * d[j];
            }
        }
        out
    }
}

/// Degree-1 Raviart–Thomas space on a mesh.
///
/// Edge `e` owns global DOFs `2e` and `2e + 1`: the moments of `v·n_e`
/// against `1` and `s` on the edge, `n_e` being the global edge normal and
/// `s ∈ [0, 1]` running from the first to the second edge vertex. Triangle
/// `t` owns `2E + 2t` and `2E + 2t + 1`: the integrals of `v_x` and `v_y`.
#[derive(Debug, Clone)]
pub struct RtSpace<'a> {
    pub mesh: &'a Mesh,
    local: Vec<LocalBasis>,
}

impl<'a> RtSpace<'a> {
    pub fn new(mesh: &'a Mesh) -> Result<Self> {
        let (gx, gw) = gauss_legendre(3)?;
        let mut local = Vec::with_capacity(mesh.n_triangles());
        for t in 0..mesh.n_triangles() {
            let center = mesh.centroid(t);
            let scale = mesh.diameter(t);
            let edges = mesh.triangle_edges(t);
            // moment matrix D[i][j] = l_i(m_j)
            let mut d = DenseMatrix::zeros(LOCAL_DOFS, LOCAL_DOFS);
            for (k, &e) in edges.iter().enumerate() {
                let [p, q] = mesh.edge_points(e);
                let n = mesh.edge_normal(e);
                let len = p.distance(q);
                for (s, w) in gx.iter().zip(&gw) {
                    let m = monomials(center, scale, p.lerp(q, *s));
                    for j in 0..LOCAL_DOFS {
                        let vn = m[j].dot(n) * w * len;
                        d.add(2 * k, j, vn);
                        d.add(2 * k + 1, j, vn * s);
                    }
                }
            }
            let [a, b, c] = mesh.triangle_points(t);
            for (p, _, w) in TRIANGLE_DEG5.map(a, b, c, mesh.area(t)) {
                let m = monomials(center, scale, p);
                for j in 0..LOCAL_DOFS {
                    d.add(6, j, w * m[j].x);
                    d.add(7, j, w * m[j].y);
                }
            }
            // coefficients of basis i solve D c = e_i
            let mut coef = [[0.0; LOCAL_DOFS]; LOCAL_DOFS];
            for i in 0..LOCAL_DOFS {
                let mut rhs = [0.0; LOCAL_DOFS];
                rhs[i] = 1.0;
                let c = dense_lu_solve(&d, &rhs)?;
                coef[i].copy_from_slice(&c);
            }
            local.push(LocalBasis { center, scale, coef });
        }
        Ok(Self { mesh, local })
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.mesh.n_edges() + 2 * self.mesh.n_triangles()
    }

    /// Global DOFs of triangle `t` in local order (edge `k` opposite vertex `k`).
    pub fn local_dofs(&self, t: usize) -> [usize; LOCAL_DOFS] {
        let e = self.mesh.triangle_edges(t);
        let base = 2 * self.mesh.n_edges() + 2 * t;
        [2 * e[0], 2 * e[0] + 1, 2 * e[1], 2 * e[1] + 1, 2 * e[2], 2 * e[2] + 1, base, base + 1]
    }

    pub fn basis_values(&self, t: usize, p: Vec2) -> [Vec2; LOCAL_DOFS] {
        self.local[t].values(p)
    }

    pub fn basis_divergences(&self, t: usize, p: Vec2) -> [f64; LOCAL_DOFS] {
        self.local[t].divergences(p)
    }

    /// Interpolates `v` through the DOF functionals.
    pub fn interpolate(&self, v: &dyn Fn(Vec2) -> Vec2) -> Result<FluxField<'a>> {
        let mesh = self.mesh;
        let mut c = vec![0.0; self.n_dofs()];
        let (gx, gw) = gauss_legendre(5)?;
        for e in 0..mesh.n_edges() {
            let [p, q] = mesh.edge_points(e);
            let n = mesh.edge_normal(e);
            let len = p.distance(q);
            for (s, w) in gx.iter().zip(&gw) {
                let vn = v(p.lerp(q, *s)).dot(n) * w * len;
                c[2 * e] += vn;
                c[2 * e + 1] += vn * s;
            }
        }
        let base = 2 * mesh.n_edges();
        for t in 0..mesh.n_triangles() {
            let [a, b, cc] = mesh.triangle_points(t);
            for (p, _, w) in TRIANGLE_DEG5.map(a, b, cc, mesh.area(t)) {
                let vp = v(p);
                c[base + 2 * t] += w * vp.x;
                c[base + 2 * t + 1] += w * vp.y;
            }
        }
        FluxField::new(self.clone(), c)
    }
}

/// Global Raviart–Thomas coefficients.
#[derive(Debug, Clone)]
pub struct FluxField<'a> {
    pub space: RtSpace<'a>,
    pub coefficients: Vec<f64>,
}

impl<'a> FluxField<'a> {
    pub fn new(space: RtSpace<'a>, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != space.n_dofs() {
            return Err(Error::Dimension(format!(
                "{} coefficients for {} Raviart-Thomas DOFs",
                coefficients.len(),
                space.n_dofs()
            )));
        }
        Ok(Self { space, coefficients })
    }

    pub fn zero(space: RtSpace<'a>) -> Self {
        let n = space.n_dofs();
        Self {
            space,
            coefficients: vec![0.0; n],
        }
    }

    pub fn mesh(&self) -> &'a Mesh {
        self.space.mesh
    }

    /// Value of the field restricted to triangle `t` at `p`.
    pub fn eval_on(&self, t: usize, p: Vec2) -> Vec2 {
        let dofs = self.space.local_dofs(t);
        let phi = self.space.basis_values(t, p);
        (0..LOCAL_DOFS).fold(Vec2::ZERO, |acc, i| acc + self.coefficients[dofs[i]] * phi[i])
    }

    pub fn divergence_on(&self, t: usize, p: Vec2) -> f64 {
        let dofs = self.space.local_dofs(t);
        let d = self.space.basis_divergences(t, p);
        (0..LOCAL_DOFS).map(|i| self.coefficients[dofs[i]] * d[i]).sum()
    }

    pub fn eval(&self, p: Vec2) -> Option<Vec2> {
        let (t, _) = self.mesh().locate_point(p)?;
        Some(self.eval_on(t, p))
    }

    /// Elementwise mean of the field.
    pub fn cell_mean(&self, t: usize) -> Vec2 {
        let base = 2 * self.mesh().n_edges() + 2 * t;
        let area = self.mesh().area(t);
        Vec2::new(self.coefficients[base] / area, self.coefficients[base + 1] / area)
    }
}

/// Flux contribution of one vertex patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFlux {
    pub vertex: usize,
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
    /// Value of the mean-constraint multiplier (zero up to roundoff when present).
    pub constraint_multiplier: Option<f64>,
}

enum DofRole {
    Free(usize),
    Fixed(f64),
    Zero,
}

/// Relative tolerance of the patch compatibility check.
pub const COMPATIBILITY_TOLERANCE: f64 = 1e-9;

/// Solves the mixed problem on the patch of one vertex.
///
/// The result minimises `‖σ + ψ_a ∇u_h‖` over the patch subject to
/// `∇·σ = Π(ψ_a f − ∇ψ_a·∇u_h)`, zero normal trace where `ψ_a` vanishes and
/// `σ·n = −ψ_a g_N` on Neumann edges at the vertex.
pub fn patch_flux(
    space: &RtSpace,
    patch: &VertexPatch,
    u: &ScalarField,
    data: &ProblemData,
) -> Result<PatchFlux> {
    patch_flux_with_floor(space, patch, u, data, 0.0)
}

/// Absolute slack for the patch compatibility check: the largest nodal
/// magnitude of the discrete equations scaled by [`COMPATIBILITY_TOLERANCE`].
///
/// An iterative solve leaves residuals relative to the whole system, which
/// can exceed the relative bound on patches where the solution is tiny.
pub fn compatibility_floor(u: &ScalarField, data: &ProblemData) -> f64 {
    let load = assemble_load(u.mesh, data);
    let k = assemble_stiffness(u.mesh);
    let worst = (0..u.mesh.n_vertices())
        .map(|i| load[i].abs() + k.row(i).map(|(j, kij)| (kij * u.values[j]).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    COMPATIBILITY_TOLERANCE * worst
}

/// [`patch_flux`] with an absolute slack `floor` on the compatibility check.
pub fn patch_flux_with_floor(
    space: &RtSpace,
    patch: &VertexPatch,
    u: &ScalarField,
    data: &ProblemData,
    floor: f64,
) -> Result<PatchFlux> {
    let mesh = space.mesh;
    let a = patch.vertex;
    let fail = |reason: &str| Error::Equilibration {
        vertex: a,
        reason: reason.to_string(),
    };
    let (gx, gw) = gauss_legendre(3)?;

    let mut free_dofs: Vec<usize> = Vec::new();
    let mut touches_dirichlet = false;
    let mut roles: Vec<[DofRole; LOCAL_DOFS]> = Vec::with_capacity(patch.triangles.len());
    for &t in &patch.triangles {
        let tri = mesh.triangles()[t];
        let dofs = space.local_dofs(t);
        let edges = mesh.triangle_edges(t);
        let mut role: [DofRole; LOCAL_DOFS] = core::array::from_fn(|_| DofRole::Zero);
        for k in 0..3 {
            let e = edges[k];
            if tri[k] == a {
                continue; // edge opposite the vertex: ψ_a = 0
            }
            let edge = mesh.edge(e);
            let free = if edge.is_boundary() {
                match data.g_n_proj[e] {
                    Some([g0, g1]) => {
                        let sgn = if edge.left.is_some() { 1.0 } else { -1.0 };
                        let len = mesh.edge_length(e);
                        let (mut m0, mut m1) = (0.0, 0.0);
                        for (s, w) in gx.iter().zip(&gw) {
                            let psi = if edge.vertices[0] == a { 1.0 - s } else { *s };
                            let g = g0 * (1.0 - s) + g1 * s;
                            let v = -sgn * psi * g * w * len;
                            m0 += v;
                            m1 += v * s;
                        }
                        role[2 * k] = DofRole::Fixed(m0);
                        role[2 * k + 1] = DofRole::Fixed(m1);
                        false
                    }
                    None => {
                        touches_dirichlet = true;
                        true
                    }
                }
            } else {
                true
            };
            if free {
                for j in [2 * k, 2 * k + 1] {
                    role[j] = DofRole::Free(local_index(&mut free_dofs, dofs[j]));
                }
            }
        }
        for j in [6, 7] {
            role[j] = DofRole::Free(local_index(&mut free_dofs, dofs[j]));
        }
        roles.push(role);
    }

    let nf = free_dofs.len();
    let nq = 3 * patch.triangles.len();
    let constrained = !touches_dirichlet;
    let n = nf + nq + usize::from(constrained);
    let mut m = DenseMatrix::zeros(n, n);
    let mut rhs = vec![0.0; n];
    let mut c = vec![0.0; nq];
    let mut patch_area = 0.0;
    let mut scale = 0.0;

    for (pi, &t) in patch.triangles.iter().enumerate() {
        let tri = mesh.triangles()[t];
        let la = tri.iter().position(|&v| v == a).expect("patch triangle contains the vertex");
        let grad_psi = barycentric_gradients(mesh, t)[la];
        let grad_u = gradient_on_triangle(u, t);
        let f = data.f_proj[t];
        let [pa, pb, pc] = mesh.triangle_points(t);
        let area = mesh.area(t);
        patch_area += area;
        let role = &roles[pi];
        for (p, l, w) in TRIANGLE_DEG5.map(pa, pb, pc, area) {
            let phi = space.basis_values(t, p);
            let div = space.basis_divergences(t, p);
            let psi = l[la];
            let fh = f[0] * l[0] + f[1] * l[1] + f[2] * l[2];
            let r = psi * fh - grad_psi.dot(grad_u);
            for q in 0..3 {
                let row = nf + 3 * pi + q;
                rhs[row] -= w * r * l[q];
                scale += (w * r * l[q]).abs();
                c[3 * pi + q] += w * l[q];
            }
            for i in 0..LOCAL_DOFS {
                let DofRole::Free(fi) = role[i] else { continue };
                rhs[fi] -= w * psi * grad_u.dot(phi[i]);
                for j in 0..LOCAL_DOFS {
                    let mij = w * phi[i].dot(phi[j]);
                    match role[j] {
                        DofRole::Free(fj) => m.add(fi, fj, mij),
                        DofRole::Fixed(v) => rhs[fi] -= mij * v,
                        DofRole::Zero => {}
                    }
                }
                for q in 0..3 {
                    let b = w * l[q] * div[i];
                    let row = nf + 3 * pi + q;
                    m.add(fi, row, -b);
                    m.add(row, fi, -b);
                }
            }
            for j in 0..LOCAL_DOFS {
                if let DofRole::Fixed(v) = role[j] {
                    for q in 0..3 {
                        let b = w * l[q] * div[j] * v;
                        rhs[nf + 3 * pi + q] += b;
                        scale += b.abs();
                    }
                }
            }
        }
    }

    if constrained {
        // (r − ∇·σ_fixed, 1) must vanish for a Galerkin solution
        let residual: f64 = rhs[nf..nf + nq].iter().sum();
        if residual.abs() > (COMPATIBILITY_TOLERANCE * scale).max(floor).max(f64::MIN_POSITIVE) {
            return Err(Error::Orthogonality {
                vertex: a,
                residual,
                scale,
            });
        }
        for q in 0..nq {
            let cq = c[q] / patch_area;
            m.set(nf + q, n - 1, cq);
            m.set(n - 1, nf + q, cq);
        }
    }
    let x = dense_lu_solve(&m, &rhs).map_err(|e| fail(&e.to_string()))?;

    let mut dofs = free_dofs.clone();
    let mut values = x[..nf].to_vec();
    for (pi, &t) in patch.triangles.iter().enumerate() {
        let gdofs = space.local_dofs(t);
        for (i, role) in roles[pi].iter().enumerate() {
            if let DofRole::Fixed(v) = role {
                if !dofs.contains(&gdofs[i]) {
                    dofs.push(gdofs[i]);
                    values.push(*v);
                }
            }
        }
    }
    Ok(PatchFlux {
        vertex: a,
        dofs,
        values,
        constraint_multiplier: constrained.then(|| x[n - 1]),
    })
}

fn local_index(list: &mut Vec<usize>, g: usize) -> usize {
    match list.iter().position(|&x| x == g) {
        Some(i) => i,
        None => {
            list.push(g);
            list.len() - 1
        }
    }
}

/// Adds a patch contribution into global coefficients.
pub fn accumulate(coefficients: &mut [f64], patch: &PatchFlux) {
    for (&d, &v) in patch.dofs.iter().zip(&patch.values) {
        coefficients[d] += v;
    }
}

/// Sum of all patch fluxes.
pub fn reconstruct_flux<'a>(space: &RtSpace<'a>, u: &ScalarField, data: &ProblemData) -> Result<FluxField<'a>> {
    let mesh = space.mesh;
    let floor = compatibility_floor(u, data);
    let mut c = vec![0.0; space.n_dofs()];
    for a in 0..mesh.n_vertices() {
        let patch = mesh.vertex_patch(a);
        let pf = patch_flux_with_floor(space, &patch, u, data, floor)?;
        accumulate(&mut c, &pf);
    }
    FluxField::new(space.clone(), c)
}

/// Per element, `‖∇·σ − f_proj‖_{L²(K)}`.
pub fn flux_divergence_defect(sigma: &FluxField, data: &ProblemData) -> Vec<f64> {
    let mesh = sigma.mesh();
    (0..mesh.n_triangles())
        .map(|t| {
            let pts = mesh.triangle_points(t);
            // both functions are P1: compare vertex values
            let d: [f64; 3] = core::array::from_fn(|k| sigma.divergence_on(t, pts[k]) - data.f_proj[t][k]);
            p1_mass_norm2(&d, mesh.area(t)).max(0.0).sqrt()
        })
        .collect()
}

/// `σ·n` at every node of a curve quadrature, using the owning triangle.
pub fn flux_normal_trace(sigma: &FluxField, q: &CurveQuadrature) -> Result<Vec<f64>> {
    let nt = sigma.mesh().n_triangles();
    q.nodes
        .iter()
        .map(|node| {
            if node.triangle >= nt {
                return Err(Error::Geometry(format!(
                    "quadrature node ({}, {}) is owned by no triangle of the flux mesh",
                    node.point.x, node.point.y
                )));
            }
            Ok(sigma.eval_on(node.triangle, node.point).dot(node.normal))
        })
        .collect()
}

/// Largest `|σ·n + g_proj|` at Gauss nodes of every Neumann edge.
pub fn neumann_trace_defect(sigma: &FluxField, data: &ProblemData, gauss_order: usize) -> Result<f64> {
    let mesh = sigma.mesh();
    let (gx, _) = gauss_legendre(gauss_order)?;
    let mut worst: f64 = 0.0;
    for e in mesh.boundary_edges() {
        let Some([g0, g1]) = data.g_n_proj[e] else { continue };
        let [p, q] = mesh.edge_points(e);
        let t = mesh.edge(e).any_triangle();
        let n = mesh.boundary_normal(e);
        for s in &gx {
            let g = g0 * (1.0 - s) + g1 * s;
            worst = worst.max((sigma.eval_on(t, p.lerp(q, *s)).dot(n) + g).abs());
        }
    }
    Ok(worst)
}

/// Largest jump of the normal trace across interior edges.
pub fn normal_trace_jump(sigma: &FluxField, gauss_order: usize) -> Result<f64> {
    let mesh = sigma.mesh();
    let (gx, _) = gauss_legendre(gauss_order)?;
    let mut worst: f64 = 0.0;
    for (e, edge) in mesh.edges().iter().enumerate() {
        let (Some(l), Some(r)) = (edge.left, edge.right) else { continue };
        let [p, q] = mesh.edge_points(e);
        let n = mesh.edge_normal(e);
        for s in &gx {
            let x = p.lerp(q, *s);
            worst = worst.max((sigma.eval_on(l, x).dot(n) - sigma.eval_on(r, x).dot(n)).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{project_data, solve_poisson, Condition, ProblemSpec};
    use crate::geometry::{clip_curve_to_mesh, regular_polygon, Curve, ScalarFn};
    use crate::mesh::{generate_unit_square, BoundaryMarker};
    use alloc::sync::Arc;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    fn reference_triangle() -> Mesh {
        let v = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let m = [
            ([0, 1], BoundaryMarker::NeumannOuter),
            ([1, 2], BoundaryMarker::NeumannOuter),
            ([2, 0], BoundaryMarker::NeumannOuter),
        ];
        Mesh::new(v, vec![[0, 1, 2]], &m).unwrap()
    }

    #[test]
    fn dof_counts() {
        let m = reference_triangle();
        assert_eq!(RtSpace::new(&m).unwrap().n_dofs(), 8);
        let sq = generate_unit_square(1, &|_| false);
        assert_eq!(RtSpace::new(&sq).unwrap().n_dofs(), 14);
    }

    #[test]
    fn basis_is_dual_to_the_functionals() {
        let m = generate_unit_square(2, &|_| false);
        let space = RtSpace::new(&m).unwrap();
        let (gx, gw) = gauss_legendre(4).unwrap();
        for t in 0..m.n_triangles() {
            let edges = m.triangle_edges(t);
            for i in 0..LOCAL_DOFS {
                let mut l = [0.0; LOCAL_DOFS];
                for (k, &e) in edges.iter().enumerate() {
                    let [p, q] = m.edge_points(e);
                    let n = m.edge_normal(e);
                    for (s, w) in gx.iter().zip(&gw) {
                        let v = space.basis_values(t, p.lerp(q, *s))[i].dot(n) * w * m.edge_length(e);
                        l[2 * k] += v;
                        l[2 * k + 1] += v * s;
                    }
                }
                let [a, b, c] = m.triangle_points(t);
                for (p, _, w) in TRIANGLE_DEG5.map(a, b, c, m.area(t)) {
                    let v = space.basis_values(t, p)[i];
                    l[6] += w * v.x;
                    l[7] += w * v.y;
                }
                for j in 0..LOCAL_DOFS {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((l[j] - expected).abs() < 1e-11, "t={t} i={i} j={j} {}", l[j]);
                }
            }
        }
    }

    #[test]
    fn constant_field_dofs() {
        let m = reference_triangle();
        let space = RtSpace::new(&m).unwrap();
        let f = space.interpolate(&|_| Vec2::new(1.0, 0.0)).unwrap();
        assert!((f.coefficients[6] - 0.5).abs() < 1e-15);
        assert!(f.coefficients[7].abs() < 1e-15);
        for e in 0..3 {
            let expected = m.edge_normal(e).x * m.edge_length(e);
            assert!((f.coefficients[2 * e] - expected).abs() < 1e-14);
        }
        // the constant is reproduced inside
        let v = f.eval_on(0, Vec2::new(0.2, 0.3));
        assert!((v - Vec2::new(1.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn divergence_of_x_times_p1() {
        let m = generate_unit_square(2, &|_| false);
        let space = RtSpace::new(&m).unwrap();
        // v = (x², xy) has divergence 3x
        let f = space.interpolate(&|p| Vec2::new(p.x * p.x, p.x * p.y)).unwrap();
        for t in 0..m.n_triangles() {
            let c = m.centroid(t);
            assert!((f.divergence_on(t, c) - 3.0 * c.x).abs() < 1e-12);
            assert!((f.eval_on(t, c) - Vec2::new(c.x * c.x, c.x * c.y)).norm() < 1e-12);
        }
    }

    fn linear_spec(a: f64, b: f64, c: f64, dirichlet: fn(Vec2) -> bool) -> (ProblemSpec, fn(Vec2) -> bool) {
        let spec = ProblemSpec {
            forcing: Arc::new(|_| 0.0),
            conditions: Arc::new(move |mk| match mk {
                BoundaryMarker::Dirichlet => Condition::Dirichlet(Arc::new(move |p: Vec2| a + b * p.x + c * p.y)),
                _ => Condition::Neumann(Arc::new(move |_, n: Vec2| b * n.x + c * n.y)),
            }),
        };
        (spec, dirichlet)
    }

    #[test]
    fn linear_solution_gives_exact_flux() {
        let (spec, d) = linear_spec(1.0, 2.0, 3.0, |p| p.x == 0.0);
        let m = generate_unit_square(4, &d);
        let data = project_data(&spec, &m);
        let u = solve_poisson(&m, &data, 1e-13).unwrap();
        let space = RtSpace::new(&m).unwrap();
        let sigma = reconstruct_flux(&space, &u, &data).unwrap();
        let exact = space.interpolate(&|_| Vec2::new(-2.0, -3.0)).unwrap();
        for (s, e) in sigma.coefficients.iter().zip(&exact.coefficients) {
            assert!((s - e).abs() < 1e-12);
        }
        // normal trace on a curve: −2cosθ − 3sinθ
        let poly = Curve::closed(&regular_polygon(Vec2::new(0.5, 0.5), 0.2, 16));
        let q = clip_curve_to_mesh(&poly, &m, 4).unwrap();
        let tr = flux_normal_trace(&sigma, &q).unwrap();
        for (node, v) in q.nodes.iter().zip(tr) {
            assert!((v - (-2.0 * node.normal.x - 3.0 * node.normal.y)).abs() < 1e-11);
        }
    }

    #[test]
    fn constant_flux_trace() {
        let m = generate_unit_square(3, &|_| false);
        let space = RtSpace::new(&m).unwrap();
        let f = space.interpolate(&|_| Vec2::new(0.7, -1.3)).unwrap();
        let c = Curve::new(vec![[Vec2::new(0.9, 0.4), Vec2::new(0.1, 0.4)]]);
        let q = clip_curve_to_mesh(&c, &m, 4).unwrap();
        assert!(q.nodes.iter().all(|n| (n.normal - Vec2::new(0.0, 1.0)).norm() < 1e-15));
        for v in flux_normal_trace(&f, &q).unwrap() {
            assert!((v + 1.3).abs() < 1e-12);
        }
    }

    fn sinsin() -> ProblemSpec {
        ProblemSpec {
            forcing: Arc::new(|p: Vec2| 2.0 * PI * PI * (PI * p.x).sin() * (PI * p.y).sin()),
            conditions: Arc::new(|_| Condition::Dirichlet(Arc::new(|_| 0.0))),
        }
    }

    #[test]
    fn sinsin_flux_is_equilibrated() {
        let m = generate_unit_square(16, &|_| true);
        let data = project_data(&sinsin(), &m);
        let u = solve_poisson(&m, &data, 1e-13).unwrap();
        let space = RtSpace::new(&m).unwrap();
        let sigma = reconstruct_flux(&space, &u, &data).unwrap();
        let fmax = data.f_max();
        // nodal coefficients of ∇·σ − f_proj
        for t in 0..m.n_triangles() {
            for (k, p) in m.triangle_points(t).iter().enumerate() {
                assert!((sigma.divergence_on(t, *p) - data.f_proj[t][k]).abs() <= 1e-9 * fmax);
            }
        }
        assert!(normal_trace_jump(&sigma, 4).unwrap() < 1e-10);
    }

    fn mixed_problem() -> ProblemSpec {
        ProblemSpec {
            forcing: Arc::new(|p: Vec2| 1.0 + p.x * p.y),
            conditions: Arc::new(|mk| match mk {
                BoundaryMarker::Dirichlet => Condition::Dirichlet(Arc::new(|p: Vec2| p.y * p.y)),
                _ => Condition::Neumann(Arc::new(|p: Vec2, _| (3.0 * p.x).cos())),
            }),
        }
    }

    #[test]
    fn neumann_traces_are_matched() {
        let m = generate_unit_square(8, &|p| p.x == 0.0);
        let data = project_data(&mixed_problem(), &m);
        let u = solve_poisson(&m, &data, 1e-13).unwrap();
        let space = RtSpace::new(&m).unwrap();
        let sigma = reconstruct_flux(&space, &u, &data).unwrap();
        let defect = flux_divergence_defect(&sigma, &data);
        assert!(defect.iter().all(|d| *d <= 1e-9 * (1.0 + data.f_norm(&m))));
        assert!(neumann_trace_defect(&sigma, &data, 4).unwrap() <= 1e-9 * (1.0 + data.g_max()));
        assert!(normal_trace_jump(&sigma, 4).unwrap() < 1e-10);
    }

    #[test]
    fn homogeneous_neumann_edges_have_zero_dofs() {
        let m = generate_unit_square(4, &|p| p.x == 0.0 || p.x == 1.0);
        let spec = ProblemSpec {
            forcing: Arc::new(|_| 1.0),
            conditions: Arc::new(|mk| match mk {
                BoundaryMarker::Dirichlet => Condition::Dirichlet(Arc::new(|_| 0.0)),
                _ => Condition::Neumann(Arc::new(|_, _| 0.0)),
            }),
        };
        let data = project_data(&spec, &m);
        let u = solve_poisson(&m, &data, 1e-13).unwrap();
        let sigma = reconstruct_flux(&RtSpace::new(&m).unwrap(), &u, &data).unwrap();
        for e in m.boundary_edges() {
            if data.g_n_proj[e].is_some() {
                assert!(sigma.coefficients[2 * e].abs() < 1e-15);
                assert!(sigma.coefficients[2 * e + 1].abs() < 1e-15);
            }
        }
    }

    #[test]
    fn numerical_flux_divergence_defect() {
        // single element, so the elementwise-constant −∇u_h is a valid RT field
        let m = reference_triangle();
        let spec = ProblemSpec {
            forcing: Arc::new(|p: Vec2| 1.0 + p.x),
            conditions: Arc::new(|_| Condition::Neumann(Arc::new(|_, _| 0.0))),
        };
        let data = project_data(&spec, &m);
        let u = ScalarField::interpolate(&m, &|p| 2.0 * p.x - p.y);
        let space = RtSpace::new(&m).unwrap();
        let g = u.gradient(0);
        let raw = space.interpolate(&|_| -g).unwrap();
        let d = flux_divergence_defect(&raw, &data);
        let expected = p1_mass_norm2(&data.f_proj[0], m.area(0)).sqrt();
        assert!((d[0] - expected).abs() < 1e-12 * (1.0 + expected));
        let zero_data = project_data(
            &ProblemSpec {
                forcing: Arc::new(|_| 0.0),
                conditions: Arc::new(|_| Condition::Dirichlet(Arc::new(|_| 0.0))),
            },
            &m,
        );
        let z = FluxField::zero(space.clone());
        assert!(flux_divergence_defect(&z, &zero_data).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn galerkin_patch_compatibility() {
        let m = generate_unit_square(6, &|_| true);
        let g: ScalarFn = Arc::new(|p: Vec2| (p.x * 3.0).sin() + p.y);
        let spec = ProblemSpec {
            forcing: Arc::new(|_| 0.0),
            conditions: Arc::new(move |_| Condition::Dirichlet(g.clone())),
        };
        let data = project_data(&spec, &m);
        let u = solve_poisson(&m, &data, 1e-13).unwrap();
        let space = RtSpace::new(&m).unwrap();
        for a in 0..m.n_vertices() {
            let patch = m.vertex_patch(a);
            let pf = patch_flux(&space, &patch, &u, &data).unwrap();
            if patch.is_interior {
                assert!(pf.constraint_multiplier.unwrap().abs() < 1e-8);
            }
        }
    }

    #[test]
    fn non_galerkin_field_is_rejected() {
        let m = generate_unit_square(4, &|_| true);
        let data = project_data(&sinsin(), &m);
        let u = ScalarField::interpolate(&m, &|p| p.x * (1.0 - p.x) * p.y * (1.0 - p.y));
        let space = RtSpace::new(&m).unwrap();
        let interior = (0..m.n_vertices()).find(|&a| m.vertex_patch(a).is_interior).unwrap();
        let r = patch_flux(&space, &m.vertex_patch(interior), &u, &data);
        assert!(matches!(r, Err(Error::Orthogonality { .. })));
        // the global slack does not hide a genuinely wrong field
        assert!(matches!(reconstruct_flux(&space, &u, &data), Err(Error::Orthogonality { .. })));
    }

    #[test]
    fn tiny_solutions_tolerate_solver_residuals() {
        // data decaying by ~e^-16 across the square: patches near (1, 1) see
        // residuals far below the solver tolerance but above their own scale
        let m = generate_unit_square(16, &|p| p.x < 1e-12 || p.y < 1e-12);
        let spec = ProblemSpec {
            forcing: Arc::new(|_| 0.0),
            conditions: Arc::new(|mk| match mk {
                BoundaryMarker::Dirichlet => Condition::Dirichlet(Arc::new(|p: Vec2| (-8.0 * (p.x + p.y)).exp())),
                _ => Condition::Neumann(Arc::new(|_, _| 0.0)),
            }),
        };
        let data = project_data(&spec, &m);
        let u = solve_poisson(&m, &data, 1e-12).unwrap();
        let space = RtSpace::new(&m).unwrap();
        let floor = compatibility_floor(&u, &data);
        assert!(floor > 0.0 && floor < 1e-8);
        let sigma = reconstruct_flux(&space, &u, &data).unwrap();
        let worst = flux_divergence_defect(&sigma, &data).into_iter().fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn dirichlet_corner_patch_is_unconstrained() {
        let m = generate_unit_square(4, &|_| true);
        let data = project_data(&sinsin(), &m);
        let u = solve_poisson(&m, &data, 1e-13).unwrap();
        let space = RtSpace::new(&m).unwrap();
        let pf = patch_flux(&space, &m.vertex_patch(0), &u, &data).unwrap();
        assert!(pf.constraint_multiplier.is_none());
    }

    #[test]
    fn patch_flux_is_supported_on_the_patch() {
        let m = generate_unit_square(5, &|p| p.y == 0.0);
        let data = project_data(&mixed_problem(), &m);
        let u = solve_poisson(&m, &data, 1e-13).unwrap();
        let space = RtSpace::new(&m).unwrap();
        for a in [0, 7, 18] {
            let patch = m.vertex_patch(a);
            let pf = patch_flux(&space, &patch, &u, &data).unwrap();
            let mut allowed = Vec::new();
            for &t in &patch.triangles {
                allowed.extend(space.local_dofs(t));
            }
            assert!(pf.dofs.iter().all(|d| allowed.contains(d)));
            for &e in &patch.boundary_edges_zero {
                assert!(!pf.dofs.contains(&(2 * e)) && !pf.dofs.contains(&(2 * e + 1)));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_data_is_equilibrated(n in 2usize..7, k in 0.5f64..4.0, c in -2.0f64..2.0) {
            let spec = ProblemSpec {
                forcing: Arc::new(move |p: Vec2| (k * p.x).cos() + c * p.y),
                conditions: Arc::new(move |mk| match mk {
                    BoundaryMarker::Dirichlet => Condition::Dirichlet(Arc::new(move |p: Vec2| c * p.x)),
                    _ => Condition::Neumann(Arc::new(move |p: Vec2, _| (k * p.y).sin())),
                }),
            };
            let m = generate_unit_square(n, &|p| p.y == 1.0);
            let data = project_data(&spec, &m);
            let u = solve_poisson(&m, &data, 1e-13).unwrap();
            let sigma = reconstruct_flux(&RtSpace::new(&m).unwrap(), &u, &data).unwrap();
            let defect = flux_divergence_defect(&sigma, &data);
            prop_assert!(defect.iter().all(|d| *d <= 1e-9 * (1.0 + data.f_norm(&m))));
            prop_assert!(neumann_trace_defect(&sigma, &data, 4).unwrap() <= 1e-9 * (1.0 + data.g_max()));
            prop_assert!(normal_trace_jump(&sigma, 4).unwrap() <= 1e-10);
        }
    }
}
