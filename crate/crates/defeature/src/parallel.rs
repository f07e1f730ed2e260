use defeature_core::defeaturing::FluxReconstructor;
use defeature_core::fem::{ProblemData, ScalarField};
use defeature_core::flux::{accumulate, compatibility_floor, patch_flux_with_floor, FluxField, PatchFlux, RtSpace};
use defeature_core::Result;
use rayon::prelude::*;

/// Solves the vertex patches on the rayon pool and sums them in vertex
/// order, so the result is bitwise identical to the sequential loop.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParallelReconstructor;

impl FluxReconstructor for ParallelReconstructor {
    fn reconstruct<'a>(&self, space: &RtSpace<'a>, u: &ScalarField, data: &ProblemData) -> Result<FluxField<'a>> {
        let mesh = space.mesh;
        let floor = compatibility_floor(u, data);
        let patches: Vec<PatchFlux> = (0..mesh.n_vertices())
            .into_par_iter()
            .map(|a| patch_flux_with_floor(space, &mesh.vertex_patch(a), u, data, floor))
            .collect::<Result<_>>()?;
        let mut c = vec![0.0; space.n_dofs()];
        for p in &patches {
            accumulate(&mut c, p);
        }
        FluxField::new(space.clone(), c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use defeature_core::fem::{project_data, solve_poisson, Condition, ProblemSpec};
    use defeature_core::flux::reconstruct_flux;
    use defeature_core::mesh::generate_unit_square;
    use std::sync::Arc;

    #[test]
    fn matches_the_sequential_loop_bitwise() {
        let mesh = generate_unit_square(12, &|p| p.y == 0.0);
        let spec = ProblemSpec {
            forcing: Arc::new(|p| (3.0 * p.x).sin() + p.y),
            conditions: Arc::new(|m| match m {
                defeature_core::mesh::BoundaryMarker::Dirichlet => Condition::Dirichlet(Arc::new(|p| p.x * p.x)),
                _ => Condition::Neumann(Arc::new(|p, n| p.x * n.y - 0.5 * n.x)),
            }),
        };
        let data = project_data(&spec, &mesh);
        let u = solve_poisson(&mesh, &data, 1e-12).unwrap();
        let space = RtSpace::new(&mesh).unwrap();
        let a = reconstruct_flux(&space, &u, &data).unwrap();
        let b = ParallelReconstructor.reconstruct(&space, &u, &data).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
    }
}
