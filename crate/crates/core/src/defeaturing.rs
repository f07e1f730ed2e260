//! The estimation pipeline: solve on the (partially) simplified geometry,
//! rebuild the fluxes and evaluate every estimator component of the features
//! left out of the geometry.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::estimator::{
    defect_on_gamma, eta_curve_parts, eta_zero, CurveEstimate, DefectKind, EstimateComponents, FeatureEstimate,
};
use crate::fem::{
    energy_error_cross_mesh, project_data, solve_feature_problem, solve_poisson, CompositeField, Condition,
    ConditionMap, ProblemData, ProblemSpec, ScalarField,
};
use crate::flux::{reconstruct_flux, FluxField, RtSpace};
use crate::geometry::{
    clip_curve_to_mesh, constant_flux, partition_feature_boundary, Curve, CurveQuadrature, DomainSpec, FeatureKind,
    FeatureSpec, DEFAULT_CURVE_GAUSS_ORDER,
};
use crate::mesh::{BoundaryMarker, FeaturePart, Mesh};
use crate::{Error, Result};

/// Boundary conditions of the problem posed on any mesh of the domain.
///
/// Feature edges get the feature data: `g0` on a shared side, the
/// extension datum on an extension boundary and `g` elsewhere. Unknown
/// feature ids fall back to the outer Neumann datum; [`check_markers`]
/// rejects them up front.
pub fn domain_conditions(domain: &DomainSpec) -> ConditionMap {
    let domain = domain.clone();
    Arc::new(move |m| match m {
        BoundaryMarker::Dirichlet => Condition::Dirichlet(domain.dirichlet_data.clone()),
        BoundaryMarker::NeumannOuter => Condition::Neumann(domain.outer_neumann.clone()),
        BoundaryMarker::Feature { feature_id, part } => match domain.feature(feature_id) {
            None => Condition::Neumann(domain.outer_neumann.clone()),
            Some(f) => Condition::Neumann(match part {
                FeaturePart::Gamma0 => f.g0.clone(),
                FeaturePart::GammaTilde => f
                    .extension
                    .as_ref()
                    .map(|e| e.g_tilde.clone())
                    .unwrap_or_else(|| constant_flux(0.0)),
                _ => f.g.clone(),
            }),
        },
    })
}

pub fn domain_problem(domain: &DomainSpec) -> ProblemSpec {
    ProblemSpec {
        forcing: domain.forcing.clone(),
        conditions: domain_conditions(domain),
    }
}

/// Verifies that every feature marker of `mesh` names a known feature and
/// that free feature boundaries only appear for features in `included`.
pub fn check_markers(mesh: &Mesh, domain: &DomainSpec, included: &[usize]) -> Result<()> {
    for (_, m) in mesh.marked_edges() {
        if let BoundaryMarker::Feature { feature_id, part } = m {
            if domain.feature(feature_id).is_none() {
                return Err(Error::Validation(format!("mesh refers to unknown feature {feature_id}")));
            }
            if part == FeaturePart::Gamma && !included.contains(&feature_id) {
                return Err(Error::Validation(format!(
                    "mesh resolves feature {feature_id}, which is not in the included set"
                )));
            }
        }
    }
    for id in included {
        if domain.feature(*id).is_none() {
            return Err(Error::Validation(format!("included feature {id} is not defined")));
        }
    }
    Ok(())
}

/// Rebuilds an equilibrated flux from a P1 solution; lets callers swap in a
/// parallel patch loop.
pub trait FluxReconstructor {
    fn reconstruct<'a>(&self, space: &RtSpace<'a>, u: &ScalarField, data: &ProblemData) -> Result<FluxField<'a>>;
}

/// Visits the vertex patches one after the other.
#[derive(Debug, Clone, Copy, Default)]
pub struct SequentialReconstructor;

impl FluxReconstructor for SequentialReconstructor {
    fn reconstruct<'a>(&self, space: &RtSpace<'a>, u: &ScalarField, data: &ProblemData) -> Result<FluxField<'a>> {
        reconstruct_flux(space, u, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub gauss_order: usize,
    pub solver_tol: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            gauss_order: DEFAULT_CURVE_GAUSS_ORDER,
            solver_tol: crate::fem::DEFAULT_SOLVER_TOL,
        }
    }
}

/// A discrete solution with its projected data and equilibrated flux.
pub struct Solved<'a> {
    pub u: ScalarField<'a>,
    pub data: ProblemData,
    pub sigma: FluxField<'a>,
}

/// Curve estimators of one omitted feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureCurves {
    Negative { gamma: CurveEstimate },
    Positive { gamma0: CurveEstimate, gamma_r: Option<CurveEstimate> },
}

pub struct PositiveSolve<'a> {
    pub id: usize,
    pub solved: Solved<'a>,
}

/// Output of [`estimate`].
pub struct Estimation<'a> {
    pub simplified: Solved<'a>,
    pub positive: Vec<PositiveSolve<'a>>,
    pub curves: Vec<(usize, FeatureCurves)>,
    pub components: EstimateComponents,
}

impl Estimation<'_> {
    /// Energy error of the glued discrete solution against a reference
    /// solution computed on the exact geometry.
    pub fn reference_error(&self, reference: &ScalarField) -> Result<f64> {
        let mut parts: Vec<&ScalarField> = Vec::with_capacity(1 + self.positive.len());
        parts.push(&self.simplified.u);
        parts.extend(self.positive.iter().map(|p| &p.solved.u));
        energy_error_cross_mesh(&CompositeField { parts }, reference)
    }
}

/// Solves on a mesh of the simplified geometry and rebuilds the flux.
pub fn solve_simplified<'a>(
    mesh: &'a Mesh,
    domain: &DomainSpec,
    opts: &PipelineOptions,
    rec: &dyn FluxReconstructor,
) -> Result<Solved<'a>> {
    let data = project_data(&domain_problem(domain), mesh);
    let u = solve_poisson(mesh, &data, opts.solver_tol)?;
    let space = RtSpace::new(mesh)?;
    let sigma = rec.reconstruct(&space, &u, &data)?;
    Ok(Solved { u, data, sigma })
}

fn curve_defect(
    sigma: &FluxField,
    curve: &Curve,
    gauss_order: usize,
    data: &dyn Fn(crate::Vec2, crate::Vec2) -> f64,
    kind: DefectKind,
) -> Result<CurveEstimate> {
    let q: CurveQuadrature = clip_curve_to_mesh(curve, sigma.mesh(), gauss_order)?;
    let g: Vec<f64> = q.nodes.iter().map(|n| data(n.point, n.normal)).collect();
    let ds = defect_on_gamma(sigma, q, &g, kind)?;
    Ok(eta_curve_parts(&ds))
}

/// `η_γ` of an omitted negative feature from the flux on the simplified mesh.
pub fn negative_feature_estimate(
    f: &FeatureSpec,
    domain: &DomainSpec,
    sigma: &FluxField,
    gauss_order: usize,
) -> Result<CurveEstimate> {
    let part = partition_feature_boundary(f, &*domain.is_dirichlet)?;
    curve_defect(sigma, &part.gamma, gauss_order, &*f.g, DefectKind::Negative)
}

/// Solves the problem on the mesh of an omitted positive feature (or its
/// extension) and evaluates the curve estimators on it.
pub fn positive_feature_estimate<'a>(
    f: &FeatureSpec,
    feature_mesh: &'a Mesh,
    domain: &DomainSpec,
    trace: &ScalarField,
    opts: &PipelineOptions,
    rec: &dyn FluxReconstructor,
) -> Result<(Solved<'a>, FeatureCurves)> {
    let part = partition_feature_boundary(f, &*domain.is_dirichlet)?;
    let g_tilde = f
        .extension
        .as_ref()
        .map(|e| e.g_tilde.clone())
        .unwrap_or_else(|| constant_flux(0.0));
    let (u, data) = solve_feature_problem(
        feature_mesh,
        f.id,
        domain.forcing.clone(),
        f.g.clone(),
        g_tilde,
        trace,
        opts.solver_tol,
    )?;
    let space = RtSpace::new(feature_mesh)?;
    let sigma = rec.reconstruct(&space, &u, &data)?;
    // g0 is a datum of the simplified domain, whose outward normal is −n_F
    let g0 = f.g0.clone();
    let gamma0 = curve_defect(
        &sigma,
        &part.gamma0,
        opts.gauss_order,
        &move |x, n| g0(x, -n),
        DefectKind::PositiveGamma0,
    )?;
    let gamma_r = if part.gamma_r.is_empty() {
        None
    } else {
        Some(curve_defect(
            &sigma,
            &part.gamma_r,
            opts.gauss_order,
            &*f.g,
            DefectKind::PositiveGammaR,
        )?)
    };
    Ok((Solved { u, data, sigma }, FeatureCurves::Positive { gamma0, gamma_r }))
}

/// Runs the whole estimation.
///
/// `mesh` discretises the simplified geometry with the features in
/// `included`; `feature_meshes` supplies a mesh for every omitted positive
/// feature. Omitted negative features only need their polygon.
pub fn estimate<'a>(
    domain: &DomainSpec,
    included: &[usize],
    mesh: &'a Mesh,
    feature_meshes: &[(usize, &'a Mesh)],
    opts: &PipelineOptions,
    rec: &dyn FluxReconstructor,
) -> Result<Estimation<'a>> {
    check_markers(mesh, domain, included)?;
    let simplified = solve_simplified(mesh, domain, opts, rec)?;
    let mut positive = Vec::new();
    let mut curves = Vec::new();
    let mut features = Vec::new();
    for f in &domain.features {
        if included.contains(&f.id) {
            continue;
        }
        match f.kind {
            FeatureKind::NegativeInternal | FeatureKind::NegativeBoundary => {
                let gamma = negative_feature_estimate(f, domain, &simplified.sigma, opts.gauss_order)?;
                features.push(FeatureEstimate::Negative {
                    id: f.id,
                    eta_gamma: gamma.value(),
                });
                curves.push((f.id, FeatureCurves::Negative { gamma }));
            }
            FeatureKind::Positive => {
                let fm = feature_meshes
                    .iter()
                    .find(|(id, _)| *id == f.id)
                    .map(|(_, m)| *m)
                    .ok_or_else(|| Error::InvalidArgument(format!("no mesh supplied for positive feature {}", f.id)))?;
                let (solved, fc) = positive_feature_estimate(f, fm, domain, &simplified.u, opts, rec)?;
                let FeatureCurves::Positive { gamma0, gamma_r } = fc else {
                    unreachable!()
                };
                features.push(FeatureEstimate::Positive {
                    id: f.id,
                    eta_gamma0: gamma0.value(),
                    eta_gamma_r: gamma_r.map_or(0.0, |c| c.value()),
                    eta_0_tilde: eta_zero(&solved.sigma, &solved.u)?,
                });
                curves.push((f.id, fc));
                positive.push(PositiveSolve { id: f.id, solved });
            }
        }
    }
    let components = EstimateComponents {
        eta_0: eta_zero(&simplified.sigma, &simplified.u)?,
        features,
    };
    Ok(Estimation {
        simplified,
        positive,
        curves,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{aggregate_total, EstimatorConstants};
    use crate::geometry::{constant, FluxFn, ScalarFn};
    use crate::mesh::{generate_feature_mesh, generate_with_rect_features, Rect, RectFeature};
    use crate::Vec2;
    use alloc::vec;

    fn linear_domain(features: Vec<FeatureSpec>) -> DomainSpec {
        let grad = Vec2::new(0.7, -0.4);
        let flux: FluxFn = Arc::new(move |_, n: Vec2| grad.dot(n));
        let exact: ScalarFn = Arc::new(move |p: Vec2| 0.3 + grad.dot(p));
        DomainSpec {
            features: features
                .into_iter()
                .map(|f| f.with_g(flux.clone()).with_g0(flux.clone()))
                .collect(),
            forcing: constant(0.0),
            dirichlet_data: exact,
            outer_neumann: flux,
            is_dirichlet: Arc::new(|p: Vec2| p.x < 1e-12 || p.y < 1e-12),
        }
    }

    #[test]
    fn linear_solution_gives_vanishing_estimators() {
        let hole = Rect::new(0.375, 0.625, 0.375, 0.625);
        let notch = Rect::new(0.75, 0.875, 0.875, 1.0);
        let bump = Rect::new(1.0, 1.125, 0.375, 0.5);
        let domain = linear_domain(vec![
            FeatureSpec::new(1, FeatureKind::NegativeInternal, hole.corners().to_vec()),
            FeatureSpec::new(2, FeatureKind::NegativeBoundary, notch.corners().to_vec()),
            FeatureSpec::new(3, FeatureKind::Positive, bump.corners().to_vec()),
        ]);
        let rects = [
            RectFeature { id: 1, rect: hole, positive: false, include: false },
            RectFeature { id: 2, rect: notch, positive: false, include: false },
            RectFeature { id: 3, rect: bump, positive: true, include: false },
        ];
        let mesh = generate_with_rect_features(8, &rects, &*domain.is_dirichlet).unwrap();
        let fmesh = generate_feature_mesh(8, &rects[2], None).unwrap();
        let est = estimate(
            &domain,
            &[],
            &mesh,
            &[(3, &fmesh)],
            &PipelineOptions::default(),
            &SequentialReconstructor,
        )
        .unwrap();
        assert!(est.components.eta_0 < 1e-10, "{}", est.components.eta_0);
        for f in &est.components.features {
            assert!(f.eta_gamma() < 1e-10, "{f:?}");
            assert!(f.eta_0_tilde() < 1e-10, "{f:?}");
        }
        assert_eq!(est.components.features.len(), 3);
    }

    #[test]
    fn unlisted_resolved_feature_is_rejected() {
        let hole = Rect::new(0.25, 0.5, 0.25, 0.5);
        let domain = linear_domain(vec![FeatureSpec::new(
            1,
            FeatureKind::NegativeInternal,
            hole.corners().to_vec(),
        )]);
        let rf = RectFeature { id: 1, rect: hole, positive: false, include: true };
        let mesh = generate_with_rect_features(4, &[rf], &*domain.is_dirichlet).unwrap();
        assert!(check_markers(&mesh, &domain, &[]).is_err());
        assert!(check_markers(&mesh, &domain, &[1]).is_ok());
        let est = estimate(&domain, &[1], &mesh, &[], &PipelineOptions::default(), &SequentialReconstructor).unwrap();
        assert!(est.components.features.is_empty());
        let total = aggregate_total(&est.components, &EstimatorConstants::default()).unwrap();
        assert_eq!(total, est.components.eta_0);
    }

    #[test]
    fn positive_feature_needs_a_mesh() {
        let bump = Rect::new(1.0, 1.125, 0.375, 0.5);
        let domain = linear_domain(vec![FeatureSpec::new(3, FeatureKind::Positive, bump.corners().to_vec())]);
        let rf = RectFeature { id: 3, rect: bump, positive: true, include: false };
        let mesh = generate_with_rect_features(8, &[rf], &*domain.is_dirichlet).unwrap();
        let r = estimate(&domain, &[], &mesh, &[], &PipelineOptions::default(), &SequentialReconstructor);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn extension_gives_a_gamma_r_estimate() {
        let bump = Rect::new(1.0, 1.125, 0.375, 0.5);
        let ext = Rect::new(1.0, 1.25, 0.25, 0.625);
        let mut domain = linear_domain(vec![FeatureSpec::new(3, FeatureKind::Positive, bump.corners().to_vec())]);
        let g = domain.outer_neumann.clone();
        domain.features[0] = domain.features[0].clone().with_extension(ext.corners().to_vec(), g);
        let rf = RectFeature { id: 3, rect: bump, positive: true, include: false };
        let mesh = generate_with_rect_features(8, &[rf], &*domain.is_dirichlet).unwrap();
        let fmesh = generate_feature_mesh(8, &rf, Some(ext)).unwrap();
        let est = estimate(&domain, &[], &mesh, &[(3, &fmesh)], &PipelineOptions::default(), &SequentialReconstructor)
            .unwrap();
        match est.curves[0].1 {
            FeatureCurves::Positive { gamma0, gamma_r } => {
                assert!(gamma0.value() < 1e-10);
                assert!(gamma_r.expect("gamma_r is not empty").value() < 1e-10);
            }
            _ => panic!("expected a positive feature"),
        }
    }
}
