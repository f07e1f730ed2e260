//! Study driver: meshes the simplified and exact geometries, runs the
//! estimation pipeline and compares against reference solutions.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use defeature_core::defeaturing::{estimate, solve_simplified, PipelineOptions};
use defeature_core::estimator::{eta_zero_cells, EstimatorReport};
use defeature_core::fem::{project_data, solve_poisson, ScalarField};
use defeature_core::defeaturing::domain_problem;
use defeature_core::geometry::FeatureKind;
use defeature_core::mesh::{generate_feature_mesh, generate_with_rect_features, Mesh, RectFeature};
use defeature_core::Vec2;
use rayon::prelude::*;

use crate::config::{FeatureSetup, MeshSource, ReferenceSource, RunConfig, Scenario};
use crate::mesh_io;
use crate::parallel::ParallelReconstructor;

/// Discrete solution on the exact geometry.
#[derive(Debug, Clone)]
pub struct Reference {
    pub mesh: Mesh,
    pub values: Vec<f64>,
}

impl Reference {
    pub fn field(&self) -> ScalarField<'_> {
        ScalarField {
            mesh: &self.mesh,
            values: self.values.clone(),
        }
    }
}

/// Fields of the simplified solve, kept for VTK output.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub mesh: Mesh,
    pub u: Vec<f64>,
    /// Elementwise mean of the equilibrated flux.
    pub sigma: Vec<Vec2>,
    /// Elementwise `η_0` contributions (not squared).
    pub eta_0: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub report: EstimatorReport,
    pub snapshot: Option<Snapshot>,
}

fn rect_feature(f: &FeatureSetup, include: bool) -> Result<RectFeature> {
    let rect = f
        .rect
        .with_context(|| format!("feature {} is not a rectangle and cannot be meshed", f.spec.id))?;
    Ok(RectFeature {
        id: f.spec.id,
        rect,
        positive: f.spec.kind.is_positive(),
        include,
    })
}

/// Mesh of the simplified geometry `Ω_0^M` on the `n × n` lattice.
///
/// Omitted internal holes are left out; omitted boundary notches and bumps
/// are passed along so that their shared side gets its own marker.
pub fn simplified_mesh(s: &Scenario, n: usize) -> Result<Mesh> {
    let mut rects = Vec::new();
    for f in &s.features {
        if f.include {
            rects.push(rect_feature(f, true)?);
        } else if f.spec.kind != FeatureKind::NegativeInternal && f.rect.is_some() {
            rects.push(rect_feature(f, false)?);
        }
    }
    Ok(generate_with_rect_features(n, &rects, &*s.domain.is_dirichlet)?)
}

/// Mesh of the exact geometry: every feature resolved.
pub fn exact_mesh(s: &Scenario, n: usize) -> Result<Mesh> {
    let rects = s
        .features
        .iter()
        .map(|f| rect_feature(f, true))
        .collect::<Result<Vec<_>>>()
        .context("the builtin reference mesher needs rectangular features")?;
    Ok(generate_with_rect_features(n, &rects, &*s.domain.is_dirichlet)?)
}

/// Meshes of the omitted positive features (or of their extensions).
pub fn feature_meshes(s: &Scenario, n: Option<usize>) -> Result<Vec<(usize, Mesh)>> {
    let mut out = Vec::new();
    for f in s.features.iter().filter(|f| !f.include && f.spec.kind.is_positive()) {
        let Some(n) = n else {
            bail!(
                "omitted positive feature {} needs the builtin mesher; resolve it in the external mesh instead",
                f.spec.id
            );
        };
        let m = generate_feature_mesh(n, &rect_feature(f, false)?, f.extension_rect)
            .with_context(|| format!("meshing positive feature {}", f.spec.id))?;
        out.push((f.spec.id, m));
    }
    Ok(out)
}

fn options(s: &Scenario) -> PipelineOptions {
    PipelineOptions {
        gauss_order: s.gauss_order,
        solver_tol: s.solver.tol,
    }
}

pub fn load_mesh(s: &Scenario) -> Result<(Mesh, Option<usize>)> {
    match &s.mesh {
        MeshSource::Builtin(n) => Ok((simplified_mesh(s, *n).context("meshing the simplified geometry")?, Some(*n))),
        MeshSource::External(path) => Ok((mesh_io::read_mesh(path)?, None)),
    }
}

pub fn solve_reference(s: &Scenario) -> Result<Option<Reference>> {
    let (mesh, values) = match &s.reference {
        ReferenceSource::None => return Ok(None),
        ReferenceSource::External { mesh, field } => {
            let m = mesh_io::read_mesh(mesh)?;
            let v = mesh_io::read_field(field, &m)?;
            (m, v)
        }
        ReferenceSource::Builtin(n) => {
            let mesh = exact_mesh(s, *n).context("meshing the exact geometry")?;
            let data = project_data(&domain_problem(&s.domain), &mesh);
            let u = solve_poisson(&mesh, &data, s.solver.reference_tol).context("reference solve")?;
            let values = u.values;
            (mesh, values)
        }
    };
    Ok(Some(Reference { mesh, values }))
}

/// Identifies the exact geometry and reference discretisation of a scenario.
fn reference_key(s: &Scenario) -> Option<String> {
    let eps: Vec<u64> = s.features.iter().map(|f| f.eps.unwrap_or(0.0).to_bits()).collect();
    match &s.reference {
        ReferenceSource::None => None,
        r => Some(format!("{r:?}|{eps:?}")),
    }
}

/// Solves and estimates one study point.
pub fn run_point(s: &Scenario, reference: Option<&Reference>, keep_fields: bool) -> Result<PointResult> {
    let (mesh, n) = load_mesh(s)?;
    let fmeshes = feature_meshes(s, n)?;
    let fm: Vec<(usize, &Mesh)> = fmeshes.iter().map(|(id, m)| (*id, m)).collect();
    let est = estimate(&s.domain, &s.included(), &mesh, &fm, &options(s), &ParallelReconstructor)
        .with_context(|| format!("estimating {}", s.run_id))?;
    let error = reference
        .map(|r| est.reference_error(&r.field()))
        .transpose()
        .context("comparing with the reference solution")?;
    let eps = s.features.iter().filter_map(|f| f.eps).collect();
    let report = EstimatorReport::new(
        s.run_id.clone(),
        mesh.h(),
        mesh.n_vertices(),
        eps,
        est.components.clone(),
        s.constants,
        error,
    )?;
    let snapshot = if keep_fields {
        let sol = &est.simplified;
        let cells = eta_zero_cells(&sol.sigma, &sol.u)?;
        Some(Snapshot {
            sigma: (0..mesh.n_triangles()).map(|t| sol.sigma.cell_mean(t)).collect(),
            eta_0: cells.iter().map(|c| c.sqrt()).collect(),
            u: sol.u.values.clone(),
            mesh: mesh.clone(),
        })
    } else {
        None
    };
    Ok(PointResult { report, snapshot })
}

/// Runs a configuration without a study.
pub fn run_single(cfg: &RunConfig) -> Result<PointResult> {
    let points = cfg.points();
    if points.len() != 1 {
        bail!("configuration `{}` defines a study; use the sweep command", cfg.run_id);
    }
    let s = cfg.scenario(points[0])?;
    let reference = solve_reference(&s)?;
    run_point(&s, reference.as_ref(), true)
}

/// Runs every study point. References are shared between points with the
/// same exact geometry; points run concurrently and come back in study order.
pub fn run_sweep(cfg: &RunConfig, keep_fields: bool) -> Result<Vec<PointResult>> {
    let scenarios = cfg
        .points()
        .into_iter()
        .map(|p| cfg.scenario(p))
        .collect::<Result<Vec<_>>>()?;
    let mut unique: BTreeMap<String, usize> = BTreeMap::new();
    for (k, s) in scenarios.iter().enumerate() {
        if let Some(key) = reference_key(s) {
            unique.entry(key).or_insert(k);
        }
    }
    let solved: Vec<(String, Reference)> = unique
        .into_par_iter()
        .map(|(key, k)| {
            let r = solve_reference(&scenarios[k])?.expect("scenario has a reference");
            Ok((key, r))
        })
        .collect::<Result<_>>()?;
    let references: BTreeMap<String, Reference> = solved.into_iter().collect();
    scenarios
        .par_iter()
        .map(|s| {
            let r = reference_key(s).map(|k| &references[&k]);
            run_point(s, r, keep_fields)
        })
        .collect()
}

/// Solves on the simplified geometry only.
pub fn solve_only(cfg: &RunConfig) -> Result<Snapshot> {
    let s = cfg.scenario(cfg.points()[0])?;
    let (mesh, _) = load_mesh(&s)?;
    let sol = solve_simplified(&mesh, &s.domain, &options(&s), &ParallelReconstructor)?;
    let cells = eta_zero_cells(&sol.sigma, &sol.u)?;
    Ok(Snapshot {
        sigma: (0..mesh.n_triangles()).map(|t| sol.sigma.cell_mean(t)).collect(),
        eta_0: cells.iter().map(|c| c.sqrt()).collect(),
        u: sol.u.values.clone(),
        mesh: mesh.clone(),
    })
}
