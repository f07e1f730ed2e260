//! Run configuration: a single JSON document describing the geometry, the
//! data, the mesh, the study and the outputs. See `schema/run_config.schema.json`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use defeature_core::estimator::EstimatorConstants;
use defeature_core::geometry::{regular_polygon, DomainSpec, FeatureKind, FeatureSpec};
use defeature_core::mesh::Rect;
use defeature_core::Vec2;
use serde::{Deserialize, Serialize};

use crate::expr;

/// A number, or an expression in the feature size `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Num {
    Value(f64),
    Expr(String),
}

impl Num {
    pub fn eval(&self, eps: f64) -> Result<f64> {
        match self {
            Num::Value(v) => Ok(*v),
            Num::Expr(s) => expr::number(s, eps),
        }
    }
}

impl From<f64> for Num {
    fn from(v: f64) -> Self {
        Num::Value(v)
    }
}

impl From<&str> for Num {
    fn from(s: &str) -> Self {
        Num::Expr(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// Source term `f(x, y)`.
    pub forcing: String,
    #[serde(default = "zero")]
    pub dirichlet_data: String,
    /// Neumann datum on the outer boundary, in `x, y, nx, ny`.
    #[serde(default = "zero")]
    pub outer_neumann: String,
    /// Boolean expression in `x, y` selecting the Dirichlet part of the
    /// unit-square boundary.
    pub dirichlet_boundary: String,
}

fn zero() -> String {
    "0".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindConfig {
    NegativeInternal,
    NegativeBoundary,
    Positive,
}

impl From<KindConfig> for FeatureKind {
    fn from(k: KindConfig) -> Self {
        match k {
            KindConfig::NegativeInternal => FeatureKind::NegativeInternal,
            KindConfig::NegativeBoundary => FeatureKind::NegativeBoundary,
            KindConfig::Positive => FeatureKind::Positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// `[x0, x1, y0, y1]`
    Rect([Num; 4]),
    Square { center: [Num; 2], half_side: Num },
    RegularPolygon { center: [Num; 2], radius: Num, sides: usize },
    /// Counterclockwise vertex list.
    Polygon(Vec<[Num; 2]>),
}

impl Shape {
    fn resolve(&self, eps: f64) -> Result<(Vec<Vec2>, Option<Rect>)> {
        let pt = |p: &[Num; 2]| -> Result<Vec2> { Ok(Vec2::new(p[0].eval(eps)?, p[1].eval(eps)?)) };
        Ok(match self {
            Shape::Rect(r) => {
                let r = Rect::new(r[0].eval(eps)?, r[1].eval(eps)?, r[2].eval(eps)?, r[3].eval(eps)?);
                ensure!(r.x1 > r.x0 && r.y1 > r.y0, "empty rectangle {r:?}");
                (r.corners().to_vec(), Some(r))
            }
            Shape::Square { center, half_side } => {
                let c = pt(center)?;
                let h = half_side.eval(eps)?;
                ensure!(h > 0.0, "square half side must be positive");
                let r = Rect::new(c.x - h, c.x + h, c.y - h, c.y + h);
                (r.corners().to_vec(), Some(r))
            }
            Shape::RegularPolygon { center, radius, sides } => {
                ensure!(*sides >= 3, "a polygon needs at least three sides");
                let r = radius.eval(eps)?;
                ensure!(r > 0.0, "polygon radius must be positive");
                (regular_polygon(pt(center)?, r, *sides), None)
            }
            Shape::Polygon(points) => {
                let pts = points.iter().map(pt).collect::<Result<Vec<_>>>()?;
                let rect = defeature_core::geometry::polygon_as_rect(&pts);
                (pts, rect)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtensionConfig {
    pub rect: [Num; 4],
    #[serde(default = "zero")]
    pub g_tilde: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub id: usize,
    pub kind: KindConfig,
    pub shape: Shape,
    /// Characteristic size; available as `eps` in the shape and data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Neumann datum on the free boundary, in `x, y, nx, ny, eps`.
    #[serde(default = "zero")]
    pub g: String,
    /// Neumann datum put on the shared boundary when the feature is removed.
    #[serde(default = "zero")]
    pub g0: String,
    /// Whether the feature belongs to the simplified geometry.
    #[serde(default)]
    pub include: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extension: Option<ExtensionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshConfig {
    /// Structured `n × n` grid of the unit square.
    Builtin { n: usize },
    /// Mesh file in the JSON mesh format.
    External { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Study {
    #[default]
    None,
    HSweep { n: Vec<usize> },
    EpsSweep { feature: usize, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    #[default]
    None,
    /// Structured mesh of the exact geometry with `n × n` cells.
    Builtin { n: usize },
    /// Structured mesh `2^levels` times finer than the finest study mesh.
    Refine { levels: u32 },
    /// Reference mesh and nodal values from files.
    External { mesh: PathBuf, field: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Vtk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            formats: default_formats(),
        }
    }
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            reference_tol: default_reference_tol(),
        }
    }
}

fn default_tol() -> f64 {
    1e-12
}

fn default_reference_tol() -> f64 {
    1e-10
}

fn default_gauss_order() -> usize {
    defeature_core::geometry::DEFAULT_CURVE_GAUSS_ORDER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub domain: DomainConfig,
    #[serde(default)]
    pub features: Vec<FeatureConfig>,
    pub mesh: MeshConfig,
    #[serde(default)]
    pub study: Study,
    #[serde(default)]
    pub constants: EstimatorConstants,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default = "default_gauss_order")]
    pub gauss_order: usize,
    #[serde(default)]
    pub solver: SolverConfig,
}

/// One point of a study: the mesh resolution and the feature sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyPoint {
    pub n: Option<usize>,
    pub eps: Option<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct FeatureSetup {
    pub spec: FeatureSpec,
    pub include: bool,
    pub eps: Option<f64>,
    /// Axis-aligned bounding rectangle when the feature is a rectangle.
    pub rect: Option<Rect>,
    pub extension_rect: Option<Rect>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    Builtin(usize),
    External(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSource {
    None,
    Builtin(usize),
    External { mesh: PathBuf, field: PathBuf },
}

/// A fully resolved run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub run_id: String,
    pub domain: DomainSpec,
    pub features: Vec<FeatureSetup>,
    pub mesh: MeshSource,
    pub reference: ReferenceSource,
    pub constants: EstimatorConstants,
    pub gauss_order: usize,
    pub solver: SolverConfig,
}

impl Scenario {
    pub fn included(&self) -> Vec<usize> {
        self.features.iter().filter(|f| f.include).map(|f| f.spec.id).collect()
    }

    pub fn feature_ids(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.spec.id).collect()
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).context("invalid run configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("in {}", path.display()))?;
        // relative file references are taken relative to the config file
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let MeshConfig::External { path } = &mut self.mesh {
            fix(path);
        }
        if let ReferenceConfig::External { mesh, field } = &mut self.reference {
            fix(mesh);
            fix(field);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for f in &self.features {
            ensure!(ids.insert(f.id), "feature id {} is used twice", f.id);
        }
        ensure!(self.gauss_order >= 1 && self.gauss_order <= 10, "gauss_order must be in 1..=10");
        ensure!(self.solver.tol > 0.0 && self.solver.reference_tol > 0.0, "solver tolerances must be positive");
        self.constants.validate()?;
        match &self.study {
            Study::None => {}
            Study::HSweep { n } => {
                ensure!(
                    matches!(self.mesh, MeshConfig::Builtin { .. }),
                    "an h-sweep needs the builtin mesh"
                );
                ensure!(n.iter().all(|&n| n > 0), "mesh resolutions must be positive");
            }
            Study::EpsSweep { feature, values } => {
                ensure!(ids.contains(feature), "eps sweep refers to unknown feature {feature}");
                ensure!(values.iter().all(|v| *v > 0.0), "feature sizes must be positive");
            }
        }
        if let ReferenceConfig::Refine { .. } = self.reference {
            ensure!(
                matches!(self.mesh, MeshConfig::Builtin { .. }),
                "reference refinement needs the builtin mesh"
            );
        }
        // resolve every study point once so that expressions and shapes are checked
        for p in self.points() {
            self.scenario(p)?;
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<StudyPoint> {
        match &self.study {
            Study::None => vec![StudyPoint { n: None, eps: None }],
            Study::HSweep { n } => n.iter().map(|&n| StudyPoint { n: Some(n), eps: None }).collect(),
            Study::EpsSweep { feature, values } => values
                .iter()
                .map(|&v| StudyPoint {
                    n: None,
                    eps: Some((*feature, v)),
                })
                .collect(),
        }
    }

    fn finest_n(&self) -> Option<usize> {
        match (&self.study, &self.mesh) {
            (Study::HSweep { n }, _) => n.iter().copied().max(),
            (_, MeshConfig::Builtin { n }) => Some(*n),
            _ => None,
        }
    }

    pub fn scenario(&self, point: StudyPoint) -> Result<Scenario> {
        let d = &self.domain;
        let mut domain = DomainSpec {
            features: Vec::new(),
            forcing: expr::scalar(&d.forcing, 0.0).context("domain.forcing")?,
            dirichlet_data: expr::scalar(&d.dirichlet_data, 0.0).context("domain.dirichlet_data")?,
            outer_neumann: expr::flux(&d.outer_neumann, 0.0).context("domain.outer_neumann")?,
            is_dirichlet: expr::predicate(&d.dirichlet_boundary).context("domain.dirichlet_boundary")?,
        };
        let mut features = Vec::with_capacity(self.features.len());
        for f in &self.features {
            let eps = match point.eps {
                Some((id, v)) if id == f.id => Some(v),
                _ => f.eps,
            };
            let e = eps.unwrap_or(0.0);
            let ctx = || format!("feature {}", f.id);
            let (polygon, rect) = f.shape.resolve(e).with_context(ctx)?;
            let mut spec = FeatureSpec::new(f.id, f.kind.into(), polygon)
                .with_g(expr::flux(&f.g, e).with_context(ctx)?)
                .with_g0(expr::flux(&f.g0, e).with_context(ctx)?);
            let mut extension_rect = None;
            if let Some(ext) = &f.extension {
                ensure!(f.kind == KindConfig::Positive, "feature {}: only positive features take an extension", f.id);
                let r = Rect::new(
                    ext.rect[0].eval(e)?,
                    ext.rect[1].eval(e)?,
                    ext.rect[2].eval(e)?,
                    ext.rect[3].eval(e)?,
                );
                spec = spec.with_extension(r.corners().to_vec(), expr::flux(&ext.g_tilde, e).with_context(ctx)?);
                extension_rect = Some(r);
            }
            if f.include && rect.is_none() && matches!(self.mesh, MeshConfig::Builtin { .. }) {
                bail!("feature {} is included but only rectangles can be meshed by the builtin mesher", f.id);
            }
            domain.features.push(spec.clone());
            features.push(FeatureSetup {
                spec,
                include: f.include,
                eps,
                rect,
                extension_rect,
            });
        }
        let mesh = match (&self.mesh, point.n) {
            (MeshConfig::Builtin { .. }, Some(n)) => MeshSource::Builtin(n),
            (MeshConfig::Builtin { n }, None) => MeshSource::Builtin(*n),
            (MeshConfig::External { path }, _) => MeshSource::External(path.clone()),
        };
        let reference = match &self.reference {
            ReferenceConfig::None => ReferenceSource::None,
            ReferenceConfig::Builtin { n } => ReferenceSource::Builtin(*n),
            ReferenceConfig::Refine { levels } => {
                let n = self.finest_n().context("reference refinement needs a builtin mesh size")?;
                ReferenceSource::Builtin(n << levels)
            }
            ReferenceConfig::External { mesh, field } => ReferenceSource::External {
                mesh: mesh.clone(),
                field: field.clone(),
            },
        };
        let run_id = match point {
            StudyPoint { n: Some(n), .. } => format!("{}-n{n}", self.run_id),
            StudyPoint { eps: Some((_, e)), .. } => format!("{}-eps{e}", self.run_id),
            _ => self.run_id.clone(),
        };
        Ok(Scenario {
            run_id,
            domain,
            features,
            mesh,
            reference,
            constants: self.constants,
            gauss_order: self.gauss_order,
            solver: self.solver,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "run_id": "demo",
        "domain": { "forcing": "x", "dirichlet_boundary": "true" },
        "features": [
            { "id": 1, "kind": "negative_internal", "eps": 0.1,
              "shape": { "square": { "center": [0.5, 0.5], "half_side": "eps/2" } } }
        ],
        "mesh": { "builtin": { "n": 8 } },
        "study": { "h_sweep": { "n": [4, 8] } },
        "reference": { "refine": { "levels": 1 } }
    }"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.gauss_order, 4);
        assert_eq!(cfg.constants, EstimatorConstants::default());
        let pts = cfg.points();
        assert_eq!(pts.len(), 2);
        let s = cfg.scenario(pts[0]).unwrap();
        assert_eq!(s.mesh, MeshSource::Builtin(4));
        assert_eq!(s.reference, ReferenceSource::Builtin(16));
        assert_eq!(s.run_id, "demo-n4");
        let r = s.features[0].rect.unwrap();
        assert!((r.x0 - 0.45).abs() < 1e-15 && (r.x1 - 0.55).abs() < 1e-15);
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_invalid_documents() {
        let dup = MINIMAL.replace(r#""features": ["#, r#""features": [{ "id": 1, "kind": "positive", "shape": { "rect": [1, 1.1, 0, 0.1] } },"#);
        assert!(RunConfig::from_json(&dup).is_err());
        let unknown = MINIMAL.replace(r#""run_id""#, r#""bogus": 1, "run_id""#);
        assert!(RunConfig::from_json(&unknown).is_err());
        let bad_expr = MINIMAL.replace(r#""forcing": "x""#, r#""forcing": "x +""#);
        assert!(RunConfig::from_json(&bad_expr).is_err());
        let sweep = MINIMAL.replace(r#"{ "h_sweep": { "n": [4, 8] } }"#, r#"{ "eps_sweep": { "feature": 9, "values": [0.1] } }"#);
        assert!(RunConfig::from_json(&sweep).is_err());
    }

    #[test]
    fn eps_sweep_overrides_the_feature_size() {
        let text = MINIMAL.replace(
            r#"{ "h_sweep": { "n": [4, 8] } }"#,
            r#"{ "eps_sweep": { "feature": 1, "values": [0.2, 0.1] } }"#,
        );
        let cfg = RunConfig::from_json(&text).unwrap();
        let s = cfg.scenario(cfg.points()[0]).unwrap();
        assert_eq!(s.features[0].eps, Some(0.2));
        assert!((s.features[0].rect.unwrap().x1 - 0.6).abs() < 1e-15);
        assert_eq!(s.reference, ReferenceSource::Builtin(16));
    }
}
