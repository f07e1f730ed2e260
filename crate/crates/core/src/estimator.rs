//! Estimator quantities: the curve estimators of the defeaturing error, the
//! flux-based numerical estimator, their aggregation and the effectivity index.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::fem::{gradient_on_triangle, ScalarField};
use crate::flux::{flux_normal_trace, FluxField};
use crate::geometry::CurveQuadrature;
use crate::quadrature::TRIANGLE_DEG5;
use crate::{Error, Result};

/// Root of `ζ + log ζ = 0` by Newton iteration.
pub fn zeta() -> f64 {
    let mut z: f64 = 0.5;
    for _ in 0..50 {
        let step = (z + z.ln()) / (1.0 + 1.0 / z);
        z -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    z
}

/// Size-dependent constant `c_ω` for a `k`-dimensional piece of a
/// `d`-dimensional boundary. Only `(k, d) = (1, 2)` is implemented.
pub fn c_omega(measure: f64, k: usize, d: usize) -> Result<f64> {
    if !(measure > 0.0) || !measure.is_finite() {
        return Err(Error::InvalidArgument(format!("measure must be positive, got {measure}")));
    }
    match (k, d) {
        (1, 2) => Ok(c_line(measure)),
        (2, 3) => Err(Error::InvalidArgument("three-dimensional constant c_omega is not supported".into())),
        _ => Err(Error::InvalidArgument(format!("no constant c_omega for (k, d) = ({k}, {d})"))),
    }
}

fn c_line(length: f64) -> f64 {
    (-length.ln()).max(zeta()).sqrt()
}

/// Which defect a set of samples represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DefectKind {
    /// `g + σ·n` on the free boundary of a removed negative feature.
    Negative,
    /// `σ̃·n_F − g_0` on the shared boundary of a positive feature.
    PositiveGamma0,
    /// `σ̃·n_F + g` on the free boundary of a positive feature off its extension.
    PositiveGammaR,
}

/// Defect values at the nodes of a curve quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectSamples {
    pub quadrature: CurveQuadrature,
    pub values: Vec<f64>,
}

impl DefectSamples {
    pub fn new(quadrature: CurveQuadrature, values: Vec<f64>) -> Result<Self> {
        if quadrature.nodes.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} defect values for {} quadrature nodes",
                values.len(),
                quadrature.nodes.len()
            )));
        }
        if !(quadrature.length() > 0.0) {
            return Err(Error::InvalidArgument("defect curve has zero length".into()));
        }
        Ok(Self { quadrature, values })
    }

    pub fn length(&self) -> f64 {
        self.quadrature.length()
    }

    /// Average of the defect over the curve.
    pub fn mean(&self) -> f64 {
        self.quadrature.integrate(&self.values) / self.length()
    }
}

/// Builds the defect from the normal trace of `flux` and the data values at
/// the quadrature nodes.
pub fn defect_on_gamma(
    flux: &FluxField,
    q: CurveQuadrature,
    g_values: &[f64],
    kind: DefectKind,
) -> Result<DefectSamples> {
    if g_values.len() != q.nodes.len() {
        return Err(Error::Dimension(format!(
            "{} data values for {} quadrature nodes",
            g_values.len(),
            q.nodes.len()
        )));
    }
    let trace = flux_normal_trace(flux, &q)?;
    let values = trace
        .iter()
        .zip(g_values)
        .map(|(s, g)| match kind {
            DefectKind::Negative | DefectKind::PositiveGammaR => g + s,
            DefectKind::PositiveGamma0 => s - g,
        })
        .collect();
    DefectSamples::new(q, values)
}

/// The two parts of a curve estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurveEstimate {
    /// `(|γ| ‖d − d̄‖²)^{1/2}`
    pub fluctuation: f64,
    /// `c_γ |γ| |d̄|`
    pub mean: f64,
}

impl CurveEstimate {
    pub fn value(&self) -> f64 {
        self.fluctuation.hypot(self.mean)
    }
}

pub fn eta_curve_parts(ds: &DefectSamples) -> CurveEstimate {
    let len = ds.length();
    let avg = ds.mean();
    let spread: f64 = ds
        .quadrature
        .nodes
        .iter()
        .zip(&ds.values)
        .map(|(n, d)| n.weight * (d - avg) * (d - avg))
        .sum();
    CurveEstimate {
        fluctuation: (len * spread).sqrt(),
        mean: c_line(len) * len * avg.abs(),
    }
}

/// Estimator of the defeaturing error carried by one curve.
pub fn eta_curve(ds: &DefectSamples) -> f64 {
    eta_curve_parts(ds).value()
}

/// `‖σ + ∇u_h‖` over the common mesh.
pub fn eta_zero(flux: &FluxField, u: &ScalarField) -> Result<f64> {
    Ok(eta_zero_cells(flux, u)?.iter().fold(0.0, |s, c| s + c).sqrt())
}

/// Squared elementwise contributions to [`eta_zero`].
pub fn eta_zero_cells(flux: &FluxField, u: &ScalarField) -> Result<Vec<f64>> {
    let mesh = flux.mesh();
    if !core::ptr::eq(mesh, u.mesh) {
        return Err(Error::InvalidArgument("flux and solution live on different meshes".into()));
    }
    Ok((0..mesh.n_triangles())
        .map(|t| {
            let g = gradient_on_triangle(u, t);
            let [a, b, c] = mesh.triangle_points(t);
            TRIANGLE_DEG5
                .map(a, b, c, mesh.area(t))
                .map(|(p, _, w)| w * (flux.eval_on(t, p) + g).norm_squared())
                .sum()
        })
        .collect())
}

/// Weights of the defeaturing part of the total estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EstimatorConstants {
    /// Single negative feature.
    pub c_d: f64,
    /// Single positive feature.
    pub c_d_tilde: f64,
    /// Several features.
    pub alpha_d: f64,
}

impl Default for EstimatorConstants {
    fn default() -> Self {
        Self {
            c_d: 1.0,
            c_d_tilde: 1.0,
            alpha_d: 1.0,
        }
    }
}

impl EstimatorConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_d", self.c_d), ("c_d_tilde", self.c_d_tilde), ("alpha_d", self.alpha_d)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("constant {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Estimator components of one omitted feature.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum FeatureEstimate {
    Negative {
        id: usize,
        eta_gamma: f64,
    },
    Positive {
        id: usize,
        eta_gamma0: f64,
        eta_gamma_r: f64,
        eta_0_tilde: f64,
    },
}

impl FeatureEstimate {
    pub fn id(&self) -> usize {
        match *self {
            FeatureEstimate::Negative { id, .. } | FeatureEstimate::Positive { id, .. } => id,
        }
    }

    /// Defeaturing contribution of the feature.
    pub fn eta_gamma(&self) -> f64 {
        match *self {
            FeatureEstimate::Negative { eta_gamma, .. } => eta_gamma,
            FeatureEstimate::Positive {
                eta_gamma0, eta_gamma_r, ..
            } => eta_gamma0.hypot(eta_gamma_r),
        }
    }

    pub fn eta_0_tilde(&self) -> f64 {
        match *self {
            FeatureEstimate::Negative { .. } => 0.0,
            FeatureEstimate::Positive { eta_0_tilde, .. } => eta_0_tilde,
        }
    }

    fn values(&self) -> Vec<f64> {
        match *self {
            FeatureEstimate::Negative { eta_gamma, .. } => alloc::vec![eta_gamma],
            FeatureEstimate::Positive {
                eta_gamma0,
                eta_gamma_r,
                eta_0_tilde,
                ..
            } => alloc::vec![eta_gamma0, eta_gamma_r, eta_0_tilde],
        }
    }
}

/// Everything the total estimator is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateComponents {
    pub eta_0: f64,
    pub features: Vec<FeatureEstimate>,
}

impl EstimateComponents {
    /// Root-sum-square of the defeaturing contributions.
    pub fn eta_gamma(&self) -> f64 {
        self.features.iter().fold(0.0, |s, f| s + f.eta_gamma().powi(2)).sqrt()
    }

    /// Root-sum-square of the numerical estimators on feature meshes.
    pub fn eta_0_tilde(&self) -> f64 {
        self.features.iter().fold(0.0, |s, f| s + f.eta_0_tilde().powi(2)).sqrt()
    }

    fn check(&self) -> Result<()> {
        let bad = |v: f64| !(v >= 0.0) || !v.is_finite();
        if bad(self.eta_0) {
            return Err(Error::InvalidArgument(format!("eta_0 = {} is not a valid estimator", self.eta_0)));
        }
        for (i, f) in self.features.iter().enumerate() {
            if f.values().into_iter().any(bad) {
                return Err(Error::InvalidArgument(format!("feature {} has an invalid component", f.id())));
            }
            if self.features[..i].iter().any(|g| g.id() == f.id()) {
                return Err(Error::InvalidArgument(format!("feature {} listed twice", f.id())));
            }
        }
        Ok(())
    }
}

/// Total estimator for the configuration described by `c`.
///
/// A single negative feature gives `C_D η_γ + η_0`; a single positive one
/// gives `C̃_D (η̃_γ0² + η̃_γr²)^{1/2} + (η_0² + η̃_0²)^{1/2}`. With several
/// features the defeaturing contributions are combined root-sum-square and
/// weighted by `α_D`, and the numerical ones are combined root-sum-square.
pub fn aggregate_total(c: &EstimateComponents, consts: &EstimatorConstants) -> Result<f64> {
    consts.validate()?;
    c.check()?;
    let weight = match c.features.as_slice() {
        [] => 1.0,
        [FeatureEstimate::Negative { .. }] => consts.c_d,
        [FeatureEstimate::Positive { .. }] => consts.c_d_tilde,
        _ => consts.alpha_d,
    };
    Ok(weight * c.eta_gamma() + c.eta_0.hypot(c.eta_0_tilde()))
}

/// Ratio of the total estimator to the true error.
pub fn effectivity(eta_total: f64, error_energy: f64) -> Result<f64> {
    if !(error_energy > 0.0) || !error_energy.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "effectivity needs a positive error, got {error_energy}"
        )));
    }
    Ok(eta_total / error_energy)
}

/// Estimator values of one run together with its metadata.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EstimatorReport {
    pub run_id: String,
    pub h: f64,
    pub n_dof: usize,
    /// Characteristic sizes of the features of the run.
    pub eps: Vec<f64>,
    pub features: Vec<FeatureEstimate>,
    pub eta_gamma: f64,
    pub eta_0: f64,
    pub eta_0_tilde: f64,
    pub eta_total: f64,
    pub error_energy: Option<f64>,
    pub effectivity: Option<f64>,
    pub constants: EstimatorConstants,
}

impl EstimatorReport {
    pub fn new(
        run_id: String,
        h: f64,
        n_dof: usize,
        eps: Vec<f64>,
        components: EstimateComponents,
        constants: EstimatorConstants,
        error_energy: Option<f64>,
    ) -> Result<Self> {
        let eta_total = aggregate_total(&components, &constants)?;
        let effectivity = error_energy.map(|e| effectivity(eta_total, e)).transpose()?;
        Ok(Self {
            run_id,
            h,
            n_dof,
            eps,
            eta_gamma: components.eta_gamma(),
            eta_0: components.eta_0,
            eta_0_tilde: components.eta_0_tilde(),
            features: components.features,
            eta_total,
            error_energy,
            effectivity,
            constants,
        })
    }

    pub fn components(&self) -> EstimateComponents {
        EstimateComponents {
            eta_0: self.eta_0,
            features: self.features.clone(),
        }
    }

    /// Checks that the stored totals follow from the stored components.
    pub fn is_consistent(&self, rel_tol: f64) -> bool {
        let Ok(total) = aggregate_total(&self.components(), &self.constants) else {
            return false;
        };
        let close = |a: f64, b: f64| (a - b).abs() <= rel_tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        let eff_ok = match (self.error_energy, self.effectivity) {
            (Some(e), Some(eff)) => close(eff, self.eta_total / e),
            (None, None) => true,
            _ => false,
        };
        close(total, self.eta_total) && eff_ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{project_data, solve_poisson, Condition, ProblemSpec};
    use crate::flux::{reconstruct_flux, RtSpace};
    use crate::geometry::{clip_curve_to_mesh, Curve, CurveNode};
    use crate::mesh::generate_unit_square;
    use crate::Vec2;
    use alloc::sync::Arc;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn no_features_give_positive_zero() {
        let c = EstimateComponents { eta_0: 0.5, features: vec![] };
        assert!(c.eta_gamma().is_sign_positive());
        assert!(c.eta_0_tilde().is_sign_positive());
    }

    fn line_quadrature(a: Vec2, b: Vec2, pieces: usize) -> CurveQuadrature {
        let (x, w) = crate::quadrature::gauss_legendre(4).unwrap();
        let n = (b - a).right_normal().normalized();
        let mut q = CurveQuadrature::default();
        for k in 0..pieces {
            let p = a.lerp(b, k as f64 / pieces as f64);
            let r = a.lerp(b, (k + 1) as f64 / pieces as f64);
            for (xi, wi) in x.iter().zip(&w) {
                q.nodes.push(CurveNode {
                    point: p.lerp(r, *xi),
                    weight: wi * p.distance(r),
                    normal: n,
                    triangle: 0,
                });
            }
        }
        q
    }

    fn samples(q: CurveQuadrature, d: impl Fn(Vec2) -> f64) -> DefectSamples {
        let v = q.nodes.iter().map(|n| d(n.point)).collect();
        DefectSamples::new(q, v).unwrap()
    }

    #[test]
    fn zeta_solves_the_fixed_point() {
        let z = zeta();
        assert!((z - 0.567143290409784).abs() < 1e-15);
        assert!((z + z.ln()).abs() < 1e-15);
    }

    #[test]
    fn c_omega_examples() {
        assert!((c_omega(1.0, 1, 2).unwrap() - zeta().sqrt()).abs() < 1e-15);
        assert!((c_omega(1.0, 1, 2).unwrap() - 0.753089).abs() < 1e-6);
        assert!((c_omega((-1.0f64).exp(), 1, 2).unwrap() - 1.0).abs() < 1e-15);
        assert!(c_omega(0.0, 1, 2).is_err());
        assert!(c_omega(-1.0, 1, 2).is_err());
        assert!(c_omega(0.5, 2, 3).is_err());
    }

    #[test]
    fn constant_defect_on_half_length_curve() {
        let q = line_quadrature(Vec2::new(0.0, 0.0), Vec2::new(0.5, 0.0), 3);
        let e = eta_curve_parts(&samples(q, |_| 2.0));
        assert!(e.fluctuation.abs() < 1e-14);
        assert!((e.value() - 2f64.ln().sqrt()).abs() < 1e-12);
        assert!((e.value() - 0.832555).abs() < 1e-6);
    }

    #[test]
    fn linear_defect_on_unit_segment() {
        let q = line_quadrature(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), 1);
        let eta = eta_curve(&samples(q, |p| p.x));
        let expect = (1.0 / 12.0 + zeta() / 4.0).sqrt();
        assert!((eta - expect).abs() < 1e-13);
        assert!((eta - 0.474467).abs() < 1e-6);
    }

    #[test]
    fn zero_defect() {
        let q = line_quadrature(Vec2::new(0.2, 0.2), Vec2::new(0.3, 0.7), 2);
        assert_eq!(eta_curve(&samples(q, |_| 0.0)), 0.0);
    }

    #[test]
    fn samples_validate_shape() {
        let q = line_quadrature(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), 1);
        assert!(DefectSamples::new(q, vec![1.0]).is_err());
        assert!(DefectSamples::new(CurveQuadrature::default(), vec![]).is_err());
    }

    fn unit_square_flux(v: impl Fn(Vec2) -> Vec2) -> (crate::mesh::Mesh, Vec<f64>) {
        let mesh = generate_unit_square(4, &|_| true);
        let space = RtSpace::new(&mesh).unwrap();
        let c = space.interpolate(&v).unwrap().coefficients;
        (mesh.clone(), c)
    }

    #[test]
    fn defect_sign_conventions() {
        let (mesh, c) = unit_square_flux(|_| Vec2::new(0.0, -0.1));
        let sigma = FluxField::new(RtSpace::new(&mesh).unwrap(), c).unwrap();
        // segment from right to left: right normal points up, σ·n = −0.1
        let curve = Curve::new(vec![[Vec2::new(0.8, 0.3), Vec2::new(0.1, 0.3)]]);
        let q = clip_curve_to_mesh(&curve, &mesh, 4).unwrap();
        let n = q.nodes.len();
        let flipped = Curve::new(vec![[Vec2::new(0.1, 0.3), Vec2::new(0.8, 0.3)]]);
        let qf = clip_curve_to_mesh(&flipped, &mesh, 4).unwrap();
        let neg = defect_on_gamma(&sigma, qf, &vec![0.0; n], DefectKind::Negative).unwrap();
        assert!(neg.values.iter().all(|v| (v - 0.1).abs() < 1e-13));
        let g0 = defect_on_gamma(&sigma, q.clone(), &vec![-0.1; n], DefectKind::PositiveGamma0).unwrap();
        assert!(g0.values.iter().all(|v| v.abs() < 1e-13));
        let gr = defect_on_gamma(&sigma, q, &vec![0.1; n], DefectKind::PositiveGammaR).unwrap();
        assert!(gr.values.iter().all(|v| v.abs() < 1e-13));
        assert!(eta_curve(&gr) < 1e-12);
    }

    #[test]
    fn eta_zero_examples() {
        let mesh = generate_unit_square(6, &|_| true);
        let space = RtSpace::new(&mesh).unwrap();
        let u = ScalarField::interpolate(&mesh, &|p| 2.0 * p.x - p.y);
        let exact = space.interpolate(&|_| Vec2::new(-2.0, 1.0)).unwrap();
        assert!(eta_zero(&exact, &u).unwrap() < 1e-13);
        let shifted = space.interpolate(&|_| Vec2::new(-2.0 + 0.3, 1.0)).unwrap();
        assert!((eta_zero(&shifted, &u).unwrap() - 0.3).abs() < 1e-13);
        let other = generate_unit_square(6, &|_| true);
        let v = ScalarField::interpolate(&other, &|p| p.x);
        assert!(eta_zero(&exact, &v).is_err());
    }

    #[test]
    fn eta_zero_bounds_the_error_of_a_smooth_problem() {
        use core::f64::consts::PI;
        let f: Arc<dyn Fn(Vec2) -> f64 + Send + Sync> =
            Arc::new(|p: Vec2| 2.0 * PI * PI * (PI * p.x).sin() * (PI * p.y).sin());
        let spec = ProblemSpec {
            forcing: f,
            conditions: Arc::new(|_| Condition::Dirichlet(Arc::new(|_| 0.0))),
        };
        let mesh = generate_unit_square(8, &|_| true);
        let data = project_data(&spec, &mesh);
        let u = solve_poisson(&mesh, &data, 1e-13).unwrap();
        let space = RtSpace::new(&mesh).unwrap();
        let sigma = reconstruct_flux(&space, &u, &data).unwrap();
        let eta = eta_zero(&sigma, &u).unwrap();
        // ‖∇(u − u_h)‖² = ‖∇u‖² − ‖∇u_h‖² by Galerkin orthogonality
        // (the data oscillation of f is far below the estimator here)
        let exact2 = PI * PI / 2.0;
        let err = (exact2 - crate::fem::energy_norm(&u).powi(2)).sqrt();
        assert!(eta >= err * 0.999, "eta {eta} err {err}");
        assert!(eta <= 1.3 * err, "eta {eta} err {err}");
    }

    #[test]
    fn aggregation_examples() {
        let k = EstimatorConstants::default();
        let neg = EstimateComponents {
            eta_0: 0.101,
            features: vec![FeatureEstimate::Negative { id: 1, eta_gamma: 0.162 }],
        };
        assert!((aggregate_total(&neg, &k).unwrap() - 0.263).abs() < 1e-12);

        let pos = EstimateComponents {
            eta_0: 0.37,
            features: vec![FeatureEstimate::Positive {
                id: 1,
                eta_gamma0: 0.0,
                eta_gamma_r: 0.0,
                eta_0_tilde: 0.0,
            }],
        };
        assert!((aggregate_total(&pos, &k).unwrap() - 0.37).abs() < 1e-15);

        let table: Vec<FeatureEstimate> = [0.147, 0.050, 0.008, 0.026, 0.036]
            .iter()
            .enumerate()
            .map(|(i, &e)| FeatureEstimate::Negative { id: i + 1, eta_gamma: e })
            .collect();
        let five = EstimateComponents { eta_0: 0.0, features: table };
        let g = five.eta_gamma();
        assert!((0.161..0.1625).contains(&g), "{g}");
        assert!((aggregate_total(&five, &k).unwrap() - g).abs() < 1e-15);
    }

    #[test]
    fn aggregation_formulas() {
        let k = EstimatorConstants {
            c_d: 2.0,
            c_d_tilde: 3.0,
            alpha_d: 5.0,
        };
        let pos = EstimateComponents {
            eta_0: 0.3,
            features: vec![FeatureEstimate::Positive {
                id: 7,
                eta_gamma0: 0.3,
                eta_gamma_r: 0.4,
                eta_0_tilde: 0.4,
            }],
        };
        assert!((aggregate_total(&pos, &k).unwrap() - (3.0 * 0.5 + 0.5)).abs() < 1e-14);
        let both = EstimateComponents {
            eta_0: 0.3,
            features: vec![
                FeatureEstimate::Positive {
                    id: 1,
                    eta_gamma0: 0.3,
                    eta_gamma_r: 0.0,
                    eta_0_tilde: 0.4,
                },
                FeatureEstimate::Negative { id: 2, eta_gamma: 0.4 },
            ],
        };
        assert!((aggregate_total(&both, &k).unwrap() - (5.0 * 0.5 + 0.5)).abs() < 1e-14);
    }

    #[test]
    fn aggregation_rejects_bad_components() {
        let k = EstimatorConstants::default();
        let dup = EstimateComponents {
            eta_0: 0.1,
            features: vec![
                FeatureEstimate::Negative { id: 1, eta_gamma: 0.1 },
                FeatureEstimate::Negative { id: 1, eta_gamma: 0.2 },
            ],
        };
        assert!(aggregate_total(&dup, &k).is_err());
        let nan = EstimateComponents {
            eta_0: f64::NAN,
            features: vec![],
        };
        assert!(aggregate_total(&nan, &k).is_err());
        let bad_k = EstimatorConstants { c_d: 0.0, ..k };
        let ok = EstimateComponents {
            eta_0: 0.1,
            features: vec![],
        };
        assert!(aggregate_total(&ok, &bad_k).is_err());
    }

    #[test]
    fn effectivity_examples() {
        assert!((effectivity(0.214, 0.079).unwrap() - 2.71).abs() < 0.01);
        assert!((effectivity(0.115, 0.052).unwrap() - 2.21).abs() < 0.01);
        assert_eq!(effectivity(0.3, 0.3).unwrap(), 1.0);
        assert!(effectivity(1.0, 0.0).is_err());
    }

    #[test]
    fn report_is_consistent() {
        let comps = EstimateComponents {
            eta_0: 0.05,
            features: vec![FeatureEstimate::Negative { id: 1, eta_gamma: 0.2 }],
        };
        let r = EstimatorReport::new("r".into(), 0.1, 100, vec![0.1], comps, Default::default(), Some(0.1)).unwrap();
        assert!((r.eta_total - 0.25).abs() < 1e-15);
        assert!((r.effectivity.unwrap() - 2.5).abs() < 1e-14);
        assert!(r.is_consistent(1e-14));
        let mut broken = r.clone();
        broken.eta_total *= 2.0;
        assert!(!broken.is_consistent(1e-14));
    }

    proptest! {
        #[test]
        fn eta_curve_is_homogeneous(vals in proptest::collection::vec(-5.0f64..5.0, 8), t in -10.0f64..10.0) {
            let q = line_quadrature(Vec2::new(0.1, 0.1), Vec2::new(0.6, 0.4), 2);
            let d = DefectSamples::new(q.clone(), vals.clone()).unwrap();
            let scaled = DefectSamples::new(q, vals.iter().map(|v| t * v).collect()).unwrap();
            let (a, b) = (eta_curve(&d), eta_curve(&scaled));
            prop_assert!((b - t.abs() * a).abs() <= 1e-12 * (1.0 + b));
            let parts = eta_curve_parts(&d);
            prop_assert!(parts.fluctuation >= 0.0 && parts.mean >= 0.0);
            prop_assert!((parts.fluctuation.powi(2) + parts.mean.powi(2) - a * a).abs() <= 1e-12 * (1.0 + a * a));
            let all_zero = vals.iter().all(|v| *v == 0.0);
            prop_assert_eq!(a == 0.0, all_zero);
        }

        #[test]
        fn aggregate_is_monotone(
            e0 in 0.0f64..1.0, g1 in 0.0f64..1.0, g2 in 0.0f64..1.0,
            p0 in 0.0f64..1.0, pr in 0.0f64..1.0, pt in 0.0f64..1.0,
            which in 0usize..5, bump in 0.0f64..0.5,
        ) {
            let k = EstimatorConstants::default();
            let build = |v: [f64; 6]| EstimateComponents {
                eta_0: v[0],
                features: vec![
                    FeatureEstimate::Negative { id: 1, eta_gamma: v[1] },
                    FeatureEstimate::Negative { id: 2, eta_gamma: v[2] },
                    FeatureEstimate::Positive { id: 3, eta_gamma0: v[3], eta_gamma_r: v[4], eta_0_tilde: v[5] },
                ],
            };
            let base = [e0, g1, g2, p0, pr, pt];
            let mut up = base;
            up[which] += bump;
            let (a, b) = (aggregate_total(&build(base), &k).unwrap(), aggregate_total(&build(up), &k).unwrap());
            prop_assert!(b >= a - 1e-15);
        }
    }
}
