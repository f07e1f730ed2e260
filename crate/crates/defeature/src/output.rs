//! CSV tables, JSON reports and legacy VTK files.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use defeature_core::estimator::EstimatorReport;
use defeature_core::mesh::Mesh;
use defeature_core::Vec2;

/// Quotes a CSV field when it contains a separator, a quote or a line break.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Scientific notation with 17 significant digits.
pub fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

/// Three significant digits, used for effectivity indices.
pub fn sci3(v: f64) -> String {
    format!("{v:.2e}")
}

pub fn csv_header(feature_ids: &[usize]) -> String {
    let mut cols = vec!["run_id".to_string(), "h".into(), "n_dof".into(), "eps".into(), "err_energy".into()];
    cols.extend(feature_ids.iter().map(|id| format!("eta_gamma_{id}")));
    cols.extend(["eta_gamma", "eta_0", "eta_0_tilde", "eta_tot", "effectivity"].map(String::from));
    cols.join(",")
}

pub fn csv_row(r: &EstimatorReport, feature_ids: &[usize]) -> String {
    let opt = |v: Option<f64>, f: fn(f64) -> String| v.map(f).unwrap_or_default();
    let eps = r.eps.iter().copied().fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
    let mut cols = vec![
        csv_field(&r.run_id),
        sci(r.h),
        r.n_dof.to_string(),
        opt(eps, sci),
        opt(r.error_energy, sci),
    ];
    for id in feature_ids {
        let v = r.features.iter().find(|f| f.id() == *id).map(|f| f.eta_gamma());
        cols.push(opt(v, sci));
    }
    cols.extend([sci(r.eta_gamma), sci(r.eta_0), sci(r.eta_0_tilde), sci(r.eta_total)]);
    cols.push(opt(r.effectivity, sci3));
    cols.join(",")
}

/// One header line and one row per report; feature columns follow `feature_ids`.
pub fn csv_table(reports: &[EstimatorReport], feature_ids: &[usize]) -> String {
    let mut out = csv_header(feature_ids);
    out.push('\n');
    for r in reports {
        out.push_str(&csv_row(r, feature_ids));
        out.push('\n');
    }
    out
}

pub fn report_to_json(r: &EstimatorReport) -> String {
    serde_json::to_string_pretty(r).expect("report serializes")
}

pub fn reports_to_json(r: &[EstimatorReport]) -> String {
    serde_json::to_string_pretty(r).expect("reports serialize")
}

pub fn report_from_json(text: &str) -> Result<EstimatorReport> {
    serde_json::from_str(text).context("invalid estimator report")
}

/// Vertex table `vertex,x,y,value`.
pub fn field_csv(mesh: &Mesh, values: &[f64]) -> String {
    let mut out = String::from("vertex,x,y,value\n");
    for (i, (p, v)) in mesh.vertices().iter().zip(values).enumerate() {
        let _ = writeln!(out, "{i},{},{},{}", sci(p.x), sci(p.y), sci(*v));
    }
    out
}

/// Data attached to a legacy VTK unstructured grid.
#[derive(Debug, Clone, Copy)]
pub enum VtkData<'a> {
    PointScalar(&'a str, &'a [f64]),
    CellScalar(&'a str, &'a [f64]),
    CellVector(&'a str, &'a [Vec2]),
}

/// ASCII legacy VTK unstructured grid of a triangle mesh.
pub fn vtk(mesh: &Mesh, title: &str, data: &[VtkData]) -> String {
    let mut s = String::new();
    let nt = mesh.n_triangles();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{}", title.lines().next().unwrap_or(""));
    let _ = writeln!(s, "ASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", mesh.n_vertices());
    for p in mesh.vertices() {
        let _ = writeln!(s, "{} {} 0", sci(p.x), sci(p.y));
    }
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    let points: Vec<_> = data.iter().filter(|d| matches!(d, VtkData::PointScalar(..))).collect();
    if !points.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", mesh.n_vertices());
        for d in points {
            if let VtkData::PointScalar(name, v) = d {
                scalars(&mut s, name, v);
            }
        }
    }
    let cells: Vec<_> = data.iter().filter(|d| !matches!(d, VtkData::PointScalar(..))).collect();
    if !cells.is_empty() {
        let _ = writeln!(s, "CELL_DATA {nt}");
        for d in cells {
            match d {
                VtkData::CellScalar(name, v) => scalars(&mut s, name, v),
                VtkData::CellVector(name, v) => {
                    let _ = writeln!(s, "VECTORS {name} double");
                    for w in v.iter() {
                        let _ = writeln!(s, "{} {} 0", sci(w.x), sci(w.y));
                    }
                }
                VtkData::PointScalar(..) => unreachable!(),
            }
        }
    }
    s
}

fn scalars(s: &mut String, name: &str, v: &[f64]) {
    let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
    for x in v {
        let _ = writeln!(s, "{}", sci(*x));
    }
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}
