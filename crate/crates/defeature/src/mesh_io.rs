//! JSON mesh and field files.
//!
//! A mesh file is
//!
//! ```json
//! { "vertices": [[0, 0], [1, 0], [0, 1]],
//!   "triangles": [[0, 1, 2]],
//!   "boundary_edges": [[0, 1, "dirichlet"], [1, 2, "neumann"], [2, 0, "feature", 3, "gamma"]] }
//! ```
//!
//! with 0-based counterclockwise triangles. Marked edges are `[i, j, marker]`
//! or `[i, j, marker, feature_id, part]`; `marker` is `dirichlet`, `neumann`
//! or `feature`, and `part` one of `gamma`, `gamma0`, `gammaS`, `gammaR`,
//! `gammaTilde`. Interior edges may be listed with a feature marker to tag
//! interfaces. A field file is `{ "values": [...] }` with one value per vertex.

use std::path::Path;

use anyhow::{bail, Context, Result};
use defeature_core::mesh::{BoundaryMarker, FeaturePart, Mesh};
use defeature_core::Vec2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshFile {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    #[serde(default)]
    boundary_edges: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldFile {
    pub values: Vec<f64>,
}

fn parse_edge(k: usize, row: &[Value]) -> Result<([usize; 2], BoundaryMarker)> {
    let index = |v: &Value| -> Result<usize> {
        v.as_u64()
            .map(|i| i as usize)
            .with_context(|| format!("boundary edge {k}: vertex index must be a non-negative integer"))
    };
    if row.len() < 3 {
        bail!("boundary edge {k}: expected [i, j, marker, ...]");
    }
    let edge = [index(&row[0])?, index(&row[1])?];
    let marker = match row[2].as_str() {
        Some("dirichlet") => BoundaryMarker::Dirichlet,
        Some("neumann") => BoundaryMarker::NeumannOuter,
        Some("feature") => {
            if row.len() != 5 {
                bail!("boundary edge {k}: feature edges need [i, j, \"feature\", id, part]");
            }
            let id = row[3]
                .as_u64()
                .with_context(|| format!("boundary edge {k}: feature id must be a non-negative integer"))?;
            let part = row[4]
                .as_str()
                .and_then(FeaturePart::parse)
                .with_context(|| format!("boundary edge {k}: unknown feature part {}", row[4]))?;
            BoundaryMarker::feature(id as usize, part)
        }
        _ => bail!("boundary edge {k}: unknown marker {}", row[2]),
    };
    if !matches!(marker, BoundaryMarker::Feature { .. }) && row.len() > 3 {
        let extra_is_null = row[3..].iter().all(Value::is_null);
        if row.len() != 5 || !extra_is_null {
            bail!("boundary edge {k}: only feature edges carry an id and a part");
        }
    }
    Ok((edge, marker))
}

pub fn mesh_from_json(text: &str) -> Result<Mesh> {
    let file: MeshFile = serde_json::from_str(text).context("invalid mesh file")?;
    if let Some((k, v)) = file
        .vertices
        .iter()
        .enumerate()
        .find(|(_, v)| !v[0].is_finite() || !v[1].is_finite())
    {
        bail!("vertex {k} has non-finite coordinates {v:?}");
    }
    let markers = file
        .boundary_edges
        .iter()
        .enumerate()
        .map(|(k, row)| parse_edge(k, row))
        .collect::<Result<Vec<_>>>()?;
    let vertices = file.vertices.iter().map(|v| Vec2::new(v[0], v[1])).collect();
    Ok(Mesh::new(vertices, file.triangles, &markers)?)
}

pub fn mesh_to_json(mesh: &Mesh) -> String {
    let rows: Vec<Value> = mesh
        .marked_edges()
        .map(|(e, m)| {
            let [i, j] = oriented(mesh, e);
            match m {
                BoundaryMarker::Dirichlet => json!([i, j, "dirichlet"]),
                BoundaryMarker::NeumannOuter => json!([i, j, "neumann"]),
                BoundaryMarker::Feature { feature_id, part } => json!([i, j, "feature", feature_id, part.as_str()]),
            }
        })
        .collect();
    let doc = json!({
        "vertices": mesh.vertices().iter().map(|v| [v.x, v.y]).collect::<Vec<_>>(),
        "triangles": mesh.triangles(),
        "boundary_edges": rows,
    });
    serde_json::to_string(&doc).expect("mesh serializes")
}

// Boundary edges are written counterclockwise with respect to their triangle.
fn oriented(mesh: &Mesh, e: usize) -> [usize; 2] {
    let edge = mesh.edge(e);
    let [a, b] = edge.vertices;
    if edge.right.is_some() && edge.left.is_none() {
        [b, a]
    } else {
        [a, b]
    }
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read mesh {}", path.display()))?;
    mesh_from_json(&text).with_context(|| format!("in mesh {}", path.display()))
}

pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    std::fs::write(path, mesh_to_json(mesh)).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_field(path: &Path, mesh: &Mesh) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read field {}", path.display()))?;
    let field: FieldFile = serde_json::from_str(&text).with_context(|| format!("invalid field file {}", path.display()))?;
    if field.values.len() != mesh.n_vertices() {
        bail!(
            "field {} has {} values for a mesh with {} vertices",
            path.display(),
            field.values.len(),
            mesh.n_vertices()
        );
    }
    if field.values.iter().any(|v| !v.is_finite()) {
        bail!("field {} has non-finite values", path.display());
    }
    Ok(field.values)
}

pub fn write_field(path: &Path, values: &[f64]) -> Result<()> {
    let text = serde_json::to_string(&FieldFile { values: values.to_vec() }).expect("field serializes");
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use defeature_core::mesh::{generate_with_rect_features, Rect, RectFeature};

    #[test]
    fn round_trip_keeps_topology_and_markers() {
        let f = RectFeature {
            id: 2,
            rect: Rect::new(0.25, 0.5, 1.0, 1.25),
            positive: true,
            include: true,
        };
        let mesh = generate_with_rect_features(4, &[f], &|p| p.x == 0.0).unwrap();
        let back = mesh_from_json(&mesh_to_json(&mesh)).unwrap();
        assert_eq!(back.vertices(), mesh.vertices());
        assert_eq!(back.triangles(), mesh.triangles());
        let a: Vec<_> = mesh.marked_edges().collect();
        let b: Vec<_> = back.marked_edges().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn reports_bad_files() {
        let tri = r#""vertices": [[0,0],[1,0],[0,1]], "triangles": [[0,1,2]]"#;
        let ok = format!(r#"{{{tri}, "boundary_edges": [[0,1,"dirichlet"],[1,2,"neumann",null,null],[2,0,"feature",1,"gamma"]]}}"#);
        assert!(mesh_from_json(&ok).is_ok());
        for bad in [
            format!(r#"{{{tri}, "boundary_edges": [[0,1,"dirichlet"],[1,2,"neumann"]]}}"#),
            format!(r#"{{{tri}, "boundary_edges": [[0,1,"dirichlet"],[1,2,"neumann"],[2,0,"feature",1,"side"]]}}"#),
            format!(r#"{{{tri}, "boundary_edges": [[0,1,"dirichlet"],[1,2,"robin"],[2,0,"neumann"]]}}"#),
            format!(r#"{{{tri}, "boundary_edges": [[0,1,"dirichlet"],[1,2,"neumann"],[2,0,"dirichlet",4,"gamma"]]}}"#),
            r#"{"vertices": [[0,0],[0,1],[1,0]], "triangles": [[0,1,2]], "boundary_edges": []}"#.to_string(),
        ] {
            assert!(mesh_from_json(&bad).is_err(), "{bad}");
        }
    }
}
