//! Ready-made studies.
//!
//! * `test1`: `f = x` on the unit square, homogeneous Dirichlet data, one
//!   internal hole with a homogeneous Neumann condition; an h-sweep for each
//!   of three hole sizes. The hole is a square with the area of a disc of
//!   radius `eps`, so that a conforming reference mesh can be built.
//! * `test2-neg`, `test2-pos`, `test2-both`: `f = 1`, Dirichlet on `x = 0`
//!   and `x = 1`, a notch in the top side and/or a bump under the bottom
//!   side of width and height `eps`, for `eps` in {0.2, 0.05}.
//! * `test3`: Laplace equation with `u = exp(-8(x+y))` on `x = 0` and
//!   `y = 0` and five 16-gon holes. The holes are not meshed, so only the
//!   estimators are reported.
//! * `test3-square`: the same with square holes snapped to the 1/64 grid
//!   and a reference solution, for error and effectivity columns.

use anyhow::{bail, Result};
use serde_json::{json, Value};

use crate::config::RunConfig;

pub const NAMES: &[&str] = &["test1", "test2-neg", "test2-pos", "test2-both", "test3", "test3-square"];

/// Hole sizes of `test1` and the matching square half sides.
pub const TEST1_HOLES: [(f64, f64); 3] = [(0.07, 1.0 / 16.0), (0.0175, 1.0 / 64.0), (0.00483, 1.0 / 256.0)];

/// Centres and sizes of the five `test3` features.
pub const TEST3_FEATURES: [([f64; 2], f64); 5] = [
    ([0.12, 0.12], 0.02),
    ([0.35, 0.35], 0.05),
    ([0.65, 0.65], 0.10),
    ([0.20, 0.68], 0.05),
    ([0.65, 0.16], 0.05),
];

/// Square analogs of the `test3` features on the 1/64 grid: centre and half
/// side in units of 1/64.
pub const TEST3_SQUARES: [([u32; 2], u32); 5] = [([8, 8], 1), ([22, 22], 3), ([42, 42], 6), ([13, 44], 3), ([42, 10], 3)];

/// Mesh sizes of the `test2` sweeps for each `eps` (the lattice must resolve
/// the features).
pub const TEST2_SWEEPS: [(f64, &[usize]); 2] = [(0.2, &[10, 20, 40, 80]), (0.05, &[40, 80])];

pub fn help() -> &'static str {
    "test1, test2-neg, test2-pos, test2-both, test3, test3-square \
     (test1 and test3-square use square holes of matching size so that reference solutions can be meshed)"
}

fn config(v: Value) -> RunConfig {
    let cfg: RunConfig = serde_json::from_value(v).expect("preset is a valid configuration");
    cfg.validate().expect("preset validates");
    cfg
}

pub fn test1() -> Vec<RunConfig> {
    TEST1_HOLES
        .iter()
        .map(|&(eps, half)| {
            config(json!({
                "run_id": format!("test1-eps{eps}"),
                "domain": { "forcing": "x", "dirichlet_boundary": "true" },
                "features": [{
                    "id": 1, "kind": "negative_internal", "eps": eps,
                    "shape": { "square": { "center": [0.5, 0.5], "half_side": half } }
                }],
                "mesh": { "builtin": { "n": 8 } },
                "study": { "h_sweep": { "n": [8, 16, 32, 64, 128] } },
                "reference": { "builtin": { "n": 512 } }
            }))
        })
        .collect()
}

fn notch() -> Value {
    json!({
        "id": 1, "kind": "negative_boundary",
        "shape": { "rect": ["(1-eps)/2", "(1+eps)/2", "1-eps", 1] }
    })
}

fn bump() -> Value {
    json!({
        "id": 2, "kind": "positive",
        "shape": { "rect": ["(1-eps)/2", "(1+eps)/2", "-eps", 0] }
    })
}

fn test2(name: &str, features: Vec<Value>) -> Vec<RunConfig> {
    TEST2_SWEEPS
        .iter()
        .map(|&(eps, ns)| {
            let features: Vec<Value> = features
                .iter()
                .map(|f| {
                    let mut f = f.clone();
                    f["eps"] = json!(eps);
                    f
                })
                .collect();
            config(json!({
                "run_id": format!("{name}-eps{eps}"),
                "domain": { "forcing": "1", "dirichlet_boundary": "x == 0 || x == 1" },
                "features": features,
                "mesh": { "builtin": { "n": ns[0] } },
                "study": { "h_sweep": { "n": ns } },
                "reference": { "builtin": { "n": 320 } }
            }))
        })
        .collect()
}

fn test3_domain() -> Value {
    json!({ "forcing": "0", "dirichlet_data": "exp(-8*(x+y))", "dirichlet_boundary": "x == 0 || y == 0" })
}

pub fn test3() -> RunConfig {
    let features: Vec<Value> = TEST3_FEATURES
        .iter()
        .enumerate()
        .map(|(k, (c, eps))| {
            json!({
                "id": k + 1, "kind": "negative_internal", "eps": eps,
                "shape": { "regular_polygon": { "center": c, "radius": "eps", "sides": 16 } }
            })
        })
        .collect();
    config(json!({
        "run_id": "test3",
        "domain": test3_domain(),
        "features": features,
        "mesh": { "builtin": { "n": 16 } },
        "study": { "h_sweep": { "n": [16, 32, 64] } }
    }))
}

pub fn test3_square() -> RunConfig {
    let features: Vec<Value> = TEST3_SQUARES
        .iter()
        .zip(TEST3_FEATURES)
        .enumerate()
        .map(|(k, ((c, half), (_, eps)))| {
            let s = 1.0 / 64.0;
            json!({
                "id": k + 1, "kind": "negative_internal", "eps": eps,
                "shape": { "square": { "center": [c[0] as f64 * s, c[1] as f64 * s], "half_side": *half as f64 * s } }
            })
        })
        .collect();
    config(json!({
        "run_id": "test3-square",
        "domain": test3_domain(),
        "features": features,
        "mesh": { "builtin": { "n": 16 } },
        "study": { "h_sweep": { "n": [16, 32, 64] } },
        "reference": { "builtin": { "n": 256 } }
    }))
}

/// The studies making up a preset.
pub fn preset(name: &str) -> Result<Vec<RunConfig>> {
    Ok(match name {
        "test1" => test1(),
        "test2-neg" => test2(name, vec![notch()]),
        "test2-pos" => test2(name, vec![bump()]),
        "test2-both" => test2(name, vec![notch(), bump()]),
        "test3" => vec![test3()],
        "test3-square" => vec![test3_square()],
        _ => bail!("unknown preset `{name}`; available: {}", help()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_resolve() {
        for name in NAMES {
            let cfgs = preset(name).unwrap();
            assert!(!cfgs.is_empty());
            for cfg in cfgs {
                for p in cfg.points() {
                    cfg.scenario(p).unwrap();
                }
            }
        }
        assert!(preset("test4").is_err());
    }

    #[test]
    fn square_analogs_roughly_match_the_disc_areas() {
        // grid snapping costs up to ~20% on the smallest hole
        for (eps, half) in TEST1_HOLES {
            let disc = std::f64::consts::PI * eps * eps;
            let square = 4.0 * half * half;
            assert!((square / disc - 1.0).abs() < 0.2, "{eps}");
        }
    }
}
