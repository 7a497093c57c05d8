//! OBJ / ASCII PLY mesh files with a JSON sidecar for landmarks and controls.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FaceMesh, LandmarkMap};
use crate::error::{Error, Result};
use crate::landmarks::Scheme;
use crate::Point3;

/// Contents of `<mesh>.landmarks.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub scheme: Option<Scheme>,
    #[serde(default)]
    pub map: BTreeMap<String, usize>,
    #[serde(default)]
    pub controls: Vec<usize>,
}

/// `face.obj` → `face.landmarks.json`.
pub fn sidecar_path(mesh_path: &Path) -> PathBuf {
    mesh_path.with_extension("landmarks.json")
}

enum Format {
    Obj,
    Ply,
}

fn format_of(path: &Path) -> Result<Format> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("obj") => Ok(Format::Obj),
        Some("ply") => Ok(Format::Ply),
        _ => Err(Error::InvalidArgument(format!(
            "unsupported mesh extension: {}",
            path.display()
        ))),
    }
}

/// Loads an OBJ or ASCII PLY mesh plus its sidecar, if present, and
/// validates the result.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<FaceMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let (vertices, faces) = match format_of(path)? {
        Format::Obj => parse_obj(&text, path)?,
        Format::Ply => parse_ply(&text, path)?,
    };
    let side = sidecar_path(path);
    let (landmark_map, control_indices) = if side.exists() {
        let sc: Sidecar = serde_json::from_str(&fs::read_to_string(&side)?)?;
        let lm = match sc.scheme {
            Some(scheme) => {
                let mut map = BTreeMap::new();
                for (k, v) in sc.map {
                    let id: u32 = k.parse().map_err(|_| {
                        Error::InvalidArgument(format!("{}: bad landmark id {k:?}", side.display()))
                    })?;
                    map.insert(id, v);
                }
                Some(LandmarkMap { scheme, map })
            }
            None if sc.map.is_empty() => None,
            None => {
                return Err(Error::InvalidArgument(format!(
                    "{}: landmark map without a scheme",
                    side.display()
                )))
            }
        };
        (lm, sc.controls)
    } else {
        (None, Vec::new())
    };
    FaceMesh::new(vertices, faces, landmark_map, control_indices)
}

/// Writes `warped` (or the mesh's own vertices) with the mesh's faces, and
/// the sidecar when the mesh carries landmarks or controls.
pub fn save_mesh(mesh: &FaceMesh, warped: Option<&[Point3]>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let verts = warped.unwrap_or(&mesh.vertices);
    crate::error::check_len("vertices to save", mesh.n_vertices(), verts.len())?;
    let text = match format_of(path)? {
        Format::Obj => write_obj(verts, &mesh.faces),
        Format::Ply => write_ply(verts, &mesh.faces),
    };
    fs::write(path, text)?;
    if mesh.landmark_map.is_some() || !mesh.control_indices.is_empty() {
        let sc = Sidecar {
            scheme: mesh.landmark_map.as_ref().map(|m| m.scheme),
            map: mesh
                .landmark_map
                .as_ref()
                .map(|m| m.map.iter().map(|(k, v)| (k.to_string(), *v)).collect())
                .unwrap_or_default(),
            controls: mesh.control_indices.clone(),
        };
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&sc)?)?;
    }
    Ok(())
}

fn write_obj(verts: &[Point3], faces: &[[usize; 3]]) -> String {
    let mut s = String::with_capacity(verts.len() * 40 + faces.len() * 24);
    for v in verts {
        let _ = writeln!(s, "v {:.9} {:.9} {:.9}", v.x, v.y, v.z);
    }
    for f in faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

fn write_ply(verts: &[Point3], faces: &[[usize; 3]]) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        verts.len(),
        faces.len()
    );
    for v in verts {
        let _ = writeln!(s, "{:.9} {:.9} {:.9}", v.x, v.y, v.z);
    }
    for f in faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

fn perr(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_floats(toks: &[&str], path: &Path, line: usize) -> Result<Vec<f64>> {
    toks.iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| perr(path, line, format!("bad number {t:?}: {e}")))
        })
        .collect()
}

type Polys = (Vec<Point3>, Vec<[usize; 3]>);

fn parse_obj(text: &str, path: &Path) -> Result<Polys> {
    let mut verts = Vec::new();
    // (line, polygon as raw 1-based / negative indices)
    let mut polys: Vec<(usize, Vec<i64>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let rest: Vec<&str> = toks.collect();
                if rest.len() < 3 {
                    return Err(perr(path, ln, "vertex needs 3 coordinates"));
                }
                let c = parse_floats(&rest[..3], path, ln)?;
                verts.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx = toks
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        head.parse::<i64>()
                            .map_err(|e| perr(path, ln, format!("bad face index {t:?}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(perr(path, ln, "face needs at least 3 vertices"));
                }
                polys.push((ln, idx));
            }
            _ => {}
        }
    }
    let nv = verts.len() as i64;
    let mut faces = Vec::with_capacity(polys.len());
    for (fi, (ln, poly)) in polys.into_iter().enumerate() {
        let resolved = poly
            .iter()
            .map(|&k| {
                let z = if k < 0 { nv + k } else { k - 1 };
                if z < 0 || z >= nv {
                    Err(perr(
                        path,
                        ln,
                        format!("face {fi} references vertex {k}, but only {nv} vertices are defined"),
                    ))
                } else {
                    Ok(z as usize)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        for k in 1..resolved.len() - 1 {
            faces.push([resolved[0], resolved[k], resolved[k + 1]]);
        }
    }
    Ok((verts, faces))
}

fn parse_ply(text: &str, path: &Path) -> Result<Polys> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(perr(path, 1, "missing 'ply' magic")),
    }
    let mut n_vert = None;
    let mut n_face = None;
    let mut vert_props: Vec<String> = Vec::new();
    let mut current = "";
    for (i, l) in lines.by_ref() {
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(perr(path, i + 1, format!("unsupported PLY format {fmt}")));
                }
            }
            ["element", name, count] => {
                let c: usize = count
                    .parse()
                    .map_err(|e| perr(path, i + 1, format!("bad element count: {e}")))?;
                current = if *name == "vertex" {
                    n_vert = Some(c);
                    "vertex"
                } else if *name == "face" {
                    n_face = Some(c);
                    "face"
                } else {
                    return Err(perr(path, i + 1, format!("unsupported PLY element {name}")));
                };
            }
            ["property", .., name] if current == "vertex" => vert_props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n_vert = n_vert.ok_or_else(|| perr(path, 1, "no vertex element"))?;
    let n_face = n_face.unwrap_or(0);
    let pos = |n: &str| vert_props.iter().position(|p| p == n);
    let (px, py, pz) = match (pos("x"), pos("y"), pos("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(perr(path, 1, "vertex element lacks x/y/z")),
    };
    let mut verts = Vec::with_capacity(n_vert);
    let mut faces = Vec::with_capacity(n_face);
    for _ in 0..n_vert {
        let (i, l) = lines.next().ok_or_else(|| perr(path, 0, "truncated vertex list"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let vals = parse_floats(&toks, path, i + 1)?;
        if vals.len() < vert_props.len() {
            return Err(perr(path, i + 1, "too few vertex properties"));
        }
        verts.push(Point3::new(vals[px], vals[py], vals[pz]));
    }
    for fi in 0..n_face {
        let (i, l) = lines.next().ok_or_else(|| perr(path, 0, "truncated face list"))?;
        let toks: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| perr(path, i + 1, format!("{t:?}: {e}"))))
            .collect::<Result<_>>()?;
        let Some((&k, idx)) = toks.split_first() else {
            return Err(perr(path, i + 1, "empty face line"));
        };
        if k < 3 || idx.len() != k {
            return Err(perr(path, i + 1, "malformed face"));
        }
        if let Some(&bad) = idx.iter().find(|&&v| v >= n_vert) {
            return Err(perr(
                path,
                i + 1,
                format!("face {fi} references vertex {bad}, but only {n_vert} vertices are defined"),
            ));
        }
        for t in 1..k - 1 {
            faces.push([idx[0], idx[t], idx[t + 1]]);
        }
    }
    Ok((verts, faces))
}
