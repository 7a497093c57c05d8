//! File conventions shared by the subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use facewarp::mesh::shapes::{mean_face, MeanFaceConfig};
use facewarp::{CameraParams, FaceMesh, Grid2D, Scheme};
use nalgebra::Matrix3x4;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CliResult};

/// Loads a `.fwgd` grid as stored, or a PNG reduced to one gray channel
/// (mean of the color channels, alpha dropped).
pub fn load_image(path: &Path) -> CliResult<Grid2D> {
    match ext(path).as_deref() {
        Some("fwgd") => {
            let f = fs::File::open(path)?;
            Ok(Grid2D::read_raw(std::io::BufReader::new(f))?)
        }
        Some("png") => {
            let g = Grid2D::load_png(path)?;
            let color = match g.channels() {
                1 | 2 => 1,
                _ => 3,
            };
            if g.channels() == 1 {
                return Ok(g);
            }
            Ok(Grid2D::from_fn(g.width(), g.height(), 1, |r, c, _| {
                g.texel(r, c)[..color].iter().sum::<f64>() / color as f64
            }))
        }
        _ => Err(invalid(format!("unsupported image file {}", path.display()))),
    }
}

fn ext(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

pub fn is_image(path: &Path) -> bool {
    matches!(ext(path).as_deref(), Some("png" | "fwgd"))
}

/// `(id, path)` pairs for a single image file or every image in a
/// directory. When both `<id>.fwgd` and `<id>.png` exist the exact grid wins.
pub fn image_inputs(path: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    if !path.is_dir() {
        let id = stem(path)?;
        return Ok(vec![(id, path.to_path_buf())]);
    }
    let mut found: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(path)? {
        let p = entry?.path();
        if !is_image(&p) {
            continue;
        }
        let id = stem(&p)?;
        let exact = ext(&p).as_deref() == Some("fwgd");
        match found.get(&id) {
            Some(_) if !exact => {}
            _ => {
                found.insert(id, p);
            }
        }
    }
    if found.is_empty() {
        return Err(invalid(format!("no .png or .fwgd images in {}", path.display())));
    }
    Ok(found.into_iter().collect())
}

pub fn stem(path: &Path) -> CliResult<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| invalid(format!("cannot derive an id from {}", path.display())))
}

/// A camera file holds either the 11 parameters on one line or the 3×4
/// matrix as 12 numbers (any layout); the matrix is rescaled to `M34 = 1`.
pub fn load_camera(path: &Path) -> CliResult<CameraParams> {
    let text = fs::read_to_string(path)?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| invalid(format!("{}: {t:?}: {e}", path.display())))
        })
        .collect::<CliResult<_>>()?;
    match vals.len() {
        11 => Ok(CameraParams::from_text_line(&text)?),
        12 => Ok(CameraParams::from_matrix(&Matrix3x4::from_row_slice(&vals))?),
        n => Err(invalid(format!(
            "{}: expected 11 camera parameters or 12 matrix entries, found {n}",
            path.display()
        ))),
    }
}

pub fn save_camera(cam: &CameraParams, path: &Path) -> CliResult<()> {
    fs::write(path, format!("{}\n", cam.to_text_line()))?;
    Ok(())
}

/// The mesh at `path`, or the built-in mean face for `scheme`.
pub fn mesh_or_default(path: Option<&Path>, scheme: Scheme) -> CliResult<FaceMesh> {
    match path {
        Some(p) => Ok(facewarp::mesh::load_mesh(p)?),
        None => Ok(mean_face(&MeanFaceConfig {
            scheme,
            ..Default::default()
        })),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Pretty JSON on stdout; a closed pipe is not an error.
pub fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// One row of a bounding-box file: `id,w,h[,yaw]` with yaw in degrees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BBoxRow {
    pub id: String,
    pub w: f64,
    pub h: f64,
    #[serde(default)]
    pub yaw: Option<f64>,
}

pub fn read_bboxes(path: &Path) -> CliResult<BTreeMap<String, BBoxRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: BBoxRow = row?;
        out.insert(row.id.clone(), row);
    }
    Ok(out)
}

pub fn write_bboxes(rows: &[BBoxRow], path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
