//! Generic face model: storage, normals, camera center and visibility.

mod io;
pub(crate) mod raster;
pub mod shapes;

use std::collections::{BTreeMap, HashMap};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::Scheme;
use crate::projection::CameraParams;
use crate::Point3;

pub use io::{load_mesh, save_mesh, sidecar_path, Sidecar};
use raster::{DepthBuffer, EMPTY};

/// Smallest `|det A|` accepted when inverting the camera's left 3x3 block.
pub const EPS_DET: f64 = 1e-12;

/// Side length of the square depth buffer used for occlusion.
pub const ZBUFFER_RES: usize = 256;

/// Occlusion margin as a fraction of the scene's inverse-depth range.
pub const ZBUFFER_REL_TOL: f64 = 1e-3;

/// Semantic landmark id → vertex index, for one annotation scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkMap {
    pub scheme: Scheme,
    pub map: BTreeMap<u32, usize>,
}

impl LandmarkMap {
    /// Vertex indices ordered by landmark id.
    pub fn vertex_indices(&self) -> Vec<usize> {
        self.map.values().copied().collect()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.map.keys().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceMesh {
    pub vertices: Vec<Point3>,
    /// Counterclockwise triangles; the right-hand normal points outward.
    pub faces: Vec<[usize; 3]>,
    pub landmark_map: Option<LandmarkMap>,
    pub control_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VisibilityMask(pub Vec<bool>);

impl VisibilityMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_visible(&self) -> usize {
        self.0.iter().filter(|v| **v).count()
    }

    pub fn select(&self, indices: &[usize]) -> Vec<bool> {
        indices.iter().map(|&i| self.0[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityOptions {
    /// Run the depth-buffer occlusion pass after the backface test.
    pub zbuffer: bool,
    pub resolution: usize,
}

impl Default for VisibilityOptions {
    fn default() -> Self {
        VisibilityOptions {
            zbuffer: true,
            resolution: ZBUFFER_RES,
        }
    }
}

impl FaceMesh {
    pub fn new(
        vertices: Vec<Point3>,
        faces: Vec<[usize; 3]>,
        landmark_map: Option<LandmarkMap>,
        control_indices: Vec<usize>,
    ) -> Result<Self> {
        let mesh = FaceMesh {
            vertices,
            faces,
            landmark_map,
            control_indices,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex".into()));
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex {bad} but the mesh has {nv} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} repeats a vertex: {f:?}")));
            }
        }
        let mut edges: HashMap<(usize, usize), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut bad: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|(_, c)| *c > 2)
            .map(|(e, _)| e)
            .collect();
        if !bad.is_empty() {
            bad.sort_unstable();
            return Err(Error::NonManifold { edges: bad });
        }
        if let Some(lm) = &self.landmark_map {
            for (&id, &vi) in &lm.map {
                if id as usize >= lm.scheme.count() {
                    return Err(Error::InvalidMesh(format!(
                        "landmark id {id} outside scheme {}",
                        lm.scheme
                    )));
                }
                if vi >= nv {
                    return Err(Error::InvalidMesh(format!(
                        "landmark {id} references vertex {vi} but the mesh has {nv} vertices"
                    )));
                }
            }
        }
        if let Some(&bad) = self.control_indices.iter().find(|&&i| i >= nv) {
            return Err(Error::InvalidMesh(format!(
                "control index {bad} out of range ({nv} vertices)"
            )));
        }
        Ok(())
    }

    /// Vertex indices of the landmarks, ordered by id; empty without a map.
    pub fn landmark_indices(&self) -> Vec<usize> {
        self.landmark_map
            .as_ref()
            .map(LandmarkMap::vertex_indices)
            .unwrap_or_default()
    }

    pub fn scheme(&self) -> Option<Scheme> {
        self.landmark_map.as_ref().map(|m| m.scheme)
    }

    pub fn control_points(&self) -> Vec<Point3> {
        self.control_indices.iter().map(|&i| self.vertices[i]).collect()
    }

    pub fn gather(&self, vertices: &[Point3], indices: &[usize]) -> Vec<Point3> {
        indices.iter().map(|&i| vertices[i]).collect()
    }

    /// Axis-aligned bounding-box diagonal length.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (hi - lo).norm()
    }
}

/// Area-weighted vertex normals of the mesh's own vertices.
pub fn vertex_normals(mesh: &FaceMesh) -> Vec<Vector3<f64>> {
    normals_for(&mesh.faces, &mesh.vertices)
}

/// Area-weighted vertex normals for an arbitrary placement of the mesh's
/// vertices (e.g. after warping). Vertices without any non-degenerate face
/// get `+z` and a warning.
pub fn normals_for(faces: &[[usize; 3]], vertices: &[Point3]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| vertices[i]);
        // |cross| = 2·area, so summing cross products weights by area
        let n = (b - a).cross(&(c - a));
        for &i in f {
            acc[i] += n;
        }
    }
    let mut degenerate = 0usize;
    for n in &mut acc {
        let len = n.norm();
        if len > 0.0 && len.is_finite() {
            *n /= len;
        } else {
            *n = Vector3::z();
            degenerate += 1;
        }
    }
    if degenerate > 0 {
        log::warn!("{degenerate} vertices have no non-degenerate incident face; using +z normal");
    }
    acc
}

/// The camera center `−A⁻¹b`, the point annihilated by `M`.
pub fn estimate_camera_center(cam: &CameraParams) -> Result<Point3> {
    let a = cam.a_block();
    let det = a.determinant();
    if !(det.abs() > EPS_DET) {
        return Err(Error::SingularA { det });
    }
    let lu = a.lu();
    lu.solve(&(-cam.b_column())).ok_or(Error::SingularA { det })
}

/// Per-vertex visibility of `warped` (the mesh's vertices after warping)
/// from `cam`: front-facing w.r.t. the camera center and not hidden behind
/// nearer geometry.
pub fn visibility(
    mesh: &FaceMesh,
    warped: &[Point3],
    cam: &CameraParams,
    opts: VisibilityOptions,
) -> Result<VisibilityMask> {
    crate::error::check_len("warped vertices", mesh.n_vertices(), warped.len())?;
    let center = estimate_camera_center(cam)?;
    let normals = normals_for(&mesh.faces, warped);
    let mut mask: Vec<bool> = warped
        .iter()
        .zip(&normals)
        .map(|(v, n)| n.dot(&(center - v)) > 0.0)
        .collect();
    if opts.zbuffer {
        occlusion_pass(mesh, warped, cam, opts.resolution, &mut mask);
    }
    Ok(VisibilityMask(mask))
}

fn occlusion_pass(
    mesh: &FaceMesh,
    warped: &[Point3],
    cam: &CameraParams,
    res: usize,
    mask: &mut [bool],
) {
    let sign = cam.a_block().determinant().signum();
    let a = &cam.a;
    // (screen x, screen y, inverse depth) for vertices in front of the camera
    let proj: Vec<Option<(f64, f64, f64)>> = warped
        .iter()
        .map(|p| {
            let w = cam.depth(p);
            if sign * w > crate::projection::EPS_DEPTH {
                let u = a[0] * p.x + a[1] * p.y + a[2] * p.z + a[3];
                let v = a[4] * p.x + a[5] * p.y + a[6] * p.z + a[7];
                Some((u / w, v / w, 1.0 / (sign * w)))
            } else {
                None
            }
        })
        .collect();

    let (mut xmin, mut ymin, mut smin) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let (mut xmax, mut ymax, mut smax) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y, s) in proj.iter().flatten() {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
        smin = smin.min(s);
        smax = smax.max(s);
    }
    for (m, p) in mask.iter_mut().zip(&proj) {
        if p.is_none() {
            *m = false;
        }
    }
    if !xmin.is_finite() {
        return;
    }
    let margin = 1.0;
    let extent = (xmax - xmin).max(ymax - ymin);
    let scale = if extent > 0.0 {
        (res as f64 - 1.0 - 2.0 * margin) / extent
    } else {
        1.0
    };
    let to_buf = |x: f64, y: f64| ((x - xmin) * scale + margin, (y - ymin) * scale + margin);

    let mut buf = DepthBuffer::new(res, res);
    for (fi, f) in mesh.faces.iter().enumerate() {
        let (Some(p0), Some(p1), Some(p2)) = (proj[f[0]], proj[f[1]], proj[f[2]]) else {
            continue;
        };
        let v = [p0, p1, p2].map(|(x, y, s)| {
            let (bx, by) = to_buf(x, y);
            (bx, by, s)
        });
        buf.draw(fi as u32, v);
    }

    // incident faces per vertex, CSR layout
    let nv = warped.len();
    let mut start = vec![0usize; nv + 1];
    for f in &mesh.faces {
        for &i in f {
            start[i + 1] += 1;
        }
    }
    for i in 0..nv {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut incident = vec![0u32; start[nv]];
    for (fi, f) in mesh.faces.iter().enumerate() {
        for &i in f {
            incident[fill[i]] = fi as u32;
            fill[i] += 1;
        }
    }

    let tol = ZBUFFER_REL_TOL * (smax - smin) + 1e-12 * smax.abs();
    for (vi, p) in proj.iter().enumerate() {
        let Some((x, y, s)) = *p else { continue };
        if !mask[vi] {
            continue;
        }
        let (bx, by) = to_buf(x, y);
        let x0 = (bx.floor() as usize).min(res - 2);
        let y0 = (by.floor() as usize).min(res - 2);
        let own = &incident[start[vi]..start[vi + 1]];
        // Occluded only if every pixel around the vertex shows a foreign
        // surface strictly nearer than the vertex.
        let occluded = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)]
            .into_iter()
            .all(|(px, py)| {
                let (sb, tri) = buf.at(px, py);
                tri != EMPTY && !own.contains(&tri) && sb > s + tol
            });
        if occluded {
            mask[vi] = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_triangle_normals() {
        let mesh = FaceMesh::new(
            vec![Point3::new(0., 0., 0.), Point3::new(1., 0., 0.), Point3::new(0., 1., 0.)],
            vec![[0, 1, 2]],
            None,
            vec![],
        )
        .unwrap();
        for n in vertex_normals(&mesh) {
            assert_eq!(n, Vector3::z());
        }
    }

    #[test]
    fn tetrahedron_normals_point_away_from_centroid() {
        let s = 1.0 / 3f64.sqrt();
        let v = vec![
            Point3::new(s, s, s),
            Point3::new(s, -s, -s),
            Point3::new(-s, s, -s),
            Point3::new(-s, -s, s),
        ];
        let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
        let mesh = FaceMesh::new(v.clone(), faces, None, vec![]).unwrap();
        for (n, p) in vertex_normals(&mesh).iter().zip(&v) {
            assert_relative_eq!(*n, p.normalize(), epsilon = 1e-12);
        }
    }

    #[test]
    fn camera_center_examples() {
        let cam = CameraParams::new([1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.]);
        assert_eq!(estimate_camera_center(&cam).unwrap(), Point3::new(0., 0., -1.));
        let flat = CameraParams::new([1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 0.]);
        assert!(matches!(estimate_camera_center(&flat), Err(Error::SingularA { .. })));
    }

    #[test]
    fn validation_errors() {
        let v = vec![Point3::zeros(), Point3::x(), Point3::y(), Point3::z(), Point3::new(1., 1., 1.)];
        assert!(FaceMesh::new(v.clone(), vec![[0, 1, 7]], None, vec![]).is_err());
        assert!(FaceMesh::new(v.clone(), vec![[0, 1, 1]], None, vec![]).is_err());
        // edge (0,1) shared by three faces
        match FaceMesh::new(v.clone(), vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]], None, vec![]) {
            Err(Error::NonManifold { edges }) => assert_eq!(edges, vec![(0, 1)]),
            other => panic!("{other:?}"),
        }
        assert!(FaceMesh::new(v.clone(), vec![[0, 1, 2]], None, vec![9]).is_err());
        let lm = LandmarkMap {
            scheme: Scheme::Aflw21,
            map: [(21u32, 0usize)].into_iter().collect(),
        };
        assert!(FaceMesh::new(v, vec![[0, 1, 2]], Some(lm), vec![]).is_err());
    }
}
