//! Procedural meshes: icospheres and grids for testing, and the synthetic
//! mean face used as the generic model.
//!
//! The mean face is the front of an ellipsoid (x right, y up, z toward the
//! viewer) sampled on a longitude/latitude grid, with Gaussian bumps for the
//! nose, brows, lips and chin and dents for the eye sockets. Landmarks are
//! placed at fixed angular positions and snapped to distinct grid vertices,
//! so the whole model is a pure function of its config.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::{FaceMesh, LandmarkMap};
use crate::landmarks::Scheme;
use crate::Point3;

/// Unit icosphere with `subdivisions` rounds of midpoint subdivision;
/// `20·4^s` outward-wound faces.
pub fn icosphere(subdivisions: u32) -> FaceMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Point3> = [
        (-1., t, 0.),
        (1., t, 0.),
        (-1., -t, 0.),
        (1., -t, 0.),
        (0., -1., t),
        (0., 1., t),
        (0., -1., -t),
        (0., 1., -t),
        (t, 0., -1.),
        (t, 0., 1.),
        (-t, 0., -1.),
        (-t, 0., 1.),
    ]
    .iter()
    .map(|&(x, y, z)| Point3::new(x, y, z).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, v: &mut Vec<Point3>| -> usize {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    FaceMesh {
        vertices: v,
        faces: f,
        landmark_map: None,
        control_indices: Vec::new(),
    }
}

/// Regular `nx × ny` vertex grid in the plane `z = 0` spanning
/// `[-half, half]²`, faces wound toward `+z`.
pub fn plane(nx: usize, ny: usize, half: f64) -> FaceMesh {
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = -half + 2.0 * half * i as f64 / (nx - 1) as f64;
            let y = -half + 2.0 * half * j as f64 / (ny - 1) as f64;
            vertices.push(Point3::new(x, y, 0.0));
        }
    }
    FaceMesh {
        vertices,
        faces: grid_faces(nx, ny),
        landmark_map: None,
        control_indices: Vec::new(),
    }
}

fn grid_faces(nx: usize, ny: usize) -> Vec<[usize; 3]> {
    let mut faces = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let v00 = j * nx + i;
            let v10 = v00 + 1;
            let v01 = v00 + nx;
            let v11 = v01 + 1;
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    faces
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFaceConfig {
    /// Longitude samples (left to right).
    pub n_lon: usize,
    /// Latitude samples (bottom to top).
    pub n_lat: usize,
    pub scheme: Scheme,
    pub n_controls: usize,
}

impl Default for MeanFaceConfig {
    fn default() -> Self {
        MeanFaceConfig {
            n_lon: 71,
            n_lat: 71,
            scheme: Scheme::Mpie68,
            n_controls: 40,
        }
    }
}

const LON_RANGE: (f64, f64) = (-100.0, 100.0);
const LAT_RANGE: (f64, f64) = (-75.0, 80.0);
const RADII: (f64, f64, f64) = (0.75, 1.0, 0.85);

/// (longitude°, latitude°, amplitude, σ_lon°, σ_lat°), displaced along the
/// ellipsoid normal.
const BUMPS: &[(f64, f64, f64, f64, f64)] = &[
    (0.0, -2.0, 0.22, 7.0, 11.0),    // nose
    (0.0, 12.0, 0.07, 5.0, 9.0),     // nose bridge
    (-22.0, 15.0, -0.05, 8.0, 5.0),  // right eye socket
    (22.0, 15.0, -0.05, 8.0, 5.0),   // left eye socket
    (-22.0, 26.0, 0.04, 12.0, 3.5),  // right brow
    (22.0, 26.0, 0.04, 12.0, 3.5),   // left brow
    (0.0, -28.0, 0.05, 14.0, 4.5),   // lips
    (0.0, -50.0, 0.05, 15.0, 8.0),   // chin
];

fn surface_point(lon: f64, lat: f64) -> Point3 {
    let (a, b, c) = RADII;
    let (p, t) = (lon.to_radians(), lat.to_radians());
    let base = Point3::new(a * p.sin() * t.cos(), b * t.sin(), c * p.cos() * t.cos());
    let normal = Point3::new(base.x / (a * a), base.y / (b * b), base.z / (c * c)).normalize();
    let h: f64 = BUMPS
        .iter()
        .map(|&(l0, t0, amp, sl, st)| {
            let dl = (lon - l0) / sl;
            let dt = (lat - t0) / st;
            amp * (-0.5 * (dl * dl + dt * dt)).exp()
        })
        .sum();
    base + normal * h
}

/// Angular positions (longitude°, latitude°) of the 68-point scheme.
/// Negative longitude is the subject's right (image left when frontal).
pub fn mpie68_angles() -> Vec<(f64, f64)> {
    use std::f64::consts::PI;
    let mut a = Vec::with_capacity(68);
    for k in 0..17 {
        let t = PI * k as f64 / 16.0;
        a.push((-72.0 * t.cos(), 12.0 - 67.0 * t.sin()));
    }
    for k in 0..5 {
        let t = k as f64 / 4.0;
        a.push((-38.0 + 30.0 * t, 24.0 + 4.0 * (PI * t).sin()));
    }
    for k in 0..5 {
        let t = k as f64 / 4.0;
        a.push((8.0 + 30.0 * t, 24.0 + 4.0 * (PI * t).sin()));
    }
    for lat in [14.0, 8.0, 2.0, -4.0] {
        a.push((0.0, lat));
    }
    for (lon, lat) in [(-10.0, -12.0), (-5.0, -13.0), (0.0, -14.0), (5.0, -13.0), (10.0, -12.0)] {
        a.push((lon, lat));
    }
    for (lon, lat) in [(-30., 14.), (-25., 17.), (-19., 17.), (-14., 14.), (-19., 11.), (-25., 11.)] {
        a.push((lon, lat));
    }
    for (lon, lat) in [(14., 14.), (19., 17.), (25., 17.), (30., 14.), (25., 11.), (19., 11.)] {
        a.push((lon, lat));
    }
    for k in 0..12 {
        let t = PI - k as f64 * PI / 6.0;
        a.push((16.0 * t.cos(), -30.0 + 6.0 * t.sin()));
    }
    for k in 0..8 {
        let t = PI - k as f64 * PI / 4.0;
        a.push((10.0 * t.cos(), -30.0 + 2.5 * t.sin()));
    }
    a
}

/// Angular positions of the 21-point scheme.
pub fn aflw21_angles() -> Vec<(f64, f64)> {
    vec![
        (-38., 24.),
        (-23., 28.),
        (-8., 24.),
        (8., 24.),
        (23., 28.),
        (38., 24.),
        (-30., 14.),
        (-22., 14.),
        (-14., 14.),
        (14., 14.),
        (22., 14.),
        (30., 14.),
        (-88., 5.),
        (-10., -12.),
        (0., -4.),
        (10., -12.),
        (88., 5.),
        (-16., -30.),
        (0., -30.),
        (16., -30.),
        (0., -55.),
    ]
}

/// Landmarks (68-point ids) preferred as TPS control points, in priority order.
const CONTROL_LANDMARKS: [usize; 28] = [
    30, 8, 36, 45, 48, 54, 0, 16, 19, 24, 27, 33, 39, 42, 51, 57, 4, 12, 2, 14, 6, 10, 17, 21, 22,
    26, 31, 35,
];

pub fn mean_face(cfg: &MeanFaceConfig) -> FaceMesh {
    assert!(cfg.n_lon >= 3 && cfg.n_lat >= 3, "mean face grid too small");
    assert!(cfg.n_controls >= 4, "need at least 4 control points");
    let (lon0, lon1) = LON_RANGE;
    let (lat0, lat1) = LAT_RANGE;
    let lon_at = |i: usize| lon0 + (lon1 - lon0) * i as f64 / (cfg.n_lon - 1) as f64;
    let lat_at = |j: usize| lat0 + (lat1 - lat0) * j as f64 / (cfg.n_lat - 1) as f64;
    let mut vertices = Vec::with_capacity(cfg.n_lon * cfg.n_lat);
    for j in 0..cfg.n_lat {
        for i in 0..cfg.n_lon {
            vertices.push(surface_point(lon_at(i), lat_at(j)));
        }
    }
    let faces = grid_faces(cfg.n_lon, cfg.n_lat);

    let snap = |lon: f64, lat: f64, used: &mut HashSet<usize>| -> usize {
        // nearest unused grid vertex in angle space
        let mut best = (f64::INFINITY, 0usize);
        for j in 0..cfg.n_lat {
            for i in 0..cfg.n_lon {
                let idx = j * cfg.n_lon + i;
                if used.contains(&idx) {
                    continue;
                }
                let d = (lon_at(i) - lon).powi(2) + (lat_at(j) - lat).powi(2);
                if d < best.0 {
                    best = (d, idx);
                }
            }
        }
        used.insert(best.1);
        best.1
    };

    let angles68 = mpie68_angles();
    let mut used = HashSet::new();
    let idx68: Vec<usize> = angles68.iter().map(|&(l, t)| snap(l, t, &mut used)).collect();
    let lm_idx = match cfg.scheme {
        Scheme::Mpie68 => idx68.clone(),
        Scheme::Aflw21 => {
            let mut used = HashSet::new();
            aflw21_angles().iter().map(|&(l, t)| snap(l, t, &mut used)).collect()
        }
    };
    let map: BTreeMap<u32, usize> = lm_idx.iter().enumerate().map(|(k, &v)| (k as u32, v)).collect();

    let n_lm = CONTROL_LANDMARKS.len().min(cfg.n_controls * 7 / 10);
    let n_border = cfg.n_controls - n_lm;
    let mut controls: Vec<usize> = CONTROL_LANDMARKS[..n_lm].iter().map(|&k| idx68[k]).collect();
    let ring = border_ring(cfg.n_lon, cfg.n_lat);
    for k in 0..n_border {
        let mut pos = (k * ring.len()) / n_border;
        while controls.contains(&ring[pos]) {
            pos = (pos + 1) % ring.len();
        }
        controls.push(ring[pos]);
    }

    FaceMesh {
        vertices,
        faces,
        landmark_map: Some(LandmarkMap {
            scheme: cfg.scheme,
            map,
        }),
        control_indices: controls,
    }
}

/// Boundary vertices of an `nx × ny` grid, walking counterclockwise.
fn border_ring(nx: usize, ny: usize) -> Vec<usize> {
    let mut r = Vec::with_capacity(2 * (nx + ny));
    r.extend(0..nx);
    r.extend((1..ny).map(|j| j * nx + nx - 1));
    r.extend((0..nx - 1).rev().map(|i| (ny - 1) * nx + i));
    r.extend((1..ny - 1).rev().map(|j| j * nx));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_and_manifold() {
        for s in 0..3 {
            let m = icosphere(s);
            assert_eq!(m.faces.len(), 20 * 4usize.pow(s));
            assert_eq!(m.vertices.len(), 10 * 4usize.pow(s) + 2);
            m.validate().unwrap();
            for f in &m.faces {
                let [a, b, c] = f.map(|i| m.vertices[i]);
                let n = (b - a).cross(&(c - a));
                assert!(n.dot(&(a + b + c)) > 0.0, "inward face {f:?}");
            }
        }
    }

    #[test]
    fn mean_face_structure() {
        let m = mean_face(&MeanFaceConfig::default());
        m.validate().unwrap();
        assert_eq!(m.vertices.len(), 71 * 71);
        let lm = m.landmark_map.as_ref().unwrap();
        assert_eq!(lm.map.len(), 68);
        let distinct: HashSet<_> = lm.map.values().collect();
        assert_eq!(distinct.len(), 68);
        assert_eq!(m.control_indices.len(), 40);
        let distinct: HashSet<_> = m.control_indices.iter().collect();
        assert_eq!(distinct.len(), 40);
        // nose tip protrudes past the cheeks
        let tip = m.vertices[lm.map[&30]];
        let cheek = m.vertices[lm.map[&3]];
        assert!(tip.z > cheek.z + 0.3);

        let m21 = mean_face(&MeanFaceConfig {
            scheme: Scheme::Aflw21,
            ..Default::default()
        });
        assert_eq!(m21.landmark_map.unwrap().map.len(), 21);
        assert_eq!(mean_face(&MeanFaceConfig::default()), m);
    }
}
