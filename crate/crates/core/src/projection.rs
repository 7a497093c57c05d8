//! Projective camera with the bottom-right matrix entry pinned to 1.
//!
//! A camera is the 3x4 matrix
//!
//! ```text
//!     | a1  a2  a3  a4 |   | m1ᵀ |
//! M = | a5  a6  a7  a8 | = | m2ᵀ |
//!     | a9  a10 a11 1  |   | m3ᵀ |
//! ```
//!
//! and a world point `p` maps to `(m1·p / m3·p, m2·p / m3·p)`. The backward
//! passes return the loss gradient w.r.t. the 11 free entries and w.r.t. the
//! Euclidean part of each input point.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::Point3;

/// Points with `|m3·p|` at or below this are rejected by every projection op.
pub const EPS_DEPTH: f64 = 1e-9;

const PAR_THRESHOLD: usize = 8192;

/// The 11 free parameters of a projection matrix, row-major, `M[2][3] == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CameraParams {
    pub a: [f64; 11],
}

impl CameraParams {
    pub const fn new(a: [f64; 11]) -> Self {
        CameraParams { a }
    }

    /// Builds parameters from an arbitrary 3x4 matrix, dividing out its scale
    /// so the bottom-right entry becomes 1.
    pub fn from_matrix(m: &Matrix3x4<f64>) -> Result<Self> {
        let s = m[(2, 3)];
        if !s.is_finite() || s.abs() < 1e-300 {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize camera matrix with M34 = {s}"
            )));
        }
        let mut a = [0.0; 11];
        for (i, v) in a.iter_mut().enumerate() {
            *v = m[(i / 4, i % 4)] / s;
        }
        Ok(CameraParams { a })
    }

    pub fn to_matrix(&self) -> Matrix3x4<f64> {
        let a = &self.a;
        Matrix3x4::new(
            a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8], a[9], a[10], 1.0,
        )
    }

    pub fn row(&self, i: usize) -> Vector4<f64> {
        let a = &self.a;
        match i {
            0 => Vector4::new(a[0], a[1], a[2], a[3]),
            1 => Vector4::new(a[4], a[5], a[6], a[7]),
            2 => Vector4::new(a[8], a[9], a[10], 1.0),
            _ => panic!("camera row index {i} out of range"),
        }
    }

    /// Left 3x3 block `A` of `M = [A | b]`.
    pub fn a_block(&self) -> Matrix3<f64> {
        self.to_matrix().fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Last column `b` of `M = [A | b]`.
    pub fn b_column(&self) -> Vector3<f64> {
        Vector3::new(self.a[3], self.a[7], 1.0)
    }

    /// Third row dotted with the homogeneous point. Its sign times
    /// `sign(det A)` is positive for points in front of the camera.
    #[inline]
    pub fn depth(&self, p: &Point3) -> f64 {
        self.a[8] * p.x + self.a[9] * p.y + self.a[10] * p.z + 1.0
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().all(|v| v.is_finite())
    }

    /// One whitespace-separated line of 11 numbers.
    pub fn to_text_line(&self) -> String {
        self.a
            .iter()
            .map(|v| format!("{v:e}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn from_text_line(line: &str) -> Result<Self> {
        let vals = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("camera value {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        check_len("camera parameters", 11, vals.len())?;
        let mut a = [0.0; 11];
        a.copy_from_slice(&vals);
        Ok(CameraParams { a })
    }

    /// 3x4 row-major text block, one matrix row per line.
    pub fn matrix_text_block(&self) -> String {
        let m = self.to_matrix();
        let mut out = String::new();
        for r in 0..3 {
            let row: Vec<String> = (0..4).map(|c| format!("{:e}", m[(r, c)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for CameraParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text_line())
    }
}

impl FromStr for CameraParams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim_start();
        if t.starts_with('[') {
            Ok(serde_json::from_str(t)?)
        } else {
            CameraParams::from_text_line(t)
        }
    }
}

/// A world point with implicit homogeneous coordinate 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point3H(pub Point3);

impl Point3H {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3H(Point3::new(x, y, z))
    }

    pub fn homogeneous(&self) -> Vector4<f64> {
        self.0.push(1.0)
    }

    pub fn euclidean(&self) -> Point3 {
        self.0
    }
}

impl From<Point3> for Point3H {
    fn from(p: Point3) -> Self {
        Point3H(p)
    }
}

/// An image-plane point in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

pub fn lift(points: &[Point3]) -> Vec<Point3H> {
    points.iter().copied().map(Point3H).collect()
}

#[inline]
fn project_one(cam: &CameraParams, idx: usize, p: &Point3) -> Result<(f64, f64, f64)> {
    let a = &cam.a;
    let w = cam.depth(p);
    if !(w.abs() > EPS_DEPTH) {
        return Err(Error::DegenerateDepth { index: idx, depth: w });
    }
    let u = a[0] * p.x + a[1] * p.y + a[2] * p.z + a[3];
    let v = a[4] * p.x + a[5] * p.y + a[6] * p.z + a[7];
    Ok((u / w, v / w, w))
}

/// Projects every point; output order matches input order.
pub fn project(cam: &CameraParams, pts: &[Point3H]) -> Result<Vec<Point2>> {
    let one = |(i, p): (usize, &Point3H)| project_one(cam, i, &p.0).map(|(x, y, _)| Point2::new(x, y));
    if pts.len() >= PAR_THRESHOLD {
        // collect() on an indexed parallel iterator reports the lowest failing index
        pts.par_iter().enumerate().map(one).collect()
    } else {
        pts.iter().enumerate().map(one).collect()
    }
}

/// Loss gradient w.r.t. the 11 camera parameters, summed over all points in
/// input order.
pub fn grad_wrt_camera(
    cam: &CameraParams,
    pts: &[Point3H],
    dl_do: &[Vector2<f64>],
) -> Result<[f64; 11]> {
    check_len("upstream gradient", pts.len(), dl_do.len())?;
    let mut g = [0.0f64; 12];
    for (i, (p, go)) in pts.iter().zip(dl_do).enumerate() {
        let (xc, yc, w) = project_one(cam, i, &p.0)?;
        let ph = p.homogeneous();
        let c1 = go.x / w;
        let c2 = go.y / w;
        let c3 = -(go.x * xc + go.y * yc) / w;
        for k in 0..4 {
            g[k] += c1 * ph[k];
            g[4 + k] += c2 * ph[k];
            g[8 + k] += c3 * ph[k];
        }
    }
    // M34 is a constant; its gradient (g[11]) is dropped.
    let mut out = [0.0; 11];
    out.copy_from_slice(&g[..11]);
    Ok(out)
}

/// Loss gradient w.r.t. the x, y, z coordinates of each point.
pub fn grad_wrt_points(
    cam: &CameraParams,
    pts: &[Point3H],
    dl_do: &[Vector2<f64>],
) -> Result<Vec<Vector3<f64>>> {
    check_len("upstream gradient", pts.len(), dl_do.len())?;
    let a = &cam.a;
    let m1 = Vector3::new(a[0], a[1], a[2]);
    let m2 = Vector3::new(a[4], a[5], a[6]);
    let m3 = Vector3::new(a[8], a[9], a[10]);
    let one = |(i, (p, go)): (usize, (&Point3H, &Vector2<f64>))| {
        let (xc, yc, w) = project_one(cam, i, &p.0)?;
        Ok((m1 - m3 * xc) * (go.x / w) + (m2 - m3 * yc) * (go.y / w))
    };
    if pts.len() >= PAR_THRESHOLD {
        pts.par_iter().zip(dl_do.par_iter()).enumerate().map(one).collect()
    } else {
        pts.iter().zip(dl_do.iter()).enumerate().map(one).collect()
    }
}
