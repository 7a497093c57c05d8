//! Warp-then-project composition and its backward pass.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::projection::{self, lift, CameraParams, Point2};
use crate::tps::{self, TpsWarp3D};
use crate::Point3;

/// Gradients of a scalar loss w.r.t. the pipeline inputs. Fields not
/// requested by the producing operation are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradBundle {
    pub camera: Option<[f64; 11]>,
    /// `(theta_dx, theta_dy, theta_dz)` gradients.
    pub tps: Option<[Vec<f64>; 3]>,
    /// Gradients w.r.t. the warped points.
    pub points: Option<Vec<Vector3<f64>>>,
}

/// `project(cam, apply(warp, pts))`.
pub fn project_warped(cam: &CameraParams, warp: &TpsWarp3D, pts: &[Point3]) -> Result<Vec<Point2>> {
    projection::project(cam, &lift(&tps::apply(warp, pts)))
}

/// Backward pass of [`project_warped`]: the upstream 2D gradients are pulled
/// back to the warped points, then onto the TPS parameters.
pub fn backward_warped(
    cam: &CameraParams,
    warp: &TpsWarp3D,
    pts: &[Point3],
    dl_do: &[Vector2<f64>],
) -> Result<GradBundle> {
    let warped = lift(&tps::apply(warp, pts));
    let camera = projection::grad_wrt_camera(cam, &warped, dl_do)?;
    let points = projection::grad_wrt_points(cam, &warped, dl_do)?;
    let tps = tps::grad_wrt_params(warp, pts, &points)?;
    Ok(GradBundle {
        camera: Some(camera),
        tps: Some(tps),
        points: Some(points),
    })
}
