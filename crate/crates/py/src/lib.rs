//! Python module `facewarp`: cameras, TPS warps, bilinear sampling, meshes
//! and visibility, landmark refitting, NME and the trained estimator.
//!
//! Points cross the boundary as lists of `[x, y, z]` / `[x, y]`; every
//! library error is raised as `facewarp.FacewarpError` with the error kind
//! as its second argument.

use facewarp::audit::{self, AuditModule};
use facewarp::estimator::{checkpoint, Model};
use facewarp::eval::{self, BBox, NmeMode};
use facewarp::mesh::shapes::{mean_face, MeanFaceConfig};
use facewarp::projection::{self, lift};
use facewarp::{refit, sampler, tps};
use facewarp::{CameraParams, ControlCorrespondence, FaceMesh, Grid2D, LandmarkSet2D, Point2, Point3, SampleCoord};
use facewarp::{Scheme, TpsWarp3D, VisibilityOptions};
use nalgebra::{Vector2, Vector3};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(facewarp, FacewarpError, PyException);

fn err(e: facewarp::Error) -> PyErr {
    FacewarpError::new_err((e.to_string(), e.kind()))
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for facewarp::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn p3(v: &[[f64; 3]]) -> Vec<Point3> {
    v.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()
}

fn from_p3(v: &[Point3]) -> Vec<[f64; 3]> {
    v.iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn p2(v: &[[f64; 2]]) -> Vec<Point2> {
    v.iter().map(|p| Point2::new(p[0], p[1])).collect()
}

fn v2(v: &[[f64; 2]]) -> Vec<Vector2<f64>> {
    v.iter().map(|p| Vector2::new(p[0], p[1])).collect()
}

fn v3(v: &[[f64; 3]]) -> Vec<Vector3<f64>> {
    v.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect()
}

fn from_p2(v: &[Point2]) -> Vec<[f64; 2]> {
    v.iter().map(|p| [p.x, p.y]).collect()
}

fn scheme_for(n: usize) -> PyResult<Scheme> {
    Scheme::from_count(n).ok_or_else(|| {
        err(facewarp::Error::InvalidArgument(format!(
            "{n} landmarks: expected 21 or 68"
        )))
    })
}

/// 11-parameter projective camera (`M34 = 1`).
#[pyclass(name = "Camera", module = "facewarp", from_py_object)]
#[derive(Clone)]
struct PyCamera(CameraParams);

#[pymethods]
impl PyCamera {
    #[new]
    fn new(params: [f64; 11]) -> Self {
        PyCamera(CameraParams { a: params })
    }

    /// From a 3×4 matrix given row-major as 12 numbers; rescaled to `M34 = 1`.
    #[staticmethod]
    fn from_matrix(m: [f64; 12]) -> PyResult<Self> {
        let m = nalgebra::Matrix3x4::from_row_slice(&m);
        CameraParams::from_matrix(&m).py().map(PyCamera)
    }

    /// Linear estimate from at least six 3D↔2D correspondences.
    #[staticmethod]
    fn estimate(points3: Vec<[f64; 3]>, points2: Vec<[f64; 2]>) -> PyResult<Self> {
        refit::estimate_camera(&p3(&points3), &p2(&points2)).py().map(PyCamera)
    }

    #[getter]
    fn params(&self) -> [f64; 11] {
        self.0.a
    }

    /// Row-major 3×4 matrix.
    fn matrix(&self) -> [[f64; 4]; 3] {
        let m = self.0.to_matrix();
        [0, 1, 2].map(|r| [0, 1, 2, 3].map(|c| m[(r, c)]))
    }

    fn project(&self, points: Vec<[f64; 3]>) -> PyResult<Vec<[f64; 2]>> {
        projection::project(&self.0, &lift(&p3(&points))).py().map(|v| from_p2(&v))
    }

    /// Gradient of a scalar loss w.r.t. the 11 parameters, given `dL/d(u, v)`.
    fn grad_wrt_camera(&self, points: Vec<[f64; 3]>, dl_do: Vec<[f64; 2]>) -> PyResult<[f64; 11]> {
        projection::grad_wrt_camera(&self.0, &lift(&p3(&points)), &v2(&dl_do)).py()
    }

    /// Per-point gradient of a scalar loss w.r.t. the 3D points.
    fn grad_wrt_points(&self, points: Vec<[f64; 3]>, dl_do: Vec<[f64; 2]>) -> PyResult<Vec<[f64; 3]>> {
        projection::grad_wrt_points(&self.0, &lift(&p3(&points)), &v2(&dl_do))
            .py()
            .map(|v| from_p3(&v))
    }

    /// The 3D point the camera projects from.
    fn center(&self) -> PyResult<[f64; 3]> {
        facewarp::mesh::estimate_camera_center(&self.0)
            .py()
            .map(|c| [c.x, c.y, c.z])
    }

    fn yaw_deg(&self) -> PyResult<f64> {
        eval::yaw_from_camera(&self.0).py()
    }

    fn __repr__(&self) -> String {
        format!("Camera({})", self.0)
    }
}

/// 3D thin-plate-spline warp.
#[pyclass(name = "TpsWarp", module = "facewarp", from_py_object)]
#[derive(Clone)]
struct PyTps(TpsWarp3D);

#[pymethods]
impl PyTps {
    /// Fits the warp taking `sources` to `targets` (`lambda_reg = 0` interpolates).
    #[staticmethod]
    #[pyo3(signature = (sources, targets, lambda_reg = 0.0))]
    fn fit(sources: Vec<[f64; 3]>, targets: Vec<[f64; 3]>, lambda_reg: f64) -> PyResult<Self> {
        if sources.len() != targets.len() {
            return Err(err(facewarp::Error::LengthMismatch {
                what: "targets",
                expected: sources.len(),
                got: targets.len(),
            }));
        }
        let corr: Vec<_> = p3(&sources)
            .into_iter()
            .zip(p3(&targets))
            .map(|(source, target)| ControlCorrespondence { source, target })
            .collect();
        tps::fit(&corr, lambda_reg).py().map(PyTps)
    }

    #[staticmethod]
    fn identity(controls: Vec<[f64; 3]>) -> Self {
        PyTps(TpsWarp3D::identity(p3(&controls)))
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        TpsWarp3D::from_json(s).py().map(PyTps)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().py()
    }

    fn apply(&self, points: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
        from_p3(&tps::apply(&self.0, &p3(&points)))
    }

    /// Per-axis parameter vectors `[b0, b1, b2, b3, w_1 .. w_n]`.
    #[getter]
    fn theta(&self) -> [Vec<f64>; 3] {
        self.0.theta().map(<[f64]>::to_vec)
    }

    #[getter]
    fn n_controls(&self) -> usize {
        self.0.n_controls()
    }

    #[getter]
    fn controls(&self) -> Vec<[f64; 3]> {
        from_p3(&self.0.controls)
    }

    /// Gradient w.r.t. `theta` given `dL/d(warped point)`.
    fn grad_wrt_params(&self, points: Vec<[f64; 3]>, dl_dp: Vec<[f64; 3]>) -> PyResult<[Vec<f64>; 3]> {
        tps::grad_wrt_params(&self.0, &p3(&points), &v3(&dl_dp)).py()
    }
}

/// Row-major `height × width × channels` grid of values.
#[pyclass(name = "Grid", module = "facewarp", from_py_object)]
#[derive(Clone)]
struct PyGrid(Grid2D);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        Grid2D::new(width, height, channels, data).py().map(PyGrid)
    }

    #[staticmethod]
    fn load_png(path: &str) -> PyResult<Self> {
        Grid2D::load_png(path).py().map(PyGrid)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.height(), self.0.width(), self.0.channels())
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    /// Bilinear samples at `(x, y)` pixel coordinates, clamped at the border.
    fn sample(&self, coords: Vec<[f64; 2]>) -> Vec<Vec<f64>> {
        sampler::sample_bilinear(&self.0, &coords_of(&coords))
    }

    fn grad_wrt_coords(&self, coords: Vec<[f64; 2]>, dl_do: Vec<Vec<f64>>) -> PyResult<Vec<[f64; 2]>> {
        sampler::grad_wrt_coords(&self.0, &coords_of(&coords), &dl_do)
            .py()
            .map(|v| v.iter().map(|g| [g.x, g.y]).collect())
    }

    fn grad_wrt_grid(&self, coords: Vec<[f64; 2]>, dl_do: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        sampler::grad_wrt_grid(&self.0, &coords_of(&coords), &dl_do).py()
    }
}

fn coords_of(c: &[[f64; 2]]) -> Vec<SampleCoord> {
    c.iter().map(|p| SampleCoord { x: p[0], y: p[1] }).collect()
}

/// Triangle mesh with landmark and control vertex designations.
#[pyclass(name = "Mesh", module = "facewarp", from_py_object)]
#[derive(Clone)]
struct PyMesh(FaceMesh);

#[pymethods]
impl PyMesh {
    /// The generated mean face.
    #[staticmethod]
    #[pyo3(signature = (n_lon = 71, n_lat = 71, scheme = "mpie68", n_controls = 40))]
    fn mean_face(n_lon: usize, n_lat: usize, scheme: &str, n_controls: usize) -> PyResult<Self> {
        let scheme: Scheme = scheme.parse().py()?;
        Ok(PyMesh(mean_face(&MeanFaceConfig {
            n_lon,
            n_lat,
            scheme,
            n_controls,
        })))
    }

    /// OBJ or ASCII PLY, with its `.landmarks.json` sidecar when present.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        facewarp::mesh::load_mesh(path).py().map(PyMesh)
    }

    #[pyo3(signature = (path, vertices = None))]
    fn save(&self, path: &str, vertices: Option<Vec<[f64; 3]>>) -> PyResult<()> {
        let v = vertices.map(|v| p3(&v));
        facewarp::mesh::save_mesh(&self.0, v.as_deref(), path).py()
    }

    #[getter]
    fn vertices(&self) -> Vec<[f64; 3]> {
        from_p3(&self.0.vertices)
    }

    #[getter]
    fn faces(&self) -> Vec<[usize; 3]> {
        self.0.faces.clone()
    }

    /// Vertex indices ordered by landmark id.
    #[getter]
    fn landmark_indices(&self) -> Vec<usize> {
        self.0.landmark_indices()
    }

    #[getter]
    fn control_points(&self) -> Vec<[f64; 3]> {
        from_p3(&self.0.control_points())
    }

    /// Per-vertex visibility of `vertices` (default: the rest shape).
    #[pyo3(signature = (camera, vertices = None, zbuffer = true))]
    fn visibility(&self, camera: &PyCamera, vertices: Option<Vec<[f64; 3]>>, zbuffer: bool) -> PyResult<Vec<bool>> {
        let v = vertices.map(|v| p3(&v)).unwrap_or_else(|| self.0.vertices.clone());
        let opts = VisibilityOptions {
            zbuffer,
            ..Default::default()
        };
        facewarp::mesh::visibility(&self.0, &v, &camera.0, opts).py().map(|m| m.0)
    }
}

/// Correction warp that, applied after `warp` (default identity), moves the
/// landmark vertices onto the backprojected rays of `landmarks` (ordered by
/// landmark id).
#[pyfunction]
#[pyo3(signature = (mesh, camera, landmarks, warp = None))]
fn refit_model(mesh: &PyMesh, camera: &PyCamera, landmarks: Vec<[f64; 2]>, warp: Option<PyTps>) -> PyResult<PyTps> {
    let scheme = scheme_for(landmarks.len())?;
    let set = LandmarkSet2D::from_points(scheme, &p2(&landmarks), &vec![true; landmarks.len()]).py()?;
    let base = warp
        .map(|w| w.0)
        .unwrap_or_else(|| TpsWarp3D::identity(mesh.0.control_points()));
    refit::refit_model(&mesh.0, &base, &camera.0, &set).py().map(PyTps)
}

/// Normalized mean error (a fraction) of `pred` against `truth`.
/// With `visible`, only landmarks flagged true are evaluated.
#[pyfunction]
#[pyo3(signature = (pred, truth, bbox_w, bbox_h, visible = None))]
fn nme(pred: Vec<[f64; 2]>, truth: Vec<[f64; 2]>, bbox_w: f64, bbox_h: f64, visible: Option<Vec<bool>>) -> PyResult<f64> {
    let scheme = scheme_for(truth.len())?;
    let mode = if visible.is_some() { NmeMode::VisibleOnly } else { NmeMode::AllPoints };
    let vis = visible.unwrap_or_else(|| vec![true; truth.len()]);
    let t = LandmarkSet2D::from_points(scheme, &p2(&truth), &vis).py()?;
    let p = LandmarkSet2D::from_points(scheme_for(pred.len())?, &p2(&pred), &vec![true; pred.len()]).py()?;
    eval::nme(&p, &t, BBox { w: bbox_w, h: bbox_h }, mode).py()
}

/// Mean and sample standard deviation of per-bin means.
#[pyfunction]
fn summarize_bins(bin_means: Vec<f64>) -> (f64, f64) {
    eval::summarize_bins(&bin_means)
}

/// Finite-difference audit of one module (`proj`, `tps`, `sampler`, `e2e`).
#[pyfunction]
fn gradcheck<'py>(py: Python<'py>, module: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let m: AuditModule = module.parse().py()?;
    let r = audit::audit(m, seed).py()?;
    let d = PyDict::new(py);
    d.set_item("module", r.module.name())?;
    d.set_item("seed", r.seed)?;
    d.set_item("checked", r.checked)?;
    d.set_item("max_rel_err", r.max_rel_err)?;
    d.set_item("worst", r.worst)?;
    d.set_item("tolerance", r.tolerance)?;
    d.set_item("passed", r.passed)?;
    Ok(d)
}

/// A trained estimator loaded from a checkpoint.
#[pyclass(name = "Estimator", module = "facewarp")]
struct PyEstimator(Model);

#[pymethods]
impl PyEstimator {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        checkpoint::load(path).py().map(PyEstimator)
    }

    #[getter]
    fn input_size(&self) -> usize {
        self.0.config.input_size
    }

    #[getter]
    fn mesh(&self) -> PyMesh {
        PyMesh(self.0.mesh().clone())
    }

    /// Keys: camera, warp, lm_init, lm_refined, vertices, visibility.
    fn forward<'py>(&self, py: Python<'py>, image: &PyGrid) -> PyResult<Bound<'py, PyDict>> {
        let f = self.0.forward(&image.0).py()?;
        let d = PyDict::new(py);
        d.set_item("camera", PyCamera(f.camera))?;
        d.set_item("warp", PyTps(f.warp))?;
        d.set_item("lm_init", from_p2(&f.lm_init.positions()))?;
        d.set_item("lm_refined", from_p2(&f.lm_refined.positions()))?;
        d.set_item("vertices", from_p3(&f.vertices))?;
        d.set_item("visibility", f.visibility.map(|v| v.0))?;
        Ok(d)
    }
}

#[pymodule(name = "facewarp")]
fn facewarp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FacewarpError", m.py().get_type::<FacewarpError>())?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PyTps>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyEstimator>()?;
    m.add_function(wrap_pyfunction!(refit_model, m)?)?;
    m.add_function(wrap_pyfunction!(nme, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_bins, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
