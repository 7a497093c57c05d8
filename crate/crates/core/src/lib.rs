//! Differentiable geometry kernels for 3D-model-based face alignment.
//!
//! - [`projection`]: 11-parameter projective camera, forward projection and
//!   gradients w.r.t. the camera and the 3D points.
//! - [`tps`]: 3D thin-plate-spline warps: fitting, application, parameter
//!   gradients.
//! - [`sampler`]: bilinear grid sampling with coordinate and grid gradients.
//! - [`mesh`]: the generic face model, normals, camera center, visibility.
//! - [`pipeline`]: warp-then-project composition and its [`pipeline::GradBundle`].
//! - [`refit`]: ray backprojection and model refitting to 2D landmarks.
//! - [`estimator`]: a small end-to-end trainable network built on the above.
//! - [`eval`]: NME, CED, pose tables and timing.
//! - [`audit`]: finite-difference gradient audits.

pub mod audit;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod landmarks;
pub mod mesh;
pub mod pipeline;
pub mod projection;
pub mod refit;
pub mod sampler;
pub mod tps;

/// Euclidean 3D point (model units).
pub type Point3 = nalgebra::Vector3<f64>;

pub use error::{Error, Result};
pub use landmarks::{Landmark, LandmarkSet2D, Scheme};
pub use mesh::{FaceMesh, LandmarkMap, VisibilityMask, VisibilityOptions};
pub use projection::{CameraParams, Point2, Point3H};
pub use sampler::{Grid2D, SampleCoord};
pub use tps::{ControlCorrespondence, TpsWarp3D};
