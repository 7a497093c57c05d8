//! 3D thin-plate-spline warp.
//!
//! Each output coordinate is displaced by its own spline
//!
//! ```text
//! f(p) = b1 + b2·x + b3·y + b4·z + Σ_j w_j · U(|c_j − p|),   U(r) = r² ln r
//! ```
//!
//! and the warped point is `p + (f_x(p), f_y(p), f_z(p))`. Parameter vectors
//! are stored as `(b1, b2, b3, b4, w1, …, wn)`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::Point3;

/// Reciprocal condition number below which `fit` reports a singular system.
pub const EPS_COND: f64 = 1e-12;

const PAR_THRESHOLD: usize = 4096;

/// `U(r) = r² ln r`, with `U(0) = 0`.
pub fn kernel_u(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel radius must be nonnegative, got {r}"
        )));
    }
    Ok(if r == 0.0 { 0.0 } else { r * r * r.ln() })
}

/// `U` evaluated from a squared radius: `r² ln r = ½ r² ln r²`.
#[inline]
pub(crate) fn kernel_u_sq(r2: f64) -> f64 {
    if r2 > 0.0 {
        0.5 * r2 * r2.ln()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCorrespondence {
    pub source: Point3,
    pub target: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsWarp3D {
    pub controls: Vec<Point3>,
    pub theta_dx: Vec<f64>,
    pub theta_dy: Vec<f64>,
    pub theta_dz: Vec<f64>,
}

impl TpsWarp3D {
    pub fn new(
        controls: Vec<Point3>,
        theta_dx: Vec<f64>,
        theta_dy: Vec<f64>,
        theta_dz: Vec<f64>,
    ) -> Result<Self> {
        let warp = TpsWarp3D {
            controls,
            theta_dx,
            theta_dy,
            theta_dz,
        };
        warp.validate()?;
        Ok(warp)
    }

    /// All-zero parameters; `apply` is the identity.
    pub fn identity(controls: Vec<Point3>) -> Self {
        let m = controls.len() + 4;
        TpsWarp3D {
            controls,
            theta_dx: vec![0.0; m],
            theta_dy: vec![0.0; m],
            theta_dz: vec![0.0; m],
        }
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    /// Length of each parameter vector, `n + 4`.
    pub fn n_params(&self) -> usize {
        self.controls.len() + 4
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_params();
        check_len("theta_dx", m, self.theta_dx.len())?;
        check_len("theta_dy", m, self.theta_dy.len())?;
        check_len("theta_dz", m, self.theta_dz.len())?;
        let finite = self.controls.iter().all(|c| c.iter().all(|v| v.is_finite()))
            && self
                .theta()
                .iter()
                .all(|t| t.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidArgument("non-finite TPS parameter".into()));
        }
        Ok(())
    }

    pub fn theta(&self) -> [&[f64]; 3] {
        [&self.theta_dx, &self.theta_dy, &self.theta_dz]
    }

    pub fn theta_mut(&mut self) -> [&mut Vec<f64>; 3] {
        [&mut self.theta_dx, &mut self.theta_dy, &mut self.theta_dz]
    }

    /// Fills `out` (length `n + 4`) with `(1, x, y, z, U(|c_1 − p|), …)`.
    pub fn basis_row(&self, p: &Point3, out: &mut [f64]) {
        basis_row(&self.controls, p, out)
    }

    #[inline]
    fn displace(&self, p: &Point3) -> Point3 {
        let [tx, ty, tz] = self.theta();
        let mut d = Vector3::new(
            tx[0] + tx[1] * p.x + tx[2] * p.y + tx[3] * p.z,
            ty[0] + ty[1] * p.x + ty[2] * p.y + ty[3] * p.z,
            tz[0] + tz[1] * p.x + tz[2] * p.y + tz[3] * p.z,
        );
        for (j, c) in self.controls.iter().enumerate() {
            let u = kernel_u_sq((c - p).norm_squared());
            d.x += tx[4 + j] * u;
            d.y += ty[4 + j] * u;
            d.z += tz[4 + j] * u;
        }
        p + d
    }

    /// Side-condition residuals `(Σw, Σw·c)` for each output dimension.
    pub fn side_condition_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for t in self.theta() {
            let w = &t[4..];
            let mut s = 0.0;
            let mut sc = Vector3::zeros();
            for (wj, c) in w.iter().zip(&self.controls) {
                s += wj;
                sc += c * *wj;
            }
            worst = worst.max(s.abs()).max(sc.amax());
        }
        worst
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: TpsWarp3D = serde_json::from_str(s)?;
        w.validate()?;
        Ok(w)
    }

    /// Plain-text export: first line `n`, then the 3n control coordinates,
    /// then `theta_dx`, `theta_dy`, `theta_dz`, one number per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.n_controls())?;
        for c in &self.controls {
            for v in c.iter() {
                writeln!(w, "{v:e}")?;
            }
        }
        for t in self.theta() {
            for v in t {
                writeln!(w, "{v:e}")?;
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut nums = Vec::new();
        let mut n = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                path: "<tps text>".into(),
                line: i + 1,
                msg,
            };
            if n.is_none() {
                n = Some(t.parse::<usize>().map_err(|e| bad(format!("header: {e}")))?);
            } else {
                nums.push(t.parse::<f64>().map_err(|e| bad(format!("{t:?}: {e}")))?);
            }
        }
        let n = n.ok_or_else(|| Error::InvalidArgument("empty TPS text".into()))?;
        check_len("TPS text values", 3 * n + 3 * (n + 4), nums.len())?;
        let controls = nums[..3 * n]
            .chunks(3)
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect();
        let rest = &nums[3 * n..];
        let m = n + 4;
        TpsWarp3D::new(
            controls,
            rest[..m].to_vec(),
            rest[m..2 * m].to_vec(),
            rest[2 * m..].to_vec(),
        )
    }
}

pub(crate) fn basis_row(controls: &[Point3], p: &Point3, out: &mut [f64]) {
    out[0] = 1.0;
    out[1] = p.x;
    out[2] = p.y;
    out[3] = p.z;
    for (o, c) in out[4..].iter_mut().zip(controls) {
        *o = kernel_u_sq((c - p).norm_squared());
    }
}

/// Bordered system with unknowns ordered `(w_1..w_n, b_1..b_4)`:
///
/// ```text
/// [ K + λI  P ] [w]   [Δ]
/// [ Pᵀ      0 ] [b] = [0]
/// ```
///
/// Returns the matrix and its reciprocal condition estimate, or
/// `SingularSystem` when that estimate is at most [`EPS_COND`].
fn bordered_system(sources: &[Point3], lambda_reg: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = sources.len();
    let m = n + 4;
    let mut sys = DMatrix::<f64>::zeros(m, m);
    for (i, ci) in sources.iter().enumerate() {
        for (j, cj) in sources.iter().enumerate().skip(i + 1) {
            let u = kernel_u_sq((ci - cj).norm_squared());
            sys[(i, j)] = u;
            sys[(j, i)] = u;
        }
        sys[(i, i)] = lambda_reg;
        let row = [1.0, ci.x, ci.y, ci.z];
        for (k, v) in row.into_iter().enumerate() {
            sys[(i, n + k)] = v;
            sys[(n + k, i)] = v;
        }
    }
    let sv = sys.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let rcond = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(rcond > EPS_COND) {
        return Err(Error::SingularSystem { rcond });
    }
    Ok((sys, rcond))
}

/// The `(n + 4) × n` linear map from per-control displacements (one
/// coordinate) to the interpolating spline's parameter vector
/// `(b1..b4, w1..wn)`.
pub fn interpolation_matrix(controls: &[Point3]) -> Result<DMatrix<f64>> {
    let n = controls.len();
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "TPS needs at least 4 control points, got {n}"
        )));
    }
    let (sys, rcond) = bordered_system(controls, 0.0)?;
    let mut rhs = DMatrix::<f64>::zeros(n + 4, n);
    for i in 0..n {
        rhs[(i, i)] = 1.0;
    }
    let sol = sys
        .full_piv_lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem { rcond })?;
    let mut out = DMatrix::<f64>::zeros(n + 4, n);
    for j in 0..n {
        for k in 0..4 {
            out[(k, j)] = sol[(n + k, j)];
        }
        for i in 0..n {
            out[(4 + i, j)] = sol[(i, j)];
        }
    }
    Ok(out)
}

/// Fits one spline per output dimension so that every source maps onto its
/// target. `lambda_reg > 0` adds smoothing to the kernel block's diagonal;
/// with 0 the warp interpolates exactly.
pub fn fit(correspondences: &[ControlCorrespondence], lambda_reg: f64) -> Result<TpsWarp3D> {
    let n = correspondences.len();
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "TPS fit needs at least 4 correspondences, got {n}"
        )));
    }
    if !(lambda_reg >= 0.0) || !lambda_reg.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda_reg must be a nonnegative finite number, got {lambda_reg}"
        )));
    }
    if correspondences
        .iter()
        .any(|c| !c.source.iter().chain(c.target.iter()).all(|v| v.is_finite()))
    {
        return Err(Error::InvalidArgument("non-finite correspondence".into()));
    }

    let sources: Vec<Point3> = correspondences.iter().map(|c| c.source).collect();
    let (sys, rcond) = bordered_system(&sources, lambda_reg)?;
    let m = n + 4;

    let mut rhs = DMatrix::<f64>::zeros(m, 3);
    for (i, c) in correspondences.iter().enumerate() {
        let d = c.target - c.source;
        for k in 0..3 {
            rhs[(i, k)] = d[k];
        }
    }
    let lu = sys.full_piv_lu();
    let sol = lu
        .solve(&rhs)
        .ok_or(Error::SingularSystem { rcond })?;

    let theta = |k: usize| -> Vec<f64> {
        let col: DVector<f64> = sol.column(k).into_owned();
        let mut t = Vec::with_capacity(m);
        t.extend_from_slice(&col.as_slice()[n..]);
        t.extend_from_slice(&col.as_slice()[..n]);
        t
    };
    Ok(TpsWarp3D {
        controls: correspondences.iter().map(|c| c.source).collect(),
        theta_dx: theta(0),
        theta_dy: theta(1),
        theta_dz: theta(2),
    })
}

/// Warps every point; output order matches input order.
pub fn apply(warp: &TpsWarp3D, pts: &[Point3]) -> Vec<Point3> {
    if pts.len() >= PAR_THRESHOLD {
        pts.par_iter().map(|p| warp.displace(p)).collect()
    } else {
        pts.iter().map(|p| warp.displace(p)).collect()
    }
}

/// Loss gradient w.r.t. `(theta_dx, theta_dy, theta_dz)`, summed over points
/// in input order.
pub fn grad_wrt_params(
    warp: &TpsWarp3D,
    pts: &[Point3],
    dl_do: &[Vector3<f64>],
) -> Result<[Vec<f64>; 3]> {
    check_len("upstream gradient", pts.len(), dl_do.len())?;
    let m = warp.n_params();
    let mut gx = vec![0.0; m];
    let mut gy = vec![0.0; m];
    let mut gz = vec![0.0; m];
    let mut phi = vec![0.0; m];
    for (p, g) in pts.iter().zip(dl_do) {
        warp.basis_row(p, &mut phi);
        for k in 0..m {
            gx[k] += g.x * phi[k];
            gy[k] += g.y * phi[k];
            gz[k] += g.z * phi[k];
        }
    }
    Ok([gx, gy, gz])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tetra_plus() -> Vec<Point3> {
        vec![
            Point3::new(0., 0., 0.),
            Point3::new(1., 0., 0.),
            Point3::new(0., 1., 0.),
            Point3::new(0., 0., 1.),
            Point3::new(0.7, 0.6, 0.4),
            Point3::new(-0.3, 0.8, 0.5),
        ]
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_u(0.0).unwrap(), 0.0);
        assert_eq!(kernel_u(1.0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert_relative_eq!(kernel_u(e).unwrap(), e * e, epsilon = 1e-14);
        assert!(kernel_u(-0.1).is_err());
        assert!(kernel_u(f64::NAN).is_err());
        assert_relative_eq!(kernel_u_sq(2.5 * 2.5), kernel_u(2.5).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn identity_fit_is_zero() {
        let corr: Vec<_> = tetra_plus()
            .into_iter()
            .map(|p| ControlCorrespondence { source: p, target: p })
            .collect();
        let w = fit(&corr, 0.0).unwrap();
        for t in w.theta() {
            assert!(t.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn translation_lands_in_b1() {
        let off = Vector3::new(0.5, -1.25, 2.0);
        let corr: Vec<_> = tetra_plus()
            .into_iter()
            .map(|p| ControlCorrespondence { source: p, target: p + off })
            .collect();
        let w = fit(&corr, 0.0).unwrap();
        for (k, t) in w.theta().iter().enumerate() {
            assert_relative_eq!(t[0], off[k], epsilon = 1e-10);
            for v in &t[1..] {
                assert!(v.abs() < 1e-10, "{v}");
            }
        }
        let moved = apply(&w, &[Point3::new(3., 4., 5.)]);
        assert!((moved[0] - Point3::new(3., 4., 5.) - off).amax() < 1e-9);
    }

    #[test]
    fn rejects_too_few_and_coplanar() {
        let pts = [
            Point3::new(0., 0., 0.),
            Point3::new(1., 0., 0.),
            Point3::new(0., 1., 0.),
        ];
        let c: Vec<_> = pts
            .iter()
            .map(|&p| ControlCorrespondence { source: p, target: p })
            .collect();
        assert!(matches!(fit(&c, 0.0), Err(Error::InvalidArgument(_))));

        let planar: Vec<_> = [(0., 0.), (1., 0.), (0., 1.), (1., 1.), (0.5, 0.3)]
            .iter()
            .map(|&(x, y)| {
                let p = Point3::new(x, y, 2.0);
                ControlCorrespondence { source: p, target: p }
            })
            .collect();
        assert!(matches!(fit(&planar, 0.0), Err(Error::SingularSystem { .. })));

        let mut dup: Vec<_> = tetra_plus()
            .into_iter()
            .map(|p| ControlCorrespondence { source: p, target: p })
            .collect();
        dup.push(dup[2]);
        assert!(matches!(fit(&dup, 0.0), Err(Error::SingularSystem { .. })));
        assert!(fit(&dup[..6], -1.0).is_err());
    }

    #[test]
    fn control_point_row_has_zero_self_kernel() {
        let warp = TpsWarp3D::identity(tetra_plus());
        let p = warp.controls[3];
        let [gx, gy, gz] = grad_wrt_params(&warp, &[p], &[Vector3::new(1., 2., 3.)]).unwrap();
        assert_eq!(gx[4 + 3], 0.0);
        assert_eq!(gy[4 + 3], 0.0);
        assert_eq!(gz[4 + 3], 0.0);
        assert_eq!(&gx[..4], &[1.0, p.x, p.y, p.z]);
        assert_eq!(gy[0], 2.0);
        assert!(grad_wrt_params(&warp, &[p], &[]).is_err());
    }

    #[test]
    fn text_and_json_round_trip() {
        let corr: Vec<_> = tetra_plus()
            .into_iter()
            .enumerate()
            .map(|(i, p)| ControlCorrespondence {
                source: p,
                target: p + Vector3::new(0.01 * i as f64, -0.02, 0.03 * (i % 2) as f64),
            })
            .collect();
        let w = fit(&corr, 0.0).unwrap();
        let mut buf = Vec::new();
        w.write_text(&mut buf).unwrap();
        assert_eq!(TpsWarp3D::read_text(&buf[..]).unwrap(), w);
        let json = w.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["controls"][1], serde_json::json!([1.0, 0.0, 0.0]));
        assert_eq!(TpsWarp3D::from_json(&json).unwrap(), w);
        assert!(TpsWarp3D::from_json(r#"{"controls":[],"theta_dx":[0],"theta_dy":[],"theta_dz":[]}"#).is_err());
    }
}
